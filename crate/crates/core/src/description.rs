//! Fine-grained, per-body-part motion descriptions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six body-part labels, in conditioning-slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartLabel {
    Arms,
    Legs,
    Torso,
    Neck,
    Buttocks,
    Waist,
}

impl PartLabel {
    pub const ALL: [PartLabel; 6] = [
        PartLabel::Arms,
        PartLabel::Legs,
        PartLabel::Torso,
        PartLabel::Neck,
        PartLabel::Buttocks,
        PartLabel::Waist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PartLabel::Arms => "arms",
            PartLabel::Legs => "legs",
            PartLabel::Torso => "torso",
            PartLabel::Neck => "neck",
            PartLabel::Buttocks => "buttocks",
            PartLabel::Waist => "waist",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Sentence used when nothing is known about this part.
    pub fn filler(self) -> String {
        format!("The {} remains still.", self.as_str())
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PartLabel::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown body part {s:?}")))
    }
}

/// A paraphrased description: the whole paragraph plus one text per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrainedDescription {
    pub full_text: String,
    pub parts: BTreeMap<PartLabel, String>,
    pub degraded: bool,
}

impl FineGrainedDescription {
    /// Validates the six-key / non-empty invariants.
    pub fn new(
        full_text: String,
        parts: BTreeMap<PartLabel, String>,
        degraded: bool,
    ) -> Result<Self> {
        if full_text.trim().is_empty() {
            return Err(Error::Contract("full_text must be non-empty".into()));
        }
        for p in PartLabel::ALL {
            match parts.get(&p) {
                Some(s) if !s.trim().is_empty() => {}
                _ => return Err(Error::Contract(format!("missing text for part {p}"))),
            }
        }
        Ok(Self {
            full_text,
            parts,
            degraded,
        })
    }

    /// Builds a description from per-part sentences, joining them in slot
    /// order for the full text. Missing parts get the filler sentence.
    pub fn from_parts(parts: &BTreeMap<PartLabel, String>) -> Self {
        let mut filled = BTreeMap::new();
        let mut degraded = false;
        for p in PartLabel::ALL {
            match parts.get(&p).map(|s| s.trim()).filter(|s| !s.is_empty()) {
                Some(s) => {
                    filled.insert(p, s.to_string());
                }
                None => {
                    degraded = true;
                    filled.insert(p, p.filler());
                }
            }
        }
        let full_text = join_parts(&filled);
        Self {
            full_text,
            parts: filled,
            degraded,
        }
    }

    pub fn part(&self, p: PartLabel) -> &str {
        &self.parts[&p]
    }

    /// Part texts in slot order.
    pub fn ordered_parts(&self) -> impl Iterator<Item = &str> {
        PartLabel::ALL.into_iter().map(|p| self.parts[&p].as_str())
    }
}

pub(crate) fn join_parts(parts: &BTreeMap<PartLabel, String>) -> String {
    PartLabel::ALL
        .iter()
        .filter_map(|p| parts.get(p))
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}
