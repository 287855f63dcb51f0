//! Splits a model answer into per-part sentences.

use std::collections::BTreeMap;

use fgmdm_core::description::{FineGrainedDescription, PartLabel};
use fgmdm_core::embed::tokenize;

use crate::error::{Error, Result};

/// Maps a lowercase word to the body part it names, if any.
pub fn part_for_word(word: &str) -> Option<PartLabel> {
    use PartLabel::*;
    Some(match word {
        "arm" | "arms" | "hand" | "hands" => Arms,
        "leg" | "legs" => Legs,
        "torso" | "spine" => Torso,
        "neck" | "head" => Neck,
        "buttock" | "buttocks" | "hip" | "hips" => Buttocks,
        "waist" => Waist,
        _ => return None,
    })
}

/// Sentences with their terminating period restored.
fn sentences(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| format!("{s}."))
}

/// Assigns each sentence to every part it mentions. Parts nobody mentions
/// get the filler sentence and mark the result degraded.
pub fn parse_answer(raw: &str) -> Result<FineGrainedDescription> {
    if raw.trim().is_empty() {
        return Err(Error::Parse("empty answer".into()));
    }
    let mut parts: BTreeMap<PartLabel, Vec<String>> = BTreeMap::new();
    for sentence in sentences(raw) {
        let mut named: Vec<PartLabel> = tokenize(&sentence)
            .iter()
            .filter_map(|w| part_for_word(w))
            .collect();
        named.sort();
        named.dedup();
        for p in named {
            parts.entry(p).or_default().push(sentence.clone());
        }
    }
    let joined: BTreeMap<PartLabel, String> =
        parts.into_iter().map(|(p, s)| (p, s.join(" "))).collect();
    let degraded = joined.len() < PartLabel::ALL.len();
    let mut d = FineGrainedDescription::from_parts(&joined);
    d.full_text = raw.to_string();
    d.degraded = degraded;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn possessive_and_plural_forms() {
        assert_eq!(part_for_word("hands"), Some(PartLabel::Arms));
        assert_eq!(part_for_word("hip"), Some(PartLabel::Buttocks));
        assert_eq!(part_for_word("knee"), None);
        let d = parse_answer("The person's leg's motion is large.").unwrap();
        assert_eq!(
            d.part(PartLabel::Legs),
            "The person's leg's motion is large."
        );
    }

    #[test]
    fn unnamed_sentence_only_in_full_text() {
        let raw = "He looks happy. His arms swing.";
        let d = parse_answer(raw).unwrap();
        assert_eq!(d.full_text, raw);
        assert!(d.parts.values().all(|s| !s.contains("happy")));
        assert!(d.degraded);
    }

    #[test]
    fn empty_answer_rejected() {
        assert!(matches!(parse_answer("  "), Err(Error::Parse(_))));
    }
}
