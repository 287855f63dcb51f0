//! Offline paraphraser: keyword lexicon built from the motion templates.

use std::collections::BTreeMap;

use fgmdm_core::dataset::{base_templates, MotionTemplate};
use fgmdm_core::description::{FineGrainedDescription, PartLabel};
use fgmdm_core::embed::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    /// Every group must contribute at least one word of the sentence.
    pub keywords: Vec<Vec<String>>,
    pub parts: BTreeMap<PartLabel, String>,
}

impl LexiconEntry {
    fn matches(&self, words: &[String]) -> bool {
        !self.keywords.is_empty()
            && self
                .keywords
                .iter()
                .all(|g| g.iter().any(|k| words.contains(k)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
}

impl Lexicon {
    /// One entry per template that declares keywords.
    pub fn from_templates(templates: &[MotionTemplate]) -> Self {
        let entries = templates
            .iter()
            .filter(|t| !t.keywords.is_empty())
            .map(|t| LexiconEntry {
                keywords: t.keywords.clone(),
                parts: t.part_texts.clone(),
            })
            .collect();
        Self { entries }
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_templates(&base_templates())
    }
}

/// Fills the parts of every matching entry, in lexicon order; parts that no
/// entry covers get the filler sentence. Degraded only when nothing matched.
pub fn rule_paraphrase(sentence: &str, lexicon: &Lexicon) -> FineGrainedDescription {
    let words = tokenize(sentence);
    let mut parts: BTreeMap<PartLabel, String> = BTreeMap::new();
    let mut matched = false;
    for entry in lexicon.entries.iter().filter(|e| e.matches(&words)) {
        matched = true;
        for (p, s) in &entry.parts {
            parts
                .entry(*p)
                .and_modify(|e| {
                    e.push(' ');
                    e.push_str(s);
                })
                .or_insert_with(|| s.clone());
        }
    }
    let mut d = FineGrainedDescription::from_parts(&parts);
    d.degraded = !matched;
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_groups_required() {
        let lex = Lexicon::default();
        let d = rule_paraphrase("A person raises the right arm.", &lex);
        assert!(d.degraded);
        let d = rule_paraphrase("A person raises the left arm.", &lex);
        assert!(!d.degraded);
    }
}
