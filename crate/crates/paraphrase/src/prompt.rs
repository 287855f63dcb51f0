//! The few-shot prompt sent to the language model.

use crate::error::{Error, Result};

/// Bumped whenever the prompt text changes; part of every cache key.
pub const PROMPT_VERSION: u32 = 1;

pub const PART_VOCABULARY: [&str; 6] = ["arms", "legs", "torso", "neck", "buttocks", "waist"];

const INSTRUCTION: &str = "Translate the motion described by the given sentences to the motion of each body part only using one paragraph. The available body parts include ['arms', 'legs', 'torso', 'neck', 'buttocks', 'waist']. Here are some examples:";

/// Question/answer pairs shown before the real question.
pub const EXEMPLARS: [(&str, &str); 4] = [
    (
        "A man kicks something or someone with his left leg.",
        "His left leg extends out with force as he kicks something or someone. His arms are held steady at his sides. His torso is slightly twisted. His buttocks and waist muscles are contracted. His neck remains neutral.",
    ),
    (
        "A person waves with the right hand.",
        "His right arm lifts and swings from side to side in a wave. His legs stand straight and still. His torso stays upright. His neck remains neutral. His buttocks and waist stay relaxed.",
    ),
    (
        "A person sits down on a chair.",
        "His legs bend at the knees as he lowers himself. His arms rest loosely on his lap. His torso leans slightly forward. His buttocks lower onto the seat. His waist bends as he settles. His neck remains neutral.",
    ),
    (
        "A person jumps forward.",
        "His legs push off the ground and land ahead of him. His arms swing forward for balance. His torso leans forward during the jump. His buttocks tighten at take-off. His waist flexes as he lands. His neck keeps the head facing forward.",
    ),
];

pub fn build_prompt(sentence: &str) -> Result<String> {
    let sentence = sentence.trim();
    if sentence.is_empty() {
        return Err(Error::Contract("sentence must be non-empty".into()));
    }
    let mut out = String::from(INSTRUCTION);
    for (q, a) in EXEMPLARS {
        out.push_str("\nQuestion: ");
        out.push_str(q);
        out.push_str("\nAnswer: ");
        out.push_str(a);
    }
    out.push_str("\nQuestion: ");
    out.push_str(sentence);
    Ok(out)
}

/// The text after the final `Question: ` marker of a prompt.
pub fn question_of(prompt: &str) -> Option<&str> {
    prompt.rsplit_once("Question: ").map(|(_, q)| q.trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_is_last() {
        let p = build_prompt("  A person nods. ").unwrap();
        assert!(p.ends_with("\nQuestion: A person nods."));
        assert_eq!(question_of(&p), Some("A person nods."));
    }

    #[test]
    fn blank_sentence_rejected() {
        assert!(matches!(build_prompt(" \t"), Err(Error::Contract(_))));
    }
}
