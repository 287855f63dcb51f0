//! Rewrites vague motion sentences into per-body-part descriptions, either
//! through a chat-completion endpoint or a deterministic keyword lexicon.

pub mod cache;
pub mod client;
mod error;
pub mod parse;
pub mod prompt;
pub mod rule;
pub mod stub;

pub use cache::{cache_key, CacheEntry, ParaphraseCache};
pub use client::{call_llm_cached, LlmClient, LlmClientConfig, API_KEY_ENV};
pub use error::{Error, Result};
pub use parse::{parse_answer, part_for_word};
pub use prompt::{build_prompt, PART_VOCABULARY, PROMPT_VERSION};
pub use rule::{rule_paraphrase, Lexicon, LexiconEntry};
