use fgmdm_core::dataset::base_templates;
use fgmdm_core::description::PartLabel;
use fgmdm_paraphrase::prompt::EXEMPLARS;
use fgmdm_paraphrase::stub::{StubReply, StubServer};
use fgmdm_paraphrase::{
    build_prompt, cache_key, call_llm_cached, parse_answer, rule_paraphrase, Error, Lexicon,
    LlmClient, LlmClientConfig, ParaphraseCache, PART_VOCABULARY, PROMPT_VERSION,
};
use proptest::prelude::*;
use tokio::sync::Mutex;

const KICK_Q: &str = "A man kicks something or someone with his left leg.";
const KICK_A: &str = "His left leg extends out with force as he kicks something or someone. His arms are held steady at his sides. His torso is slightly twisted. His buttocks and waist muscles are contracted. His neck remains neutral.";

#[test]
fn prompt_contains_instruction_exemplars_and_question() {
    let p = build_prompt(KICK_Q).unwrap();
    assert!(p.starts_with("Translate the motion described by the given sentences"));
    assert!(p.contains(&format!("Question: {KICK_Q}\nAnswer: {KICK_A}")));
    assert!(p.ends_with(&format!("Question: {KICK_Q}")));
    assert_eq!(p.matches("\nAnswer: ").count(), 4);
    assert_eq!(EXEMPLARS.len(), 4);
}

#[test]
fn prompt_lists_exactly_the_six_parts() {
    let p = build_prompt("A person nods.").unwrap();
    let (_, rest) = p.split_once("available body parts include [").unwrap();
    let (list, _) = rest.split_once(']').unwrap();
    let listed: Vec<&str> = list.split(", ").map(|s| s.trim_matches('\'')).collect();
    assert_eq!(listed, PART_VOCABULARY);
    assert!(build_prompt("").is_err());
}

#[test]
fn kick_exemplar_parses_as_written() {
    let d = parse_answer(KICK_A).unwrap();
    assert_eq!(d.full_text, KICK_A);
    assert!(!d.degraded);
    assert_eq!(
        d.part(PartLabel::Legs),
        "His left leg extends out with force as he kicks something or someone."
    );
    assert_eq!(
        d.part(PartLabel::Arms),
        "His arms are held steady at his sides."
    );
    assert_eq!(d.part(PartLabel::Torso), "His torso is slightly twisted.");
    assert_eq!(
        d.part(PartLabel::Buttocks),
        "His buttocks and waist muscles are contracted."
    );
    assert_eq!(
        d.part(PartLabel::Waist),
        "His buttocks and waist muscles are contracted."
    );
    assert_eq!(d.part(PartLabel::Neck), "His neck remains neutral.");
}

#[test]
fn every_exemplar_answer_covers_all_parts() {
    for (_, a) in EXEMPLARS {
        assert!(!parse_answer(a).unwrap().degraded, "{a}");
    }
}

#[test]
fn missing_part_gets_filler() {
    let d = parse_answer("His arms swing. His legs step.").unwrap();
    assert!(d.degraded);
    assert_eq!(d.part(PartLabel::Neck), PartLabel::Neck.filler());
}

#[test]
fn rule_examples() {
    let lex = Lexicon::default();
    let d = rule_paraphrase("A person raises the left arm.", &lex);
    assert!(!d.degraded);
    assert!(d.part(PartLabel::Arms).contains("lifts"));
    for p in PartLabel::ALL.into_iter().filter(|p| *p != PartLabel::Arms) {
        assert_eq!(d.part(p), p.filler());
    }
    let d = rule_paraphrase("A person walks.", &lex);
    assert!(d.part(PartLabel::Legs).contains("step"));
    assert_eq!(d.part(PartLabel::Neck), PartLabel::Neck.filler());
    let d = rule_paraphrase("Qwzx frobnicates.", &lex);
    assert!(d.degraded);
    assert!(PartLabel::ALL.iter().all(|p| d.part(*p) == p.filler()));
}

#[test]
fn rule_covers_every_template_phrasing() {
    let lex = Lexicon::default();
    for t in base_templates() {
        for v in &t.vague_texts {
            assert_eq!(rule_paraphrase(v, &lex).parts, t.description().parts, "{v}");
        }
    }
}

fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = base_templates()
        .iter()
        .flat_map(|t| t.keywords.iter().flatten().cloned())
        .collect();
    words.extend(["a", "person", "while", "and", "quickly", "the", "right"].map(String::from));
    words
}

proptest! {
    #[test]
    fn parse_inverts_rule(idx in prop::collection::vec(0usize..64, 1..8)) {
        let vocab = vocabulary();
        let sentence: Vec<&str> = idx.iter().map(|i| vocab[i % vocab.len()].as_str()).collect();
        let sentence = sentence.join(" ") + ".";
        let d = rule_paraphrase(&sentence, &Lexicon::default());
        prop_assert_eq!(parse_answer(&d.full_text).unwrap().parts, d.parts);
    }
}

fn client(url: String, key: Option<&str>, retries: u32) -> LlmClient {
    LlmClient::new(LlmClientConfig {
        endpoint: url,
        api_key: key.map(String::from),
        max_retries: retries,
        backoff_ms: 1,
        timeout_secs: 10,
        ..LlmClientConfig::default()
    })
    .unwrap()
}

#[tokio::test]
async fn retries_through_rate_limits() {
    let server = StubServer::start(vec![StubReply::Status(429), StubReply::Status(429)])
        .await
        .unwrap();
    let c = client(server.url(), Some("test-key"), 3);
    let cache = Mutex::new(ParaphraseCache::in_memory());
    let d = call_llm_cached(
        "A person nods.",
        Some(&c),
        &cache,
        &Lexicon::default(),
        false,
    )
    .await
    .unwrap();
    assert_eq!(c.backoffs(), 2);
    assert_eq!(server.requests(), 3);
    assert_eq!(
        d.parts,
        rule_paraphrase("A person nods.", &Lexicon::default()).parts
    );
}

#[tokio::test]
async fn retries_exhausted_is_transport_error() {
    let server = StubServer::start(vec![StubReply::Status(503); 4])
        .await
        .unwrap();
    let c = client(server.url(), Some("k"), 2);
    let cache = Mutex::new(ParaphraseCache::in_memory());
    let err = call_llm_cached(
        "A person nods.",
        Some(&c),
        &cache,
        &Lexicon::default(),
        false,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.requests(), 3);
    assert!(cache.lock().await.is_empty());
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let server = StubServer::start(vec![StubReply::Status(400)])
        .await
        .unwrap();
    let c = client(server.url(), Some("k"), 5);
    let err = c
        .complete(&build_prompt("A person nods.").unwrap())
        .await
        .unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 1, .. }));
    assert_eq!(c.backoffs(), 0);
}

#[tokio::test]
async fn malformed_body_is_parse_error() {
    let server = StubServer::start(vec![StubReply::Malformed]).await.unwrap();
    let c = client(server.url(), Some("k"), 2);
    let cache = Mutex::new(ParaphraseCache::in_memory());
    let err = call_llm_cached(
        "A person bows.",
        Some(&c),
        &cache,
        &Lexicon::default(),
        false,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, Error::Parse(_)), "{err}");
}

#[tokio::test]
async fn cache_hit_makes_no_request() {
    let server = StubServer::start(Vec::new()).await.unwrap();
    let c = client(server.url(), Some("k"), 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let cache = Mutex::new(ParaphraseCache::open(&path).unwrap());
    let lex = Lexicon::default();
    let first = call_llm_cached("A person bows.", Some(&c), &cache, &lex, false)
        .await
        .unwrap();
    let second = call_llm_cached("A person bows.", Some(&c), &cache, &lex, false)
        .await
        .unwrap();
    assert_eq!(first, second);
    assert_eq!(server.requests(), 1);

    let reopened = Mutex::new(ParaphraseCache::open(&path).unwrap());
    let third = call_llm_cached("A person bows.", Some(&c), &reopened, &lex, false)
        .await
        .unwrap();
    assert_eq!(third, first);
    assert_eq!(server.requests(), 1);
    let key = cache_key(PROMPT_VERSION, "A person bows.");
    let entry = reopened.lock().await.get(&key).cloned().unwrap();
    assert_eq!(entry.sentence, "A person bows.");
    assert!(reopened
        .lock()
        .await
        .get(&cache_key(PROMPT_VERSION + 1, "A person bows."))
        .is_none());
}

#[tokio::test]
async fn offline_matches_rule_and_sends_nothing() {
    let server = StubServer::start(Vec::new()).await.unwrap();
    let c = client(server.url(), None, 0);
    let cache = Mutex::new(ParaphraseCache::in_memory());
    let lex = Lexicon::default();
    let s = "A person kicks with the left leg.";
    let d = call_llm_cached(s, Some(&c), &cache, &lex, true)
        .await
        .unwrap();
    assert_eq!(d, rule_paraphrase(s, &lex));
    assert_eq!(server.requests(), 0);
}

#[tokio::test]
async fn missing_key_online_is_config_error() {
    let server = StubServer::start(Vec::new()).await.unwrap();
    let c = client(server.url(), None, 0);
    let cache = Mutex::new(ParaphraseCache::in_memory());
    let err = call_llm_cached(
        "A person nods.",
        Some(&c),
        &cache,
        &Lexicon::default(),
        false,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(server.requests(), 0);
}

#[tokio::test]
async fn batch_preserves_order_under_concurrency() {
    let server = StubServer::start(Vec::new()).await.unwrap();
    let c = client(server.url(), Some("k"), 0);
    let cache = Mutex::new(ParaphraseCache::in_memory());
    let lex = Lexicon::default();
    let sentences: Vec<String> = base_templates()
        .iter()
        .map(|t| t.vague_texts[0].clone())
        .collect();
    let out = fgmdm_paraphrase::client::paraphrase_all(&sentences, Some(&c), &cache, &lex, false)
        .await
        .unwrap();
    for (s, d) in sentences.iter().zip(&out) {
        assert_eq!(d.parts, rule_paraphrase(s, &lex).parts);
    }
    assert_eq!(server.requests() as usize, sentences.len());
}
