use std::collections::BTreeSet;
use std::fs;

use fgmdm_core::dataset::{
    base_templates, default_templates, generate_dataset, probe_part_activity, read_jsonl,
    write_jsonl, DatasetConfig, MotionTemplate, Split,
};
use fgmdm_core::description::PartLabel;
use fgmdm_core::skeleton::Skeleton;
use fgmdm_core::Error;

fn small_config(variations: usize) -> DatasetConfig {
    DatasetConfig {
        variations_per_template: variations,
        seed: 7,
        ..DatasetConfig::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let skel = Skeleton::desk();
    let templates: Vec<_> = base_templates().into_iter().take(4).collect();
    let a = generate_dataset(&skel, &templates, &small_config(16)).unwrap();
    let b = generate_dataset(&skel, &templates, &small_config(16)).unwrap();
    assert_eq!(a.len(), 64);
    let lines = |rs: &[fgmdm_core::dataset::DatasetRecord]| -> Vec<String> {
        rs.iter().map(|r| r.to_json_line()).collect()
    };
    assert_eq!(lines(&a), lines(&b));
}

#[test]
fn raise_left_arm_moves_only_arms() {
    let skel = Skeleton::desk();
    let templates: Vec<_> = base_templates()
        .into_iter()
        .filter(|t| t.name == "raise_left_arm")
        .collect();
    for r in generate_dataset(&skel, &templates, &small_config(16)).unwrap() {
        let p = probe_part_activity(&skel, &r.motion).unwrap();
        assert!(p.score(PartLabel::Arms) > 0.0);
        assert_eq!(p.score(PartLabel::Legs), 0.0);
    }
}

#[test]
fn probe_argmax_is_a_dominant_template_part() {
    let skel = Skeleton::desk();
    let templates = default_templates();
    let records = generate_dataset(&skel, &templates, &small_config(32)).unwrap();
    for r in &records {
        let t = templates
            .iter()
            .find(|t| t.name == r.template_name)
            .unwrap();
        let p = probe_part_activity(&skel, &r.motion).unwrap();
        assert!(p.scores.values().all(|&v| v >= 0.0));
        assert!(
            t.dominant_parts(&skel, 32, 20.0).contains(&p.argmax()),
            "{}: probe {:?} vs template {:?}",
            r.id,
            p.scores,
            t.part_amplitude(&skel, 32, 20.0)
        );
        assert_eq!(r.parts.parts.len(), 6);
    }
}

#[test]
fn composed_templates_only_in_zeroshot() {
    let skel = Skeleton::desk();
    let templates = default_templates();
    let records = generate_dataset(&skel, &templates, &small_config(8)).unwrap();
    let composed: BTreeSet<_> = templates
        .iter()
        .filter(|t| t.held_out)
        .map(|t| t.name.clone())
        .collect();
    assert_eq!(composed.len(), 4);
    assert!(templates
        .iter()
        .filter(|t| t.held_out)
        .all(|t| t.is_composed()));
    for r in &records {
        assert_eq!(
            composed.contains(&r.template_name),
            r.split == Split::Zeroshot,
            "{}",
            r.id
        );
    }
    assert!(records.iter().any(|r| r.split == Split::Test));
}

#[test]
fn held_out_pairs_never_co_occur_in_training() {
    let templates = default_templates();
    let pair = |t: &MotionTemplate| {
        let mut c = t.components.clone();
        c.sort();
        c
    };
    let trained: BTreeSet<Vec<String>> = templates
        .iter()
        .filter(|t| !t.held_out && t.is_composed())
        .map(pair)
        .collect();
    assert!(!trained.is_empty());
    for t in templates.iter().filter(|t| t.held_out) {
        assert!(!trained.contains(&pair(t)), "{}", t.name);
        for c in &t.components {
            assert!(templates.iter().any(|b| &b.name == c && !b.held_out));
        }
    }
}

#[test]
fn jsonl_round_trip_is_lossless() {
    let skel = Skeleton::desk();
    let records = generate_dataset(&skel, &default_templates(), &small_config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    write_jsonl(&records, &path).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), records);
}

#[test]
fn truncated_line_reports_its_number() {
    let skel = Skeleton::desk();
    let records = generate_dataset(&skel, &base_templates(), &small_config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    let mut lines: Vec<String> = records.iter().map(|r| r.to_json_line()).collect();
    let third = &lines[2];
    lines[2] = third[..third.len() / 2].to_string();
    fs::write(&path, lines.join("\n")).unwrap();
    let err = read_jsonl(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }));
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn drifting_quaternion_is_rejected() {
    let skel = Skeleton::desk();
    let records = generate_dataset(&skel, &base_templates(), &small_config(1)).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&records[0].to_json_line()).unwrap();
    let w = &mut value["motion"][0][3];
    *w = serde_json::json!(w.as_f64().unwrap() * 1.01);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(
        read_jsonl(&path),
        Err(Error::Validation { line: 1, .. })
    ));
}
