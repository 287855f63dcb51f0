//! Procedural motion–text corpus with ground-truth part annotations.
//!
//! Each template drives a few joints with sinusoidal rotation curves and
//! carries the matching vague sentence(s) and per-part sentences. Some
//! pairwise compositions are trained on; the held-out ones are emitted only
//! in the `zeroshot` split.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::description::{FineGrainedDescription, PartLabel};
use crate::error::{ensure, io_err, Error, Result};
use crate::skeleton::{
    geodesic_angle, quat_from_axis_angle, quat_norm, Motion, Skeleton, Vec3, IDENTITY,
    QUAT_NORM_TOLERANCE,
};

pub const LAYOUT: &str = "root3+quat4xJ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Zeroshot,
    /// Model output rather than corpus data.
    Generated,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Zeroshot => "zeroshot",
            Split::Generated => "generated",
        }
    }
}

/// `angle(t) = bias + amplitude · s(2π·frequency·t + phase)` where `s` is a
/// sine, optionally half-wave rectified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub bias: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub rectified: bool,
}

impl Curve {
    fn eval(&self, t: f64, scale: f64, freq_mult: f64, phase_shift: f64) -> f64 {
        let s = (2.0 * PI * self.frequency * freq_mult * t + self.phase + phase_shift).sin();
        let s = if self.rectified { s.max(0.0) } else { s };
        scale * (self.bias + self.amplitude * s)
    }

    /// Total angle travelled over `frames` samples at nominal jitter, i.e.
    /// the single-joint probe sum for this curve alone.
    fn excursion(&self, frames: usize, fps: f64) -> f64 {
        (1..frames)
            .map(|i| {
                let a = self.eval((i - 1) as f64 / fps, 1.0, 1.0, 0.0);
                let b = self.eval(i as f64 / fps, 1.0, 1.0, 0.0);
                (b - a).abs()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationCurve {
    pub joint: String,
    pub axis: Vec3,
    pub curve: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTemplate {
    pub name: String,
    /// Alternative vague phrasings.
    pub vague_texts: Vec<String>,
    /// Sentences for the parts this template moves; the rest get filler.
    pub part_texts: BTreeMap<PartLabel, String>,
    /// Keyword groups: the template is recognised in a sentence when every
    /// group has at least one word present.
    pub keywords: Vec<Vec<String>>,
    pub rotations: Vec<RotationCurve>,
    /// Vertical root displacement.
    pub root_height: Option<Curve>,
    /// Names of the base templates this one was composed from.
    pub components: Vec<String>,
    /// Never seen in training; all records go to the zero-shot split.
    pub held_out: bool,
}

fn curve(bias: f64, amplitude: f64, frequency: f64, phase: f64) -> Curve {
    Curve {
        bias,
        amplitude,
        frequency,
        phase,
        rectified: false,
    }
}

fn rectified(amplitude: f64, frequency: f64, phase: f64) -> Curve {
    Curve {
        bias: 0.0,
        amplitude,
        frequency,
        phase,
        rectified: true,
    }
}

/// `0 → peak → 0` rise, starting at rest.
fn rise(peak: f64, frequency: f64) -> Curve {
    curve(peak / 2.0, peak / 2.0, frequency, -PI / 2.0)
}

fn words(groups: &[&[&str]]) -> Vec<Vec<String>> {
    groups
        .iter()
        .map(|g| g.iter().map(|w| w.to_string()).collect())
        .collect()
}

const X: Vec3 = [1.0, 0.0, 0.0];
const Z: Vec3 = [0.0, 0.0, 1.0];

fn rot(joint: &str, axis: Vec3, curve: Curve) -> RotationCurve {
    RotationCurve {
        joint: joint.to_string(),
        axis,
        curve,
    }
}

impl MotionTemplate {
    fn base(
        name: &str,
        vague: &[&str],
        parts: &[(PartLabel, &str)],
        keywords: &[&[&str]],
        rotations: Vec<RotationCurve>,
    ) -> Self {
        Self {
            name: name.into(),
            vague_texts: vague.iter().map(|s| s.to_string()).collect(),
            part_texts: parts.iter().map(|(p, s)| (*p, s.to_string())).collect(),
            keywords: words(keywords),
            rotations,
            root_height: None,
            components: Vec::new(),
            held_out: false,
        }
    }

    /// Union of two templates' curves and part sentences.
    pub fn compose(a: &MotionTemplate, b: &MotionTemplate, vague: &[&str]) -> Self {
        let mut part_texts = a.part_texts.clone();
        for (p, s) in &b.part_texts {
            part_texts
                .entry(*p)
                .and_modify(|e| {
                    e.push(' ');
                    e.push_str(s);
                })
                .or_insert_with(|| s.clone());
        }
        Self {
            name: format!("{}+{}", a.name, b.name),
            vague_texts: vague.iter().map(|s| s.to_string()).collect(),
            part_texts,
            keywords: Vec::new(),
            rotations: a.rotations.iter().chain(&b.rotations).cloned().collect(),
            root_height: a.root_height.clone().or_else(|| b.root_height.clone()),
            components: vec![a.name.clone(), b.name.clone()],
            held_out: false,
        }
    }

    pub fn is_composed(&self) -> bool {
        !self.components.is_empty()
    }

    /// Ground-truth description; filler for still parts is intended, so it
    /// is not marked degraded.
    pub fn description(&self) -> FineGrainedDescription {
        let mut d = FineGrainedDescription::from_parts(&self.part_texts);
        d.degraded = false;
        d
    }

    /// Joint-averaged nominal excursion of each part over a clip, the
    /// ranking the activity probe should reproduce.
    pub fn part_amplitude(
        &self,
        skeleton: &Skeleton,
        frames: usize,
        fps: f64,
    ) -> BTreeMap<PartLabel, f64> {
        PartLabel::ALL
            .iter()
            .map(|&p| {
                let members = skeleton.part_joints(p);
                let total: f64 = self
                    .rotations
                    .iter()
                    .filter(|r| {
                        skeleton
                            .index_of(&r.joint)
                            .is_some_and(|j| members.contains(&j))
                    })
                    .map(|r| r.curve.excursion(frames, fps))
                    .sum();
                (p, total / members.len() as f64)
            })
            .collect()
    }

    /// Parts whose amplitude is maximal (ties included).
    pub fn dominant_parts(&self, skeleton: &Skeleton, frames: usize, fps: f64) -> Vec<PartLabel> {
        let amp = self.part_amplitude(skeleton, frames, fps);
        let max = amp.values().cloned().fold(0.0, f64::max);
        amp.into_iter()
            .filter(|(_, v)| *v > 0.0 && (max - v).abs() <= 1e-12 * max.max(1.0))
            .map(|(p, _)| p)
            .collect()
    }

    /// Parts with any motion at all.
    pub fn active_parts(&self, skeleton: &Skeleton, frames: usize, fps: f64) -> Vec<PartLabel> {
        self.part_amplitude(skeleton, frames, fps)
            .into_iter()
            .filter(|(_, v)| *v > 0.0)
            .map(|(p, _)| p)
            .collect()
    }

    fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        ensure!(
            !self.vague_texts.is_empty(),
            "template {} has no text",
            self.name
        );
        ensure!(
            self.rotations.iter().any(|r| r.curve.amplitude != 0.0),
            "template {} does not move",
            self.name
        );
        for r in &self.rotations {
            ensure!(
                skeleton.index_of(&r.joint).is_some(),
                "template {} references unknown joint {}",
                self.name,
                r.joint
            );
        }
        Ok(())
    }
}

/// The eight base templates.
pub fn base_templates() -> Vec<MotionTemplate> {
    use PartLabel::*;
    let mut crouch = MotionTemplate::base(
        "crouch",
        &[
            "A person crouches down.",
            "Someone squats low and stands back up.",
        ],
        &[
            (Legs, "Both knees bend deeply as the legs fold."),
            (Buttocks, "The buttocks lower toward the ground."),
        ],
        &[&[
            "crouch",
            "crouches",
            "crouching",
            "squat",
            "squats",
            "squatting",
        ]],
        vec![
            rot("left_hip", X, rise(-1.0, 0.5)),
            rot("right_hip", X, rise(-1.0, 0.5)),
            rot("left_knee", X, rise(2.0, 0.5)),
            rot("right_knee", X, rise(2.0, 0.5)),
            rot("left_ankle", X, rise(-1.0, 0.5)),
            rot("right_ankle", X, rise(-1.0, 0.5)),
            rot("pelvis", X, rise(0.35, 0.5)),
        ],
    );
    crouch.root_height = Some(rise(-0.35, 0.5));

    vec![
        MotionTemplate::base(
            "raise_left_arm",
            &[
                "A person raises the left arm.",
                "Someone lifts their left arm up.",
            ],
            &[(Arms, "The left arm lifts up high above the shoulder.")],
            &[
                &["raise", "raises", "raising", "lift", "lifts", "lifting"],
                &["left"],
                &["arm"],
            ],
            vec![
                rot("left_shoulder", Z, rise(1.4, 0.4)),
                rot("left_elbow", X, rise(-0.4, 0.4)),
            ],
        ),
        MotionTemplate::base(
            "wave_right_arm",
            &[
                "A person waves the right arm.",
                "Someone waves hello with the right arm.",
            ],
            &[(
                Arms,
                "The right arm is held up and swings side to side in a wave.",
            )],
            &[&["wave", "waves", "waving"]],
            vec![
                rot("right_shoulder", Z, curve(-1.5, 0.15, 1.5, 0.0)),
                rot("right_elbow", Z, curve(-0.5, 0.6, 1.5, 0.0)),
            ],
        ),
        MotionTemplate::base(
            "march",
            &["A person marches in place.", "A person walks on the spot."],
            &[(
                Legs,
                "The legs step up and down in place, lifting each knee in turn.",
            )],
            &[&["march", "marches", "marching", "walk", "walks", "walking"]],
            vec![
                rot("left_hip", X, rectified(-0.9, 1.25, 0.0)),
                rot("left_knee", X, rectified(1.2, 1.25, 0.0)),
                rot("right_hip", X, rectified(-0.9, 1.25, PI)),
                rot("right_knee", X, rectified(1.2, 1.25, PI)),
            ],
        ),
        MotionTemplate::base(
            "kick_left_leg",
            &[
                "A person kicks with the left leg.",
                "Someone kicks forward with the left leg.",
            ],
            &[(Legs, "The left leg swings forward in a strong kick.")],
            &[&["kick", "kicks", "kicking"]],
            vec![
                rot("left_hip", X, rectified(-1.4, 0.625, 0.0)),
                rot("left_knee", X, rectified(0.6, 1.25, PI)),
            ],
        ),
        MotionTemplate::base(
            "bow_torso",
            &["A person bows.", "Someone bows forward politely."],
            &[(Torso, "The torso bends forward into a bow.")],
            &[&["bow", "bows", "bowing"]],
            vec![rot("torso", X, rise(0.9, 0.5))],
        ),
        MotionTemplate::base(
            "nod_neck",
            &["A person nods.", "Someone nods in agreement."],
            &[(Neck, "The neck tilts the head down and up in a nod.")],
            &[&["nod", "nods", "nodding"]],
            vec![rot("neck", X, curve(0.15, 0.3, 1.5, 0.0))],
        ),
        MotionTemplate::base(
            "sway_waist",
            &[
                "A person sways side to side.",
                "Someone sways their hips gently.",
            ],
            &[(Waist, "The waist sways from side to side.")],
            &[&["sway", "sways", "swaying"]],
            vec![rot("waist", Z, curve(0.0, 0.35, 0.8, 0.0))],
        ),
        crouch,
    ]
}

const PAIRED: [(&str, &str, &str); 8] = [
    (
        "wave_right_arm",
        "march",
        "A person waves the right arm while marching in place.",
    ),
    (
        "raise_left_arm",
        "sway_waist",
        "A person raises the left arm while swaying side to side.",
    ),
    (
        "nod_neck",
        "march",
        "A person nods while marching in place.",
    ),
    (
        "bow_torso",
        "kick_left_leg",
        "A person bows and kicks with the left leg.",
    ),
    (
        "nod_neck",
        "raise_left_arm",
        "A person nods and raises the left arm.",
    ),
    (
        "sway_waist",
        "kick_left_leg",
        "A person sways side to side and kicks with the left leg.",
    ),
    (
        "bow_torso",
        "wave_right_arm",
        "A person bows and waves the right arm.",
    ),
    (
        "nod_neck",
        "sway_waist",
        "A person nods while swaying side to side.",
    ),
];

const HELD_OUT: [(&str, &str, &str); 4] = [
    (
        "raise_left_arm",
        "march",
        "A person raises the left arm while marching in place.",
    ),
    (
        "wave_right_arm",
        "sway_waist",
        "A person waves the right arm while swaying side to side.",
    ),
    (
        "nod_neck",
        "kick_left_leg",
        "A person nods while kicking with the left leg.",
    ),
    (
        "bow_torso",
        "raise_left_arm",
        "A person bows and raises the left arm.",
    ),
];

fn compose_all(
    base: &[MotionTemplate],
    pairs: &[(&str, &str, &str)],
    held_out: bool,
) -> Vec<MotionTemplate> {
    let get = |n: &str| base.iter().find(|t| t.name == n).expect("base template");
    pairs
        .iter()
        .map(|(a, b, text)| MotionTemplate {
            held_out,
            ..MotionTemplate::compose(get(a), get(b), &[text])
        })
        .collect()
}

/// Two-part compositions that appear in training, none of which pairs the
/// same two templates as a held-out composition.
pub fn paired_templates(base: &[MotionTemplate]) -> Vec<MotionTemplate> {
    compose_all(base, &PAIRED, false)
}

/// Four pairwise compositions that never occur in training.
pub fn composed_templates(base: &[MotionTemplate]) -> Vec<MotionTemplate> {
    compose_all(base, &HELD_OUT, true)
}

/// Base templates, training compositions, then held-out compositions.
pub fn default_templates() -> Vec<MotionTemplate> {
    let base = base_templates();
    let paired = paired_templates(&base);
    let held_out = composed_templates(&base);
    base.into_iter().chain(paired).chain(held_out).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub variations_per_template: usize,
    pub frames: usize,
    pub fps: f64,
    /// Fraction of each base template's variations held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            variations_per_template: 32,
            frames: 32,
            fps: 20.0,
            test_fraction: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub vague_text: String,
    pub parts: FineGrainedDescription,
    pub motion: Motion,
    pub template_name: String,
    pub split: Split,
}

/// Variation knobs drawn per record.
#[derive(Debug, Clone, Copy)]
struct Jitter {
    scale: f64,
    freq: f64,
    phase: f64,
}

pub fn render_template(
    skeleton: &Skeleton,
    template: &MotionTemplate,
    frames: usize,
    fps: f64,
    scale: f64,
    freq_mult: f64,
    phase_shift: f64,
) -> Result<Motion> {
    let mut motion = Motion::rest(
        skeleton,
        frames,
        fps,
        [0.0, Skeleton::DESK_ROOT_HEIGHT, 0.0],
    );
    for i in 0..frames {
        let t = i as f64 / fps;
        for r in &template.rotations {
            let j = skeleton
                .index_of(&r.joint)
                .ok_or_else(|| Error::Contract(format!("unknown joint {}", r.joint)))?;
            let angle = r.curve.eval(t, scale, freq_mult, phase_shift);
            let q = quat_from_axis_angle(&r.axis, angle);
            let cur = motion.rotations[i][j];
            let mut combined = crate::skeleton::quat_mul(&cur, &q);
            if combined[0] < 0.0 {
                combined = combined.map(|v| -v);
            }
            motion.rotations[i][j] = combined;
        }
        if let Some(c) = &template.root_height {
            motion.root_translation[i][1] += c.eval(t, scale, freq_mult, phase_shift);
        }
    }
    Ok(motion)
}

/// Deterministic corpus: `variations` records per template.
pub fn generate_dataset(
    skeleton: &Skeleton,
    templates: &[MotionTemplate],
    config: &DatasetConfig,
) -> Result<Vec<DatasetRecord>> {
    ensure!(!templates.is_empty(), "template list is empty");
    ensure!(
        config.variations_per_template >= 1,
        "variations must be >= 1"
    );
    ensure!(config.frames >= 1, "frames must be >= 1");
    ensure!(
        (0.0..1.0).contains(&config.test_fraction),
        "test_fraction must be in [0, 1)"
    );
    let v = config.variations_per_template;
    let n_test = ((v as f64) * config.test_fraction).round() as usize;
    let n_train = v - n_test.min(v.saturating_sub(1));

    let mut out = Vec::with_capacity(templates.len() * v);
    for (ti, template) in templates.iter().enumerate() {
        template.validate(skeleton)?;
        let desc = template.description();
        for k in 0..v {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((ti * 1_000_003 + k) as u64);
            let jitter = Jitter {
                scale: rng.random_range(0.8..1.2),
                freq: rng.random_range(0.9..1.1),
                phase: rng.random_range(-0.25..0.25),
            };
            let vague = &template.vague_texts[rng.random_range(0..template.vague_texts.len())];
            let motion = render_template(
                skeleton,
                template,
                config.frames,
                config.fps,
                jitter.scale,
                jitter.freq,
                jitter.phase,
            )?;
            let split = if template.held_out {
                Split::Zeroshot
            } else if k < n_train {
                Split::Train
            } else {
                Split::Test
            };
            out.push(DatasetRecord {
                id: format!("{}-{k:03}", template.name),
                vague_text: vague.clone(),
                parts: desc.clone(),
                motion,
                template_name: template.name.clone(),
                split,
            });
        }
    }
    Ok(out)
}

/// Mean per-frame geodesic rotation change of each part's joints (rad/frame).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub scores: BTreeMap<PartLabel, f64>,
}

impl ProbeReport {
    pub fn score(&self, p: PartLabel) -> f64 {
        self.scores[&p]
    }

    pub fn argmax(&self) -> PartLabel {
        let mut best = PartLabel::ALL[0];
        for p in PartLabel::ALL {
            if self.scores[&p] > self.scores[&best] {
                best = p;
            }
        }
        best
    }

    /// True when `target` scores strictly above every other part.
    pub fn dominates(&self, target: PartLabel) -> bool {
        PartLabel::ALL
            .iter()
            .filter(|&&p| p != target)
            .all(|&p| self.scores[&target] > self.scores[&p])
    }
}

pub fn probe_part_activity(skeleton: &Skeleton, motion: &Motion) -> Result<ProbeReport> {
    let n = motion.num_frames();
    ensure!(n >= 2, "activity probe needs at least two frames, got {n}");
    ensure!(
        motion.num_joints() == skeleton.num_joints(),
        "motion has {} joints, skeleton {}",
        motion.num_joints(),
        skeleton.num_joints()
    );
    let scores = PartLabel::ALL
        .iter()
        .map(|&p| {
            let joints = skeleton.part_joints(p);
            let mut total = 0.0;
            for &j in joints {
                for i in 0..n - 1 {
                    total += geodesic_angle(&motion.rotations[i][j], &motion.rotations[i + 1][j]);
                }
            }
            (p, total / (joints.len() * (n - 1)) as f64)
        })
        .collect();
    Ok(ProbeReport { scores })
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    vague_text: String,
    parts: BTreeMap<PartLabel, String>,
    fps: f64,
    n: usize,
    layout: String,
    motion: Vec<Vec<f64>>,
    template: String,
    split: Split,
}

impl DatasetRecord {
    fn to_line(&self) -> RecordLine {
        let width = self.motion.flat_width();
        RecordLine {
            id: self.id.clone(),
            vague_text: self.vague_text.clone(),
            parts: self.parts.parts.clone(),
            fps: self.motion.fps,
            n: self.motion.num_frames(),
            layout: LAYOUT.into(),
            motion: self
                .motion
                .to_flat()
                .chunks(width)
                .map(<[f64]>::to_vec)
                .collect(),
            template: self.template_name.clone(),
            split: self.split,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_line()).expect("record serializes")
    }
}

fn record_from_line(line: RecordLine, lineno: usize) -> Result<DatasetRecord> {
    let invalid = |message: String| Error::Validation {
        line: lineno,
        message,
    };
    if line.layout != LAYOUT {
        return Err(invalid(format!("unsupported layout {:?}", line.layout)));
    }
    if line.motion.len() != line.n || line.n == 0 {
        return Err(invalid(format!(
            "n = {} but motion has {} frames",
            line.n,
            line.motion.len()
        )));
    }
    let width = line.motion[0].len();
    if width < 7 || !(width - 3).is_multiple_of(4) || line.motion.iter().any(|f| f.len() != width) {
        return Err(invalid("frame width does not match root3+quat4xJ".into()));
    }
    for (i, frame) in line.motion.iter().enumerate() {
        for (k, q) in frame[3..].chunks(4).enumerate() {
            let norm = quat_norm(&[q[0], q[1], q[2], q[3]]);
            if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
                return Err(invalid(format!(
                    "frame {i} joint {k}: quaternion norm {norm:.6} drifts from 1"
                )));
            }
        }
    }
    let flat: Vec<f64> = line.motion.into_iter().flatten().collect();
    let motion =
        Motion::from_flat(&flat, (width - 3) / 4, line.fps).map_err(|e| invalid(e.to_string()))?;
    let mut parts = FineGrainedDescription::from_parts(&line.parts);
    parts.degraded = false;
    if parts.parts != line.parts {
        return Err(invalid(
            "parts must contain exactly the six body-part labels".into(),
        ));
    }
    Ok(DatasetRecord {
        id: line.id,
        vague_text: line.vague_text,
        parts,
        motion,
        template_name: line.template,
        split: line.split,
    })
}

pub fn write_jsonl(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_json_line()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(record_from_line(parsed, lineno)?);
    }
    Ok(out)
}

pub fn split_records(records: &[DatasetRecord], split: Split) -> Vec<&DatasetRecord> {
    records.iter().filter(|r| r.split == split).collect()
}

/// Rest pose with the desk root height; used as a neutral reference.
pub fn rest_motion(skeleton: &Skeleton, frames: usize, fps: f64) -> Motion {
    let mut m = Motion::rest(
        skeleton,
        frames,
        fps,
        [0.0, Skeleton::DESK_ROOT_HEIGHT, 0.0],
    );
    for f in &mut m.rotations {
        f.fill(IDENTITY);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_probe_is_zero() {
        let skel = Skeleton::desk();
        let m = rest_motion(&skel, 8, 20.0);
        let report = probe_part_activity(&skel, &m).unwrap();
        assert!(report.scores.values().all(|&v| v == 0.0));
    }

    #[test]
    fn probe_needs_two_frames() {
        let skel = Skeleton::desk();
        let m = rest_motion(&skel, 1, 20.0);
        assert!(probe_part_activity(&skel, &m).is_err());
    }

    #[test]
    fn single_joint_constant_rate() {
        let skel = Skeleton::desk();
        let mut m = rest_motion(&skel, 10, 20.0);
        let torso = skel.index_of("torso").unwrap();
        for (i, f) in m.rotations.iter_mut().enumerate() {
            f[torso] = quat_from_axis_angle(&[1.0, 0.0, 0.0], 0.1 * i as f64);
        }
        let r = probe_part_activity(&skel, &m).unwrap();
        assert!((r.score(PartLabel::Torso) - 0.1).abs() < 1e-12);
        assert_eq!(r.score(PartLabel::Arms), 0.0);
    }

    #[test]
    fn empty_templates_rejected() {
        assert!(generate_dataset(&Skeleton::desk(), &[], &DatasetConfig::default()).is_err());
    }

    #[test]
    fn dominant_parts_of_base_templates() {
        let skel = Skeleton::desk();
        let expect = [
            ("raise_left_arm", PartLabel::Arms),
            ("wave_right_arm", PartLabel::Arms),
            ("march", PartLabel::Legs),
            ("kick_left_leg", PartLabel::Legs),
            ("bow_torso", PartLabel::Torso),
            ("nod_neck", PartLabel::Neck),
            ("sway_waist", PartLabel::Waist),
            ("crouch", PartLabel::Legs),
        ];
        for t in base_templates() {
            let want = expect.iter().find(|(n, _)| *n == t.name).unwrap().1;
            assert_eq!(t.dominant_parts(&skel, 32, 20.0), vec![want], "{}", t.name);
        }
    }
}
