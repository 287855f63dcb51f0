//! Train-and-compare routine shared by `ablate` and the acceptance suite.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use fgmdm_core::checkpoint::{save_checkpoint, Checkpoint};
use fgmdm_core::conditioning::ConditionText;
use fgmdm_core::dataset::{
    default_templates, generate_dataset, probe_part_activity, split_records, DatasetRecord,
    MotionTemplate, Split,
};
use fgmdm_core::denoiser::ConditioningMode;
use fgmdm_core::description::{FineGrainedDescription, PartLabel};
use fgmdm_core::diffusion::make_schedule;
use fgmdm_core::eval::{
    evaluate, retrieval_top1, train_evaluator, EvalPair, EvalReport, Evaluator,
};
use fgmdm_core::normalize::Normalizer;
use fgmdm_core::sampling::{sample_motion, SampleOptions};
use fgmdm_core::skeleton::{Motion, Skeleton};
use fgmdm_core::training::{moving_average, prepare_items, StepStats, Trainer, TELEMETRY_HEADER};
use serde::Serialize;

use crate::config::RunConfig;

/// Fraction of a component's mean training activity a composed sample must
/// reach on that component's dominant part.
pub const ACTIVITY_FRACTION: f64 = 0.3;
pub const COMPOSITION_SAMPLES: usize = 8;
/// Steps averaged for the initial and final loss.
pub const LOSS_WINDOW: usize = 50;

pub struct Corpus {
    pub skeleton: Skeleton,
    pub templates: Vec<MotionTemplate>,
    pub records: Vec<DatasetRecord>,
}

impl Corpus {
    pub fn generate(cfg: &RunConfig) -> anyhow::Result<Self> {
        let skeleton = cfg.skeleton();
        let templates = default_templates();
        let records = generate_dataset(&skeleton, &templates, &cfg.dataset)?;
        Ok(Self {
            skeleton,
            templates,
            records,
        })
    }

    pub fn template(&self, name: &str) -> Option<&MotionTemplate> {
        self.templates.iter().find(|t| t.name == name)
    }

    pub fn split(&self, split: Split) -> Vec<&DatasetRecord> {
        split_records(&self.records, split)
    }

    fn pairs(&self, split: Split) -> Vec<EvalPair<'_>> {
        self.split(split)
            .into_iter()
            .map(|r| EvalPair {
                motion: &r.motion,
                text: &r.parts.full_text,
            })
            .collect()
    }

    /// Mean probe activity of `part` over a template's training records.
    pub fn mean_train_activity(&self, template: &str, part: PartLabel) -> anyhow::Result<f64> {
        let scores = self
            .split(Split::Train)
            .into_iter()
            .filter(|r| r.template_name == template)
            .map(|r| Ok(probe_part_activity(&self.skeleton, &r.motion)?.score(part)))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        anyhow::ensure!(
            !scores.is_empty(),
            "template {template} has no training records"
        );
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

pub fn fit_evaluator(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<(Evaluator, f64)> {
    let train = corpus.pairs(Split::Train);
    let (ev, _) = train_evaluator(&train, &cfg.embedder, &cfg.evaluation.evaluator)?;
    let test = corpus.pairs(Split::Test);
    let top1 = retrieval_top1(&ev, &test, 16.min(test.len()), cfg.evaluation.seed)?;
    Ok((ev, top1))
}

pub fn train_model(
    cfg: &RunConfig,
    corpus: &Corpus,
    mode: ConditioningMode,
    out_dir: Option<&Path>,
) -> anyhow::Result<(Trainer, Vec<StepStats>)> {
    let mut block = cfg.run_block();
    block.model.mode = mode;
    let train = corpus.split(Split::Train);
    block.normalizer = Normalizer::fit(train.iter().map(|r| &r.motion))?;
    let items = prepare_items(&corpus.skeleton, &cfg.embedder, &train, &block.training)?;
    let mut trainer = Trainer::new(block, corpus.skeleton.clone())?;
    let stats = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
            let mut log = std::fs::File::create(dir.join("telemetry.csv"))?;
            writeln!(log, "{TELEMETRY_HEADER}")?;
            let stats = trainer.run(&items, Some(&mut log), |t| {
                save_checkpoint(
                    &Checkpoint::from_trainer(t),
                    &dir.join(format!("ckpt-{:06}.bin", t.step)),
                )
            })?;
            save_checkpoint(
                &Checkpoint::from_trainer(&trainer),
                &dir.join("checkpoint.bin"),
            )?;
            stats
        }
        None => trainer.run(&items, None, |_| Ok(()))?,
    };
    Ok((trainer, stats))
}

pub fn sample(
    cfg: &RunConfig,
    trainer: &Trainer,
    desc: &FineGrainedDescription,
    seed: u64,
) -> anyhow::Result<Motion> {
    let block = &trainer.config;
    let schedule = make_schedule(block.diffusion.steps, block.diffusion.schedule)?;
    let text = ConditionText::new(&block.embedder, desc);
    let opts = SampleOptions {
        frames: cfg.sampling.frames,
        fps: cfg.sampling.fps,
        guidance_scale: cfg.diffusion.guidance_scale,
        seed,
    };
    Ok(sample_motion(
        &trainer.params,
        &block.model,
        &schedule,
        &block.normalizer,
        &text,
        &opts,
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompositionOutcome {
    pub template: String,
    pub thresholds: Vec<(PartLabel, f64)>,
    pub hits: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantOutcome {
    pub mode: ConditioningMode,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_seconds: f64,
    /// Seen-template test prompts whose target part out-moves every other part.
    pub probe_hits: usize,
    pub probe_total: usize,
    pub report: EvalReport,
    pub composition: Vec<CompositionOutcome>,
}

impl VariantOutcome {
    pub fn composition_hits(&self) -> (usize, usize) {
        self.composition
            .iter()
            .fold((0, 0), |(h, t), c| (h + c.hits, t + c.total))
    }
}

/// Samples one motion per test record; scores the probe on base templates
/// and FID/diversity/MM-Dist on all of them.
pub fn assess_test_split(
    cfg: &RunConfig,
    corpus: &Corpus,
    trainer: &Trainer,
    evaluator: &Evaluator,
) -> anyhow::Result<(usize, usize, EvalReport)> {
    let test = corpus.split(Split::Test);
    let mut generated = Vec::with_capacity(test.len());
    let (mut hits, mut total) = (0, 0);
    for (i, r) in test.iter().enumerate() {
        let m = sample(cfg, trainer, &r.parts, cfg.evaluation.seed + i as u64)?;
        let template = corpus
            .template(&r.template_name)
            .context("record template")?;
        if !template.is_composed() {
            let target =
                template.dominant_parts(&corpus.skeleton, cfg.dataset.frames, cfg.dataset.fps)[0];
            total += 1;
            if probe_part_activity(&corpus.skeleton, &m)?.dominates(target) {
                hits += 1;
            }
        }
        generated.push(m);
    }
    let pairs: Vec<EvalPair<'_>> = generated
        .iter()
        .zip(&test)
        .map(|(m, r)| EvalPair {
            motion: m,
            text: &r.parts.full_text,
        })
        .collect();
    let reference: Vec<&Motion> = test.iter().map(|r| &r.motion).collect();
    let report = evaluate(
        evaluator,
        &reference,
        &pairs,
        cfg.evaluation.pair_count,
        cfg.evaluation.seed,
    )?;
    Ok((hits, total, report))
}

/// For each held-out composition, counts samples in which both component
/// parts exceed their activity thresholds.
pub fn composition_probe(
    cfg: &RunConfig,
    corpus: &Corpus,
    trainer: &Trainer,
) -> anyhow::Result<Vec<CompositionOutcome>> {
    let mut out = Vec::new();
    for t in corpus.templates.iter().filter(|t| t.held_out) {
        let mut thresholds = Vec::new();
        for c in &t.components {
            let base = corpus.template(c).context("component template")?;
            let part =
                base.dominant_parts(&corpus.skeleton, cfg.dataset.frames, cfg.dataset.fps)[0];
            thresholds.push((
                part,
                ACTIVITY_FRACTION * corpus.mean_train_activity(c, part)?,
            ));
        }
        let desc = t.description();
        let mut hits = 0;
        for s in 0..COMPOSITION_SAMPLES {
            let m = sample(cfg, trainer, &desc, cfg.evaluation.seed + 10_000 + s as u64)?;
            let probe = probe_part_activity(&corpus.skeleton, &m)?;
            if thresholds.iter().all(|(p, th)| probe.score(*p) > *th) {
                hits += 1;
            }
        }
        out.push(CompositionOutcome {
            template: t.name.clone(),
            thresholds,
            hits,
            total: COMPOSITION_SAMPLES,
        });
    }
    Ok(out)
}

pub fn run_variant(
    cfg: &RunConfig,
    corpus: &Corpus,
    evaluator: &Evaluator,
    mode: ConditioningMode,
    out_dir: Option<&Path>,
) -> anyhow::Result<VariantOutcome> {
    let start = Instant::now();
    let (trainer, stats) = train_model(cfg, corpus, mode, out_dir)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let totals: Vec<f64> = stats.iter().map(|s| s.total).collect();
    let head = &totals[..LOSS_WINDOW.min(totals.len())];
    let (probe_hits, probe_total, report) = assess_test_split(cfg, corpus, &trainer, evaluator)?;
    let composition = composition_probe(cfg, corpus, &trainer)?;
    Ok(VariantOutcome {
        mode,
        initial_loss: head.iter().sum::<f64>() / head.len().max(1) as f64,
        final_loss: moving_average(&totals, LOSS_WINDOW),
        train_seconds,
        probe_hits,
        probe_total,
        report,
        composition,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutcome {
    pub evaluator_top1: f64,
    pub part_tokens: VariantOutcome,
    pub global_only: VariantOutcome,
}

/// Trains both conditioning variants under identical data, budget and seeds.
pub fn run_ablation(cfg: &RunConfig, out_dir: Option<&Path>) -> anyhow::Result<AblationOutcome> {
    let corpus = Corpus::generate(cfg)?;
    let (evaluator, evaluator_top1) = fit_evaluator(cfg, &corpus)?;
    tracing::info!(evaluator_top1, "evaluator trained");
    let sub = |name: &str| out_dir.map(|d| d.join(name));
    let part_tokens = run_variant(
        cfg,
        &corpus,
        &evaluator,
        ConditioningMode::PartTokens,
        sub("part-tokens").as_deref(),
    )?;
    let global_only = run_variant(
        cfg,
        &corpus,
        &evaluator,
        ConditioningMode::GlobalOnly,
        sub("global-only").as_deref(),
    )?;
    Ok(AblationOutcome {
        evaluator_top1,
        part_tokens,
        global_only,
    })
}
