//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fgmdm_core::bvh::export_bvh;
use fgmdm_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use fgmdm_core::dataset::{read_jsonl, split_records, write_jsonl, DatasetRecord, Split};
use fgmdm_core::description::{FineGrainedDescription, PartLabel};
use fgmdm_core::eval::{evaluate, train_evaluator, EvalPair};
use fgmdm_core::normalize::Normalizer;
use fgmdm_core::skeleton::Motion;
use fgmdm_core::training::{moving_average, prepare_items, Trainer, TELEMETRY_HEADER};
use fgmdm_paraphrase::client::paraphrase_all;
use fgmdm_paraphrase::{Lexicon, LlmClient, ParaphraseCache};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiment::{self, Corpus};
use crate::manifest::{manifest_path, Manifest};
use crate::{Cli, Command, DatasetAction};

pub fn dispatch(cli: &Cli, cfg: &RunConfig, argv: &[String]) -> anyhow::Result<()> {
    match &cli.command {
        Command::Dataset {
            action: DatasetAction::Generate { out },
        } => dataset_generate(cfg, out, argv),
        Command::Paraphrase { text, input, out } => {
            paraphrase(cfg, text, input.as_deref(), out.as_deref(), argv)
        }
        Command::Train { data, out, resume } => {
            train(cfg, data.as_deref(), out, resume.as_deref(), argv)
        }
        Command::Sample {
            checkpoint,
            text,
            parts_file,
            out,
            ..
        } => sample(
            cfg,
            checkpoint,
            text.as_deref(),
            parts_file.as_deref(),
            out,
            argv,
        ),
        Command::Evaluate {
            reference,
            generated,
            out,
        } => evaluate_cmd(cfg, reference, generated, out, argv),
        Command::ExportBvh { input, out } => export(cfg, input, out, argv),
        Command::Ablate { out } => ablate(cfg, out, argv),
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    Ok(())
}

fn finish(mut manifest: Manifest, outputs: Vec<PathBuf>, path: PathBuf) -> anyhow::Result<()> {
    manifest.outputs = outputs;
    manifest.write(&path)
}

fn dataset_generate(cfg: &RunConfig, out: &Path, argv: &[String]) -> anyhow::Result<()> {
    let corpus = Corpus::generate(cfg)?;
    ensure_parent(out)?;
    write_jsonl(&corpus.records, out)?;
    let count = |s| split_records(&corpus.records, s).len();
    println!(
        "wrote {} records to {} (train {}, test {}, zeroshot {})",
        corpus.records.len(),
        out.display(),
        count(Split::Train),
        count(Split::Test),
        count(Split::Zeroshot)
    );
    finish(
        Manifest::new("dataset generate", argv, cfg),
        vec![out.to_path_buf()],
        manifest_path(out, false),
    )
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?)
}

/// Paraphrases with the configured mode, cache and endpoint.
pub fn paraphrase_sentences(
    cfg: &RunConfig,
    sentences: &[String],
) -> anyhow::Result<Vec<FineGrainedDescription>> {
    let p = &cfg.paraphrase;
    let client = if p.offline {
        None
    } else {
        Some(LlmClient::new(p.client.clone().with_env_key())?)
    };
    let cache = match &p.cache {
        Some(path) => ParaphraseCache::open(path)?,
        None => ParaphraseCache::in_memory(),
    };
    let cache = tokio::sync::Mutex::new(cache);
    let lexicon = Lexicon::default();
    let out = runtime()?.block_on(paraphrase_all(
        sentences,
        client.as_ref(),
        &cache,
        &lexicon,
        p.offline,
    ))?;
    Ok(out)
}

#[derive(Serialize)]
struct ParaphraseLine<'a> {
    sentence: &'a str,
    full_text: &'a str,
    parts: &'a BTreeMap<PartLabel, String>,
    degraded: bool,
}

fn paraphrase(
    cfg: &RunConfig,
    texts: &[String],
    input: Option<&Path>,
    out: Option<&Path>,
    argv: &[String],
) -> anyhow::Result<()> {
    let mut sentences = texts.to_vec();
    if let Some(path) = input {
        let body = fs::read_to_string(path).with_context(|| path.display().to_string())?;
        sentences.extend(
            body.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from),
        );
    }
    if sentences.is_empty() {
        bail!("nothing to paraphrase: pass --text or --input");
    }
    let descs = paraphrase_sentences(cfg, &sentences)?;
    let mut lines = String::new();
    for (s, d) in sentences.iter().zip(&descs) {
        let line = ParaphraseLine {
            sentence: s,
            full_text: &d.full_text,
            parts: &d.parts,
            degraded: d.degraded,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    match out {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, lines).with_context(|| path.display().to_string())?;
            finish(
                Manifest::new("paraphrase", argv, cfg),
                vec![path.to_path_buf()],
                manifest_path(path, false),
            )
        }
        None => {
            print!("{lines}");
            Ok(())
        }
    }
}

fn train(
    cfg: &RunConfig,
    data: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    argv: &[String],
) -> anyhow::Result<()> {
    let skeleton = cfg.skeleton();
    let records = match data {
        Some(path) => read_jsonl(path)?,
        None => Corpus::generate(cfg)?.records,
    };
    let train = split_records(&records, Split::Train);
    if train.is_empty() {
        bail!("dataset has no training records");
    }
    let mut trainer = match resume {
        Some(path) => {
            let mut t = load_checkpoint(path)?.into_trainer()?;
            if t.config.model != cfg.model
                || t.config.diffusion != cfg.diffusion
                || t.config.embedder != cfg.embedder
            {
                bail!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                );
            }
            t.config.training.steps = cfg.training.steps;
            t
        }
        None => {
            let mut block = cfg.run_block();
            block.normalizer = Normalizer::fit(train.iter().map(|r| &r.motion))?;
            Trainer::new(block, skeleton.clone())?
        }
    };
    let items = prepare_items(&skeleton, &cfg.embedder, &train, &trainer.config.training)?;
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let telemetry = out.join("telemetry.csv");
    let mut log = BufWriter::new(if resume.is_some() && telemetry.exists() {
        fs::OpenOptions::new().append(true).open(&telemetry)?
    } else {
        let mut f = fs::File::create(&telemetry)?;
        writeln!(f, "{TELEMETRY_HEADER}")?;
        f
    });
    let mut outputs = vec![telemetry.clone()];
    let stats = trainer.run(&items, Some(&mut log), |t| {
        let path = out.join(format!("ckpt-{:06}.bin", t.step));
        save_checkpoint(&Checkpoint::from_trainer(t), &path)
    })?;
    log.flush()?;
    let interval = trainer.config.training.checkpoint_interval;
    if interval > 0 {
        outputs.extend(
            stats
                .iter()
                .filter(|s| s.step % interval == 0)
                .map(|s| out.join(format!("ckpt-{:06}.bin", s.step))),
        );
    }
    let final_path = out.join("checkpoint.bin");
    save_checkpoint(&Checkpoint::from_trainer(&trainer), &final_path)?;
    outputs.push(final_path.clone());
    let totals: Vec<f64> = stats.iter().map(|s| s.total).collect();
    println!(
        "trained to step {}; loss (moving average) {:.4}; checkpoint {}",
        trainer.step,
        moving_average(&totals, experiment::LOSS_WINDOW),
        final_path.display()
    );
    finish(
        Manifest::new("train", argv, cfg),
        outputs,
        manifest_path(out, true),
    )
}

fn parts_from_file(path: &Path) -> anyhow::Result<FineGrainedDescription> {
    let body = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let parts: BTreeMap<PartLabel, String> = serde_json::from_str(&body)
        .with_context(|| format!("{}: expected an object of part sentences", path.display()))?;
    Ok(FineGrainedDescription::from_parts(&parts))
}

fn sample(
    cfg: &RunConfig,
    checkpoint: &Path,
    text: Option<&str>,
    parts_file: Option<&Path>,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<()> {
    let trainer = load_checkpoint(checkpoint)?.into_trainer()?;
    if cfg.sampling.frames > trainer.config.model.max_frames {
        bail!(
            "sampling.frames {} exceeds the checkpoint's max_frames {}",
            cfg.sampling.frames,
            trainer.config.model.max_frames
        );
    }
    let (vague, desc) = match (parts_file, text) {
        (Some(path), _) => (String::new(), parts_from_file(path)?),
        (None, Some(t)) => {
            let d = paraphrase_sentences(cfg, &[t.to_string()])?.remove(0);
            if d.degraded {
                tracing::warn!(
                    text = t,
                    "paraphrase matched no body part; conditioning on filler text"
                );
            }
            (t.to_string(), d)
        }
        (None, None) => bail!("pass --text or --parts-file"),
    };
    let mut records = Vec::with_capacity(cfg.sampling.num_samples);
    for i in 0..cfg.sampling.num_samples {
        let seed = cfg.sampling.seed + i as u64;
        let motion = experiment::sample(cfg, &trainer, &desc, seed)?;
        records.push(DatasetRecord {
            id: format!("sample-{seed}"),
            vague_text: vague.clone(),
            parts: desc.clone(),
            motion,
            template_name: "generated".into(),
            split: Split::Generated,
        });
    }
    ensure_parent(out)?;
    write_jsonl(&records, out)?;
    println!("wrote {} motion(s) to {}", records.len(), out.display());
    finish(
        Manifest::new("sample", argv, cfg),
        vec![out.to_path_buf()],
        manifest_path(out, false),
    )
}

fn evaluate_cmd(
    cfg: &RunConfig,
    reference: &Path,
    generated: &Path,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<()> {
    let refs = read_jsonl(reference)?;
    let gens = read_jsonl(generated)?;
    let pairs = |rs: Vec<&DatasetRecord>| -> Vec<(Motion, String)> {
        rs.into_iter()
            .map(|r| (r.motion.clone(), r.parts.full_text.clone()))
            .collect()
    };
    let train = pairs(split_records(&refs, Split::Train));
    let mut test = pairs(split_records(&refs, Split::Test));
    if train.len() < 2 {
        bail!(
            "{} needs at least two training records for the evaluator",
            reference.display()
        );
    }
    if test.len() < 2 {
        test = train.clone();
    }
    if gens.len() < 2 {
        bail!("{} needs at least two motions", generated.display());
    }
    let train_pairs: Vec<EvalPair<'_>> = train
        .iter()
        .map(|(m, t)| EvalPair { motion: m, text: t })
        .collect();
    let (ev, _) = train_evaluator(&train_pairs, &cfg.embedder, &cfg.evaluation.evaluator)?;
    let reference_motions: Vec<&Motion> = test.iter().map(|(m, _)| m).collect();
    let gen_pairs: Vec<EvalPair<'_>> = gens
        .iter()
        .map(|r| EvalPair {
            motion: &r.motion,
            text: &r.parts.full_text,
        })
        .collect();
    let report = evaluate(
        &ev,
        &reference_motions,
        &gen_pairs,
        cfg.evaluation.pair_count,
        cfg.evaluation.seed,
    )?;
    ensure_parent(out)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .with_context(|| out.display().to_string())?;
    writeln!(f, "{}", report.to_line())?;
    println!("{}", report.to_line());
    finish(
        Manifest::new("evaluate", argv, cfg),
        vec![out.to_path_buf()],
        manifest_path(out, false),
    )
}

fn export(cfg: &RunConfig, input: &Path, out: &Path, argv: &[String]) -> anyhow::Result<()> {
    let skeleton = cfg.skeleton();
    let records = read_jsonl(input)?;
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let mut outputs = Vec::with_capacity(records.len());
    for r in &records {
        let name: String =
            r.id.chars()
                .map(|c| {
                    if c.is_alphanumeric() || c == '-' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
        let path = out.join(format!("{name}.bvh"));
        export_bvh(&skeleton, &r.motion, &path)?;
        outputs.push(path);
    }
    println!("wrote {} BVH file(s) to {}", outputs.len(), out.display());
    finish(
        Manifest::new("export-bvh", argv, cfg),
        outputs,
        manifest_path(out, true),
    )
}

fn ablate(cfg: &RunConfig, out: &Path, argv: &[String]) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let outcome = experiment::run_ablation(cfg, Some(out))?;
    let path = out.join("ablation.jsonl");
    let mut lines = String::new();
    for v in [&outcome.part_tokens, &outcome.global_only] {
        lines.push_str(&serde_json::to_string(v)?);
        lines.push('\n');
        let (h, t) = v.composition_hits();
        println!(
            "{:<12} FID {:.4}  diversity {:.4}  MM-Dist {:.4}  probe {}/{}  composition {}/{}  loss {:.3} -> {:.3}",
            serde_json::to_value(v.mode)?.as_str().unwrap_or_default(),
            v.report.fid,
            v.report.diversity,
            v.report.mm_dist,
            v.probe_hits,
            v.probe_total,
            h,
            t,
            v.initial_loss,
            v.final_loss
        );
    }
    fs::write(&path, lines)?;
    println!("evaluator top-1 retrieval {:.3}", outcome.evaluator_top1);
    let outputs = vec![
        path,
        out.join("part-tokens/checkpoint.bin"),
        out.join("global-only/checkpoint.bin"),
    ];
    finish(
        Manifest::new("ablate", argv, cfg),
        outputs,
        manifest_path(out, true),
    )
}
