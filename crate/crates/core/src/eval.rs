//! FID, diversity and MM-Dist, plus the contrastive text–motion evaluator
//! whose embeddings define the feature space.

use std::collections::BTreeMap;

use fgmdm_tensor::{AdamConfig, AdamState, Tape, Tensor, Var};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::TextEmbedder;
use crate::error::{ensure, Result};
use crate::params::{Bound, ParamSet};
use crate::skeleton::Motion;

pub const SHRINKAGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Set when the sample was too small and `δI` was added.
    pub shrunk: bool,
}

/// Mean and unbiased covariance of `features`.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    ensure!(
        features.len() >= 2,
        "need at least two feature vectors, got {}",
        features.len()
    );
    let d = features[0].len();
    ensure!(
        d > 0 && features.iter().all(|f| f.len() == d),
        "feature widths differ"
    );
    let n = features.len() as f64;
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    let shrunk = features.len() < d + 1;
    if shrunk {
        cov += DMatrix::identity(d, d) * SHRINKAGE;
    }
    Ok(GaussianStats { mean, cov, shrunk })
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    ensure!(m.is_square(), "covariance must be square");
    for i in 0..m.nrows() {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            ensure!(
                (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0),
                "covariance is not symmetric at ({i}, {j})"
            );
        }
    }
    Ok(())
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
}

/// `A^{1/2}` with negative eigenvalues clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let vals = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.mean.len();
    ensure!(
        b.mean.len() == d && a.cov.nrows() == d && b.cov.nrows() == d,
        "dimension mismatch: {d} vs {}",
        b.mean.len()
    );
    check_symmetric(&a.cov)?;
    check_symmetric(&b.cov)?;
    let sa = sqrt_psd(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let tr_sqrt: f64 = sym_eigen(&inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let dm = (&a.mean - &b.mean).norm_squared();
    Ok((dm + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt).max(0.0))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean distance over up to `pair_count` disjoint random pairs.
pub fn diversity(features: &[Vec<f64>], pair_count: usize, seed: u64) -> Result<f64> {
    ensure!(features.len() >= 2, "diversity needs at least two features");
    ensure!(pair_count >= 1, "pair_count must be >= 1");
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pairs = pair_count.min(features.len() / 2);
    let total: f64 = (0..pairs)
        .map(|i| dist(&features[idx[2 * i]], &features[idx[2 * i + 1]]))
        .sum();
    Ok(total / pairs as f64)
}

pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    ensure!(
        text.len() == motion.len() && !text.is_empty(),
        "{} text features vs {} motion features",
        text.len(),
        motion.len()
    );
    Ok(text
        .iter()
        .zip(motion)
        .map(|(a, b)| dist(a, b))
        .sum::<f64>()
        / text.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid: f64,
    pub diversity: f64,
    pub mm_dist: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub d_eval: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            d_eval: 32,
            hidden: 128,
            steps: 500,
            batch: 8,
            lr: 1e-3,
            temperature: 0.1,
            seed: 0,
        }
    }
}

/// Motion and text encoders sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub config: EvaluatorConfig,
    pub embedder: TextEmbedder,
    pub d_flat: usize,
    pub params: ParamSet<f32>,
}

/// A motion paired with the text it should match.
#[derive(Debug, Clone, Copy)]
pub struct EvalPair<'a> {
    pub motion: &'a Motion,
    pub text: &'a str,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit) as f32)
            .collect(),
    )
    .expect("shape")
}

/// Per-frame `[x, x_{i+1} − x_i]`, the last frame's difference being zero.
fn frame_features(m: &Motion) -> Tensor<f32> {
    let flat = m.to_flat();
    let (n, w) = (m.num_frames(), m.flat_width());
    let mut data = Vec::with_capacity(n * 2 * w);
    for i in 0..n {
        let row = &flat[i * w..(i + 1) * w];
        data.extend(row.iter().map(|&v| v as f32));
        if i + 1 < n {
            let next = &flat[(i + 1) * w..(i + 2) * w];
            data.extend(next.iter().zip(row).map(|(a, b)| (a - b) as f32));
        } else {
            data.extend(std::iter::repeat_n(0.0f32, w));
        }
    }
    Tensor::new(vec![n, 2 * w], data).expect("shape")
}

fn mlp(tape: &mut Tape<f32>, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let h = tape.matmul(x, p.var(&format!("{prefix}.w1"))?)?;
    let h = tape.add_row(h, p.var(&format!("{prefix}.b1"))?)?;
    let h = tape.gelu(h)?;
    Ok(h)
}

impl Evaluator {
    pub fn init(config: EvaluatorConfig, embedder: TextEmbedder, d_flat: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, d) = (config.hidden, config.d_eval);
        let mut p = ParamSet::default();
        p.push("m.w1", xavier(&mut rng, 2 * d_flat, h));
        p.push("m.b1", Tensor::zeros(&[h]));
        p.push("m.w2", xavier(&mut rng, h, d));
        p.push("m.b2", Tensor::zeros(&[d]));
        p.push("t.w1", xavier(&mut rng, embedder.dim, h));
        p.push("t.b1", Tensor::zeros(&[h]));
        p.push("t.w2", xavier(&mut rng, h, d));
        p.push("t.b2", Tensor::zeros(&[d]));
        Self {
            config,
            embedder,
            d_flat,
            params: p,
        }
    }

    fn motion_row(&self, tape: &mut Tape<f32>, p: &Bound, m: &Motion) -> Result<Var> {
        ensure!(
            m.flat_width() == self.d_flat,
            "motion width {} vs evaluator {}",
            m.flat_width(),
            self.d_flat
        );
        let n = m.num_frames();
        let x = tape.constant(frame_features(m));
        let h = mlp(tape, p, x, "m")?;
        let pool = tape.constant(Tensor::full(&[1, n], 1.0 / n as f32));
        let h = tape.matmul(pool, h)?;
        let h = tape.matmul(h, p.var("m.w2")?)?;
        Ok(tape.add_row(h, p.var("m.b2")?)?)
    }

    fn text_row(&self, tape: &mut Tape<f32>, p: &Bound, text: &str) -> Result<Var> {
        let e = self.embedder.embed(text);
        let x = tape.constant(Tensor::new(vec![1, e.len()], e)?);
        let h = mlp(tape, p, x, "t")?;
        let h = tape.matmul(h, p.var("t.w2")?)?;
        Ok(tape.add_row(h, p.var("t.b2")?)?)
    }

    fn encode(
        &self,
        motions: &[&Motion],
        texts: &[&str],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let read = |tape: &mut Tape<f32>, v: Var| -> Result<Vec<f64>> {
            let n = tape.normalize_rows(v, 1e-12)?;
            Ok(tape.value(n).data().iter().map(|&x| f64::from(x)).collect())
        };
        let mut m = Vec::with_capacity(motions.len());
        for motion in motions {
            let r = self.motion_row(&mut tape, &p, motion)?;
            m.push(read(&mut tape, r)?);
        }
        let mut t = Vec::with_capacity(texts.len());
        for text in texts {
            let r = self.text_row(&mut tape, &p, text)?;
            t.push(read(&mut tape, r)?);
        }
        Ok((m, t))
    }

    pub fn motion_features(&self, motions: &[&Motion]) -> Result<Vec<Vec<f64>>> {
        Ok(self.encode(motions, &[])?.0)
    }

    pub fn text_features(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(self.encode(&[], texts)?.1)
    }

    /// Symmetric InfoNCE over one batch.
    fn batch_loss(&self, tape: &mut Tape<f32>, p: &Bound, batch: &[EvalPair<'_>]) -> Result<Var> {
        let mut ms = Vec::with_capacity(batch.len());
        let mut ts = Vec::with_capacity(batch.len());
        for pair in batch {
            ms.push(self.motion_row(tape, p, pair.motion)?);
            ts.push(self.text_row(tape, p, pair.text)?);
        }
        let m = tape.concat_rows(&ms)?;
        let m = tape.normalize_rows(m, 1e-12)?;
        let t = tape.concat_rows(&ts)?;
        let t = tape.normalize_rows(t, 1e-12)?;
        let tt = tape.transpose(t)?;
        let logits = tape.matmul(m, tt)?;
        let logits = tape.scale(logits, (1.0 / self.config.temperature) as f32)?;
        let targets: Vec<usize> = (0..batch.len()).collect();
        let a = tape.cross_entropy(logits, &targets)?;
        let lt = tape.transpose(logits)?;
        let b = tape.cross_entropy(lt, &targets)?;
        let s = tape.add(a, b)?;
        Ok(tape.scale(s, 0.5)?)
    }
}

/// Trains the evaluator; each batch holds pairs with distinct texts so the
/// in-batch negatives are genuine. Returns the per-step losses.
pub fn train_evaluator(
    pairs: &[EvalPair<'_>],
    embedder: &TextEmbedder,
    config: &EvaluatorConfig,
) -> Result<(Evaluator, Vec<f64>)> {
    ensure!(!pairs.is_empty(), "evaluator needs training pairs");
    let d_flat = pairs[0].motion.flat_width();
    let mut ev = Evaluator::init(config.clone(), embedder.clone(), d_flat);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.text).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    if groups.len() < 2 {
        tracing::warn!("evaluator data has a single text class; retrieval checks are meaningless");
    }
    let batch = config.batch.min(groups.len()).max(1);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        ev.params.tensors(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xe7a1);
    let mut losses = Vec::with_capacity(config.steps);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    for _ in 0..config.steps {
        order.shuffle(&mut rng);
        let chosen: Vec<EvalPair<'_>> = order[..batch]
            .iter()
            .map(|&g| pairs[groups[g][rng.random_range(0..groups[g].len())]])
            .collect();
        let mut tape = Tape::new();
        let p = ev.params.bind(&mut tape, true);
        let loss = ev.batch_loss(&mut tape, &p, &chosen)?;
        losses.push(f64::from(tape.value(loss).item()));
        let mut g = tape.backward(loss)?;
        let grads = ev
            .params
            .names()
            .iter()
            .map(|n| p.var(n).map(|v| g.take(v)))
            .collect::<Result<Vec<_>>>()?;
        adam.step(ev.params.tensors_mut(), &grads)?;
    }
    Ok((ev, losses))
}

/// Fraction of queries whose nearest motion (among `candidates` drawn per
/// query) carries the query's text. Motions sharing a text are equivalent.
pub fn retrieval_top1(
    ev: &Evaluator,
    pairs: &[EvalPair<'_>],
    candidates: usize,
    seed: u64,
) -> Result<f64> {
    ensure!(
        pairs.len() >= candidates && candidates >= 1,
        "not enough pairs for retrieval"
    );
    let motions: Vec<&Motion> = pairs.iter().map(|p| p.motion).collect();
    let texts: Vec<&str> = pairs.iter().map(|p| p.text).collect();
    let (mf, tf) = ev.encode(&motions, &texts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    for q in 0..pairs.len() {
        idx.shuffle(&mut rng);
        let mut pool: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| i != q)
            .take(candidates - 1)
            .collect();
        pool.push(q);
        let best = pool
            .iter()
            .copied()
            .min_by(|&a, &b| dist(&tf[q], &mf[a]).total_cmp(&dist(&tf[q], &mf[b])))
            .expect("non-empty pool");
        if pairs[best].text == pairs[q].text {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// FID of `generated` against `reference`, diversity of `generated`, and
/// MM-Dist between generated motions and their prompts.
pub fn evaluate(
    ev: &Evaluator,
    reference: &[&Motion],
    generated: &[EvalPair<'_>],
    pair_count: usize,
    seed: u64,
) -> Result<EvalReport> {
    let gen_motions: Vec<&Motion> = generated.iter().map(|p| p.motion).collect();
    let texts: Vec<&str> = generated.iter().map(|p| p.text).collect();
    let (gf, tf) = ev.encode(&gen_motions, &texts)?;
    let rf = ev.motion_features(reference)?;
    let fid = frechet_distance(&gaussian_stats(&gf)?, &gaussian_stats(&rf)?)?;
    Ok(EvalReport {
        fid,
        diversity: diversity(&gf, pair_count, seed)?,
        mm_dist: mm_dist(&tf, &gf)?,
        n_gen: generated.len(),
        n_ref: reference.len(),
        seed,
    })
}
