//! Age-aware beam predictor.
//!
//! Training rows pair the observation of slot `t - age` with the label of
//! slot `t`, and the (capped, normalised) age is appended to the input, so the
//! network learns how far the beam has likely drifted since the observation
//! was taken.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_queue::{age_capped, clamp_loss};
use crate::env::ScenarioSample;
use crate::exec::{self, Execution};
use crate::nn::{self, dense_stack, Mlp, NnError, Optimizer};

pub const CHECKPOINT_FILE: &str = "predictor.ckpt";
pub const META_FILE: &str = "predictor.json";

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training set is empty")]
    Empty,
    #[error("feature length mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("top-k needs 1 <= k <= {classes}, got k = {k}")]
    BadK { k: usize, classes: usize },
    #[error("evaluation stream is empty")]
    EmptyStream,
    #[error("training did not reduce the loss (first epoch {first:.6}, last epoch {last:.6})")]
    NotLearning { first: f64, last: f64 },
    #[error("invalid predictor config: {0}")]
    Config(String),
    #[error("predictor artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    /// Largest age `N` replicated into the training set.
    pub age_limit: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub include_age_zero: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            age_limit: 5,
            epochs: 15,
            learning_rate: 1e-3,
            batch_size: 32,
            hidden: vec![256, 256],
            include_age_zero: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(PredictorError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(PredictorError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PredictorError::Config("learning_rate must be > 0".into()));
        }
        if self.hidden.contains(&0) {
            return Err(PredictorError::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-coordinate min/max of observed positions, fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub pos_min: [f64; 2],
    pub pos_max: [f64; 2],
}

impl NormalizationStats {
    pub fn fit(samples: &[ScenarioSample]) -> Self {
        let mut pos_min = [f64::INFINITY; 2];
        let mut pos_max = [f64::NEG_INFINITY; 2];
        for s in samples {
            for c in 0..2 {
                pos_min[c] = pos_min[c].min(s.position[c]);
                pos_max[c] = pos_max[c].max(s.position[c]);
            }
        }
        if samples.is_empty() {
            pos_min = [0.0; 2];
            pos_max = [0.0; 2];
        }
        Self { pos_min, pos_max }
    }

    fn scale(&self, c: usize, v: f64) -> f64 {
        let span = self.pos_max[c] - self.pos_min[c];
        if span > 0.0 {
            (v - self.pos_min[c]) / span
        } else {
            0.5
        }
    }
}

/// `[min-max position (2) | embedding (D) | min(age, N) / max(N, 1)]`.
pub fn normalize_features(
    position: [f64; 2],
    embedding: &[f64],
    age: u64,
    stats: &NormalizationStats,
    age_limit: usize,
) -> Vec<f64> {
    let mut f = Vec::with_capacity(embedding.len() + 3);
    f.push(stats.scale(0, position[0]));
    f.push(stats.scale(1, position[1]));
    f.extend_from_slice(embedding);
    let capped = age_capped(age, age_limit as u64);
    f.push(capped as f64 / age_limit.max(1) as f64);
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedExample {
    pub features: Vec<f64>,
    /// Label of slot `source_slot`.
    pub label: usize,
    pub age: usize,
    /// Slot `t` whose label is used; features come from `t - age`.
    pub source_slot: usize,
}

/// Replicates each slot `t` for every age `0 (optional), 1, ..., N` whose
/// observation slot `t - age` exists. Output is ordered by `t`, then age.
pub fn augment_dataset(
    samples: &[ScenarioSample],
    age_limit: usize,
    include_age_zero: bool,
    stats: &NormalizationStats,
) -> Vec<AugmentedExample> {
    let first_age = if include_age_zero { 0 } else { 1 };
    let mut out = Vec::new();
    for (t, target) in samples.iter().enumerate() {
        for age in first_age..=age_limit.min(t) {
            let obs = &samples[t - age];
            out.push(AugmentedExample {
                features: normalize_features(
                    obs.position,
                    &obs.embedding,
                    age as u64,
                    stats,
                    age_limit,
                ),
                label: target.label,
                age,
                source_slot: target.slot,
            });
        }
    }
    out
}

/// Closed-form size of [`augment_dataset`]'s output.
pub fn augmented_len(num_samples: usize, age_limit: usize, include_age_zero: bool) -> usize {
    let first_age = if include_age_zero { 0 } else { 1 };
    (first_age..=age_limit)
        .map(|age| num_samples.saturating_sub(age))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_top1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,train_top1\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.train_top1));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::File::create(path)?.write_all(self.to_csv().as_bytes())
    }
}

/// Trains an `input -> hidden... -> num_beams` relu MLP with Adam on mean
/// softmax cross-entropy, reshuffling every epoch from `seed`.
pub fn train_predictor(
    examples: &[AugmentedExample],
    config: &PredictorConfig,
    num_beams: usize,
    seed: u64,
) -> Result<(Mlp, TrainingLog)> {
    config.validate()?;
    let first = examples.first().ok_or(PredictorError::Empty)?;
    let dim = first.features.len();
    if let Some(bad) = examples.iter().find(|e| e.features.len() != dim) {
        return Err(PredictorError::Shape {
            expected: dim,
            got: bad.features.len(),
        });
    }
    let mut model = Mlp::new(&dense_stack(dim, &config.hidden, num_beams), seed)?;
    let mut opt = Optimizer::adam(config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainingLog::default();
    let mut inputs = Vec::with_capacity(config.batch_size * dim);
    let mut labels = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in order.chunks(config.batch_size) {
            inputs.clear();
            labels.clear();
            for &i in chunk {
                inputs.extend_from_slice(&examples[i].features);
                labels.push(examples[i].label);
            }
            let (grads, loss, correct) = model.ce_gradients_counted(&inputs, &labels)?;
            loss_sum += loss * chunk.len() as f64;
            hits += correct;
            opt.apply(&mut model, &grads)?;
        }
        let n = examples.len() as f64;
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / n,
            train_top1: hits as f64 / n,
        });
        log::debug!(
            "predictor epoch {}: loss {:.4} top1 {:.4}",
            epoch + 1,
            loss_sum / n,
            hits as f64 / n
        );
    }

    if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
        if log.epochs.len() >= 2 && first.mean_loss <= last.mean_loss {
            return Err(PredictorError::NotLearning {
                first: first.mean_loss,
                last: last.mean_loss,
            });
        }
    }
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// `1 - 1{argmax p = y}`: zero when the top beam is right.
    Top1Indicator,
}

impl std::str::FromStr for LossKind {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "top1_indicator" => Ok(LossKind::Top1Indicator),
            other => Err(PredictorError::Config(format!(
                "unknown loss kind `{other}` (expected cross_entropy or top1_indicator)"
            ))),
        }
    }
}

/// Per-slot loss `f(t)`; cross-entropy is clamped to `[0, ln M + 10]`.
pub fn prediction_loss(probs: &[f64], label: usize, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy => Ok(clamp_loss(nn::cross_entropy(probs, label)?, probs.len())),
        LossKind::Top1Indicator => {
            if label >= probs.len() {
                return Err(NnError::LabelOutOfRange {
                    label,
                    classes: probs.len(),
                }
                .into());
            }
            Ok(if nn::argmax(probs) == label { 0.0 } else { 1.0 })
        }
    }
}

/// Whether `label` is among the `k` most probable beams; equal
/// probabilities rank the smaller index first.
pub fn in_top_k(probs: &[f64], label: usize, k: usize) -> bool {
    let p = probs[label];
    let rank = probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count();
    rank < k
}

/// Fraction of `(probabilities, label)` items whose label is in the top `k`.
pub fn topk_accuracy<'a, I>(items: I, k: usize) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
{
    let mut n = 0usize;
    let mut hits = 0usize;
    for (probs, label) in items {
        if k == 0 || k > probs.len() {
            return Err(PredictorError::BadK {
                k,
                classes: probs.len(),
            });
        }
        n += 1;
        hits += in_top_k(probs, label, k) as usize;
    }
    if n == 0 {
        return Err(PredictorError::EmptyStream);
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictorMeta {
    stats: NormalizationStats,
    age_limit: usize,
    num_beams: usize,
    embedding_dim: usize,
}

/// A trained network together with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub model: Mlp,
    pub stats: NormalizationStats,
    pub age_limit: usize,
    pub num_beams: usize,
}

impl Predictor {
    /// Fits normalisation on `train`, augments, and trains.
    pub fn train(
        train: &[ScenarioSample],
        config: &PredictorConfig,
        num_beams: usize,
        seed: u64,
    ) -> Result<(Self, TrainingLog)> {
        let stats = NormalizationStats::fit(train);
        let examples = augment_dataset(train, config.age_limit, config.include_age_zero, &stats);
        let (model, log) = train_predictor(&examples, config, num_beams, seed)?;
        Ok((
            Self {
                model,
                stats,
                age_limit: config.age_limit,
                num_beams,
            },
            log,
        ))
    }

    pub fn embedding_dim(&self) -> usize {
        self.model.input_dim() - 3
    }

    pub fn features(&self, obs: &ScenarioSample, age: u64) -> Vec<f64> {
        normalize_features(
            obs.position,
            &obs.embedding,
            age,
            &self.stats,
            self.age_limit,
        )
    }

    pub fn predict_probs(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(nn::softmax(&self.model.forward(features)?))
    }

    /// Probabilities for one observation at every capped age `0..=N`, in one batch.
    pub fn age_sweep(&self, obs: &ScenarioSample) -> Result<Vec<Vec<f64>>> {
        let ages = self.age_limit + 1;
        let mut inputs = Vec::with_capacity(ages * self.model.input_dim());
        for age in 0..ages {
            inputs.extend(self.features(obs, age as u64));
        }
        let logits = self.model.forward_batch(&inputs, ages)?;
        Ok(logits
            .chunks_exact(self.num_beams)
            .map(nn::softmax)
            .collect())
    }

    /// Probabilities for a batch of `(observation, age)` pairs.
    pub fn predict_batch(&self, items: &[(&ScenarioSample, u64)]) -> Result<Vec<Vec<f64>>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut inputs = Vec::with_capacity(items.len() * self.model.input_dim());
        for (obs, age) in items {
            inputs.extend(self.features(obs, *age));
        }
        let logits = self.model.forward_batch(&inputs, items.len())?;
        Ok(logits
            .chunks_exact(self.num_beams)
            .map(nn::softmax)
            .collect())
    }

    /// Top-k accuracy over `(observation, age, label)` items, evaluated in
    /// parallel batches.
    pub fn topk_accuracy(
        &self,
        items: &[(&ScenarioSample, u64, usize)],
        k: usize,
        exec: Execution,
    ) -> Result<f64> {
        if items.is_empty() {
            return Err(PredictorError::EmptyStream);
        }
        const CHUNK: usize = 256;
        let chunks: Vec<_> = items.chunks(CHUNK).collect();
        let probs = exec::map(exec, &chunks, |chunk| {
            let pairs: Vec<_> = chunk.iter().map(|(o, a, _)| (*o, *a)).collect();
            self.predict_batch(&pairs)
        });
        let probs: Vec<Vec<f64>> = probs.into_iter().collect::<Result<Vec<_>>>()?.concat();
        topk_accuracy(
            probs.iter().zip(items).map(|(p, it)| (p.as_slice(), it.2)),
            k,
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        nn::save_checkpoint(&self.model, dir.join(CHECKPOINT_FILE)).map_err(NnError::from)?;
        let meta = PredictorMeta {
            stats: self.stats,
            age_limit: self.age_limit,
            num_beams: self.num_beams,
            embedding_dim: self.embedding_dim(),
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| PredictorError::Artifact(e.to_string()))?;
        fs::write(dir.join(META_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ckpt = dir.join(CHECKPOINT_FILE);
        let meta_path = dir.join(META_FILE);
        for p in [&ckpt, &meta_path] {
            if !p.exists() {
                return Err(PredictorError::Artifact(format!(
                    "missing artifact {}",
                    p.display()
                )));
            }
        }
        let model = nn::load_checkpoint(&ckpt).map_err(NnError::from)?;
        let meta: PredictorMeta = serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| PredictorError::Artifact(format!("{}: {e}", meta_path.display())))?;
        if model.input_dim() != meta.embedding_dim + 3 || model.output_dim() != meta.num_beams {
            return Err(PredictorError::Artifact(
                "checkpoint shape does not match predictor metadata".into(),
            ));
        }
        Ok(Self {
            model,
            stats: meta.stats,
            age_limit: meta.age_limit,
            num_beams: meta.num_beams,
        })
    }
}
