//! DQN sensing agent over the state `(age, queue)`, plus the inference loop
//! shared by every sensing policy.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_queue::{self, AoiError, AoiQueueState, BudgetConfig};
use crate::env::ScenarioSample;
use crate::exec::{self, Execution};
use crate::nn::{dense_stack, Mlp, NnError, Optimizer};
use crate::policies::SensingPolicy;
use crate::predictor::{self, in_top_k, LossKind, Predictor, PredictorError};

#[derive(Debug, Error)]
pub enum DqnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Aoi(#[from] AoiError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("invalid dqn config: {0}")]
    Config(String),
    #[error("dataset has {len} slots, shorter than the episode length {episode}")]
    DatasetTooShort { len: usize, episode: usize },
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error("empty update batch")]
    EmptyBatch,
    #[error("non-finite Bellman target")]
    NonFiniteTarget,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DqnError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AoiQueueState,
    pub action: bool,
    pub reward: f64,
    pub next_state: AoiQueueState,
}

/// Fixed-capacity FIFO replay buffer.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buf: VecDeque<Transition>,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            buf: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Up to `batch` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Transition> {
        let n = batch.min(self.buf.len());
        index::sample(rng, self.buf.len(), n)
            .into_iter()
            .map(|i| self.buf[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all iterations over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub target_sync: usize,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    /// Age normalisation cap; `None` means `max(2N, 20)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_cap: Option<u64>,
    pub queue_cap: f64,
    /// Episodes start with a queue drawn from `U[0, initial_queue_max]`.
    pub initial_queue_max: f64,
    /// Divide regression rewards by `max(1, V)`. A positive rescaling of
    /// every reward leaves the optimal policy unchanged.
    pub normalize_rewards: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 100,
            iterations_per_epoch: 300,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            target_sync: 200,
            hidden: vec![64, 64],
            replay_capacity: 50_000,
            age_cap: None,
            queue_cap: 50.0,
            initial_queue_max: 2.0,
            normalize_rewards: false,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DqnError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("0 <= gamma < 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate > 0");
        }
        if self.batch_size < 1 {
            return fail("batch_size >= 1");
        }
        if self.epochs < 1 || self.iterations_per_epoch < 1 {
            return fail("epochs >= 1 and iterations_per_epoch >= 1");
        }
        for (name, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_decay_fraction", self.epsilon_decay_fraction),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(DqnError::Config(format!("0 <= {name} <= 1")));
            }
        }
        if self.target_sync < 1 {
            return fail("target_sync >= 1");
        }
        if self.replay_capacity < 1 {
            return fail("replay_capacity >= 1");
        }
        if self.hidden.contains(&0) {
            return fail("hidden widths >= 1");
        }
        if self.age_cap == Some(0) {
            return fail("age_cap >= 1");
        }
        if !(self.queue_cap >= 1.0 && self.queue_cap.is_finite()) {
            return fail("queue_cap >= 1");
        }
        if !(self.initial_queue_max >= 0.0 && self.initial_queue_max.is_finite()) {
            return fail("initial_queue_max >= 0");
        }
        Ok(())
    }

    pub fn encoder(&self, age_limit: usize) -> StateEncoder {
        StateEncoder {
            age_cap: self
                .age_cap
                .unwrap_or_else(|| (2 * age_limit as u64).max(20)),
            queue_cap: self.queue_cap,
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch
    }

    /// Linear decay from start to end over the first `decay_fraction` of
    /// training, flat afterwards.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        let decay = (self.epsilon_decay_fraction * self.total_iterations() as f64).round();
        if decay <= 0.0 {
            return self.epsilon_end;
        }
        let frac = step as f64 / decay;
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub age_cap: u64,
    pub queue_cap: f64,
}

impl StateEncoder {
    pub fn encode(&self, state: &AoiQueueState) -> [f64; 2] {
        encode_state(state, self.age_cap, self.queue_cap)
    }
}

pub fn encode_state(state: &AoiQueueState, age_cap: u64, queue_cap: f64) -> [f64; 2] {
    [
        aoi_queue::age_capped(state.age, age_cap) as f64 / age_cap as f64,
        state.queue.min(queue_cap) / queue_cap,
    ]
}

pub fn q_values(qnet: &Mlp, encoded: &[f64; 2]) -> Result<[f64; 2]> {
    let q = qnet.forward(encoded)?;
    Ok([q[0], q[1]])
}

/// Greedy choice with ties going to "do not sense".
pub fn greedy_action(q: [f64; 2]) -> bool {
    q[1] > q[0]
}

/// Epsilon-greedy: with probability `epsilon` a fair coin, else greedy.
/// No randomness is consumed when `epsilon == 0`.
pub fn select_action<R: Rng + ?Sized>(
    qnet: &Mlp,
    encoded: &[f64; 2],
    epsilon: f64,
    rng: &mut R,
) -> Result<bool> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_bool(0.5));
    }
    Ok(greedy_action(q_values(qnet, encoded)?))
}

/// `r + gamma * max_a Q_target(s', a)`; the task never terminates.
pub fn bellman_target(
    reward: f64,
    next_encoded: &[f64; 2],
    target_qnet: &Mlp,
    gamma: f64,
) -> Result<f64> {
    let q = q_values(target_qnet, next_encoded)?;
    Ok(reward + gamma * q[0].max(q[1]))
}

/// One masked-regression step of Q(s, a) toward its Bellman target.
/// Returns the mean squared TD error before the step.
pub fn dqn_update(
    qnet: &mut Mlp,
    target_qnet: &Mlp,
    batch: &[Transition],
    optimizer: &mut Optimizer,
    gamma: f64,
    encoder: &StateEncoder,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let n = batch.len();
    let mut states = Vec::with_capacity(2 * n);
    let mut next_states = Vec::with_capacity(2 * n);
    for t in batch {
        states.extend(encoder.encode(&t.state));
        next_states.extend(encoder.encode(&t.next_state));
    }
    let next_q = target_qnet.forward_batch(&next_states, n)?;
    let mut targets = vec![0.0; 2 * n];
    let mut masks = vec![0.0; 2 * n];
    for (i, t) in batch.iter().enumerate() {
        let y = t.reward + gamma * next_q[2 * i].max(next_q[2 * i + 1]);
        if !y.is_finite() {
            return Err(DqnError::NonFiniteTarget);
        }
        let a = t.action as usize;
        targets[2 * i + a] = y;
        masks[2 * i + a] = 1.0;
    }
    let (grads, half_mse) = qnet.mse_gradients(&states, &targets, &masks, n)?;
    optimizer.apply(qnet, &grads)?;
    Ok(2.0 * half_mse)
}

/// Predictor outputs for every observation slot at every capped age
/// `0..=N`, computed once so training episodes only index into it.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    probs: Vec<f64>,
    labels: Vec<usize>,
    ages: usize,
    classes: usize,
}

impl PredictionTable {
    pub fn build(
        predictor: &Predictor,
        samples: &[ScenarioSample],
        exec: Execution,
    ) -> Result<Self> {
        let sweeps = exec::map(exec, samples, |s| predictor.age_sweep(s));
        let mut probs =
            Vec::with_capacity(samples.len() * (predictor.age_limit + 1) * predictor.num_beams);
        for sweep in sweeps {
            for p in sweep? {
                probs.extend(p);
            }
        }
        Ok(Self {
            probs,
            labels: samples.iter().map(|s| s.label).collect(),
            ages: predictor.age_limit + 1,
            classes: predictor.num_beams,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Prediction for slot `t` made from the observation at `t - age`
    /// (cyclic), with the age feature capped at `N`.
    pub fn probs(&self, t: usize, age: u64) -> &[f64] {
        let len = self.len();
        let obs = (t + len - (age % len as u64) as usize) % len;
        let a = (age as usize).min(self.ages - 1);
        let start = (obs * self.ages + a) * self.classes;
        &self.probs[start..start + self.classes]
    }

    pub fn loss(&self, t: usize, age: u64, kind: LossKind) -> Result<f64> {
        Ok(predictor::prediction_loss(
            self.probs(t, age),
            self.labels[t % self.len()],
            kind,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub episode_return: f64,
    pub sensing_rate: f64,
    pub mean_td_loss: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DqnLog {
    pub episodes: Vec<EpisodeLog>,
}

impl DqnLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,return,sensing_rate,mean_td_loss,epsilon\n");
        for e in &self.episodes {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.episode, e.episode_return, e.sensing_rate, e.mean_td_loss, e.epsilon
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::File::create(path)?.write_all(self.to_csv().as_bytes())
    }
}

pub const AGENT_CHECKPOINT_FILE: &str = "qnet.ckpt";
pub const AGENT_META_FILE: &str = "qnet.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentMeta {
    encoder: StateEncoder,
    budget: BudgetConfig,
}

/// A trained Q-network plus the state normalisation and budget it was
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingAgent {
    pub qnet: Mlp,
    pub encoder: StateEncoder,
    pub budget: BudgetConfig,
}

impl SensingAgent {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        crate::nn::save_checkpoint(&self.qnet, dir.join(AGENT_CHECKPOINT_FILE))
            .map_err(NnError::from)?;
        let meta = AgentMeta {
            encoder: self.encoder,
            budget: self.budget,
        };
        let json =
            serde_json::to_string_pretty(&meta).map_err(|e| DqnError::Config(e.to_string()))?;
        fs::write(dir.join(AGENT_META_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ckpt = dir.join(AGENT_CHECKPOINT_FILE);
        let meta_path = dir.join(AGENT_META_FILE);
        for p in [&ckpt, &meta_path] {
            if !p.exists() {
                return Err(DqnError::MissingArtifact(p.display().to_string()));
            }
        }
        let qnet = crate::nn::load_checkpoint(&ckpt).map_err(NnError::from)?;
        let meta: AgentMeta = serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| DqnError::Config(format!("{}: {e}", meta_path.display())))?;
        if qnet.input_dim() != 2 || qnet.output_dim() != 2 {
            return Err(DqnError::Config(
                "q-network must map 2 inputs to 2 outputs".into(),
            ));
        }
        Ok(Self {
            qnet,
            encoder: meta.encoder,
            budget: meta.budget,
        })
    }

    pub fn q_values(&self, state: &AoiQueueState) -> Result<[f64; 2]> {
        q_values(&self.qnet, &self.encoder.encode(state))
    }

    pub fn policy(&self) -> GreedyPolicy<'_> {
        GreedyPolicy { agent: self }
    }
}

/// Epsilon-free action selection from a trained agent.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a> {
    agent: &'a SensingAgent,
}

impl SensingPolicy for GreedyPolicy<'_> {
    fn decide(&mut self, state: &AoiQueueState) -> bool {
        // Input shape is fixed at construction, so the forward pass cannot fail.
        self.agent
            .q_values(state)
            .map(greedy_action)
            .expect("q-network input shape")
    }
}

/// Frozen copy of the online network, refreshed every `period` updates.
#[derive(Debug, Clone)]
pub struct TargetNetwork {
    net: Mlp,
    period: usize,
    updates: usize,
}

impl TargetNetwork {
    pub fn new(online: &Mlp, period: usize) -> Self {
        Self {
            net: online.clone(),
            period: period.max(1),
            updates: 0,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Counts one online update; returns true when this one triggered a sync.
    pub fn after_update(&mut self, online: &Mlp) -> bool {
        self.updates += 1;
        let sync = self.updates.is_multiple_of(self.period);
        if sync {
            self.net.copy_params_from(online);
        }
        sync
    }
}

/// Trains the sensing agent against a frozen predictor on `dataset`, one
/// episode of `iterations_per_epoch` steps per epoch, walking the dataset
/// cyclically from a random start.
pub fn train_sensing_policy(
    predictor: &Predictor,
    dataset: &[ScenarioSample],
    budget: &BudgetConfig,
    config: &DqnConfig,
    loss_kind: LossKind,
    seed: u64,
    exec: Execution,
) -> Result<(SensingAgent, DqnLog)> {
    config.validate()?;
    budget.validate()?;
    if dataset.len() < config.iterations_per_epoch {
        return Err(DqnError::DatasetTooShort {
            len: dataset.len(),
            episode: config.iterations_per_epoch,
        });
    }
    let table = PredictionTable::build(predictor, dataset, exec)?;
    let encoder = config.encoder(predictor.age_limit);
    let scale = if config.normalize_rewards {
        1.0 / budget.v_param.max(1.0)
    } else {
        1.0
    };

    let mut qnet = Mlp::new(&dense_stack(2, &config.hidden, 2), seed)?;
    let mut target = TargetNetwork::new(&qnet, config.target_sync);
    let mut opt = Optimizer::adam(config.learning_rate)?;
    let mut memory = ReplayMemory::new(config.replay_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03);
    let mut log = DqnLog::default();
    let mut step = 0usize;

    for episode in 0..config.epochs {
        let mut state = AoiQueueState::new(
            rng.random_range(0..=encoder.age_cap),
            rng.random::<f64>() * config.initial_queue_max,
        );
        let mut cursor = rng.random_range(0..table.len());
        let epsilon_start = config.epsilon_at(step);
        let mut ret = 0.0;
        let mut senses = 0usize;
        let mut td_sum = 0.0;
        for _ in 0..config.iterations_per_epoch {
            let eps = config.epsilon_at(step);
            let action = select_action(&qnet, &encoder.encode(&state), eps, &mut rng)?;
            let next = state.step(action, budget.alpha_max);
            let loss = table.loss(cursor, next.age, loss_kind)?;
            let r = aoi_queue::reward(budget.v_param, loss, state.queue, action)?;
            memory.push(Transition {
                state,
                action,
                reward: r * scale,
                next_state: next,
            });
            let batch = memory.sample(config.batch_size, &mut rng);
            td_sum += dqn_update(
                &mut qnet,
                target.net(),
                &batch,
                &mut opt,
                config.gamma,
                &encoder,
            )?;
            target.after_update(&qnet);
            step += 1;
            ret += r;
            senses += action as usize;
            state = next;
            cursor = (cursor + 1) % table.len();
        }
        let n = config.iterations_per_epoch as f64;
        log.episodes.push(EpisodeLog {
            episode: episode + 1,
            episode_return: ret,
            sensing_rate: senses as f64 / n,
            mean_td_loss: td_sum / n,
            epsilon: epsilon_start,
        });
        log::debug!(
            "dqn episode {}: return {:.3} rate {:.3} td {:.4}",
            episode + 1,
            ret,
            senses as f64 / n,
            td_sum / n
        );
    }
    Ok((
        SensingAgent {
            qnet,
            encoder,
            budget: *budget,
        },
        log,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    /// Inference step, from 0.
    pub step: usize,
    /// Position in the evaluation dataset.
    pub slot: usize,
    pub action: bool,
    /// Age before this slot's decision.
    pub age: u64,
    /// Age of the observation the prediction used (after the decision).
    pub data_age: u64,
    /// Backlog before this slot's update.
    pub queue: f64,
    pub loss: f64,
    pub top1: bool,
    pub top3: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceMetrics {
    pub sensing_rate: f64,
    pub mean_queue: f64,
    pub top1: f64,
    pub top3: f64,
    pub mean_loss: f64,
    /// Feature acquisitions with a fresh forward sweep, the initial one included.
    pub acquisitions: usize,
    pub trace: Vec<SlotRecord>,
}

impl InferenceMetrics {
    /// Mean backlog over quarter `q` (0-based) of the run.
    pub fn quarter_mean_queue(&self, q: usize) -> f64 {
        let n = self.trace.len();
        let (a, b) = (q * n / 4, (q + 1) * n / 4);
        if b <= a {
            return 0.0;
        }
        self.trace[a..b].iter().map(|r| r.queue).sum::<f64>() / (b - a) as f64
    }

    /// Shortest prefix length after which the running sensing rate never
    /// exceeds `bound` again (0 if it never does).
    pub fn time_to_stable_compliance(&self, bound: f64) -> usize {
        let mut count = 0usize;
        let mut last_violation = 0usize;
        for (i, r) in self.trace.iter().enumerate() {
            count += r.action as usize;
            let n = i + 1;
            if count as f64 / n as f64 > bound {
                last_violation = n;
            }
        }
        last_violation
    }

    pub fn running_rate(&self) -> Vec<f64> {
        let mut count = 0usize;
        self.trace
            .iter()
            .enumerate()
            .map(|(i, r)| {
                count += r.action as usize;
                count as f64 / (i + 1) as f64
            })
            .collect()
    }
}

/// Runs `policy` for `horizon` slots over `dataset` (cyclically from slot 0),
/// starting from age 0 and an empty queue.
///
/// A sensing slot acquires that slot's features and runs one batched forward
/// sweep over the capped ages `0..=N`; other slots reuse the sweep of the last
/// acquisition at the current data age, so no network pass happens.
pub fn run_inference(
    policy: &mut dyn SensingPolicy,
    predictor: &Predictor,
    dataset: &[ScenarioSample],
    alpha_max: f64,
    horizon: usize,
    loss_kind: LossKind,
) -> Result<InferenceMetrics> {
    let len = dataset.len();
    if len == 0 {
        return Err(DqnError::DatasetTooShort { len, episode: 1 });
    }
    let k3 = 3.min(predictor.num_beams);
    let mut state = AoiQueueState::default();
    // The initial observation is one slot old once the first decision is
    // "do not sense".
    let mut sweep = predictor.age_sweep(&dataset[len - 1])?;
    let mut acquisitions = 1usize;
    let mut trace = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let slot = step % len;
        let action = policy.decide(&state);
        let next = state.step(action, alpha_max);
        if action {
            sweep = predictor.age_sweep(&dataset[slot])?;
            acquisitions += 1;
        }
        let probs = &sweep[(next.age as usize).min(predictor.age_limit)];
        let label = dataset[slot].label;
        trace.push(SlotRecord {
            step,
            slot,
            action,
            age: state.age,
            data_age: next.age,
            queue: state.queue,
            loss: predictor::prediction_loss(probs, label, loss_kind)?,
            top1: in_top_k(probs, label, 1),
            top3: in_top_k(probs, label, k3),
        });
        state = next;
    }
    let n = horizon.max(1) as f64;
    let mean = |f: &dyn Fn(&SlotRecord) -> f64| trace.iter().map(f).sum::<f64>() / n;
    Ok(InferenceMetrics {
        sensing_rate: mean(&|r| r.action as u8 as f64),
        mean_queue: mean(&|r| r.queue),
        top1: mean(&|r| r.top1 as u8 as f64),
        top3: mean(&|r| r.top3 as u8 as f64),
        mean_loss: mean(&|r| r.loss),
        acquisitions,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, LayerSpec};
    use crate::policies::ConstantPolicy;
    use crate::predictor::NormalizationStats;

    fn t(age: u64, q: f64, a: bool, r: f64) -> Transition {
        let s = AoiQueueState::new(age, q);
        Transition {
            state: s,
            action: a,
            reward: r,
            next_state: s.step(a, 0.3),
        }
    }

    #[test]
    fn state_encoding() {
        assert_eq!(
            encode_state(&AoiQueueState::new(0, 0.0), 20, 50.0),
            [0.0, 0.0]
        );
        assert_eq!(
            encode_state(&AoiQueueState::new(20, 50.0), 20, 50.0),
            [1.0, 1.0]
        );
        assert_eq!(
            encode_state(&AoiQueueState::new(60, 5.0), 20, 50.0),
            [1.0, 0.1]
        );
        let cfg = DqnConfig::default();
        assert_eq!(cfg.encoder(5).age_cap, 20);
        assert_eq!(cfg.encoder(15).age_cap, 30);
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut m = ReplayMemory::new(3);
        for i in 0..5 {
            m.push(t(i, 0.0, false, i as f64));
            assert!(m.len() <= 3);
        }
        let ages: Vec<u64> = m.iter().map(|x| x.state.age).collect();
        assert_eq!(ages, [2, 3, 4]);
        assert_eq!(m.inserted(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = m.sample(10, &mut rng);
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig {
            epochs: 10,
            iterations_per_epoch: 10,
            ..Default::default()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(25) - 0.525).abs() < 1e-12);
        assert_eq!(cfg.epsilon_at(50), 0.05);
        assert_eq!(cfg.epsilon_at(99), 0.05);
    }

    #[test]
    fn greedy_ties_do_not_sense() {
        let zero = Mlp::zeros(&dense_stack(2, &[4], 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(!select_action(&zero, &[0.3, 0.2], 0.0, &mut rng).unwrap());
        let prefer_sense = Mlp::from_layers(
            vec![Dense {
                spec: LayerSpec::new(2, 2, Activation::Identity),
                weights: vec![0.0; 4],
                biases: vec![1.0, 2.0],
            }],
            0,
        )
        .unwrap();
        assert!(select_action(&prefer_sense, &[0.0, 0.0], 0.0, &mut rng).unwrap());
    }

    #[test]
    fn bellman_limits() {
        let net = Mlp::new(&dense_stack(2, &[4], 2), 3).unwrap();
        assert_eq!(bellman_target(-1.5, &[0.2, 0.4], &net, 0.0).unwrap(), -1.5);
        let zero = Mlp::zeros(&dense_stack(2, &[4], 2)).unwrap();
        assert_eq!(
            bellman_target(-1.5, &[0.2, 0.4], &zero, 0.99).unwrap(),
            -1.5
        );
    }

    #[test]
    fn config_validation_names_invariant() {
        let cfg = DqnConfig {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("gamma < 1"));
        assert!(DqnConfig::default().validate().is_ok());
    }

    fn tiny_predictor(n: usize) -> (Predictor, Vec<ScenarioSample>) {
        let samples: Vec<ScenarioSample> = (0..12)
            .map(|i| ScenarioSample {
                slot: i,
                position: [i as f64, 10.0],
                embedding: vec![0.1 * i as f64],
                label: i % 3,
                true_angle: None,
            })
            .collect();
        let p = Predictor {
            model: Mlp::new(&dense_stack(4, &[8], 3), 2).unwrap(),
            stats: NormalizationStats::fit(&samples),
            age_limit: n,
            num_beams: 3,
        };
        (p, samples)
    }

    #[test]
    fn constant_policies_at_inference() {
        let (p, data) = tiny_predictor(2);
        let m = run_inference(
            &mut ConstantPolicy::always(),
            &p,
            &data,
            0.3,
            30,
            LossKind::CrossEntropy,
        )
        .unwrap();
        assert_eq!(m.sensing_rate, 1.0);
        assert!(m.trace.iter().all(|r| r.age == 0 && r.data_age == 0));
        assert_eq!(m.acquisitions, 31);
        let m = run_inference(
            &mut ConstantPolicy::never(),
            &p,
            &data,
            0.3,
            30,
            LossKind::CrossEntropy,
        )
        .unwrap();
        assert_eq!(m.sensing_rate, 0.0);
        for r in &m.trace {
            assert_eq!(r.age, r.step as u64);
        }
        assert_eq!(m.mean_queue, 0.0);
    }

    #[test]
    fn prediction_table_matches_direct_sweeps() {
        let (p, data) = tiny_predictor(2);
        let table = PredictionTable::build(&p, &data, Execution::Sequential).unwrap();
        for t in 0..data.len() {
            for age in 0..6u64 {
                let obs = (t + data.len() * 2 - age as usize) % data.len();
                let direct = p.age_sweep(&data[obs]).unwrap();
                assert_eq!(
                    table.probs(t, age),
                    direct[(age as usize).min(2)].as_slice()
                );
            }
        }
    }

    #[test]
    fn compliance_time() {
        let rec = |a| SlotRecord {
            step: 0,
            slot: 0,
            action: a,
            age: 0,
            data_age: 0,
            queue: 0.0,
            loss: 0.0,
            top1: false,
            top3: false,
        };
        let m = InferenceMetrics {
            sensing_rate: 0.0,
            mean_queue: 0.0,
            top1: 0.0,
            top3: 0.0,
            mean_loss: 0.0,
            acquisitions: 0,
            trace: [true, true, false, false, false, false].map(rec).to_vec(),
        };
        // running rates 1, 1, .67, .5, .4, .33
        assert_eq!(m.time_to_stable_compliance(0.45), 4);
        assert_eq!(m.time_to_stable_compliance(1.0), 0);
    }
}
