//! Double deep Q-learning over the classification environment: replay
//! memory, ε-greedy exploration with linear annealing, double-Q targets,
//! Adam updates, periodic target synchronisation and validation-driven
//! early stopping.

use std::fmt::Write as _;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::duelnet::{argmax, sync_target, DuelingParams, Head, Mode, NetworkShape};
use crate::environment::{compute_lambda, ClassWeights, Environment};
use crate::error::{Error, Result};
use crate::metrics::{auroc, confusion, g_mean, one_vs_all, sensitivity, specificity};
use crate::numkernel::{softmax, AdamState, LossReduction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.01,
            horizon: 120_000,
        }
    }
}

/// Linearly annealed exploration rate, clamped to `end` past the horizon.
pub fn epsilon_at(step: u64, schedule: &EpsilonSchedule) -> f64 {
    let frac = if schedule.horizon == 0 {
        1.0
    } else {
        (step as f64 / schedule.horizon as f64).min(1.0)
    };
    schedule.start - (schedule.start - schedule.end) * frac
}

/// ε-greedy choice: a uniform action with probability `epsilon`, otherwise
/// the greedy one (lowest index on ties).
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub term: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buffer: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn store(&mut self, t: Transition) {
        if self.buffer.len() < self.capacity {
            self.buffer.push(t);
        } else {
            self.buffer[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Transitions in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.buffer.len() < self.capacity { 0 } else { self.next };
        self.buffer[split..].iter().chain(&self.buffer[..split])
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut Transition> {
        self.buffer.get_mut(i)
    }

    /// Uniform sample without replacement. Returns copies, so later writes to
    /// the memory never reach a batch already drawn.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if batch_size == 0 || batch_size > self.buffer.len() {
            return Err(Error::InvalidInput(format!(
                "cannot sample {batch_size} transitions from a memory holding {}",
                self.buffer.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.buffer.len(), batch_size)
            .iter()
            .map(|i| self.buffer[i].clone())
            .collect())
    }
}

/// Double-Q target: the online network picks the next action, the target
/// network values it. Both run in evaluation mode.
pub fn ddqn_target(t: &Transition, online: &DuelingParams, target: &DuelingParams, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("discount {gamma} outside [0, 1)")));
    }
    if t.term || gamma == 0.0 {
        return Ok(t.reward);
    }
    let a_star = argmax(&online.q_eval(&t.next_state)?.q);
    let q_next = target.q_eval(&t.next_state)?.q[a_star];
    Ok(t.reward + gamma * q_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    pub enabled: bool,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            enabled: true,
            sensitivity: 0.85,
            specificity: 0.75,
        }
    }
}

impl EarlyStop {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Learner settings. `Default` is the binary preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    /// Budget of gradient updates.
    pub total_steps: u64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub head: Head,
    /// Target network copy cadence in updates; 1 copies after every update.
    pub sync_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Annealing horizon in updates; defaults to `total_steps`.
    pub epsilon_horizon: Option<u64>,
    pub validation_every: u64,
    pub early_stop: EarlyStop,
    /// Per-episode step cap; defaults to the training-set size.
    pub episode_step_cap: Option<usize>,
    pub loss_reduction: LossReduction,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0004,
            gamma: 0.1,
            batch_size: 64,
            memory_capacity: 50_000,
            total_steps: 120_000,
            hidden: vec![100],
            dropout: 0.3,
            head: Head::default(),
            sync_every: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_horizon: None,
            validation_every: 1000,
            early_stop: EarlyStop::default(),
            episode_step_cap: None,
            loss_reduction: LossReduction::Sum,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn binary() -> Self {
        Self::default()
    }

    pub fn multiclass() -> Self {
        Self {
            learning_rate: 0.0001,
            hidden: vec![3000],
            early_stop: EarlyStop::disabled(),
            ..Self::default()
        }
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            horizon: self.epsilon_horizon.unwrap_or(self.total_steps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if self.batch_size == 0 || self.batch_size > self.memory_capacity {
            return bad(format!(
                "batch_size must be in 1..=memory_capacity ({}), got {}",
                self.memory_capacity, self.batch_size
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden must list at least one positive layer width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.sync_every == 0 || self.validation_every == 0 {
            return bad("sync_every and validation_every must be positive".into());
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) || self.epsilon_end > self.epsilon_start {
            return bad("epsilon must satisfy 0 <= end <= start <= 1".into());
        }
        if self.episode_step_cap == Some(0) {
            return bad("episode_step_cap must be positive".into());
        }
        let es = &self.early_stop;
        if es.enabled && !((0.0..=1.0).contains(&es.sensitivity) && (0.0..=1.0).contains(&es.specificity)) {
            return bad("early-stop targets must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Validation scores at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryPoint {
    pub step: u64,
    pub episode: u64,
    /// Mean per-sample reward since the previous evaluation point.
    pub mean_reward: f64,
    pub val_sensitivity: Option<f64>,
    pub val_specificity: Option<f64>,
    pub val_auroc: Option<f64>,
    pub val_g_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub points: Vec<HistoryPoint>,
}

impl TrainingHistory {
    pub fn to_tsv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"));
        let mut out = String::from("step\tepisode\tmean_reward\tval_sensitivity\tval_specificity\tval_auroc\tval_g_mean\n");
        for p in &self.points {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{}\t{}\t{}",
                p.step,
                p.episode,
                p.mean_reward,
                f(p.val_sensitivity),
                f(p.val_specificity),
                f(p.val_auroc),
                f(p.val_g_mean)
            )
            .unwrap();
        }
        out
    }
}

/// True when the latest evaluation point beats both targets.
pub fn early_stop_check(history: &TrainingHistory, targets: &EarlyStop) -> bool {
    if !targets.enabled {
        return false;
    }
    history.points.last().is_some_and(|p| {
        matches!((p.val_sensitivity, p.val_specificity), (Some(se), Some(sp)) if se > targets.sensitivity && sp > targets.specificity)
    })
}

/// Validation scores of a policy. Binary sets are scored against the
/// minority class; multiclass sets use one-vs-all means and macro AUROC.
pub fn evaluate_policy(params: &DuelingParams, data: &Dataset, weights: &ClassWeights) -> Result<(Option<f64>, Option<f64>, Option<f64>, Option<f64>)> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut scores = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let q = params.q_eval(data.row(i))?.q;
        predicted.push(argmax(&q));
        scores.push(softmax(&q)?);
    }
    let k = data.n_classes();
    if k == 2 {
        let pos = weights.minority_set()[0];
        let c = confusion(&predicted, &data.labels, pos)?;
        let col: Vec<f64> = scores.iter().map(|s| s[pos]).collect();
        let is_pos: Vec<bool> = data.labels.iter().map(|&l| l == pos).collect();
        Ok((sensitivity(&c), specificity(&c), auroc(&col, &is_pos).ok(), g_mean(&c)))
    } else {
        let ova = one_vs_all(&predicted, &data.labels, k)?;
        let specs: Vec<f64> = ova.per_class.iter().filter(|m| m.sensitivity.is_some()).filter_map(|m| m.specificity).collect();
        let aucs: Vec<f64> = (0..k)
            .filter_map(|c| {
                let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
                let is_pos: Vec<bool> = data.labels.iter().map(|&l| l == c).collect();
                auroc(&col, &is_pos).ok()
            })
            .collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Ok((Some(ova.mean_sensitivity), mean(&specs), mean(&aucs), Some(ova.mean_g).filter(|g| !g.is_nan())))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the early-stop point, else the best validation G-mean
    /// point, else the final parameters when there is no validation set.
    pub params: DuelingParams,
    pub history: TrainingHistory,
    pub weights: ClassWeights,
    pub updates: u64,
    pub episodes: u64,
    pub stopped_early: bool,
    /// Update count at which the returned parameters were taken.
    pub selected_step: u64,
}

/// Runs shuffled episodes with ε-greedy actions, storing every transition
/// and taking one minibatch gradient step per environment step once the
/// memory holds a batch, until the update budget or an early stop.
pub fn train(config: &TrainingConfig, train_data: &Dataset, validation: Option<&Dataset>) -> Result<TrainOutcome> {
    config.validate()?;
    let validation = validation.filter(|v| !v.is_empty());
    if config.early_stop.enabled && validation.is_none() {
        return Err(Error::InvalidConfig("early stopping needs a non-empty validation set".into()));
    }
    if let Some(v) = validation {
        if v.dim() != train_data.dim() || v.n_classes() != train_data.n_classes() {
            return Err(Error::Data("validation set shape differs from the training set".into()));
        }
    }
    let weights = compute_lambda(&train_data.class_counts())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut online = DuelingParams::init(
        &NetworkShape {
            input_dim: train_data.dim(),
            hidden: config.hidden.clone(),
            actions: train_data.n_classes(),
            head: config.head,
            dropout: config.dropout,
        },
        &mut rng,
    )?;
    let mut target = sync_target(&online);
    let mut adam = AdamState::new(online.param_count(), config.learning_rate);
    let mut memory = ReplayMemory::new(config.memory_capacity)?;
    let env = Environment::new(train_data, weights.clone(), config.episode_step_cap)?;
    let schedule = config.epsilon_schedule();

    let mut history = TrainingHistory::default();
    let mut updates = 0u64;
    let mut episodes = 0u64;
    let mut reward_sum = 0.0;
    let mut reward_steps = 0u64;
    let mut best: Option<(f64, u64, DuelingParams)> = None;
    let mut stopped_early = false;

    let evaluate = |params: &DuelingParams, updates: u64, episodes: u64, reward_sum: &mut f64, reward_steps: &mut u64, history: &mut TrainingHistory| -> Result<()> {
        let Some(v) = validation else { return Ok(()) };
        let (se, sp, auc, g) = evaluate_policy(params, v, &weights)?;
        history.points.push(HistoryPoint {
            step: updates,
            episode: episodes,
            mean_reward: if *reward_steps > 0 { *reward_sum / *reward_steps as f64 } else { 0.0 },
            val_sensitivity: se,
            val_specificity: sp,
            val_auroc: auc,
            val_g_mean: g,
        });
        debug!("step {updates}: val sens {se:?} spec {sp:?} auroc {auc:?}");
        *reward_sum = 0.0;
        *reward_steps = 0;
        Ok(())
    };

    'outer: while updates < config.total_steps {
        let mut episode = env.reset(&mut rng)?;
        episodes += 1;
        while let Some(row) = episode.current() {
            let state = train_data.row(row);
            let q = online.q_eval(state)?.q;
            let action = select_action(&q, epsilon_at(updates, &schedule), &mut rng);
            let out = env.step(&mut episode, action)?;
            reward_sum += out.reward;
            reward_steps += 1;
            let next_state = out.next.map_or(state, |n| train_data.row(n));
            memory.store(Transition {
                state: state.to_vec(),
                action,
                reward: out.reward,
                next_state: next_state.to_vec(),
                term: out.term,
            });

            if memory.len() >= config.batch_size {
                let batch = memory.sample_batch(config.batch_size, &mut rng)?;
                let targets = batch
                    .iter()
                    .map(|t| ddqn_target(t, &online, &target, config.gamma))
                    .collect::<Result<Vec<_>>>()?;
                let triples: Vec<(&[f64], usize, f64)> =
                    batch.iter().zip(&targets).map(|(t, &y)| (t.state.as_slice(), t.action, y)).collect();
                let (loss, grads) = online.td_loss_and_grad(&triples, config.loss_reduction, Mode::Train, &mut rng)?;
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "TD loss {loss} at update {updates}, episode {episodes}; \
                         try a lower learning_rate (now {})",
                        config.learning_rate
                    )));
                }
                let mut flat = online.params_flat();
                adam.step(&mut flat, &grads)?;
                online.set_params_flat(&flat)?;
                updates += 1;
                if updates % config.sync_every == 0 {
                    target = sync_target(&online);
                }
                if updates % config.validation_every == 0 && validation.is_some() {
                    evaluate(&online, updates, episodes, &mut reward_sum, &mut reward_steps, &mut history)?;
                    let last = history.points.last().unwrap();
                    let score = last.val_g_mean.unwrap_or(f64::NEG_INFINITY);
                    if best.as_ref().is_none_or(|b| score > b.0) {
                        best = Some((score, updates, online.clone()));
                    }
                    if early_stop_check(&history, &config.early_stop) {
                        info!("early stop at update {updates}");
                        stopped_early = true;
                        break 'outer;
                    }
                }
                if updates >= config.total_steps {
                    break 'outer;
                }
            }
            if out.term {
                break;
            }
        }
    }

    let (params, selected_step) = if stopped_early {
        (online, updates)
    } else if validation.is_some() {
        let recorded = history.points.last().is_some_and(|p| p.step == updates);
        if !recorded && updates > 0 {
            evaluate(&online, updates, episodes, &mut reward_sum, &mut reward_steps, &mut history)?;
            let score = history.points.last().unwrap().val_g_mean.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, updates, online.clone()));
            }
        }
        match best {
            Some((_, step, p)) => (p, step),
            None => (online, updates),
        }
    } else {
        (online, updates)
    };
    Ok(TrainOutcome {
        params,
        history,
        weights,
        updates,
        episodes,
        stopped_early,
        selected_step,
    })
}
