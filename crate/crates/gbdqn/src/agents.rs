//! Training loops for the boosted agent and the four baselines.
//!
//! All five methods run the same per-step loop: act, store the transition
//! with its priority, and every `update_every_steps` past `learn_start_steps`
//! sample a prioritized minibatch, take one weighted-MSE gradient step,
//! refresh the sampled priorities, and Polyak-update the training target.
//! They differ only in the value model behind the loop and in how they react
//! to drift events, so step budgets and gradient cadence are identical
//! across methods.

use crate::boost::{self, CommitMode, EnsembleQ};
use crate::envs::{DriftKind, DriftSchedule, Environment};
use crate::numcore::{self, AdamState, NetParams, NetSpec, NumError};
use crate::replay::{priority, PriorityParams, ReplayBuffer, ReplayError, SampleBatch, Transition};
use crate::boost::BoostError;
use crate::envs::EnvError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    GbDqn,
    Dqn,
    EnsembleDqn,
    ResetDqn,
    SlidingDqn,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Dqn, Method::GbDqn, Method::EnsembleDqn, Method::ResetDqn, Method::SlidingDqn];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::GbDqn => "gbdqn",
            Method::Dqn => "dqn",
            Method::EnsembleDqn => "ensemble_dqn",
            Method::ResetDqn => "reset_dqn",
            Method::SlidingDqn => "sliding_dqn",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gbdqn" => Ok(Method::GbDqn),
            "dqn" => Ok(Method::Dqn),
            "ensemble_dqn" => Ok(Method::EnsembleDqn),
            "reset_dqn" => Ok(Method::ResetDqn),
            "sliding_dqn" => Ok(Method::SlidingDqn),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Linear decay from `start` to `end` over `decay_steps` environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.decay_steps as f64).min(1.0);
        self.start * (1.0 - frac) + self.end * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    EpsilonGreedy,
    Softmax,
}

/// How a freshly stored transition gets its priority: from the TD error
/// available at storage time, or from the current buffer maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertionPriority {
    Computed,
    MaxPriority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub method: Method,
    pub discount: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learn_start_steps: u64,
    pub update_every_steps: u64,
    pub polyak_tau: f64,
    pub epsilon: EpsilonSchedule,
    pub policy: PolicyKind,
    pub softmax_tau: f64,
    pub priority: PriorityParams,
    pub eta_boost: f64,
    pub commit_mode: CommitMode,
    pub ensemble_k: usize,
    pub hidden: Vec<usize>,
    pub clip_norm: f64,
    pub insertion_priority: InsertionPriority,
    pub bootstrap_excludes_active: bool,
    pub behavior_excludes_active: bool,
    pub epsilon_rearm_on_drift: bool,
}

impl AgentConfig {
    /// Protocol defaults shared by both benchmark tasks: (128,128) nets,
    /// Adam at 1e-3, batch 64, 50k buffer (5k sliding), updates every four
    /// steps after 1k, soft targets at tau = 0.01, epsilon 1.0 -> 0.05
    /// over 20k steps, shrinkage 0.1. The boosted agent samples with the
    /// hybrid recency+TD rule; baselines use TD-only priorities.
    pub fn preset(method: Method) -> Self {
        let priority = match method {
            Method::GbDqn => PriorityParams::default(),
            _ => PriorityParams::td_only(),
        };
        let buffer_capacity = match method {
            Method::SlidingDqn => 5_000,
            _ => 50_000,
        };
        Self {
            method,
            discount: 0.99,
            lr: 1e-3,
            batch_size: 64,
            buffer_capacity,
            learn_start_steps: 1_000,
            update_every_steps: 4,
            polyak_tau: 0.01,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 20_000 },
            policy: PolicyKind::EpsilonGreedy,
            softmax_tau: 1.0,
            priority,
            eta_boost: 0.1,
            commit_mode: CommitMode::Shrinkage,
            ensemble_k: 5,
            hidden: vec![128, 128],
            clip_norm: 10.0,
            insertion_priority: InsertionPriority::Computed,
            bootstrap_excludes_active: false,
            behavior_excludes_active: false,
            epsilon_rearm_on_drift: false,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::InvalidConfig(msg.into()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must be in (0,1)");
        }
        if self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be >= batch_size");
        }
        if self.update_every_steps == 0 {
            return bad("update_every_steps must be >= 1");
        }
        if !(self.polyak_tau > 0.0 && self.polyak_tau <= 1.0) {
            return bad("polyak_tau must be in (0,1]");
        }
        for eps in [self.epsilon.start, self.epsilon.end] {
            if !(0.0..=1.0).contains(&eps) {
                return bad("epsilon bounds must be in [0,1]");
            }
        }
        if self.softmax_tau <= 0.0 {
            return bad("softmax_tau must be positive");
        }
        if !(self.eta_boost > 0.0 && self.eta_boost <= 1.0) {
            return bad("eta_boost must be in (0,1]");
        }
        if self.ensemble_k == 0 {
            return bad("ensemble_k must be >= 1");
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layers must be non-empty with widths >= 1");
        }
        if self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        self.priority.validate().map_err(AgentError::from)?;
        Ok(())
    }
}

/// One per-episode metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: String,
    pub env: String,
    pub episode: u32,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub steps: u32,
    pub epsilon: f64,
    pub ensemble_size: usize,
    pub drift_kind: String,
}

/// Independent RNG streams derived from one run seed, one per role, so that
/// methods sharing a seed draw identical streams for identical roles.
struct RunRngs {
    env: ChaCha8Rng,
    init: ChaCha8Rng,
    policy: ChaCha8Rng,
    replay: ChaCha8Rng,
}

impl RunRngs {
    fn for_seed(seed: u64) -> Self {
        let make = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        Self { env: make(1), init: make(2), policy: make(3), replay: make(4) }
    }
}

pub(crate) struct SingleDqn {
    online: NetParams,
    target: NetParams,
    opt: AdamState,
}

impl SingleDqn {
    fn new(spec: &NetSpec, lr: f64, rng: &mut ChaCha8Rng) -> Self {
        let online = numcore::init_params(spec, rng);
        let target = online.clone();
        let opt = AdamState::new(online.param_count(), lr);
        Self { online, target, opt }
    }
}

enum ValueModel {
    Single { net: SingleDqn, reinit_on_drift: bool },
    Boosted { ens: EnsembleQ },
    Heads { heads: Vec<SingleDqn> },
}

impl ValueModel {
    fn new(config: &AgentConfig, spec: &NetSpec, rng: &mut ChaCha8Rng) -> Self {
        match config.method {
            Method::Dqn | Method::SlidingDqn => ValueModel::Single {
                net: SingleDqn::new(spec, config.lr, rng),
                reinit_on_drift: false,
            },
            Method::ResetDqn => ValueModel::Single {
                net: SingleDqn::new(spec, config.lr, rng),
                reinit_on_drift: true,
            },
            Method::GbDqn => {
                let mut ens = EnsembleQ::new(config.discount, config.eta_boost);
                ens.bootstrap_excludes_active = config.bootstrap_excludes_active;
                ens.open_active(spec, config.lr, rng);
                ValueModel::Boosted { ens }
            }
            Method::EnsembleDqn => {
                let heads = (0..config.ensemble_k)
                    .map(|_| SingleDqn::new(spec, config.lr, rng))
                    .collect();
                ValueModel::Heads { heads }
            }
        }
    }

    fn size(&self) -> usize {
        match self {
            ValueModel::Single { .. } => 1,
            ValueModel::Boosted { ens } => ens.size(),
            ValueModel::Heads { heads } => heads.len(),
        }
    }

    /// Q-values the behavior policy acts on.
    fn q_values(&self, obs: &[f64], config: &AgentConfig) -> Result<Vec<f64>, AgentError> {
        match self {
            ValueModel::Single { net, .. } => Ok(numcore::forward_single(&net.online, obs)?),
            ValueModel::Boosted { ens } => {
                Ok(ens.ensemble_q_single(obs, !config.behavior_excludes_active)?)
            }
            ValueModel::Heads { heads } => {
                let mut acc = numcore::forward_single(&heads[0].online, obs)?;
                for head in &heads[1..] {
                    let q = numcore::forward_single(&head.online, obs)?;
                    for (a, v) in acc.iter_mut().zip(q.iter()) {
                        *a += v;
                    }
                }
                let k = heads.len() as f64;
                for a in acc.iter_mut() {
                    *a /= k;
                }
                Ok(acc)
            }
        }
    }

    /// TD error of one fresh transition, for its insertion priority.
    /// `q_row` is the behavior q-vector already computed for action choice.
    fn single_delta(
        &self,
        q_row: &[f64],
        t: &Transition,
        config: &AgentConfig,
    ) -> Result<f64, AgentError> {
        let max_next = match self {
            ValueModel::Single { net, .. } => {
                boost::max_q(&numcore::forward_single(&net.target, &t.next_state)?)
            }
            ValueModel::Boosted { ens } => boost::max_q(
                &ens.target_ensemble_q_single(&t.next_state, !config.bootstrap_excludes_active)?,
            ),
            ValueModel::Heads { heads } => {
                let mut acc = numcore::forward_single(&heads[0].target, &t.next_state)?;
                for head in &heads[1..] {
                    let q = numcore::forward_single(&head.target, &t.next_state)?;
                    for (a, v) in acc.iter_mut().zip(q.iter()) {
                        *a += v;
                    }
                }
                let k = heads.len() as f64;
                for a in acc.iter_mut() {
                    *a /= k;
                }
                boost::max_q(&acc)
            }
        };
        let y = boost::td_target(t.reward, t.done, config.discount, max_next);
        let q_sa = match self {
            // The behavior row may exclude the active learner (ablation);
            // the TD error always measures the full ensemble.
            ValueModel::Boosted { ens } if config.behavior_excludes_active => {
                ens.ensemble_q_single(&t.state, true)?[t.action]
            }
            _ => q_row[t.action],
        };
        Ok(y - q_sa)
    }

    /// One gradient step on a sampled minibatch. Returns the pre-update TD
    /// errors used to refresh the sampled priorities.
    fn train_step(
        &mut self,
        batch: &SampleBatch,
        config: &AgentConfig,
    ) -> Result<Vec<f64>, AgentError> {
        let states: Vec<Vec<f64>> = batch.transitions.iter().map(|t| t.state.clone()).collect();
        let actions: Vec<usize> = batch.transitions.iter().map(|t| t.action).collect();
        match self {
            ValueModel::Single { net, .. } => {
                let next_states: Vec<Vec<f64>> =
                    batch.transitions.iter().map(|t| t.next_state.clone()).collect();
                let next_q = numcore::forward(&net.target, &next_states)?;
                let targets: Vec<f64> = batch
                    .transitions
                    .iter()
                    .zip(next_q.iter())
                    .map(|(t, row)| {
                        boost::td_target(t.reward, t.done, config.discount, boost::max_q(row))
                    })
                    .collect();
                let online_q = numcore::forward(&net.online, &states)?;
                let deltas: Vec<f64> = targets
                    .iter()
                    .zip(online_q.iter().zip(actions.iter()))
                    .map(|(y, (row, &a))| y - row[a])
                    .collect();
                numcore::weighted_mse_grad_step(
                    &mut net.online,
                    &mut net.opt,
                    &states,
                    &actions,
                    &targets,
                    &batch.is_weights,
                    config.clip_norm,
                )?;
                Ok(deltas)
            }
            ValueModel::Boosted { ens } => {
                let rb = ens.residual_targets(&batch.transitions)?;
                let active = ens.active_mut().expect("boosted model always has an active learner");
                numcore::weighted_mse_grad_step(
                    &mut active.online,
                    &mut active.opt,
                    &states,
                    &actions,
                    &rb.residual_targets,
                    &batch.is_weights,
                    config.clip_norm,
                )?;
                Ok(rb.deltas)
            }
            ValueModel::Heads { heads } => {
                ensemble_dqn_step(heads, batch, config)
            }
        }
    }

    fn polyak(&mut self, tau: f64) -> Result<(), AgentError> {
        match self {
            ValueModel::Single { net, .. } => {
                numcore::polyak_update(&mut net.target, &net.online, tau)?;
            }
            ValueModel::Boosted { ens } => ens.polyak_active(tau)?,
            ValueModel::Heads { heads } => {
                for head in heads {
                    numcore::polyak_update(&mut head.target, &head.online, tau)?;
                }
            }
        }
        Ok(())
    }

    fn on_drift(
        &mut self,
        kind: DriftKind,
        spec: &NetSpec,
        config: &AgentConfig,
        buffer: &ReplayBuffer,
        rngs: &mut RunRngs,
    ) -> Result<(), AgentError> {
        match self {
            ValueModel::Single { net, reinit_on_drift } => {
                if *reinit_on_drift {
                    *net = SingleDqn::new(spec, config.lr, &mut rngs.init);
                }
            }
            ValueModel::Boosted { ens } => {
                if kind != DriftKind::Reset {
                    let eval_batch = match config.commit_mode {
                        CommitMode::LineSearch if buffer.len() >= config.batch_size => Some(
                            buffer
                                .sample(config.batch_size, &config.priority, &mut rngs.replay)?
                                .transitions,
                        ),
                        _ => None,
                    };
                    ens.commit_booster(config.commit_mode, eval_batch.as_deref())?;
                    ens.open_active(spec, config.lr, &mut rngs.init);
                }
            }
            ValueModel::Heads { .. } => {}
        }
        Ok(())
    }
}

/// One shared-target update of an averaged K-head ensemble: the TD target
/// comes from the mean of the target heads, every head steps toward it on
/// its own gradient, and the returned TD errors measure the pre-update mean
/// prediction.
pub(crate) fn ensemble_dqn_step(
    heads: &mut [SingleDqn],
    batch: &SampleBatch,
    config: &AgentConfig,
) -> Result<Vec<f64>, AgentError> {
    let states: Vec<Vec<f64>> = batch.transitions.iter().map(|t| t.state.clone()).collect();
    let actions: Vec<usize> = batch.transitions.iter().map(|t| t.action).collect();
    let next_states: Vec<Vec<f64>> =
        batch.transitions.iter().map(|t| t.next_state.clone()).collect();
    let k = heads.len() as f64;

    let mut next_mean = numcore::forward(&heads[0].target, &next_states)?;
    for head in &heads[1..] {
        let q = numcore::forward(&head.target, &next_states)?;
        for (acc, row) in next_mean.iter_mut().zip(q.iter()) {
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v;
            }
        }
    }
    for row in next_mean.iter_mut() {
        for v in row.iter_mut() {
            *v /= k;
        }
    }
    let targets: Vec<f64> = batch
        .transitions
        .iter()
        .zip(next_mean.iter())
        .map(|(t, row)| boost::td_target(t.reward, t.done, config.discount, boost::max_q(row)))
        .collect();

    let mut online_mean = numcore::forward(&heads[0].online, &states)?;
    for head in &heads[1..] {
        let q = numcore::forward(&head.online, &states)?;
        for (acc, row) in online_mean.iter_mut().zip(q.iter()) {
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v;
            }
        }
    }
    for row in online_mean.iter_mut() {
        for v in row.iter_mut() {
            *v /= k;
        }
    }
    let deltas: Vec<f64> = targets
        .iter()
        .zip(online_mean.iter().zip(actions.iter()))
        .map(|(y, (row, &a))| y - row[a])
        .collect();

    for head in heads.iter_mut() {
        numcore::weighted_mse_grad_step(
            &mut head.online,
            &mut head.opt,
            &states,
            &actions,
            &targets,
            &batch.is_weights,
            config.clip_norm,
        )?;
    }
    Ok(deltas)
}

/// One training run: owns the environment, the value model, and the buffer.
pub struct Trainer {
    config: AgentConfig,
    env: Box<dyn Environment>,
    schedule: DriftSchedule,
    episodes: u32,
    seed: u64,
    spec: NetSpec,
    rngs: RunRngs,
    model: ValueModel,
    buffer: ReplayBuffer,
    global_step: u64,
    epsilon_base_step: u64,
    updates_done: u64,
    episode: u32,
    obs: Vec<f64>,
    ep_return: f64,
    ep_steps: u32,
    ep_drift: Option<DriftKind>,
    records: Vec<RunRecord>,
}

impl Trainer {
    pub fn new(
        config: AgentConfig,
        env: Box<dyn Environment>,
        schedule: DriftSchedule,
        episodes: u32,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if episodes == 0 {
            return Err(AgentError::InvalidConfig("episodes must be >= 1".into()));
        }
        let spec = NetSpec::new(env.obs_dim(), config.hidden.clone(), env.n_actions())?;
        let mut rngs = RunRngs::for_seed(seed);
        let model = ValueModel::new(&config, &spec, &mut rngs.init);
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let mut trainer = Self {
            config,
            env,
            schedule,
            episodes,
            seed,
            spec,
            rngs,
            model,
            buffer,
            global_step: 0,
            epsilon_base_step: 0,
            updates_done: 0,
            episode: 0,
            obs: Vec::new(),
            ep_return: 0.0,
            ep_steps: 0,
            ep_drift: None,
            records: Vec::new(),
        };
        trainer.begin_episode()?;
        Ok(trainer)
    }

    fn begin_episode(&mut self) -> Result<(), AgentError> {
        self.episode += 1;
        self.ep_return = 0.0;
        self.ep_steps = 0;
        self.ep_drift = None;
        if let Some(event) = self.schedule.event_at(self.episode) {
            let event = event.clone();
            self.env.apply_drift(&event)?;
            self.model.on_drift(
                event.kind,
                &self.spec,
                &self.config,
                &self.buffer,
                &mut self.rngs,
            )?;
            if self.config.epsilon_rearm_on_drift {
                self.epsilon_base_step = self.global_step;
            }
            self.ep_drift = Some(event.kind);
        }
        self.obs = self.env.reset(&mut self.rngs.env);
        Ok(())
    }

    pub fn finished(&self) -> bool {
        self.episode > self.episodes
    }

    pub fn updates_done(&self) -> u64 {
        self.updates_done
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn ensemble(&self) -> Option<&EnsembleQ> {
        match &self.model {
            ValueModel::Boosted { ens } => Some(ens),
            _ => None,
        }
    }

    /// Online parameters of every trainable network, for trajectory
    /// comparisons across methods.
    pub fn online_params(&self) -> Vec<&NetParams> {
        match &self.model {
            ValueModel::Single { net, .. } => vec![&net.online],
            ValueModel::Boosted { ens } => {
                let mut v: Vec<&NetParams> = Vec::new();
                if let Some(active) = ens.active() {
                    v.push(&active.online);
                }
                v
            }
            ValueModel::Heads { heads } => heads.iter().map(|h| &h.online).collect(),
        }
    }

    fn current_epsilon(&self) -> f64 {
        self.config.epsilon.value(self.global_step - self.epsilon_base_step)
    }

    /// Advance one environment step (and one learning step when due).
    /// Finalizes the episode record and starts the next episode when the
    /// current one ends.
    pub fn step_once(&mut self) -> Result<(), AgentError> {
        debug_assert!(!self.finished());
        let q = self.model.q_values(&self.obs, &self.config)?;
        let action = match self.config.policy {
            PolicyKind::EpsilonGreedy => {
                boost::epsilon_greedy_action(&q, self.current_epsilon(), &mut self.rngs.policy)
            }
            PolicyKind::Softmax => {
                boost::softmax_action(&q, self.config.softmax_tau, &mut self.rngs.policy)?
            }
        };
        let out = self.env.step(action)?;
        self.global_step += 1;

        let mut transition = Transition {
            state: std::mem::take(&mut self.obs),
            action,
            reward: out.reward,
            next_state: out.obs.clone(),
            done: out.done,
            priority: 0.0,
            birth_step: self.global_step,
        };
        match self.config.insertion_priority {
            InsertionPriority::Computed => {
                let delta = self.model.single_delta(&q, &transition, &self.config)?;
                transition.priority = priority(delta, 0, &self.config.priority);
                self.buffer.push(transition);
            }
            InsertionPriority::MaxPriority => {
                self.buffer.push_max_priority(transition);
            }
        }
        self.ep_return += out.reward;
        self.ep_steps += 1;

        if self.global_step >= self.config.learn_start_steps
            && self.global_step % self.config.update_every_steps == 0
            && self.buffer.len() >= self.config.batch_size
        {
            let batch = self.buffer.sample(
                self.config.batch_size,
                &self.config.priority,
                &mut self.rngs.replay,
            )?;
            let deltas = self.model.train_step(&batch, &self.config)?;
            self.buffer.update_priorities(
                &batch.ids,
                &deltas,
                self.global_step,
                &self.config.priority,
            )?;
            self.model.polyak(self.config.polyak_tau)?;
            self.updates_done += 1;
        }

        if out.done {
            self.records.push(RunRecord {
                seed: self.seed,
                method: self.config.method.to_string(),
                env: self.env.name().to_string(),
                episode: self.episode,
                episode_return: self.ep_return,
                steps: self.ep_steps,
                epsilon: self.current_epsilon(),
                ensemble_size: self.model.size(),
                drift_kind: self
                    .ep_drift
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "none".to_string()),
            });
            if self.episode == self.episodes {
                self.episode += 1;
            } else {
                self.begin_episode()?;
            }
        } else {
            self.obs = out.obs;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<Vec<RunRecord>, AgentError> {
        while !self.finished() {
            self.step_once()?;
        }
        Ok(self.records)
    }
}

/// Convenience wrapper: build a [`Trainer`] and run it to completion.
pub fn train_run(
    config: AgentConfig,
    env: Box<dyn Environment>,
    schedule: DriftSchedule,
    episodes: u32,
    seed: u64,
) -> Result<Vec<RunRecord>, AgentError> {
    Trainer::new(config, env, schedule, episodes, seed)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{
        DriftEvent, EnvKind, MountainCar,
    };

    fn smoke_config(method: Method) -> AgentConfig {
        let mut c = AgentConfig::preset(method);
        c.hidden = vec![16, 16];
        c.buffer_capacity = 2_000;
        c.learn_start_steps = 100;
        c.epsilon.decay_steps = 1_000;
        c
    }

    #[test]
    fn presets_pin_protocol_values() {
        let c = AgentConfig::preset(Method::Dqn);
        assert_eq!(c.discount, 0.99);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.buffer_capacity, 50_000);
        assert_eq!(c.learn_start_steps, 1_000);
        assert_eq!(c.update_every_steps, 4);
        assert_eq!(c.polyak_tau, 0.01);
        assert_eq!(c.epsilon, EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 20_000 });
        assert_eq!(c.hidden, vec![128, 128]);
        assert_eq!(c.clip_norm, 10.0);
        assert_eq!(c.priority.mix_beta, 1.0);

        let g = AgentConfig::preset(Method::GbDqn);
        assert_eq!(g.eta_boost, 0.1);
        assert_eq!(g.priority.mix_beta, 0.5);

        let s = AgentConfig::preset(Method::SlidingDqn);
        assert_eq!(s.buffer_capacity, 5_000);
        // The sliding baseline is the same buffer with a small capacity.
        assert_eq!(ReplayBuffer::new(s.buffer_capacity).window_capacity(), 5_000);
        assert_eq!(ReplayBuffer::new(c.buffer_capacity).window_capacity(), 50_000);
    }

    #[test]
    fn epsilon_schedule_is_linear() {
        let e = EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 20_000 };
        assert_eq!(e.value(0), 1.0);
        assert!((e.value(10_000) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(20_000), 0.05);
        assert_eq!(e.value(1_000_000), 0.05);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = AgentConfig::preset(Method::Dqn);
        c.discount = 1.5;
        assert!(c.validate().is_err());
        let mut c = AgentConfig::preset(Method::Dqn);
        c.polyak_tau = 0.0;
        assert!(c.validate().is_err());
        let mut c = AgentConfig::preset(Method::Dqn);
        c.hidden = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_episode_mountaincar_record() {
        let config = smoke_config(Method::Dqn);
        let env = Box::new(MountainCar::new(200));
        let records =
            train_run(config, env, DriftSchedule::empty(), 1, 7).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].episode, 1);
        assert!(records[0].steps <= 200);
        assert_eq!(records[0].method, "dqn");
        assert_eq!(records[0].drift_kind, "none");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let config = smoke_config(Method::GbDqn);
            let env = EnvKind::CartPole.make(100);
            let schedule = DriftSchedule::new(vec![DriftEvent::new(
                3,
                DriftKind::Gravity,
                &[("gravity", 1.5)],
            )])
            .unwrap();
            train_run(config, env, schedule, 6, 11).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gbdqn_commits_on_non_reset_events_only() {
        let config = smoke_config(Method::GbDqn);
        let env = EnvKind::CartPole.make(60);
        let schedule = DriftSchedule::new(vec![
            DriftEvent::new(2, DriftKind::Gravity, &[("gravity", 1.2)]),
            DriftEvent::new(4, DriftKind::Mass, &[("masspole", 1.2)]),
            DriftEvent::reset(6),
        ])
        .unwrap();
        let mut trainer = Trainer::new(config, env, schedule, 8, 3).unwrap();
        while !trainer.finished() {
            trainer.step_once().unwrap();
        }
        let ens = trainer.ensemble().unwrap();
        // Two non-reset events commit two learners; the reset event does not.
        assert_eq!(ens.frozen().len(), 2);
        assert!(ens.active().is_some());
        assert_eq!(ens.size(), 3);
        assert!(ens.verify_frozen_integrity());
        // First learner commits at full strength, later ones at eta.
        assert_eq!(ens.frozen()[0].coeff, 1.0);
        assert_eq!(ens.frozen()[1].coeff, 0.1);
        let last = trainer.records().last().unwrap();
        assert_eq!(last.ensemble_size, 3);
    }

    #[test]
    fn drift_flag_lands_on_the_event_episode() {
        let config = smoke_config(Method::Dqn);
        let env = EnvKind::CartPole.make(40);
        let schedule = DriftSchedule::new(vec![DriftEvent::new(
            2,
            DriftKind::Gravity,
            &[("gravity", 1.3)],
        )])
        .unwrap();
        let records = train_run(config, env, schedule, 4, 5).unwrap();
        assert_eq!(records[1].drift_kind, "gravity");
        assert_eq!(records[0].drift_kind, "none");
        assert_eq!(records[2].drift_kind, "none");
    }

    #[test]
    fn dqn_params_unaffected_by_drift_hook() {
        let mut config = smoke_config(Method::Dqn);
        config.learn_start_steps = u64::MAX; // isolate the hook: no learning
        let env = EnvKind::CartPole.make(30);
        let schedule = DriftSchedule::new(vec![DriftEvent::new(
            2,
            DriftKind::Gravity,
            &[("gravity", 1.3)],
        )])
        .unwrap();
        let mut trainer = Trainer::new(config, env, schedule, 3, 9).unwrap();
        let before = trainer.online_params()[0].theta().to_vec();
        while !trainer.finished() {
            trainer.step_once().unwrap();
        }
        assert_eq!(trainer.online_params()[0].theta(), before.as_slice());
    }

    #[test]
    fn reset_dqn_reinitializes_but_keeps_buffer() {
        let mut config = smoke_config(Method::ResetDqn);
        config.learn_start_steps = u64::MAX; // no learning, isolate the reset
        let env = EnvKind::CartPole.make(50);
        let schedule = DriftSchedule::new(vec![DriftEvent::reset(3)]).unwrap();
        let mut trainer = Trainer::new(config, env, schedule, 4, 13).unwrap();
        let before = trainer.online_params()[0].theta().to_vec();
        let mut buffer_at_event = None;
        while !trainer.finished() {
            trainer.step_once().unwrap();
            if trainer.episode == 3 && buffer_at_event.is_none() {
                buffer_at_event = Some(trainer.buffer().len());
            }
        }
        let after = trainer.online_params()[0].theta().to_vec();
        assert_ne!(before, after, "reset must redraw parameters");
        assert!(buffer_at_event.unwrap() > 0, "buffer survives the reset");

        // Fresh-init distribution: biases exactly zero again.
        let spec = NetSpec::new(4, vec![16, 16], 2).unwrap();
        let dims = spec.layer_dims();
        let mut off = 0;
        for (fan_in, fan_out) in dims {
            let biases = &after[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            assert!(biases.iter().all(|&b| b == 0.0));
            off += fan_in * fan_out + fan_out;
        }
    }

    #[test]
    fn sliding_buffer_never_outlives_capacity() {
        let mut config = smoke_config(Method::SlidingDqn);
        config.buffer_capacity = 300;
        config.learn_start_steps = u64::MAX;
        let env = Box::new(MountainCar::new(200));
        let mut trainer = Trainer::new(config, env, DriftSchedule::empty(), 4, 17).unwrap();
        let mut total_steps = 0u64;
        while !trainer.finished() {
            trainer.step_once().unwrap();
            total_steps += 1;
            assert!(trainer.buffer().len() <= 300);
            if let Some(min_birth) = trainer.buffer().iter().map(|t| t.birth_step).min() {
                assert!(total_steps - min_birth < 300);
            }
        }
    }

    #[test]
    fn ensemble_heads_mean_matches_oracle() {
        let mut rngs = RunRngs::for_seed(23);
        let spec = NetSpec::new(2, vec![8], 3).unwrap();
        let config = smoke_config(Method::EnsembleDqn);
        let heads: Vec<SingleDqn> =
            (0..5).map(|_| SingleDqn::new(&spec, 1e-3, &mut rngs.init)).collect();
        let model = ValueModel::Heads { heads };
        let obs = vec![0.4, -0.2];
        let q = model.q_values(&obs, &config).unwrap();
        let ValueModel::Heads { heads } = &model else { unreachable!() };
        for a in 0..3 {
            let mean: f64 = heads
                .iter()
                .map(|h| numcore::forward_single(&h.online, &obs).unwrap()[a])
                .sum::<f64>()
                / 5.0;
            assert!((q[a] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn identically_initialized_heads_stay_identical() {
        let spec = NetSpec::new(2, vec![8], 2).unwrap();
        let config = smoke_config(Method::EnsembleDqn);
        let template = SingleDqn::new(&spec, 1e-3, &mut RunRngs::for_seed(29).init);
        let mut heads: Vec<SingleDqn> = (0..3)
            .map(|_| SingleDqn {
                online: template.online.clone(),
                target: template.target.clone(),
                opt: AdamState::new(template.online.param_count(), 1e-3),
            })
            .collect();
        let batch = SampleBatch {
            ids: vec![0, 1],
            transitions: vec![
                Transition {
                    state: vec![0.1, 0.2],
                    action: 0,
                    reward: 1.0,
                    next_state: vec![0.2, 0.3],
                    done: false,
                    priority: 1.0,
                    birth_step: 1,
                },
                Transition {
                    state: vec![-0.5, 0.9],
                    action: 1,
                    reward: -1.0,
                    next_state: vec![0.0, 0.0],
                    done: true,
                    priority: 1.0,
                    birth_step: 2,
                },
            ],
            probs: vec![0.5, 0.5],
            is_weights: vec![1.0, 1.0],
        };
        for _ in 0..5 {
            ensemble_dqn_step(&mut heads, &batch, &config).unwrap();
        }
        for head in &heads[1..] {
            assert_eq!(head.online.theta(), heads[0].online.theta());
        }
    }

    #[test]
    fn single_head_ensemble_matches_dqn_step() {
        let spec = NetSpec::new(2, vec![8], 2).unwrap();
        let config = smoke_config(Method::EnsembleDqn);
        let mut rngs = RunRngs::for_seed(31);
        let net = SingleDqn::new(&spec, 1e-3, &mut rngs.init);
        let mut one_head = vec![SingleDqn {
            online: net.online.clone(),
            target: net.target.clone(),
            opt: AdamState::new(net.online.param_count(), 1e-3),
        }];
        let mut single = ValueModel::Single {
            net: SingleDqn {
                online: net.online.clone(),
                target: net.target.clone(),
                opt: AdamState::new(net.online.param_count(), 1e-3),
            },
            reinit_on_drift: false,
        };
        let batch = SampleBatch {
            ids: vec![0],
            transitions: vec![Transition {
                state: vec![0.3, -0.1],
                action: 1,
                reward: 0.5,
                next_state: vec![0.1, 0.1],
                done: false,
                priority: 1.0,
                birth_step: 1,
            }],
            probs: vec![1.0],
            is_weights: vec![1.0],
        };
        let d1 = ensemble_dqn_step(&mut one_head, &batch, &config).unwrap();
        let d2 = single.train_step(&batch, &config).unwrap();
        assert_eq!(d1, d2);
        let ValueModel::Single { net: single_net, .. } = &single else { unreachable!() };
        assert_eq!(one_head[0].online.theta(), single_net.online.theta());
    }

    #[test]
    fn max_priority_insertion_mode_runs() {
        let mut config = smoke_config(Method::Dqn);
        config.insertion_priority = InsertionPriority::MaxPriority;
        let env = EnvKind::CartPole.make(50);
        let records = train_run(config, env, DriftSchedule::empty(), 3, 37).unwrap();
        assert_eq!(records.len(), 3);
    }

    #[test]
    fn softmax_policy_runs() {
        let mut config = smoke_config(Method::Dqn);
        config.policy = PolicyKind::Softmax;
        let env = EnvKind::CartPole.make(50);
        let records = train_run(config, env, DriftSchedule::empty(), 2, 41).unwrap();
        assert_eq!(records.len(), 2);
    }

    #[test]
    fn epsilon_rearm_restarts_schedule_on_drift() {
        let mut config = smoke_config(Method::Dqn);
        config.epsilon_rearm_on_drift = true;
        config.epsilon.decay_steps = 1_000;
        config.learn_start_steps = u64::MAX;
        // MountainCar never reaches the goal under a random policy in 50
        // steps, so every episode runs exactly 50 steps.
        let env = Box::new(MountainCar::new(50));
        let schedule = DriftSchedule::new(vec![DriftEvent::new(
            3,
            DriftKind::Gravity,
            &[("gravity", 1.2)],
        )])
        .unwrap();
        let records = train_run(config, env, schedule, 4, 43).unwrap();
        // Without rearm end-of-episode-3 epsilon would sit at value(150);
        // with rearm the schedule restarts, so it reads value(50) instead,
        // above episode 2's value(100).
        assert!(records[2].epsilon > records[1].epsilon);
        assert!(records[1].epsilon < records[0].epsilon);
    }

    #[test]
    fn budget_parity_across_methods() {
        // Same seeds, same env: every method sees the same cadence gates, so
        // none can take more gradient steps than the shared schedule allows.
        let mut update_counts = Vec::new();
        for method in Method::ALL {
            let config = smoke_config(method);
            let env = Box::new(MountainCar::new(120));
            let mut t = Trainer::new(config, env, DriftSchedule::empty(), 2, 47).unwrap();
            while !t.finished() {
                t.step_once().unwrap();
            }
            // MountainCar rarely terminates early under a random policy, so
            // all methods run the full 2 x 120 steps here.
            update_counts.push(t.updates_done());
        }
        assert!(update_counts.windows(2).all(|w| w[0] == w[1]), "{update_counts:?}");
    }
}
