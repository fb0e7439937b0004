//! Additive Q-ensemble with residual fitting.
//!
//! The ensemble holds an ordered list of frozen learners with positive
//! coefficients plus at most one active (in-training) learner, each with a
//! target copy for bootstrapping. New learners fit the TD residual of the
//! frozen ensemble; at commit time the active learner is frozen with either
//! the shrinkage coefficient or the closed-form least-squares step size.
//!
//! The first learner of an otherwise empty ensemble participates with
//! coefficient 1 so that the single-learner configuration is exactly a
//! standard DQN; later learners participate with the anticipated shrinkage
//! coefficient until they are committed.

use crate::numcore::{self, AdamState, NetParams, NetSpec, NumError};
use crate::replay::Transition;
use rand::Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("no active learner")]
    NoActiveLearner,
    #[error("degenerate weak learner: sum of squared outputs is zero")]
    DegenerateLearner,
    #[error("non-finite q-values passed to policy")]
    NonFiniteQ,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Checkpoint(String),
}

/// A committed learner: immutable parameters, its coefficient, and the
/// target copy frozen alongside it.
#[derive(Debug, Clone)]
pub struct FrozenLearner {
    pub online: NetParams,
    pub target: NetParams,
    pub coeff: f64,
}

/// The learner currently being trained.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    pub online: NetParams,
    pub target: NetParams,
    pub opt: AdamState,
}

/// How a booster's coefficient is chosen at commit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitMode {
    /// Fixed shrinkage coefficient (the experiments' default).
    Shrinkage,
    /// Closed-form least-squares step size over an evaluation batch.
    LineSearch,
}

/// Per-sample targets for one residual-fitting step.
#[derive(Debug, Clone)]
pub struct ResidualBatch {
    /// TD targets y_i.
    pub td_targets: Vec<f64>,
    /// Residual fitting targets y_i - Q_frozen(s_i, a_i).
    pub residual_targets: Vec<f64>,
    /// Fresh TD errors y_i - Q_full(s_i, a_i), for priority refresh.
    pub deltas: Vec<f64>,
}

/// Algebraic ledger of one least-squares boosting step:
/// L_after - L_before must equal -A^2/B.
#[derive(Debug, Clone)]
pub struct Theorem1Ledger {
    pub l_before: f64,
    pub l_after: f64,
    pub a: f64,
    pub b: f64,
    pub delta_check: f64,
}

impl Theorem1Ledger {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.delta_check <= rel_tol * self.l_before.max(f64::MIN_POSITIVE)
    }
}

/// Outcome of committing the active learner.
#[derive(Debug, Clone)]
pub struct CommitOutcome {
    pub coeff: f64,
    pub ledger: Option<Theorem1Ledger>,
    /// True when a degenerate or non-positive line search fell back to
    /// shrinkage.
    pub fell_back: bool,
}

/// Ordered additive ensemble of Q-networks.
#[derive(Debug, Clone)]
pub struct EnsembleQ {
    frozen: Vec<FrozenLearner>,
    active: Option<ActiveLearner>,
    pub discount: f64,
    pub eta_boost: f64,
    pub alpha_max: f64,
    /// When true (the literal per-iteration rule), bootstrap targets use the
    /// frozen ensemble only; by default the in-training learner's target
    /// copy participates with its anticipated coefficient.
    pub bootstrap_excludes_active: bool,
    commit_digests: Vec<u64>,
}

impl EnsembleQ {
    pub fn new(discount: f64, eta_boost: f64) -> Self {
        Self {
            frozen: Vec::new(),
            active: None,
            discount,
            eta_boost,
            alpha_max: 1.0,
            bootstrap_excludes_active: false,
            commit_digests: Vec::new(),
        }
    }

    pub fn frozen(&self) -> &[FrozenLearner] {
        &self.frozen
    }

    pub fn active(&self) -> Option<&ActiveLearner> {
        self.active.as_ref()
    }

    pub fn active_mut(&mut self) -> Option<&mut ActiveLearner> {
        self.active.as_mut()
    }

    /// Learner count, including the in-training one.
    pub fn size(&self) -> usize {
        self.frozen.len() + usize::from(self.active.is_some())
    }

    /// Coefficient the active learner participates with before commit:
    /// full strength while it is the only learner, shrinkage afterwards.
    pub fn active_coeff(&self) -> f64 {
        if self.frozen.is_empty() {
            1.0
        } else {
            self.eta_boost
        }
    }

    /// Install a fresh active learner with He-initialized parameters, a
    /// target copy equal to them, and clean optimizer state.
    pub fn open_active<R: Rng + ?Sized>(&mut self, spec: &NetSpec, lr: f64, rng: &mut R) {
        let online = numcore::init_params(spec, rng);
        let target = online.clone();
        let opt = AdamState::new(online.param_count(), lr);
        self.active = Some(ActiveLearner { online, target, opt });
    }

    /// Directly install a frozen learner (tests, checkpoint loading).
    pub fn push_frozen(&mut self, online: NetParams, target: NetParams, coeff: f64) {
        assert!(coeff > 0.0, "frozen coefficients must be positive");
        let digest = online.digest();
        self.frozen.push(FrozenLearner { online, target, coeff });
        self.commit_digests.push(digest);
    }

    fn contributions<'a>(
        &'a self,
        use_targets: bool,
        include_active: bool,
    ) -> Vec<(f64, &'a NetParams)> {
        let mut parts: Vec<(f64, &NetParams)> = self
            .frozen
            .iter()
            .map(|l| (l.coeff, if use_targets { &l.target } else { &l.online }))
            .collect();
        if include_active {
            if let Some(active) = &self.active {
                parts.push((
                    self.active_coeff(),
                    if use_targets { &active.target } else { &active.online },
                ));
            }
        }
        parts
    }

    fn weighted_sum(
        &self,
        states: &[Vec<f64>],
        use_targets: bool,
        include_active: bool,
        out_dim_hint: Option<usize>,
    ) -> Result<Vec<Vec<f64>>, BoostError> {
        let parts = self.contributions(use_targets, include_active);
        let mut acc: Option<Vec<Vec<f64>>> = None;
        for (coeff, params) in parts {
            let q = numcore::forward(params, states)?;
            match acc.as_mut() {
                None => {
                    let mut q = q;
                    if coeff != 1.0 {
                        for row in q.iter_mut() {
                            for v in row.iter_mut() {
                                *v *= coeff;
                            }
                        }
                    }
                    acc = Some(q);
                }
                Some(a) => {
                    for (arow, qrow) in a.iter_mut().zip(q.iter()) {
                        for (av, qv) in arow.iter_mut().zip(qrow.iter()) {
                            *av += coeff * qv;
                        }
                    }
                }
            }
        }
        Ok(acc.unwrap_or_else(|| {
            let dim = out_dim_hint.unwrap_or(0);
            vec![vec![0.0; dim]; states.len()]
        }))
    }

    fn out_dim(&self) -> Option<usize> {
        self.frozen
            .first()
            .map(|l| l.online.spec().output_dim())
            .or_else(|| self.active.as_ref().map(|a| a.online.spec().output_dim()))
    }

    /// Q_m(s,.) = sum_j alpha_j h_j(s,.) (+ active contribution on request).
    pub fn ensemble_q(
        &self,
        states: &[Vec<f64>],
        include_active: bool,
    ) -> Result<Vec<Vec<f64>>, BoostError> {
        self.weighted_sum(states, false, include_active, self.out_dim())
    }

    /// As `ensemble_q` but over the target copies.
    pub fn target_ensemble_q(
        &self,
        states: &[Vec<f64>],
        include_active: bool,
    ) -> Result<Vec<Vec<f64>>, BoostError> {
        self.weighted_sum(states, true, include_active, self.out_dim())
    }

    pub fn ensemble_q_single(
        &self,
        state: &[f64],
        include_active: bool,
    ) -> Result<Vec<f64>, BoostError> {
        let batch = [state.to_vec()];
        Ok(self.ensemble_q(&batch, include_active)?.pop().expect("one row"))
    }

    pub fn target_ensemble_q_single(
        &self,
        state: &[f64],
        include_active: bool,
    ) -> Result<Vec<f64>, BoostError> {
        let batch = [state.to_vec()];
        Ok(self.target_ensemble_q(&batch, include_active)?.pop().expect("one row"))
    }

    /// TD targets, residual fitting targets, and fresh TD errors for a
    /// sampled minibatch. Requires an active learner.
    pub fn residual_targets(&self, batch: &[Transition]) -> Result<ResidualBatch, BoostError> {
        if self.active.is_none() {
            return Err(BoostError::NoActiveLearner);
        }
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
        let next_states: Vec<Vec<f64>> = batch.iter().map(|t| t.next_state.clone()).collect();

        let bootstrap_active = !self.bootstrap_excludes_active;
        let next_q = self.target_ensemble_q(&next_states, bootstrap_active)?;
        let frozen_q = self.weighted_sum(&states, false, false, self.out_dim())?;
        let full_q = self.ensemble_q(&states, true)?;

        let mut td_targets = Vec::with_capacity(batch.len());
        let mut residual_targets = Vec::with_capacity(batch.len());
        let mut deltas = Vec::with_capacity(batch.len());
        for (i, t) in batch.iter().enumerate() {
            let y = td_target(t.reward, t.done, self.discount, max_q(&next_q[i]));
            td_targets.push(y);
            residual_targets.push(y - frozen_q[i][t.action]);
            deltas.push(y - full_q[i][t.action]);
        }
        Ok(ResidualBatch { td_targets, residual_targets, deltas })
    }

    /// Polyak-update the active learner's target copy.
    pub fn polyak_active(&mut self, tau: f64) -> Result<(), BoostError> {
        let active = self.active.as_mut().ok_or(BoostError::NoActiveLearner)?;
        numcore::polyak_update(&mut active.target, &active.online, tau)?;
        Ok(())
    }

    /// Freeze the active learner into the ensemble.
    ///
    /// Shrinkage mode uses the anticipated coefficient (1 for the first
    /// learner, eta_boost afterwards). Line-search mode solves the
    /// least-squares step size over `eval_batch`, clips it to
    /// (0, alpha_max], and falls back to shrinkage when the step is
    /// degenerate or non-positive.
    pub fn commit_booster(
        &mut self,
        mode: CommitMode,
        eval_batch: Option<&[Transition]>,
    ) -> Result<CommitOutcome, BoostError> {
        if self.active.is_none() {
            return Err(BoostError::NoActiveLearner);
        }
        let shrink_coeff = self.active_coeff();
        let mut outcome = CommitOutcome { coeff: shrink_coeff, ledger: None, fell_back: false };

        if mode == CommitMode::LineSearch {
            let batch = eval_batch.ok_or(BoostError::DegenerateLearner)?;
            let rb = self.residual_targets(batch)?;
            let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
            let active = self.active.as_ref().expect("checked above");
            let h_full = numcore::forward(&active.online, &states)?;
            let h: Vec<f64> =
                batch.iter().enumerate().map(|(i, t)| h_full[i][t.action]).collect();
            match line_search_alpha(&rb.residual_targets, &h) {
                Ok(alpha) if alpha > 0.0 => {
                    outcome.coeff = alpha.min(self.alpha_max);
                    outcome.ledger = Some(theorem1_ledger(&rb.residual_targets, &h)?);
                }
                _ => {
                    log::warn!(
                        "line-search commit degenerate or non-positive; falling back to shrinkage"
                    );
                    outcome.fell_back = true;
                }
            }
        }

        let active = self.active.take().expect("checked above");
        let digest = active.online.digest();
        self.frozen.push(FrozenLearner {
            online: active.online,
            target: active.target,
            coeff: outcome.coeff,
        });
        self.commit_digests.push(digest);
        Ok(outcome)
    }

    /// True when every committed learner's parameters still hash to their
    /// commit-time digest.
    pub fn verify_frozen_integrity(&self) -> bool {
        self.frozen.len() == self.commit_digests.len()
            && self
                .frozen
                .iter()
                .zip(self.commit_digests.iter())
                .all(|(l, &d)| l.online.digest() == d)
    }

    pub fn commit_digests(&self) -> &[u64] {
        &self.commit_digests
    }

    /// Write the ensemble as a versioned text checkpoint: one record per
    /// learner (spec, coefficient, flat parameters), plus discount and
    /// shrinkage settings.
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<(), BoostError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "ensembleq v1")?;
        writeln!(f, "discount {}", self.discount)?;
        writeln!(f, "eta_boost {}", self.eta_boost)?;
        writeln!(f, "alpha_max {}", self.alpha_max)?;
        writeln!(f, "learners {}", self.frozen.len())?;
        for l in &self.frozen {
            let spec = l.online.spec();
            let hidden: Vec<String> = spec.hidden().iter().map(|h| h.to_string()).collect();
            writeln!(
                f,
                "learner coeff {} spec {} {} {}",
                l.coeff,
                spec.input_dim(),
                hidden.join(","),
                spec.output_dim()
            )?;
            let theta: Vec<String> = l.online.theta().iter().map(|x| x.to_string()).collect();
            writeln!(f, "{}", theta.join(" "))?;
        }
        Ok(())
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self, BoostError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let mut next = || -> Result<String, BoostError> {
            lines
                .next()
                .ok_or_else(|| BoostError::Checkpoint("unexpected end of file".into()))?
                .map_err(BoostError::from)
        };
        let header = next()?;
        if header.trim() != "ensembleq v1" {
            return Err(BoostError::Checkpoint(format!("unknown header: {header}")));
        }
        let field = |line: String, key: &str| -> Result<String, BoostError> {
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| BoostError::Checkpoint(format!("expected `{key}`: {line}")))
        };
        let parse_f64 = |s: &str| -> Result<f64, BoostError> {
            s.parse().map_err(|_| BoostError::Checkpoint(format!("bad number: {s}")))
        };
        let discount = parse_f64(&field(next()?, "discount")?)?;
        let eta_boost = parse_f64(&field(next()?, "eta_boost")?)?;
        let alpha_max = parse_f64(&field(next()?, "alpha_max")?)?;
        let count: usize = field(next()?, "learners")?
            .parse()
            .map_err(|_| BoostError::Checkpoint("bad learner count".into()))?;

        let mut ens = EnsembleQ::new(discount, eta_boost);
        ens.alpha_max = alpha_max;
        for _ in 0..count {
            let head = next()?;
            let tokens: Vec<&str> = head.split_whitespace().collect();
            if tokens.len() != 7 || tokens[0] != "learner" || tokens[1] != "coeff" {
                return Err(BoostError::Checkpoint(format!("bad learner record: {head}")));
            }
            let coeff = parse_f64(tokens[2])?;
            let input_dim: usize =
                tokens[4].parse().map_err(|_| BoostError::Checkpoint("bad dim".into()))?;
            let hidden: Vec<usize> = tokens[5]
                .split(',')
                .map(|t| t.parse().map_err(|_| BoostError::Checkpoint("bad dim".into())))
                .collect::<Result<_, _>>()?;
            let output_dim: usize =
                tokens[6].parse().map_err(|_| BoostError::Checkpoint("bad dim".into()))?;
            let spec = NetSpec::new(input_dim, hidden, output_dim)
                .map_err(|e| BoostError::Checkpoint(e.to_string()))?;
            let theta_line = next()?;
            let theta: Vec<f64> = theta_line
                .split_whitespace()
                .map(parse_f64)
                .collect::<Result<_, _>>()?;
            let online = NetParams::from_theta(spec, theta)
                .map_err(|e| BoostError::Checkpoint(e.to_string()))?;
            let target = online.clone();
            ens.push_frozen(online, target, coeff);
        }
        Ok(ens)
    }
}

/// One-step bootstrap target with the terminal cutoff:
/// y = r + discount * max_next, zeroed past terminal transitions.
pub fn td_target(reward: f64, done: bool, discount: f64, max_next: f64) -> f64 {
    let bootstrap = if done { 0.0 } else { max_next };
    reward + discount * bootstrap
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_q(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn max_q(q: &[f64]) -> f64 {
    q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Closed-form least-squares step size along the new learner's direction:
/// alpha = sum(r_i h_i) / sum(h_i^2).
pub fn line_search_alpha(residuals: &[f64], h_values: &[f64]) -> Result<f64, BoostError> {
    debug_assert_eq!(residuals.len(), h_values.len());
    let b: f64 = h_values.iter().map(|h| h * h).sum();
    if b == 0.0 {
        return Err(BoostError::DegenerateLearner);
    }
    let a: f64 = residuals.iter().zip(h_values.iter()).map(|(r, h)| r * h).sum();
    Ok(a / b)
}

/// Evaluates both sides of the single-step descent identity
/// L_after - L_before = -A^2/B and reports the discrepancy.
pub fn theorem1_ledger(residuals: &[f64], h_values: &[f64]) -> Result<Theorem1Ledger, BoostError> {
    let b: f64 = h_values.iter().map(|h| h * h).sum();
    if b == 0.0 {
        return Err(BoostError::DegenerateLearner);
    }
    let a: f64 = residuals.iter().zip(h_values.iter()).map(|(r, h)| r * h).sum();
    let alpha = a / b;
    let l_before: f64 = residuals.iter().map(|r| r * r).sum();
    let l_after: f64 = residuals
        .iter()
        .zip(h_values.iter())
        .map(|(r, h)| {
            let e = r - alpha * h;
            e * e
        })
        .sum();
    let delta_check = ((l_after - l_before) + a * a / b).abs();
    Ok(Theorem1Ledger { l_before, l_after, a, b, delta_check })
}

/// Samples an action from the Boltzmann distribution over q/tau, computed
/// with max-subtraction.
pub fn softmax_action<R: Rng + ?Sized>(
    q: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<usize, BoostError> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(BoostError::NonFiniteQ);
    }
    debug_assert!(tau > 0.0);
    let m = max_q(q);
    let exps: Vec<f64> = q.iter().map(|v| ((v - m) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut u = rng.random_range(0.0..1.0) * z;
    for (i, e) in exps.iter().enumerate() {
        if u < *e {
            return Ok(i);
        }
        u -= e;
    }
    Ok(q.len() - 1)
}

/// Epsilon-greedy over q, ties broken toward the lowest index. Always draws
/// the exploration coin so the RNG stream advances uniformly.
pub fn epsilon_greedy_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let coin: f64 = rng.random_range(0.0..1.0);
    if coin < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax_q(q)
    }
}
