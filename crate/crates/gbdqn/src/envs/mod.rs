//! Classic-control environments with run-time-mutable physics, plus the
//! drift scheduler that rescales them at fixed episodes.
//!
//! All three tasks integrate the standard formulations (Acrobot via a single
//! RK4 step of the two-link equations, MountainCar via the canonical
//! position/velocity update, CartPole via Euler at dt = 0.02) and are fully
//! deterministic given the reset RNG, the action sequence, and the drift
//! schedule. Drift multiplies named physics parameters; a `reset` event
//! restores the originals bit-exactly and never touches mid-episode state.

mod acrobot;
mod cartpole;
mod mountain_car;

pub use acrobot::{Acrobot, AcrobotParams};
pub use cartpole::{CartPole, CartPoleParams};
pub use mountain_car::{MountainCar, MountainCarParams};

use rand::RngCore;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const ACROBOT_GOLDEN: &str = include_str!("goldens/acrobot.txt");
pub const MOUNTAIN_CAR_GOLDEN: &str = include_str!("goldens/mountain_car.txt");
pub const CARTPOLE_GOLDEN: &str = include_str!("goldens/cartpole.txt");

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action {action} for {env} ({n_actions} actions)")]
    InvalidAction { env: &'static str, action: usize, n_actions: usize },
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("{env} has no physics parameter named `{name}`")]
    UnknownParam { env: &'static str, name: String },
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Draw a fresh initial state; zeroes the step counter.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;
    fn apply_drift(&mut self, event: &DriftEvent) -> Result<(), EnvError>;
    /// Overwrite the internal coordinates (test/fixture hook); clears the
    /// done flag and the step counter.
    fn set_state(&mut self, coords: &[f64]);
    fn observation(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DriftKind {
    Gravity,
    Mass,
    Force,
    Combined,
    Reset,
}

impl fmt::Display for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DriftKind::Gravity => "gravity",
            DriftKind::Mass => "mass",
            DriftKind::Force => "force",
            DriftKind::Combined => "combined",
            DriftKind::Reset => "reset",
        };
        f.write_str(s)
    }
}

impl FromStr for DriftKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gravity" => Ok(DriftKind::Gravity),
            "mass" => Ok(DriftKind::Mass),
            "force" => Ok(DriftKind::Force),
            "combined" => Ok(DriftKind::Combined),
            "reset" => Ok(DriftKind::Reset),
            other => Err(format!("unknown drift kind `{other}`")),
        }
    }
}

/// One scheduled physics change: at `episode`, multiply each named parameter
/// by its factor. `Reset` ignores the factors and restores the originals.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEvent {
    pub episode: u32,
    pub kind: DriftKind,
    pub factors: BTreeMap<String, f64>,
}

impl DriftEvent {
    pub fn new(episode: u32, kind: DriftKind, factors: &[(&str, f64)]) -> Self {
        Self {
            episode,
            kind,
            factors: factors.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn reset(episode: u32) -> Self {
        Self { episode, kind: DriftKind::Reset, factors: BTreeMap::new() }
    }
}

/// Ordered drift events with strictly increasing episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriftSchedule {
    events: Vec<DriftEvent>,
}

impl DriftSchedule {
    pub fn new(events: Vec<DriftEvent>) -> Result<Self, String> {
        for pair in events.windows(2) {
            if pair[1].episode <= pair[0].episode {
                return Err(format!(
                    "drift episodes must strictly increase: {} then {}",
                    pair[0].episode, pair[1].episode
                ));
            }
        }
        if events.iter().any(|e| e.episode == 0) {
            return Err("drift episodes must be positive".into());
        }
        if events
            .iter()
            .any(|e| e.factors.values().any(|&f| f <= 0.0))
        {
            return Err("drift factors must be strictly positive".into());
        }
        Ok(Self { events })
    }

    pub fn empty() -> Self {
        Self { events: Vec::new() }
    }

    pub fn events(&self) -> &[DriftEvent] {
        &self.events
    }

    pub fn event_at(&self, episode: u32) -> Option<&DriftEvent> {
        self.events.iter().find(|e| e.episode == episode)
    }
}

/// Multiplicative drift magnitudes applied by the preset schedules. The
/// combined factor applies to every parameter its event names.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftFactors {
    pub gravity: f64,
    pub mass: f64,
    pub force: f64,
    pub combined: f64,
}

impl Default for DriftFactors {
    fn default() -> Self {
        Self { gravity: 1.5, mass: 1.5, force: 0.7, combined: 1.3 }
    }
}

/// Acrobot schedule: gravity, mass, combined mass-gravity, reset at
/// episodes 150/250/350/450.
pub fn acrobot_schedule(f: &DriftFactors) -> DriftSchedule {
    DriftSchedule::new(vec![
        DriftEvent::new(150, DriftKind::Gravity, &[("g", f.gravity)]),
        DriftEvent::new(250, DriftKind::Mass, &[("m1", f.mass), ("m2", f.mass)]),
        DriftEvent::new(
            350,
            DriftKind::Combined,
            &[("m1", f.combined), ("m2", f.combined), ("g", f.combined)],
        ),
        DriftEvent::reset(450),
    ])
    .expect("static schedule is valid")
}

/// MountainCar schedule: gravity, force, combined force-gravity, reset at
/// episodes 150/250/350/450.
pub fn mountaincar_schedule(f: &DriftFactors) -> DriftSchedule {
    DriftSchedule::new(vec![
        DriftEvent::new(150, DriftKind::Gravity, &[("gravity", f.gravity)]),
        DriftEvent::new(250, DriftKind::Force, &[("force", f.force)]),
        DriftEvent::new(
            350,
            DriftKind::Combined,
            &[("force", f.combined), ("gravity", f.combined)],
        ),
        DriftEvent::reset(450),
    ])
    .expect("static schedule is valid")
}

/// CartPole schedule, following the Acrobot shape.
pub fn cartpole_schedule(f: &DriftFactors) -> DriftSchedule {
    DriftSchedule::new(vec![
        DriftEvent::new(150, DriftKind::Gravity, &[("gravity", f.gravity)]),
        DriftEvent::new(
            250,
            DriftKind::Mass,
            &[("masscart", f.mass), ("masspole", f.mass)],
        ),
        DriftEvent::new(
            350,
            DriftKind::Combined,
            &[("masscart", f.combined), ("masspole", f.combined), ("gravity", f.combined)],
        ),
        DriftEvent::reset(450),
    ])
    .expect("static schedule is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EnvKind {
    Acrobot,
    MountainCar,
    CartPole,
}

impl EnvKind {
    pub fn make(&self, max_steps: u32) -> Box<dyn Environment> {
        match self {
            EnvKind::Acrobot => Box::new(Acrobot::new(max_steps)),
            EnvKind::MountainCar => Box::new(MountainCar::new(max_steps)),
            EnvKind::CartPole => Box::new(CartPole::new(max_steps)),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvKind::Acrobot => 6,
            EnvKind::MountainCar => 2,
            EnvKind::CartPole => 4,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvKind::Acrobot => 3,
            EnvKind::MountainCar => 3,
            EnvKind::CartPole => 2,
        }
    }

    pub fn default_schedule(&self, f: &DriftFactors) -> DriftSchedule {
        match self {
            EnvKind::Acrobot => acrobot_schedule(f),
            EnvKind::MountainCar => mountaincar_schedule(f),
            EnvKind::CartPole => cartpole_schedule(f),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EnvKind::Acrobot => "acrobot",
            EnvKind::MountainCar => "mountaincar",
            EnvKind::CartPole => "cartpole",
        };
        f.write_str(s)
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "acrobot" => Ok(EnvKind::Acrobot),
            "mountaincar" | "mountain_car" => Ok(EnvKind::MountainCar),
            "cartpole" => Ok(EnvKind::CartPole),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

/// A parsed golden-trajectory fixture row.
#[derive(Debug, Clone)]
pub struct GoldenRow {
    pub step: u32,
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Parses a fixture file: `# comment` lines, then `step obs... reward done`.
pub fn parse_golden(text: &str) -> Vec<GoldenRow> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let tok: Vec<&str> = l.split_whitespace().collect();
            let step: u32 = tok[0].parse().expect("step index");
            let done = tok[tok.len() - 1] == "true";
            let reward: f64 = tok[tok.len() - 2].parse().expect("reward");
            let obs = tok[1..tok.len() - 2]
                .iter()
                .map(|t| t.parse().expect("coordinate"))
                .collect();
            GoldenRow { step, obs, reward, done }
        })
        .collect()
}

/// Initial internal coordinates encoded in each fixture's header comment.
pub fn golden_initial_state(text: &str) -> Vec<f64> {
    let header = text.lines().next().expect("fixture header");
    let after = header.split("init").nth(1).expect("init marker");
    let coords = after.split(';').next().expect("init coords");
    coords
        .split_whitespace()
        .map(|t| t.parse().expect("init coordinate"))
        .collect()
}

/// Replays a fixture against an environment: sets the recorded initial
/// state, applies the fixture's action pattern, and compares observations,
/// rewards, and done flags. Returns the maximum per-coordinate deviation, or
/// a description of the first structural mismatch.
pub fn check_golden_trajectory(
    env: &mut dyn Environment,
    text: &str,
) -> Result<f64, String> {
    let rows = parse_golden(text);
    let init = golden_initial_state(text);
    let n_actions = env.n_actions();
    env.set_state(&init);
    let mut max_err: f64 = 0.0;
    for (o, e) in env.observation().iter().zip(rows[0].obs.iter()) {
        max_err = max_err.max((o - e).abs());
    }
    for row in &rows[1..] {
        let action = (row.step as usize - 1) % n_actions;
        let out = env
            .step(action)
            .map_err(|e| format!("step {} failed: {e}", row.step))?;
        for (o, e) in out.obs.iter().zip(row.obs.iter()) {
            max_err = max_err.max((o - e).abs());
        }
        if out.reward != row.reward {
            return Err(format!("step {}: reward {} vs {}", row.step, out.reward, row.reward));
        }
        if out.done != row.done {
            return Err(format!("step {}: done {} vs {}", row.step, out.done, row.done));
        }
    }
    Ok(max_err)
}

pub(crate) fn wrap_angle(x: f64, lo: f64, hi: f64) -> f64 {
    let mut x = x;
    let diff = hi - lo;
    while x > hi {
        x -= diff;
    }
    while x < lo {
        x += diff;
    }
    x
}

/// One classic RK4 step of size `h` for a 4-dimensional state.
pub(crate) fn rk4_step<F: Fn(&[f64; 4]) -> [f64; 4]>(f: F, y: &[f64; 4], h: f64) -> [f64; 4] {
    let k1 = f(y);
    let mut y2 = *y;
    for i in 0..4 {
        y2[i] = y[i] + h / 2.0 * k1[i];
    }
    let k2 = f(&y2);
    for i in 0..4 {
        y2[i] = y[i] + h / 2.0 * k2[i];
    }
    let k3 = f(&y2);
    for i in 0..4 {
        y2[i] = y[i] + h * k3[i];
    }
    let k4 = f(&y2);
    let mut out = *y;
    for i in 0..4 {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn acrobot_matches_reference_trajectory() {
        let mut env = Acrobot::new(500);
        let err = check_golden_trajectory(&mut env, ACROBOT_GOLDEN).unwrap();
        assert!(err <= 1e-6, "max coordinate error {err}");
    }

    #[test]
    fn mountain_car_matches_reference_trajectory() {
        let mut env = MountainCar::new(200);
        let err = check_golden_trajectory(&mut env, MOUNTAIN_CAR_GOLDEN).unwrap();
        assert!(err <= 1e-6, "max coordinate error {err}");
    }

    #[test]
    fn cartpole_matches_reference_trajectory() {
        let mut env = CartPole::new(500);
        let err = check_golden_trajectory(&mut env, CARTPOLE_GOLDEN).unwrap();
        assert!(err <= 1e-6, "max coordinate error {err}");
    }

    #[test]
    fn reset_ranges_follow_standard_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mc = MountainCar::new(200);
        for _ in 0..200 {
            let obs = mc.reset(&mut rng);
            assert!(obs[0] >= -0.6 && obs[0] <= -0.4);
            assert_eq!(obs[1], 0.0);
        }

        let mut ac = Acrobot::new(500);
        for _ in 0..200 {
            ac.reset(&mut rng);
            for c in ac.internal_state() {
                assert!(c.abs() <= 0.1);
            }
        }

        let mut cp = CartPole::new(500);
        for _ in 0..200 {
            let obs = cp.reset(&mut rng);
            for c in obs {
                assert!(c.abs() <= 0.05);
            }
        }
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut a = Acrobot::new(500);
        let mut b = Acrobot::new(500);
        let o1 = a.reset(&mut ChaCha8Rng::seed_from_u64(9));
        let o2 = b.reset(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(o1, o2);
    }

    #[test]
    fn mountain_car_velocity_update_closed_form() {
        let mut env = MountainCar::new(200);
        env.set_state(&[-0.5, 0.0]);
        let out = env.step(2).unwrap();
        let expect_v = 0.001 + (3.0 * -0.5f64).cos() * (-0.0025);
        assert!((out.obs[1] - expect_v).abs() <= 1e-12);
        assert!((out.obs[0] - (-0.5 + expect_v)).abs() <= 1e-12);
    }

    #[test]
    fn step_after_done_errors() {
        let mut env = MountainCar::new(2);
        env.set_state(&[-0.5, 0.0]);
        env.step(1).unwrap();
        let out = env.step(1).unwrap();
        assert!(out.done, "step cap must finish the episode");
        assert!(matches!(env.step(1), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn invalid_action_errors() {
        let mut env = CartPole::new(500);
        env.set_state(&[0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(env.step(2), Err(EnvError::InvalidAction { .. })));
    }

    #[test]
    fn drift_multiplies_and_reset_restores() {
        let mut env = Acrobot::new(500);
        let ev = DriftEvent::new(150, DriftKind::Gravity, &[("g", 1.5)]);
        env.apply_drift(&ev).unwrap();
        assert_eq!(env.params().g, 9.8 * 1.5);

        let combined = DriftEvent::new(
            350,
            DriftKind::Combined,
            &[("m1", 1.3), ("m2", 1.3), ("g", 1.3)],
        );
        env.apply_drift(&combined).unwrap();
        assert_eq!(env.params().m1, 1.3);
        assert_eq!(env.params().m2, 1.3);
        assert_eq!(env.params().g, 9.8 * 1.5 * 1.3);

        let reset = DriftEvent::reset(450);
        env.apply_drift(&reset).unwrap();
        assert_eq!(env.params(), &AcrobotParams::default());
        // Idempotent: applying reset twice equals applying it once.
        env.apply_drift(&reset).unwrap();
        assert_eq!(env.params(), &AcrobotParams::default());
    }

    #[test]
    fn drift_unknown_param_errors() {
        let mut env = MountainCar::new(200);
        let ev = DriftEvent::new(1, DriftKind::Mass, &[("mass", 2.0)]);
        assert!(matches!(env.apply_drift(&ev), Err(EnvError::UnknownParam { .. })));
    }

    #[test]
    fn drift_applies_from_next_step_only() {
        let mut a = MountainCar::new(200);
        let mut b = MountainCar::new(200);
        a.set_state(&[-0.5, 0.01]);
        b.set_state(&[-0.5, 0.01]);
        let ev = DriftEvent::new(1, DriftKind::Gravity, &[("gravity", 2.0)]);
        b.apply_drift(&ev).unwrap();
        // Mid-episode state untouched by drift.
        assert_eq!(a.observation(), b.observation());
        // Dynamics differ from the next step.
        let oa = a.step(1).unwrap();
        let ob = b.step(1).unwrap();
        assert_ne!(oa.obs, ob.obs);
    }

    #[test]
    fn trajectories_fully_determined_by_seed_and_actions() {
        let run = || {
            let mut env = Acrobot::new(500);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut obs = env.reset(&mut rng);
            let mut trace = vec![obs.clone()];
            for t in 0..50 {
                let out = env.step(t % 3).unwrap();
                obs = out.obs;
                trace.push(obs.clone());
                if out.done {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_validation() {
        let bad = DriftSchedule::new(vec![
            DriftEvent::reset(200),
            DriftEvent::reset(100),
        ]);
        assert!(bad.is_err());

        let sched = acrobot_schedule(&DriftFactors::default());
        assert_eq!(
            sched.events().iter().map(|e| e.episode).collect::<Vec<_>>(),
            vec![150, 250, 350, 450]
        );
        assert_eq!(sched.events()[3].kind, DriftKind::Reset);
        assert!(sched.event_at(250).is_some());
        assert!(sched.event_at(251).is_none());

        let mc = mountaincar_schedule(&DriftFactors::default());
        let kinds: Vec<DriftKind> = mc.events().iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![DriftKind::Gravity, DriftKind::Force, DriftKind::Combined, DriftKind::Reset]
        );
    }
}
