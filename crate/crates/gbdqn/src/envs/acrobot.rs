//! Two-link underactuated swing-up task. Torque {-1, 0, +1} on the second
//! joint, RK4 integration at dt = 0.2, reward -1 per step until the tip
//! clears the bar.

use super::{rk4_step, wrap_angle, DriftEvent, DriftKind, EnvError, Environment, StepOutcome};
use rand::{Rng, RngCore};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct AcrobotParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self { m1: 1.0, m2: 1.0, l1: 1.0, l2: 1.0, g: 9.8 }
    }
}

const DT: f64 = 0.2;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
const MOI: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct Acrobot {
    params: AcrobotParams,
    original: AcrobotParams,
    // theta1, theta2, dtheta1, dtheta2
    state: [f64; 4],
    steps: u32,
    max_steps: u32,
    done: bool,
}

impl Acrobot {
    pub fn new(max_steps: u32) -> Self {
        Self {
            params: AcrobotParams::default(),
            original: AcrobotParams::default(),
            state: [0.0; 4],
            steps: 0,
            max_steps,
            done: false,
        }
    }

    pub fn params(&self) -> &AcrobotParams {
        &self.params
    }

    pub fn internal_state(&self) -> [f64; 4] {
        self.state
    }

    fn derivatives(&self, s: &[f64; 4], torque: f64) -> [f64; 4] {
        let p = &self.params;
        let (lc1, lc2) = (p.l1 / 2.0, p.l2 / 2.0);
        let (i1, i2) = (MOI, MOI);
        let (th1, th2, w1, w2) = (s[0], s[1], s[2], s[3]);

        let d1 = p.m1 * lc1 * lc1
            + p.m2 * (p.l1 * p.l1 + lc2 * lc2 + 2.0 * p.l1 * lc2 * th2.cos())
            + i1
            + i2;
        let d2 = p.m2 * (lc2 * lc2 + p.l1 * lc2 * th2.cos()) + i2;
        let phi2 = p.m2 * lc2 * p.g * (th1 + th2 - PI / 2.0).cos();
        let phi1 = -p.m2 * p.l1 * lc2 * w2 * w2 * th2.sin()
            - 2.0 * p.m2 * p.l1 * lc2 * w2 * w1 * th2.sin()
            + (p.m1 * lc1 + p.m2 * p.l1) * p.g * (th1 - PI / 2.0).cos()
            + phi2;
        let dd2 = (torque + d2 / d1 * phi1 - p.m2 * p.l1 * lc2 * w1 * w1 * th2.sin() - phi2)
            / (p.m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let dd1 = -(d2 * dd2 + phi1) / d1;
        [w1, w2, dd1, dd2]
    }

    fn is_terminal(&self) -> bool {
        -self.state[0].cos() - (self.state[1] + self.state[0]).cos() > 1.0
    }
}

impl Environment for Acrobot {
    fn name(&self) -> &'static str {
        "acrobot"
    }

    fn obs_dim(&self) -> usize {
        6
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        for c in self.state.iter_mut() {
            *c = rng.random_range(-0.1..0.1);
        }
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 3 {
            return Err(EnvError::InvalidAction { env: self.name(), action, n_actions: 3 });
        }
        let torque = TORQUES[action];
        let mut ns = rk4_step(|s| self.derivatives(s, torque), &self.state, DT);
        ns[0] = wrap_angle(ns[0], -PI, PI);
        ns[1] = wrap_angle(ns[1], -PI, PI);
        ns[2] = ns[2].clamp(-MAX_VEL_1, MAX_VEL_1);
        ns[3] = ns[3].clamp(-MAX_VEL_2, MAX_VEL_2);
        self.state = ns;
        self.steps += 1;

        let swung_up = self.is_terminal();
        let reward = if swung_up { 0.0 } else { -1.0 };
        self.done = swung_up || self.steps >= self.max_steps;
        Ok(StepOutcome { obs: self.observation(), reward, done: self.done })
    }

    fn apply_drift(&mut self, event: &DriftEvent) -> Result<(), EnvError> {
        if event.kind == DriftKind::Reset {
            self.params = self.original.clone();
            return Ok(());
        }
        for (name, factor) in &event.factors {
            match name.as_str() {
                "m1" => self.params.m1 *= factor,
                "m2" => self.params.m2 *= factor,
                "l1" => self.params.l1 *= factor,
                "l2" => self.params.l2 *= factor,
                "g" => self.params.g *= factor,
                other => {
                    return Err(EnvError::UnknownParam { env: self.name(), name: other.into() })
                }
            }
        }
        Ok(())
    }

    fn set_state(&mut self, coords: &[f64]) {
        assert_eq!(coords.len(), 4, "acrobot internal state has 4 coordinates");
        self.state.copy_from_slice(coords);
        self.steps = 0;
        self.done = false;
    }

    fn observation(&self) -> Vec<f64> {
        let [th1, th2, w1, w2] = self.state;
        vec![th1.cos(), th1.sin(), th2.cos(), th2.sin(), w1, w2]
    }
}
