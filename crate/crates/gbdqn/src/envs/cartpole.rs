//! Pole balancing on a cart. Euler integration at dt = 0.02, reward +1 per
//! step until the pole or cart leaves its bounds.

use super::{DriftEvent, DriftKind, EnvError, Environment, StepOutcome};
use rand::{Rng, RngCore};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub masscart: f64,
    pub masspole: f64,
    /// Distance from the pivot to the pole's center of mass.
    pub half_length: f64,
    pub force_mag: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self { gravity: 9.8, masscart: 1.0, masspole: 0.1, half_length: 0.5, force_mag: 10.0 }
    }
}

const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * PI / 360.0;

#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    original: CartPoleParams,
    // x, x_dot, theta, theta_dot
    state: [f64; 4],
    steps: u32,
    max_steps: u32,
    done: bool,
}

impl CartPole {
    pub fn new(max_steps: u32) -> Self {
        Self {
            params: CartPoleParams::default(),
            original: CartPoleParams::default(),
            state: [0.0; 4],
            steps: 0,
            max_steps,
            done: false,
        }
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Environment for CartPole {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        for c in self.state.iter_mut() {
            *c = rng.random_range(-0.05..0.05);
        }
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 2 {
            return Err(EnvError::InvalidAction { env: self.name(), action, n_actions: 2 });
        }
        let p = &self.params;
        let total_mass = p.masscart + p.masspole;
        let polemass_length = p.masspole * p.half_length;
        let force = if action == 1 { p.force_mag } else { -p.force_mag };
        let [x, x_dot, theta, theta_dot] = self.state;
        let (cos_t, sin_t) = (theta.cos(), theta.sin());

        let temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
        let theta_acc = (p.gravity * sin_t - cos_t * temp)
            / (p.half_length * (4.0 / 3.0 - p.masspole * cos_t * cos_t / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.steps += 1;

        let failed =
            self.state[0].abs() > X_THRESHOLD || self.state[2].abs() > THETA_THRESHOLD;
        self.done = failed || self.steps >= self.max_steps;
        Ok(StepOutcome { obs: self.observation(), reward: 1.0, done: self.done })
    }

    fn apply_drift(&mut self, event: &DriftEvent) -> Result<(), EnvError> {
        if event.kind == DriftKind::Reset {
            self.params = self.original.clone();
            return Ok(());
        }
        for (name, factor) in &event.factors {
            match name.as_str() {
                "gravity" => self.params.gravity *= factor,
                "masscart" => self.params.masscart *= factor,
                "masspole" => self.params.masspole *= factor,
                "half_length" => self.params.half_length *= factor,
                "force_mag" => self.params.force_mag *= factor,
                other => {
                    return Err(EnvError::UnknownParam { env: self.name(), name: other.into() })
                }
            }
        }
        Ok(())
    }

    fn set_state(&mut self, coords: &[f64]) {
        assert_eq!(coords.len(), 4, "cartpole internal state has 4 coordinates");
        self.state.copy_from_slice(coords);
        self.steps = 0;
        self.done = false;
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }
}
