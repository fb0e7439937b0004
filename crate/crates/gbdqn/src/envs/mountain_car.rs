//! Underpowered car in a valley. Canonical position/velocity update with
//! force and gravity terms, reward -1 per step until the goal position.

use super::{DriftEvent, DriftKind, EnvError, Environment, StepOutcome};
use rand::{Rng, RngCore};

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCarParams {
    pub force: f64,
    pub gravity: f64,
}

impl Default for MountainCarParams {
    fn default() -> Self {
        Self { force: 0.001, gravity: 0.0025 }
    }
}

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POSITION: f64 = 0.5;
const GOAL_VELOCITY: f64 = 0.0;

#[derive(Debug, Clone)]
pub struct MountainCar {
    params: MountainCarParams,
    original: MountainCarParams,
    position: f64,
    velocity: f64,
    steps: u32,
    max_steps: u32,
    done: bool,
}

impl MountainCar {
    pub fn new(max_steps: u32) -> Self {
        Self {
            params: MountainCarParams::default(),
            original: MountainCarParams::default(),
            position: -0.5,
            velocity: 0.0,
            steps: 0,
            max_steps,
            done: false,
        }
    }

    pub fn params(&self) -> &MountainCarParams {
        &self.params
    }
}

impl Environment for MountainCar {
    fn name(&self) -> &'static str {
        "mountaincar"
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.position = rng.random_range(-0.6..-0.4);
        self.velocity = 0.0;
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
        self.velocity += (action as f64 - 1.0) * self.params.force
            + (3.0 * self.position).cos() * (-self.params.gravity);
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position += self.velocity;
        self.position = self.position.clamp(MIN_POSITION, MAX_POSITION);
        if self.position == MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.steps += 1;

        let reached_goal = self.position >= GOAL_POSITION && self.velocity >= GOAL_VELOCITY;
        self.done = reached_goal || self.steps >= self.max_steps;
        Ok(StepOutcome { obs: self.observation(), reward: -1.0, done: self.done })
    }

    fn apply_drift(&mut self, event: &DriftEvent) -> Result<(), EnvError> {
        if event.kind == DriftKind::Reset {
            self.params = self.original.clone();
            return Ok(());
        }
        for (name, factor) in &event.factors {
            match name.as_str() {
                "force" => self.params.force *= factor,
                "gravity" => self.params.gravity *= factor,
                other => {
                    return Err(EnvError::UnknownParam { env: self.name(), name: other.into() })
                }
            }
        }
        Ok(())
    }

    fn set_state(&mut self, coords: &[f64]) {
        assert_eq!(coords.len(), 2, "mountain car internal state has 2 coordinates");
        self.position = coords[0];
        self.velocity = coords[1];
        self.steps = 0;
        self.done = false;
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }
}
