//! Experiment configuration: a flat, human-editable key-value text format.
//!
//! Grammar (documented in the README):
//!   - `key = value` lines; `#` starts a comment; blank lines ignored.
//!   - `[drift]` holds the event list and the multiplicative factors.
//!   - `[method.<name>]` overrides one agent's hyperparameters.
//!   - Everything before the first section header configures the experiment.
//!   - No nested includes; unknown keys are errors with line numbers.

use super::BenchError;
use crate::agents::{
    AgentConfig, EpsilonSchedule, InsertionPriority, Method, PolicyKind,
};
use crate::boost::CommitMode;
use crate::envs::{DriftEvent, DriftFactors, DriftKind, DriftSchedule, EnvKind};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvKind,
    pub episodes: u32,
    pub max_steps: u32,
    pub seeds: Vec<u64>,
    pub final_window: u32,
    pub smoothing_window: u32,
    pub methods: Vec<Method>,
    pub drift_events: Vec<(u32, DriftKind)>,
    pub factors: DriftFactors,
    pub agents: BTreeMap<Method, AgentConfig>,
}

impl ExperimentConfig {
    /// Baseline settings for an environment; presets and parsed files start
    /// from here.
    fn base(name: &str, env: EnvKind) -> Self {
        Self {
            name: name.to_string(),
            env,
            episodes: 600,
            max_steps: 500,
            seeds: vec![1, 2, 3, 4, 5],
            final_window: 100,
            smoothing_window: 20,
            methods: Method::ALL.to_vec(),
            drift_events: default_events(env),
            factors: DriftFactors::default(),
            agents: Method::ALL.iter().map(|&m| (m, AgentConfig::preset(m))).collect(),
        }
    }

    /// Named presets shipped with the artifact.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "acrobot_paper" => Some(Self::base("acrobot_paper", EnvKind::Acrobot)),
            "mountaincar_paper" => {
                let mut c = Self::base("mountaincar_paper", EnvKind::MountainCar);
                c.max_steps = 200;
                Some(c)
            }
            "smoke" => {
                let mut c = Self::base("smoke", EnvKind::CartPole);
                c.episodes = 80;
                c.max_steps = 200;
                c.seeds = vec![1, 2];
                c.final_window = 20;
                c.smoothing_window = 5;
                c.drift_events = vec![(40, DriftKind::Gravity)];
                Some(c)
            }
            _ => None,
        }
    }

    /// A preset name, or a path to a config file.
    pub fn resolve(name_or_path: &str) -> Result<Self, BenchError> {
        if let Some(preset) = Self::preset(name_or_path) {
            return Ok(preset);
        }
        Self::from_path(Path::new(name_or_path))
    }

    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::ConfigGeneral(
            format!("cannot read config `{}`: {e}", path.display()),
        ))?;
        let label = path.display().to_string();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "experiment".to_string());
        Self::parse(&text, &label, &name)
    }

    pub fn parse(text: &str, file_label: &str, name: &str) -> Result<Self, BenchError> {
        let mut env: Option<EnvKind> = None;
        // First pass: find the env key so the base config can be built.
        for line in text.lines() {
            let line = strip_comment(line);
            if let Some((key, value)) = split_kv(line) {
                if key == "env" {
                    env = Some(value.parse().map_err(|e: String| BenchError::ConfigGeneral(e))?);
                }
            }
            if line.trim().starts_with('[') {
                break; // env must live in the experiment section
            }
        }
        let env = env.ok_or_else(|| {
            BenchError::ConfigGeneral(format!("{file_label}: missing required key `env`"))
        })?;
        let mut cfg = Self::base(name, env);
        cfg.drift_events = default_events(env);

        #[derive(PartialEq)]
        enum Section {
            Experiment,
            Drift,
            Method(Method),
        }
        let mut section = Section::Experiment;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let err = |msg: String| BenchError::Config {
                file: file_label.to_string(),
                line: lineno,
                msg,
            };
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(header) = rest.strip_suffix(']') else {
                    return Err(err("unterminated section header".into()));
                };
                section = if header == "drift" {
                    Section::Drift
                } else if let Some(m) = header.strip_prefix("method.") {
                    Section::Method(m.parse().map_err(|e: String| err(e))?)
                } else {
                    return Err(err(format!("unknown section `[{header}]`")));
                };
                continue;
            }
            let Some((key, value)) = split_kv(line) else {
                return Err(err(format!("expected `key = value`, got `{line}`")));
            };
            match &section {
                Section::Experiment => {
                    apply_experiment_key(&mut cfg, key, value).map_err(err)?
                }
                Section::Drift => apply_drift_key(&mut cfg, key, value).map_err(err)?,
                Section::Method(m) => {
                    let agent = cfg.agents.get_mut(m).expect("all methods present");
                    apply_agent_key(agent, key, value).map_err(err)?;
                    agent.validate().map_err(|e| err(e.to_string()))?;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let general = |msg: String| Err(BenchError::ConfigGeneral(msg));
        if self.episodes == 0 {
            return general("episodes must be >= 1".into());
        }
        if self.max_steps == 0 {
            return general("max_steps must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return general("seeds must be non-empty".into());
        }
        if self.final_window == 0 || self.final_window > self.episodes {
            return general("final_window must be in 1..=episodes".into());
        }
        if self.smoothing_window == 0 {
            return general("smoothing_window must be >= 1".into());
        }
        if self.methods.is_empty() {
            return general("methods must be non-empty".into());
        }
        for (m, a) in &self.agents {
            if a.method != *m {
                return general(format!("agent config for {m} carries wrong method"));
            }
            a.validate()
                .map_err(|e| BenchError::ConfigGeneral(format!("[method.{m}] {e}")))?;
        }
        self.schedule()?;
        Ok(())
    }

    /// Concrete drift schedule for this experiment's environment.
    pub fn schedule(&self) -> Result<DriftSchedule, BenchError> {
        let mut events = Vec::with_capacity(self.drift_events.len());
        for &(episode, kind) in &self.drift_events {
            let factors = factors_for(self.env, kind, &self.factors)
                .map_err(BenchError::ConfigGeneral)?;
            events.push(DriftEvent { episode, kind, factors });
        }
        DriftSchedule::new(events).map_err(BenchError::ConfigGeneral)
    }

    pub fn agent_config(&self, method: Method) -> AgentConfig {
        self.agents.get(&method).cloned().unwrap_or_else(|| AgentConfig::preset(method))
    }

    /// Full echo of the configuration in the same text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# experiment: {}", self.name);
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "final_window = {}", self.final_window);
        let _ = writeln!(s, "smoothing_window = {}", self.smoothing_window);
        let methods: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "methods = {}", methods.join(","));

        let _ = writeln!(s, "\n[drift]");
        let events: Vec<String> =
            self.drift_events.iter().map(|(e, k)| format!("{e}:{k}")).collect();
        let _ = writeln!(s, "events = {}", events.join(","));
        let _ = writeln!(s, "gravity_factor = {}", self.factors.gravity);
        let _ = writeln!(s, "mass_factor = {}", self.factors.mass);
        let _ = writeln!(s, "force_factor = {}", self.factors.force);
        let _ = writeln!(s, "combined_factor = {}", self.factors.combined);

        for m in &self.methods {
            let a = self.agent_config(*m);
            let _ = writeln!(s, "\n[method.{m}]");
            let _ = writeln!(s, "discount = {}", a.discount);
            let _ = writeln!(s, "lr = {}", a.lr);
            let _ = writeln!(s, "batch_size = {}", a.batch_size);
            let _ = writeln!(s, "buffer_capacity = {}", a.buffer_capacity);
            let _ = writeln!(s, "learn_start = {}", a.learn_start_steps);
            let _ = writeln!(s, "update_every = {}", a.update_every_steps);
            let _ = writeln!(s, "polyak_tau = {}", a.polyak_tau);
            let _ = writeln!(s, "epsilon_start = {}", a.epsilon.start);
            let _ = writeln!(s, "epsilon_end = {}", a.epsilon.end);
            let _ = writeln!(s, "epsilon_decay_steps = {}", a.epsilon.decay_steps);
            let policy = match a.policy {
                PolicyKind::EpsilonGreedy => "epsilon_greedy",
                PolicyKind::Softmax => "softmax",
            };
            let _ = writeln!(s, "policy = {policy}");
            let _ = writeln!(s, "softmax_tau = {}", a.softmax_tau);
            let _ = writeln!(s, "mix_beta = {}", a.priority.mix_beta);
            let _ = writeln!(s, "decay_alpha = {}", a.priority.decay_alpha);
            let _ = writeln!(s, "td_exponent = {}", a.priority.td_exponent);
            let _ = writeln!(s, "td_epsilon = {}", a.priority.td_epsilon);
            let _ = writeln!(s, "is_beta = {}", a.priority.is_beta);
            let _ = writeln!(s, "eta_boost = {}", a.eta_boost);
            let commit = match a.commit_mode {
                CommitMode::Shrinkage => "shrinkage",
                CommitMode::LineSearch => "line_search",
            };
            let _ = writeln!(s, "commit_mode = {commit}");
            let _ = writeln!(s, "ensemble_k = {}", a.ensemble_k);
            let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
            let _ = writeln!(s, "hidden = {}", hidden.join(","));
            let _ = writeln!(s, "clip_norm = {}", a.clip_norm);
            let insertion = match a.insertion_priority {
                InsertionPriority::Computed => "computed",
                InsertionPriority::MaxPriority => "max",
            };
            let _ = writeln!(s, "insertion_priority = {insertion}");
            let _ = writeln!(s, "bootstrap_excludes_active = {}", a.bootstrap_excludes_active);
            let _ = writeln!(s, "behavior_excludes_active = {}", a.behavior_excludes_active);
            let _ = writeln!(s, "epsilon_rearm_on_drift = {}", a.epsilon_rearm_on_drift);
        }
        s
    }
}

/// Default drift events per environment (episodes 150/250/350/450).
fn default_events(env: EnvKind) -> Vec<(u32, DriftKind)> {
    match env {
        EnvKind::Acrobot | EnvKind::CartPole => vec![
            (150, DriftKind::Gravity),
            (250, DriftKind::Mass),
            (350, DriftKind::Combined),
            (450, DriftKind::Reset),
        ],
        EnvKind::MountainCar => vec![
            (150, DriftKind::Gravity),
            (250, DriftKind::Force),
            (350, DriftKind::Combined),
            (450, DriftKind::Reset),
        ],
    }
}

/// Parameter names an event kind rescales on each environment.
pub fn factors_for(
    env: EnvKind,
    kind: DriftKind,
    f: &DriftFactors,
) -> Result<BTreeMap<String, f64>, String> {
    let named = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    };
    match (env, kind) {
        (_, DriftKind::Reset) => Ok(BTreeMap::new()),
        (EnvKind::Acrobot, DriftKind::Gravity) => Ok(named(&[("g", f.gravity)])),
        (EnvKind::Acrobot, DriftKind::Mass) => {
            Ok(named(&[("m1", f.mass), ("m2", f.mass)]))
        }
        (EnvKind::Acrobot, DriftKind::Combined) => {
            Ok(named(&[("m1", f.combined), ("m2", f.combined), ("g", f.combined)]))
        }
        (EnvKind::Acrobot, DriftKind::Force) => {
            Err("acrobot has no force parameter to drift".into())
        }
        (EnvKind::MountainCar, DriftKind::Gravity) => Ok(named(&[("gravity", f.gravity)])),
        (EnvKind::MountainCar, DriftKind::Force) => Ok(named(&[("force", f.force)])),
        (EnvKind::MountainCar, DriftKind::Combined) => {
            Ok(named(&[("force", f.combined), ("gravity", f.combined)]))
        }
        (EnvKind::MountainCar, DriftKind::Mass) => {
            Err("mountaincar has no mass parameter to drift".into())
        }
        (EnvKind::CartPole, DriftKind::Gravity) => Ok(named(&[("gravity", f.gravity)])),
        (EnvKind::CartPole, DriftKind::Mass) => {
            Ok(named(&[("masscart", f.mass), ("masspole", f.mass)]))
        }
        (EnvKind::CartPole, DriftKind::Force) => Ok(named(&[("force_mag", f.force)])),
        (EnvKind::CartPole, DriftKind::Combined) => Ok(named(&[
            ("masscart", f.combined),
            ("masspole", f.combined),
            ("gravity", f.combined),
        ])),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value for `{key}`: `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("invalid boolean for `{key}`: `{value}` (use true/false)")),
    }
}

fn apply_experiment_key(
    cfg: &mut ExperimentConfig,
    key: &str,
    value: &str,
) -> Result<(), String> {
    match key {
        "env" => cfg.env = value.parse()?,
        "episodes" => cfg.episodes = parse_num(key, value)?,
        "max_steps" => cfg.max_steps = parse_num(key, value)?,
        "seeds" => {
            cfg.seeds = value
                .split(',')
                .map(|t| parse_num::<u64>(key, t.trim()))
                .collect::<Result<_, _>>()?;
        }
        "final_window" => cfg.final_window = parse_num(key, value)?,
        "smoothing_window" => cfg.smoothing_window = parse_num(key, value)?,
        "methods" => {
            cfg.methods = value
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<Result<_, _>>()?;
        }
        other => return Err(format!("unknown experiment key `{other}`")),
    }
    Ok(())
}

fn apply_drift_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "events" => {
            let mut events = Vec::new();
            for item in value.split(',') {
                let item = item.trim();
                let Some((ep, kind)) = item.split_once(':') else {
                    return Err(format!("drift event must be `episode:kind`, got `{item}`"));
                };
                events.push((parse_num::<u32>("events", ep.trim())?, kind.trim().parse()?));
            }
            cfg.drift_events = events;
        }
        "gravity_factor" => cfg.factors.gravity = parse_num(key, value)?,
        "mass_factor" => cfg.factors.mass = parse_num(key, value)?,
        "force_factor" => cfg.factors.force = parse_num(key, value)?,
        "combined_factor" => cfg.factors.combined = parse_num(key, value)?,
        other => return Err(format!("unknown drift key `{other}`")),
    }
    Ok(())
}

fn apply_agent_key(agent: &mut AgentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "discount" => agent.discount = parse_num(key, value)?,
        "lr" => agent.lr = parse_num(key, value)?,
        "batch_size" => agent.batch_size = parse_num(key, value)?,
        "buffer_capacity" => agent.buffer_capacity = parse_num(key, value)?,
        "learn_start" => agent.learn_start_steps = parse_num(key, value)?,
        "update_every" => agent.update_every_steps = parse_num(key, value)?,
        "polyak_tau" => agent.polyak_tau = parse_num(key, value)?,
        "epsilon_start" => agent.epsilon.start = parse_num(key, value)?,
        "epsilon_end" => agent.epsilon.end = parse_num(key, value)?,
        "epsilon_decay_steps" => agent.epsilon.decay_steps = parse_num(key, value)?,
        "policy" => {
            agent.policy = match value {
                "epsilon_greedy" => PolicyKind::EpsilonGreedy,
                "softmax" => PolicyKind::Softmax,
                _ => return Err(format!("unknown policy `{value}`")),
            }
        }
        "softmax_tau" => agent.softmax_tau = parse_num(key, value)?,
        "mix_beta" => agent.priority.mix_beta = parse_num(key, value)?,
        "decay_alpha" => agent.priority.decay_alpha = parse_num(key, value)?,
        "td_exponent" => agent.priority.td_exponent = parse_num(key, value)?,
        "td_epsilon" => agent.priority.td_epsilon = parse_num(key, value)?,
        "is_beta" => agent.priority.is_beta = parse_num(key, value)?,
        "eta_boost" => agent.eta_boost = parse_num(key, value)?,
        "commit_mode" => {
            agent.commit_mode = match value {
                "shrinkage" => CommitMode::Shrinkage,
                "line_search" => CommitMode::LineSearch,
                _ => return Err(format!("unknown commit mode `{value}`")),
            }
        }
        "ensemble_k" => agent.ensemble_k = parse_num(key, value)?,
        "hidden" => {
            agent.hidden = value
                .split(',')
                .map(|t| parse_num::<usize>(key, t.trim()))
                .collect::<Result<_, _>>()?;
        }
        "clip_norm" => agent.clip_norm = parse_num(key, value)?,
        "insertion_priority" => {
            agent.insertion_priority = match value {
                "computed" => InsertionPriority::Computed,
                "max" => InsertionPriority::MaxPriority,
                _ => return Err(format!("unknown insertion priority `{value}`")),
            }
        }
        "bootstrap_excludes_active" => {
            agent.bootstrap_excludes_active = parse_bool(key, value)?
        }
        "behavior_excludes_active" => agent.behavior_excludes_active = parse_bool(key, value)?,
        "epsilon_rearm_on_drift" => agent.epsilon_rearm_on_drift = parse_bool(key, value)?,
        other => return Err(format!("unknown agent key `{other}`")),
    }
    Ok(())
}
