use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::CampaignError;
use crate::frontier::{TargetMode, DEFAULT_LIMIT};
use crate::fuzz::FuzzHook;
use crate::plateau::PlateauConfig;
use crate::symexec::SymexecConfig;

/// Keys accepted by [`CampaignConfig::apply_text`], with a one-line meaning.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("window", "plateau window W in iterations"),
    ("epsilon", "plateau threshold in edges per iteration"),
    ("max_pairs", "constraint pairs kept per symbolic phase (L)"),
    ("time", "wall-clock budget in seconds"),
    ("iterations", "iteration cap, 0 for none"),
    ("batch_size", "executions per iteration"),
    ("rng_seed", "64-bit campaign seed"),
    ("step_budget", "VM steps per execution"),
    ("max_depth", "symbolic exploration depth in blocks"),
    ("fork_cap", "symbolic path forks per pair"),
    ("solver_budget", "solver candidate budget"),
    (
        "lazy",
        "grow symbolic bytes during exploration (true/false)",
    ),
    ("hook", "focused fuzzing hook start:off:len:break, or none"),
    ("symbolic", "enable symbolic phases (true/false)"),
    ("target_mode", "edge or deep"),
    (
        "plateau.reset_after_symbolic",
        "restart the plateau window after a symbolic phase",
    ),
    (
        "stop_at_full_coverage",
        "end the campaign once every reachable edge is covered",
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub plateau: PlateauConfig,
    pub max_pairs: usize,
    pub time_budget_secs: f64,
    pub max_iterations: Option<u64>,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub step_budget: u64,
    pub symexec: SymexecConfig,
    pub hook: Option<FuzzHook>,
    pub symbolic: bool,
    pub target_mode: TargetMode,
    pub plateau_reset_after_symbolic: bool,
    pub stop_at_full_coverage: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let step_budget = 100_000;
        CampaignConfig {
            plateau: PlateauConfig::default(),
            max_pairs: DEFAULT_LIMIT,
            time_budget_secs: 60.0,
            max_iterations: Some(400),
            batch_size: 256,
            rng_seed: 0,
            step_budget,
            symexec: SymexecConfig {
                step_budget,
                ..SymexecConfig::default()
            },
            hook: None,
            symbolic: true,
            target_mode: TargetMode::Edge,
            plateau_reset_after_symbolic: true,
            stop_at_full_coverage: true,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::Config(m.to_string()));
        PlateauConfig::new(self.plateau.window, self.plateau.epsilon)
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        if self.max_pairs == 0 {
            return bad("max_pairs must be positive");
        }
        if self.time_budget_secs.is_nan() || self.time_budget_secs <= 0.0 {
            return bad("time must be positive");
        }
        if self.max_iterations == Some(0) {
            return bad("iterations must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.step_budget == 0 || self.symexec.step_budget == 0 {
            return bad("step_budget must be positive");
        }
        if self.symexec.max_depth == 0
            || self.symexec.fork_cap == 0
            || self.symexec.solver_budget == 0
        {
            return bad("symbolic caps must be positive");
        }
        Ok(())
    }

    /// Sets one key; unknown keys and malformed values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CampaignError> {
        let invalid = || CampaignError::Config(format!("bad value `{value}` for `{key}`"));
        fn num<T: std::str::FromStr>(v: &str) -> Option<T> {
            v.parse().ok()
        }
        match key {
            "window" => self.plateau.window = num(value).ok_or_else(invalid)?,
            "epsilon" => self.plateau.epsilon = num(value).ok_or_else(invalid)?,
            "max_pairs" => self.max_pairs = num(value).ok_or_else(invalid)?,
            "time" => self.time_budget_secs = num(value).ok_or_else(invalid)?,
            "iterations" => {
                let n: u64 = num(value).ok_or_else(invalid)?;
                self.max_iterations = (n > 0).then_some(n);
            }
            "batch_size" => self.batch_size = num(value).ok_or_else(invalid)?,
            "rng_seed" => self.rng_seed = num(value).ok_or_else(invalid)?,
            "step_budget" => {
                self.step_budget = num(value).ok_or_else(invalid)?;
                self.symexec.step_budget = self.step_budget;
            }
            "max_depth" => self.symexec.max_depth = num(value).ok_or_else(invalid)?,
            "fork_cap" => self.symexec.fork_cap = num(value).ok_or_else(invalid)?,
            "solver_budget" => self.symexec.solver_budget = num(value).ok_or_else(invalid)?,
            "lazy" => self.symexec.lazy = parse_bool(value).ok_or_else(invalid)?,
            "hook" => {
                self.hook = match value {
                    "none" | "" => None,
                    v => Some(FuzzHook::parse(v).ok_or_else(invalid)?),
                }
            }
            "symbolic" => self.symbolic = parse_bool(value).ok_or_else(invalid)?,
            "target_mode" => {
                self.target_mode = match value {
                    "edge" => TargetMode::Edge,
                    "deep" => TargetMode::Deep,
                    _ => return Err(invalid()),
                }
            }
            "plateau.reset_after_symbolic" => {
                self.plateau_reset_after_symbolic = parse_bool(value).ok_or_else(invalid)?
            }
            "stop_at_full_coverage" => {
                self.stop_at_full_coverage = parse_bool(value).ok_or_else(invalid)?
            }
            _ => return Err(CampaignError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CampaignError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CampaignError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Resolved configuration in the same format [`apply_text`](Self::apply_text) reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let hook = self.hook.map_or("none".to_string(), |h| h.to_string());
        let mode = match self.target_mode {
            TargetMode::Edge => "edge",
            TargetMode::Deep => "deep",
        };
        let rows: [(&str, String); 17] = [
            ("window", self.plateau.window.to_string()),
            ("epsilon", self.plateau.epsilon.to_string()),
            ("max_pairs", self.max_pairs.to_string()),
            ("time", self.time_budget_secs.to_string()),
            ("iterations", self.max_iterations.unwrap_or(0).to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("step_budget", self.step_budget.to_string()),
            ("max_depth", self.symexec.max_depth.to_string()),
            ("fork_cap", self.symexec.fork_cap.to_string()),
            ("solver_budget", self.symexec.solver_budget.to_string()),
            ("lazy", self.symexec.lazy.to_string()),
            ("hook", hook),
            ("symbolic", self.symbolic.to_string()),
            ("target_mode", mode.to_string()),
            (
                "plateau.reset_after_symbolic",
                self.plateau_reset_after_symbolic.to_string(),
            ),
            (
                "stop_at_full_coverage",
                self.stop_at_full_coverage.to_string(),
            ),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
