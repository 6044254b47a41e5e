//! Run configuration and its flat `key = value` text format.
//!
//! ```text
//! # comment
//! operator.fa = 0.1
//! operator.nd = 5
//! plan.pq_grid = 100, 50, 25, 12.5, 6.25
//! ```
//!
//! Keys are dotted (`section.name`); the bare `name` is accepted as an alias
//! as long as it is unambiguous, which every current key is.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::ButtonLayout;
use crate::sim::{NoiseModel, WalkParams};

/// Errors from [`RunConfig::parse`] and [`RunConfig::set`]. Line 0 denotes a
/// value that did not come from a file (command-line override).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: `{key}` expects {expected}, got `{found}`")]
    TypeMismatch {
        key: String,
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: `{key}` {reason}")]
    ConstraintViolation {
        key: String,
        line: usize,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

impl ConfigError {
    /// The offending key, when the error is attributable to one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::TypeMismatch { key, .. }
            | ConfigError::ConstraintViolation { key, .. } => Some(key),
            ConfigError::Syntax { .. } => None,
        }
    }

    pub fn line(&self) -> usize {
        match self {
            ConfigError::UnknownKey { line, .. }
            | ConfigError::TypeMismatch { line, .. }
            | ConfigError::ConstraintViolation { line, .. }
            | ConfigError::Syntax { line, .. } => *line,
        }
    }
}

pub const DEFAULT_NOMINAL_TE: f64 = 0.001;
pub const DEFAULT_PQ_GRID: [f64; 5] = [100.0, 50.0, 25.0, 12.5, 6.25];
/// Tight-budget calibration: this many times the analytic fixed-TE cost of
/// the first [`BUDGET_CALIBRATION_SAMPLES`] samples.
pub const BUDGET_CALIBRATION_FACTOR: f64 = 1.5;
pub const BUDGET_CALIBRATION_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub walk_sigma: f64,
    pub beam_step: f64,
    pub sigma0: f64,
    pub misalign_gain: f64,
    pub mu: f64,
    pub fa: f64,
    pub nd: u32,
    pub switch_cost_per_unit: f64,
    pub button_left: f64,
    pub button_right: f64,
    pub se_window: usize,
    pub min_events: u64,
    pub nominal_te: f64,
    pub adjust_error: bool,
    pub cutoff_time: bool,
    /// `None` means "calibrate from the plan", see [`RunConfig::resolved_budget`].
    pub budget_ticks: Option<u64>,
    pub pq_grid: Vec<f64>,
    pub replications: u32,
    pub base_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            walk_sigma: 0.05,
            beam_step: 0.1,
            sigma0: 1.0,
            misalign_gain: 2.0,
            mu: 0.0,
            fa: 0.1,
            nd: 1,
            switch_cost_per_unit: 2.0,
            button_left: 0.0,
            button_right: 1.0,
            se_window: 50,
            min_events: 2,
            nominal_te: DEFAULT_NOMINAL_TE,
            adjust_error: false,
            cutoff_time: false,
            budget_ticks: None,
            pq_grid: DEFAULT_PQ_GRID.to_vec(),
            replications: 30,
            base_seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    PosReal,
    NonNegReal,
    Real,
    NonNegInt,
    PosInt,
    Int,
    Bool,
    PosRealList,
    Budget,
}

impl Kind {
    fn expected(self) -> &'static str {
        match self {
            Kind::PosReal | Kind::NonNegReal | Kind::Real => "a number",
            Kind::NonNegInt | Kind::PosInt | Kind::Int => "an integer",
            Kind::Bool => "`true` or `false`",
            Kind::PosRealList => "a comma-separated list of numbers",
            Kind::Budget => "an integer or `auto`",
        }
    }
}

/// Every recognised key, in serialization order.
pub const KEYS: &[&str] = &[
    "world.walk_sigma",
    "world.beam_step",
    "noise.sigma0",
    "noise.misalign_gain",
    "noise.mu",
    "operator.fa",
    "operator.nd",
    "operator.switch_cost_per_unit",
    "operator.button_left",
    "operator.button_right",
    "analyst.se_window",
    "analyst.min_events",
    "manager.nominal_te",
    "manager.adjust_error",
    "manager.cutoff_time",
    "manager.budget_ticks",
    "plan.pq_grid",
    "scan.replications",
    "scan.base_seed",
];

fn kind_of(key: &str) -> Kind {
    match key {
        "world.walk_sigma" | "world.beam_step" | "noise.sigma0" | "operator.fa"
        | "manager.nominal_te" => Kind::PosReal,
        "noise.misalign_gain" | "operator.switch_cost_per_unit" => Kind::NonNegReal,
        "noise.mu" | "operator.button_left" | "operator.button_right" => Kind::Real,
        "operator.nd" => Kind::NonNegInt,
        "analyst.se_window" | "analyst.min_events" | "scan.replications" => Kind::PosInt,
        "scan.base_seed" => Kind::Int,
        "manager.adjust_error" | "manager.cutoff_time" => Kind::Bool,
        "plan.pq_grid" => Kind::PosRealList,
        "manager.budget_ticks" => Kind::Budget,
        _ => unreachable!("kind_of called with unvalidated key {key}"),
    }
}

/// Resolve a dotted key or its bare alias to the canonical dotted key.
pub fn canonical_key(key: &str) -> Option<&'static str> {
    let key = key.trim();
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Some(k);
    }
    let bare = key.replace('-', "_");
    let mut hits = KEYS
        .iter()
        .filter(|k| k.rsplit('.').next() == Some(bare.as_str()));
    match (hits.next(), hits.next()) {
        (Some(k), None) => Some(k),
        _ => None,
    }
}

impl RunConfig {
    /// Parse a config document; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&'static str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    reason: format!("expected `key = value`, got `{body}`"),
                });
            };
            let canon = canonical_key(key).ok_or_else(|| ConfigError::UnknownKey {
                key: key.trim().to_string(),
                line,
            })?;
            if seen.contains(&canon) {
                return Err(ConfigError::Syntax {
                    line,
                    reason: format!("duplicate key `{canon}`"),
                });
            }
            seen.push(canon);
            cfg.set_at(canon, value, line)?;
        }
        Ok(cfg)
    }

    /// Apply a single override (from the command line, say).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let canon = canonical_key(key).ok_or_else(|| ConfigError::UnknownKey {
            key: key.trim().to_string(),
            line: 0,
        })?;
        self.set_at(canon, value, 0)
    }

    fn set_at(&mut self, key: &'static str, value: &str, line: usize) -> Result<(), ConfigError> {
        let value = value.trim();
        let kind = kind_of(key);
        let mismatch = || ConfigError::TypeMismatch {
            key: key.to_string(),
            line,
            expected: kind.expected(),
            found: value.to_string(),
        };
        let violation = |reason: &str| ConfigError::ConstraintViolation {
            key: key.to_string(),
            line,
            reason: reason.to_string(),
        };
        let real = || -> Result<f64, ConfigError> {
            let x: f64 = value.parse().map_err(|_| mismatch())?;
            if !x.is_finite() {
                return Err(violation("must be finite"));
            }
            Ok(x)
        };

        match kind {
            Kind::PosReal | Kind::NonNegReal | Kind::Real => {
                let x = real()?;
                match kind {
                    Kind::PosReal if x <= 0.0 => return Err(violation("must be > 0")),
                    Kind::NonNegReal if x < 0.0 => return Err(violation("must be >= 0")),
                    _ => {}
                }
                *self.real_field(key) = x;
            }
            Kind::NonNegInt | Kind::PosInt | Kind::Int => {
                let x: i128 = value.parse().map_err(|_| mismatch())?;
                if x < 0 {
                    return Err(violation("must be >= 0"));
                }
                if matches!(kind, Kind::PosInt) && x == 0 {
                    return Err(violation("must be >= 1"));
                }
                match key {
                    "operator.nd" => self.nd = u32::try_from(x).map_err(|_| violation("is too large"))?,
                    "analyst.se_window" => {
                        if x < 2 {
                            return Err(violation("must be >= 2 to define a slope"));
                        }
                        self.se_window = usize::try_from(x).map_err(|_| violation("is too large"))?
                    }
                    "analyst.min_events" => {
                        if x < 2 {
                            return Err(violation("must be >= 2 (a standard deviation needs two points)"));
                        }
                        self.min_events = u64::try_from(x).map_err(|_| violation("is too large"))?
                    }
                    "scan.replications" => {
                        self.replications = u32::try_from(x).map_err(|_| violation("is too large"))?
                    }
                    "scan.base_seed" => {
                        self.base_seed = u64::try_from(x).map_err(|_| violation("is too large"))?
                    }
                    _ => unreachable!(),
                }
            }
            Kind::Bool => {
                let b = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(mismatch()),
                };
                match key {
                    "manager.adjust_error" => self.adjust_error = b,
                    "manager.cutoff_time" => self.cutoff_time = b,
                    _ => unreachable!(),
                }
            }
            Kind::Budget => {
                if value == "auto" {
                    self.budget_ticks = None;
                } else {
                    let x: i128 = value.parse().map_err(|_| mismatch())?;
                    if x < 0 {
                        return Err(violation("must be >= 0"));
                    }
                    self.budget_ticks =
                        Some(u64::try_from(x).map_err(|_| violation("is too large"))?);
                }
            }
            Kind::PosRealList => {
                let mut grid = Vec::new();
                for item in value.split(',') {
                    let x: f64 = item.trim().parse().map_err(|_| mismatch())?;
                    if !x.is_finite() || x <= 0.0 {
                        return Err(violation("entries must be finite and > 0"));
                    }
                    if grid.contains(&x) {
                        return Err(violation("entries must be distinct"));
                    }
                    grid.push(x);
                }
                self.pq_grid = grid;
            }
        }
        Ok(())
    }

    fn real_field(&mut self, key: &str) -> &mut f64 {
        match key {
            "world.walk_sigma" => &mut self.walk_sigma,
            "world.beam_step" => &mut self.beam_step,
            "noise.sigma0" => &mut self.sigma0,
            "noise.misalign_gain" => &mut self.misalign_gain,
            "noise.mu" => &mut self.mu,
            "operator.fa" => &mut self.fa,
            "operator.switch_cost_per_unit" => &mut self.switch_cost_per_unit,
            "operator.button_left" => &mut self.button_left,
            "operator.button_right" => &mut self.button_right,
            "manager.nominal_te" => &mut self.nominal_te,
            _ => unreachable!(),
        }
    }

    /// Render every key; `parse(cfg.to_text()) == cfg`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "world.walk_sigma" => self.walk_sigma.to_string(),
                "world.beam_step" => self.beam_step.to_string(),
                "noise.sigma0" => self.sigma0.to_string(),
                "noise.misalign_gain" => self.misalign_gain.to_string(),
                "noise.mu" => self.mu.to_string(),
                "operator.fa" => self.fa.to_string(),
                "operator.nd" => self.nd.to_string(),
                "operator.switch_cost_per_unit" => self.switch_cost_per_unit.to_string(),
                "operator.button_left" => self.button_left.to_string(),
                "operator.button_right" => self.button_right.to_string(),
                "analyst.se_window" => self.se_window.to_string(),
                "analyst.min_events" => self.min_events.to_string(),
                "manager.nominal_te" => self.nominal_te.to_string(),
                "manager.adjust_error" => self.adjust_error.to_string(),
                "manager.cutoff_time" => self.cutoff_time.to_string(),
                "manager.budget_ticks" => match self.budget_ticks {
                    Some(b) => b.to_string(),
                    None => "auto".to_string(),
                },
                "plan.pq_grid" => self
                    .pq_grid
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(", "),
                "scan.replications" => self.replications.to_string(),
                "scan.base_seed" => self.base_seed.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn walk(&self) -> WalkParams {
        WalkParams {
            walk_sigma: self.walk_sigma,
            beam_step: self.beam_step,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            sigma0: self.sigma0,
            misalign_gain: self.misalign_gain,
            mu: self.mu,
        }
    }

    pub fn layout(&self) -> ButtonLayout {
        ButtonLayout {
            left: self.button_left,
            right: self.button_right,
        }
    }

    /// Meso-scale aborts are the manager trading error for time, which only
    /// happens when the run has a hard stop and TE is negotiable.
    pub fn meso_enabled(&self) -> bool {
        self.adjust_error && self.cutoff_time
    }

    /// Explicit budget, or the tight-budget calibration derived from the PQ
    /// grid: [`BUDGET_CALIBRATION_FACTOR`] times the analytic fixed-TE cost
    /// (`(sigma0 / (pq * te))^2` ticks each) of the highest-PQ samples.
    pub fn resolved_budget(&self) -> u64 {
        if let Some(b) = self.budget_ticks {
            return b;
        }
        let mut grid = self.pq_grid.clone();
        grid.sort_by(|a, b| b.total_cmp(a));
        let cost: f64 = grid
            .iter()
            .take(BUDGET_CALIBRATION_SAMPLES)
            .map(|pq| (self.sigma0 / (pq * self.nominal_te)).powi(2))
            .sum();
        (BUDGET_CALIBRATION_FACTOR * cost).ceil() as u64
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
