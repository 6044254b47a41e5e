//! Macro scale: the sample queue, the run's beam-time budget and the
//! Adjust-Error policy that retargets TE between measurements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::sim::{
    rng_from_seed, run_measurement, MeasurementError, MeasurementRecord, MeasurementTarget,
    RunState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Performance quality: higher is easier to measure (and less important).
    pub pq: f64,
    pub nominal_te: f64,
}

impl Sample {
    pub fn new(id: impl Into<String>, pq: f64) -> Self {
        Self {
            id: id.into(),
            pq,
            nominal_te: crate::config::DEFAULT_NOMINAL_TE,
        }
    }

    pub fn with_nominal_te(mut self, te: f64) -> Self {
        self.nominal_te = te;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("experiment plan has no samples")]
    Empty,
    #[error("sample `{0}` has non-positive PQ or TE")]
    NonPositive(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("samples `{0}` and `{1}` share a PQ value; order would be ambiguous")]
    TiedPq(String, String),
}

/// Samples in strictly descending PQ order plus the beam-time budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    samples: Vec<Sample>,
    pub budget_ticks: u64,
}

impl ExperimentPlan {
    pub fn new(mut samples: Vec<Sample>, budget_ticks: u64) -> Result<Self, PlanError> {
        if samples.is_empty() {
            return Err(PlanError::Empty);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.pq > 0.0 && s.nominal_te > 0.0) {
                return Err(PlanError::NonPositive(s.id.clone()));
            }
            if samples[..i].iter().any(|o| o.id == s.id) {
                return Err(PlanError::DuplicateId(s.id.clone()));
            }
        }
        samples.sort_by(|a, b| b.pq.total_cmp(&a.pq));
        if let Some(w) = samples.windows(2).find(|w| w[0].pq == w[1].pq) {
            return Err(PlanError::TiedPq(w[0].id.clone(), w[1].id.clone()));
        }
        Ok(Self {
            samples,
            budget_ticks,
        })
    }

    /// Plan from a config's PQ grid; sample ids are `s1..sN` in run order.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PlanError> {
        let mut grid = cfg.pq_grid.clone();
        grid.sort_by(|a, b| b.total_cmp(a));
        let samples = grid
            .iter()
            .enumerate()
            .map(|(i, &pq)| Sample::new(format!("s{}", i + 1), pq).with_nominal_te(cfg.nominal_te))
            .collect();
        Self::new(samples, cfg.resolved_budget())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The sample at `cursor` in run order, `None` once exhausted.
    pub fn next_sample(&self, cursor: usize) -> Option<&Sample> {
        self.samples.get(cursor)
    }
}

/// One completed (or aborted) measurement as the manager remembers it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostObservation {
    pub pq: f64,
    /// The error level the ticks paid for: the target when it was reached,
    /// the achieved SE otherwise.
    pub te: f64,
    pub events: u64,
    pub ticks: u64,
}

impl CostObservation {
    pub fn from_record(rec: &MeasurementRecord) -> Option<Self> {
        let se = rec.final_se?;
        let te = if rec.reached_te() {
            rec.target_te
        } else {
            se.max(rec.target_te)
        };
        Some(Self {
            pq: rec.pq,
            te,
            events: rec.events,
            ticks: rec.ticks_used,
        })
    }

    fn regressor(&self) -> f64 {
        (self.pq * self.te).powi(-2)
    }
}

/// Least-squares fit (through the origin) of `ticks = C / (pq * te)^2`.
/// Falls back to `sigma0^2`, the analytic one-event-per-tick value for a
/// perfectly aligned beam, when nothing has been measured yet.
pub fn fit_cost_coefficient(history: &[CostObservation], sigma0: f64) -> f64 {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for obs in history {
        let x = obs.regressor();
        sxy += x * obs.ticks as f64;
        sxx += x * x;
    }
    if sxx > 0.0 && sxy > 0.0 {
        sxy / sxx
    } else {
        sigma0 * sigma0
    }
}

/// Predicted ticks to bring a sample of quality `pq` down to `te`.
pub fn estimate_cost(history: &[CostObservation], pq: f64, te: f64, sigma0: f64) -> f64 {
    debug_assert!(te > 0.0 && pq > 0.0);
    fit_cost_coefficient(history, sigma0) * (pq * te).powi(-2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagerState {
    pub adjust_error: bool,
    pub cutoff_time: bool,
    pub nominal_te: f64,
    pub te_current: f64,
    pub budget_ticks: u64,
    pub ticks_spent: u64,
    pub sigma0: f64,
    pub history: Vec<CostObservation>,
}

impl ManagerState {
    pub fn new(cfg: &RunConfig, budget_ticks: u64) -> Self {
        Self {
            adjust_error: cfg.adjust_error,
            cutoff_time: cfg.cutoff_time,
            nominal_te: cfg.nominal_te,
            te_current: cfg.nominal_te,
            budget_ticks,
            ticks_spent: 0,
            sigma0: cfg.sigma0,
            history: Vec::new(),
        }
    }

    pub fn remaining_budget(&self) -> u64 {
        self.budget_ticks.saturating_sub(self.ticks_spent)
    }

    pub fn record(&mut self, rec: &MeasurementRecord) {
        self.ticks_spent += rec.ticks_used;
        if let Some(obs) = CostObservation::from_record(rec) {
            self.history.push(obs);
        }
    }
}

/// Retarget TE so the projected cost of the remaining samples fits the
/// remaining budget. Under the `ticks ~ TE^-2` law scaling TE by
/// `sqrt(projection / budget)` rebalances exactly. TE never drops below
/// nominal; with Adjust-Error off it is always nominal.
pub fn adjust_te(state: &ManagerState, remaining: &[Sample]) -> f64 {
    if !state.adjust_error {
        return state.nominal_te;
    }
    let projection: f64 = remaining
        .iter()
        .map(|s| estimate_cost(&state.history, s.pq, state.te_current, state.sigma0))
        .sum();
    if projection <= 0.0 {
        return state.te_current;
    }
    // An overspent budget (only possible without Cutoff-Time) is treated as
    // one tick left: take the smallest useful measurement.
    let budget = state.remaining_budget().max(1) as f64;
    (state.te_current * (projection / budget).sqrt()).max(state.nominal_te)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub seed: u64,
    pub budget_ticks: u64,
    pub adjust_error: bool,
    pub cutoff_time: bool,
    pub records: Vec<MeasurementRecord>,
    pub total_ticks: u64,
}

impl ExperimentLog {
    pub fn samples_with_data(&self) -> usize {
        self.records.iter().filter(|r| r.events > 0).count()
    }

    pub fn total_events(&self) -> u64 {
        self.records.iter().map(|r| r.events).sum()
    }
}

/// Run every sample of the plan on one shared clock and world.
pub fn run_experiment(plan: &ExperimentPlan, cfg: &RunConfig, seed: u64) -> ExperimentLog {
    let mut rng = rng_from_seed(seed);
    let budget = cfg.cutoff_time.then_some(plan.budget_ticks);
    let mut state = RunState::new(cfg, budget);
    let mut manager = ManagerState::new(cfg, plan.budget_ticks);
    let mut records = Vec::with_capacity(plan.len());

    let mut cursor = 0;
    while let Some(sample) = plan.next_sample(cursor) {
        let te = if cursor == 0 || !manager.adjust_error {
            sample.nominal_te
        } else {
            manager.te_current = adjust_te(&manager, &plan.samples()[cursor..]);
            manager.te_current.max(sample.nominal_te)
        };
        let target = MeasurementTarget {
            te,
            samples_left: plan.len() - cursor,
        };
        let rec = match run_measurement(sample, target, cfg, &mut state, &mut rng) {
            Ok(rec) => rec,
            Err(MeasurementError::ClockExhaustedBeforeFirstEvent(_)) => {
                MeasurementRecord::skipped(sample, te, state.clock.tick)
            }
        };
        manager.record(&rec);
        records.push(rec);
        cursor += 1;
    }

    ExperimentLog {
        seed,
        budget_ticks: plan.budget_ticks,
        adjust_error: cfg.adjust_error,
        cutoff_time: cfg.cutoff_time,
        total_ticks: state.clock.tick,
        records,
    }
}
