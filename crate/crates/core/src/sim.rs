//! Physical substrate and the per-measurement tick loop.
//!
//! A liquid stream performs a Gaussian random walk in one dimension; the
//! beam only moves when the operator presses a button. Each tick of an
//! active measurement emits exactly one datum whose noise grows with the
//! beam/stream misalignment and shrinks with the sample's PQ.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    analyst_update, manager_meso_decide, AbortReason, MesoDecision, OperatorCommand,
    OperatorState, SeHistory,
};
use crate::config::RunConfig;
use crate::planner::Sample;
use crate::stats::StatAccumulator;

/// Seeded generator used for every run. ChaCha8 keeps streams identical
/// across platforms and releases.
pub type RandomSource = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RandomSource {
    RandomSource::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub tick: u64,
    pub budget_ticks: Option<u64>,
}

impl SimClock {
    pub fn new(budget_ticks: Option<u64>) -> Self {
        Self {
            tick: 0,
            budget_ticks,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.budget_ticks.is_some_and(|b| self.tick >= b)
    }

    /// Ticks left before the budget, `None` when unlimited.
    pub fn remaining(&self) -> Option<u64> {
        self.budget_ticks.map(|b| b.saturating_sub(self.tick))
    }

    pub fn advance(&mut self) {
        self.tick += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldState {
    pub stream_pos: f64,
    pub beam_pos: f64,
}

impl WorldState {
    pub fn misalignment(&self) -> f64 {
        (self.beam_pos - self.stream_pos).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Standard deviation of one stream step.
    pub walk_sigma: f64,
    /// Beam displacement per button-press tick.
    pub beam_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub value: f64,
    pub at_tick: u64,
    pub misalignment_at_emit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma0: f64,
    /// Relative noise inflation per unit of misalignment.
    pub misalign_gain: f64,
    pub mu: f64,
}

impl NoiseModel {
    /// `(sigma0 / pq) * (1 + gain * misalignment)`
    pub fn sigma_eff(&self, pq: f64, misalignment: f64) -> f64 {
        (self.sigma0 / pq) * (1.0 + self.misalign_gain * misalignment)
    }
}

/// Advance the stream by one Gaussian increment. Always consumes one
/// standard-normal variate, so the random sequence does not depend on
/// `walk_sigma`.
pub fn step_stream(world: &mut WorldState, params: &WalkParams, rng: &mut RandomSource) {
    let z: f64 = rng.sample(StandardNormal);
    world.stream_pos += params.walk_sigma * z;
}

pub fn step_beam(world: &mut WorldState, command: OperatorCommand, beam_step: f64) {
    match command {
        OperatorCommand::Left => world.beam_pos -= beam_step,
        OperatorCommand::Right => world.beam_pos += beam_step,
        OperatorCommand::Hold => {}
    }
}

pub fn generate_event(
    world: &WorldState,
    noise: &NoiseModel,
    pq: f64,
    tick: u64,
    rng: &mut RandomSource,
) -> Datum {
    debug_assert!(pq > 0.0);
    let misalignment = world.misalignment();
    let z: f64 = rng.sample(StandardNormal);
    Datum {
        value: noise.mu + noise.sigma_eff(pq, misalignment) * z,
        at_tick: tick,
        misalignment_at_emit: misalignment,
    }
}

/// Everything that persists across the measurements of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub clock: SimClock,
    pub world: WorldState,
    pub operator: OperatorState,
}

impl RunState {
    pub fn new(cfg: &RunConfig, budget_ticks: Option<u64>) -> Self {
        Self {
            clock: SimClock::new(budget_ticks),
            world: WorldState::default(),
            operator: OperatorState::new(cfg.fa, cfg.nd, cfg.layout(), cfg.switch_cost_per_unit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    ReachedTe,
    ProjectedOverrun,
    NoImprovement,
    ClockExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ReachedTe => "ReachedTE",
            Termination::ProjectedOverrun => "ProjectedOverrun",
            Termination::NoImprovement => "NoImprovement",
            Termination::ClockExhausted => "ClockExhausted",
        }
    }

    pub fn is_abort(self) -> bool {
        matches!(
            self,
            Termination::ProjectedOverrun | Termination::NoImprovement
        )
    }
}

impl From<AbortReason> for Termination {
    fn from(r: AbortReason) -> Self {
        match r {
            AbortReason::ProjectedOverrun => Termination::ProjectedOverrun,
            AbortReason::NoImprovement => Termination::NoImprovement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub sample_id: String,
    pub pq: f64,
    pub target_te: f64,
    pub start_tick: u64,
    pub ticks_used: u64,
    pub events: u64,
    /// `None` when fewer than two events were taken.
    pub final_se: Option<f64>,
    pub mean_value: f64,
    pub mean_misalignment: f64,
    /// Number of Left/Right commands issued.
    pub corrections: u64,
    pub termination: Termination,
}

impl MeasurementRecord {
    /// Record for a sample that never got beam time.
    pub fn skipped(sample: &Sample, te: f64, at_tick: u64) -> Self {
        Self {
            sample_id: sample.id.clone(),
            pq: sample.pq,
            target_te: te,
            start_tick: at_tick,
            ticks_used: 0,
            events: 0,
            final_se: None,
            mean_value: 0.0,
            mean_misalignment: 0.0,
            corrections: 0,
            termination: Termination::ClockExhausted,
        }
    }

    pub fn reached_te(&self) -> bool {
        self.termination == Termination::ReachedTe
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeasurementError {
    #[error("beam time exhausted before the first event of sample `{0}`")]
    ClockExhaustedBeforeFirstEvent(String),
}

/// What the manager asks of one measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementTarget {
    pub te: f64,
    /// Samples not yet measured, including this one.
    pub samples_left: usize,
}

/// Per-tick view handed to observers (tracing, demos).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TickSnapshot {
    pub tick: u64,
    pub stream_pos: f64,
    pub beam_pos: f64,
    pub command: OperatorCommand,
    pub value: f64,
    pub se: f64,
}

pub fn run_measurement(
    sample: &Sample,
    target: MeasurementTarget,
    cfg: &RunConfig,
    state: &mut RunState,
    rng: &mut RandomSource,
) -> Result<MeasurementRecord, MeasurementError> {
    run_measurement_observed(sample, target, cfg, state, rng, &mut |_| {})
}

/// Tick loop: stream step, operator observe/act, beam step, datum, analyst,
/// then the stopping checks. Ends on reaching TE, a manager abort, or clock
/// exhaustion.
pub fn run_measurement_observed(
    sample: &Sample,
    target: MeasurementTarget,
    cfg: &RunConfig,
    state: &mut RunState,
    rng: &mut RandomSource,
    observer: &mut dyn FnMut(&TickSnapshot),
) -> Result<MeasurementRecord, MeasurementError> {
    if state.clock.exhausted() {
        return Err(MeasurementError::ClockExhaustedBeforeFirstEvent(
            sample.id.clone(),
        ));
    }
    let walk = cfg.walk();
    let noise = cfg.noise();
    // Aborting only helps when a later sample can use the freed time.
    let meso = cfg.meso_enabled() && target.samples_left > 1;
    let samples_left = target.samples_left.max(1) as u64;

    let start_tick = state.clock.tick;
    let mut acc = StatAccumulator::new();
    let mut misalignment = StatAccumulator::new();
    let mut history = SeHistory::new(cfg.se_window);
    let mut corrections = 0;

    let termination = loop {
        if state.clock.exhausted() {
            break Termination::ClockExhausted;
        }
        let tick = state.clock.tick;
        step_stream(&mut state.world, &walk, rng);
        state.operator.observe(&state.world);
        let command = state.operator.act(&state.world, walk.beam_step);
        if command != OperatorCommand::Hold {
            corrections += 1;
        }
        step_beam(&mut state.world, command, walk.beam_step);
        let datum = generate_event(&state.world, &noise, sample.pq, tick, rng);
        acc.update(datum.value);
        misalignment.update(datum.misalignment_at_emit);
        let report = analyst_update(&mut history, &acc, tick);
        state.clock.advance();
        observer(&TickSnapshot {
            tick,
            stream_pos: state.world.stream_pos,
            beam_pos: state.world.beam_pos,
            command,
            value: datum.value,
            se: report.se,
        });

        if acc.count() >= cfg.min_events && report.se <= target.te {
            break Termination::ReachedTe;
        }
        if meso {
            let share = state.clock.remaining().map(|r| r / samples_left);
            if let MesoDecision::Abort(reason) = manager_meso_decide(&report, target.te, share) {
                break reason.into();
            }
        }
    };

    let events = acc.count();
    Ok(MeasurementRecord {
        sample_id: sample.id.clone(),
        pq: sample.pq,
        target_te: target.te,
        start_tick,
        ticks_used: state.clock.tick - start_tick,
        events,
        final_se: acc.stderr().is_finite().then(|| acc.stderr()),
        mean_value: acc.mean(),
        mean_misalignment: misalignment.mean(),
        corrections,
        termination,
    })
}
