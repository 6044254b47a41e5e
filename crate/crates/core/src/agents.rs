//! The three virtual roles invoked by the measurement loop every tick.
//!
//! * [`OperatorState`]: micro scale, peak chasing under an acuity threshold,
//!   a noticing delay and button-switch costs.
//! * [`SeHistory`]: the real-time data analyst, turning the running standard
//!   error into a trailing improvement rate.
//! * [`manager_meso_decide`]: the experiment manager's continue/abort call.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sim::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorCommand {
    Left,
    Right,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Button {
    Left,
    Right,
}

impl Button {
    pub fn command(self) -> OperatorCommand {
        match self {
            Button::Left => OperatorCommand::Left,
            Button::Right => OperatorCommand::Right,
        }
    }
}

/// One-dimensional coordinates of the two jog buttons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ButtonLayout {
    pub left: f64,
    pub right: f64,
}

impl Default for ButtonLayout {
    fn default() -> Self {
        Self {
            left: 0.0,
            right: 1.0,
        }
    }
}

impl ButtonLayout {
    pub fn position(&self, button: Button) -> f64 {
        match button {
            Button::Left => self.left,
            Button::Right => self.right,
        }
    }

    pub fn distance(&self, from: Button, to: Button) -> f64 {
        (self.position(from) - self.position(to)).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorPhase {
    /// Nothing perceived.
    Idle,
    /// Misalignment recognised; waiting out the noticing delay.
    Noticing { countdown: u32 },
    /// Chasing the stream.
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorState {
    /// Functional acuity: smallest misalignment the operator recognises.
    pub fa: f64,
    /// Noticing delay in ticks.
    pub nd: u32,
    pub phase: OperatorPhase,
    pub current_button: Option<Button>,
    pub layout: ButtonLayout,
    /// Ticks per unit of layout distance when changing buttons.
    pub switch_cost_per_unit: f64,
    pub busy_ticks: u32,
}

impl OperatorState {
    pub fn new(fa: f64, nd: u32, layout: ButtonLayout, switch_cost_per_unit: f64) -> Self {
        assert!(fa > 0.0, "functional acuity must be positive");
        Self {
            fa,
            nd,
            phase: OperatorPhase::Idle,
            current_button: None,
            layout,
            switch_cost_per_unit,
            busy_ticks: 0,
        }
    }

    pub fn is_ready(&self) -> bool {
        self.phase == OperatorPhase::Ready
    }

    pub fn is_idle(&self) -> bool {
        self.phase == OperatorPhase::Idle
    }

    /// Perception step. Recognition starts the noticing countdown; a
    /// countdown that reaches zero makes the operator ready to act. Sub-acuity
    /// misalignment cancels a pending countdown.
    pub fn observe(&mut self, world: &WorldState) {
        let seen = world.misalignment() >= self.fa;
        self.phase = match self.phase {
            OperatorPhase::Idle if seen => match self.nd {
                0 => OperatorPhase::Ready,
                nd => OperatorPhase::Noticing { countdown: nd },
            },
            OperatorPhase::Idle => OperatorPhase::Idle,
            OperatorPhase::Noticing { .. } if !seen => OperatorPhase::Idle,
            OperatorPhase::Noticing { countdown } => match countdown.saturating_sub(1) {
                0 => OperatorPhase::Ready,
                c => OperatorPhase::Noticing { countdown: c },
            },
            OperatorPhase::Ready => OperatorPhase::Ready,
        };
    }

    /// Action step; only meaningful when ready, otherwise `Hold`.
    ///
    /// `beam_step` is needed to refuse moves that could not reduce the
    /// misalignment (overshoot by more than the current offset).
    pub fn act(&mut self, world: &WorldState, beam_step: f64) -> OperatorCommand {
        if !self.is_ready() {
            return OperatorCommand::Hold;
        }
        let misalignment = world.misalignment();
        if misalignment < self.fa || misalignment <= beam_step / 2.0 {
            self.phase = OperatorPhase::Idle;
            self.busy_ticks = 0;
            return OperatorCommand::Hold;
        }
        let desired = if world.stream_pos > world.beam_pos {
            Button::Right
        } else {
            Button::Left
        };
        match self.current_button {
            Some(current) if current != desired => {
                let cost =
                    (self.switch_cost_per_unit * self.layout.distance(current, desired)).ceil();
                self.current_button = Some(desired);
                self.busy_ticks = cost as u32;
            }
            None => self.current_button = Some(desired),
            Some(_) => {}
        }
        if self.busy_ticks > 0 {
            self.busy_ticks -= 1;
            return OperatorCommand::Hold;
        }
        desired.command()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalystReport {
    pub n: u64,
    /// Standard error, `f64::INFINITY` until defined.
    pub se: f64,
    /// Least-squares slope of SE per tick over the trailing window.
    pub se_rate: Option<f64>,
    pub window: usize,
    /// Consecutive reports (ending with this one) whose rate was `>= 0`.
    pub stalled_ticks: usize,
}

/// Trailing window of `(tick, se)` observations kept by the analyst.
#[derive(Debug, Clone, PartialEq)]
pub struct SeHistory {
    window: usize,
    points: VecDeque<(u64, f64)>,
    stalled: usize,
}

impl SeHistory {
    pub fn new(window: usize) -> Self {
        assert!(window >= 2, "slope window needs at least two points");
        Self {
            window,
            points: VecDeque::with_capacity(window + 1),
            stalled: 0,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn clear(&mut self) {
        self.points.clear();
        self.stalled = 0;
    }

    /// Record one SE observation and report. Undefined (infinite) SE values
    /// are not entered into the window.
    pub fn observe(&mut self, n: u64, se: f64, tick: u64) -> AnalystReport {
        if se.is_finite() {
            self.points.push_back((tick, se));
            if self.points.len() > self.window {
                self.points.pop_front();
            }
        }
        let se_rate = self.slope();
        match se_rate {
            Some(rate) if rate >= 0.0 => self.stalled += 1,
            _ => self.stalled = 0,
        }
        AnalystReport {
            n,
            se,
            se_rate,
            window: self.window,
            stalled_ticks: self.stalled,
        }
    }

    /// Ordinary least-squares slope over the current window.
    pub fn slope(&self) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let len = self.points.len() as f64;
        // Centre ticks on the first point to keep the sums small.
        let t0 = self.points[0].0 as f64;
        let (mut st, mut sy) = (0.0, 0.0);
        for &(t, y) in &self.points {
            st += t as f64 - t0;
            sy += y;
        }
        let (mt, my) = (st / len, sy / len);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for &(t, y) in &self.points {
            let dt = t as f64 - t0 - mt;
            sxy += dt * (y - my);
            sxx += dt * dt;
        }
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

/// Analyst step: fold the accumulator's current SE into the history.
pub fn analyst_update(
    history: &mut SeHistory,
    acc: &crate::stats::StatAccumulator,
    tick: u64,
) -> AnalystReport {
    history.observe(acc.count(), acc.stderr(), tick)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbortReason {
    ProjectedOverrun,
    NoImprovement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MesoDecision {
    Continue,
    Abort(AbortReason),
}

/// Linear extrapolation of the SE trend down to `te`, in ticks.
pub fn projected_ticks_to_te(se: f64, se_rate: f64, te: f64) -> Option<f64> {
    (se_rate < 0.0 && se.is_finite()).then(|| (se - te).max(0.0) / -se_rate)
}

/// Continue or abort the current measurement, judged only by the current
/// rate of SE improvement and the time left for this sample. Reaching TE is
/// handled by the measurement loop, never here.
///
/// `ticks_remaining` is `None` when there is no time limit.
pub fn manager_meso_decide(
    report: &AnalystReport,
    te: f64,
    ticks_remaining: Option<u64>,
) -> MesoDecision {
    debug_assert!(te > 0.0);
    if !report.se.is_finite() || report.se <= te {
        return MesoDecision::Continue;
    }
    if let (Some(rate), Some(remaining)) = (report.se_rate, ticks_remaining) {
        if let Some(projected) = projected_ticks_to_te(report.se, rate, te) {
            if projected > remaining as f64 {
                return MesoDecision::Abort(AbortReason::ProjectedOverrun);
            }
        }
    }
    if report.stalled_ticks >= report.window {
        return MesoDecision::Abort(AbortReason::NoImprovement);
    }
    MesoDecision::Continue
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(beam: f64, stream: f64) -> WorldState {
        WorldState {
            stream_pos: stream,
            beam_pos: beam,
        }
    }

    fn operator(fa: f64, nd: u32) -> OperatorState {
        OperatorState::new(fa, nd, ButtonLayout::default(), 2.0)
    }

    #[test]
    fn below_acuity_stays_idle() {
        let mut op = operator(0.1, 0);
        op.observe(&world(0.0, 0.05));
        assert!(op.is_idle());
    }

    #[test]
    fn noticing_delay_counts_down() {
        let mut op = operator(0.1, 5);
        let w = world(0.0, 0.5);
        op.observe(&w);
        assert_eq!(op.phase, OperatorPhase::Noticing { countdown: 5 });
        for _ in 0..4 {
            op.observe(&w);
            assert!(!op.is_ready());
        }
        op.observe(&w);
        assert!(op.is_ready());
    }

    #[test]
    fn zero_delay_is_immediate() {
        let mut op = operator(0.1, 0);
        op.observe(&world(0.0, 0.2));
        assert!(op.is_ready());
    }

    #[test]
    fn countdown_cancelled_below_acuity() {
        let mut op = operator(0.1, 5);
        op.observe(&world(0.0, 0.5));
        op.observe(&world(0.0, 0.05));
        assert!(op.is_idle());
    }

    #[test]
    fn act_without_switch() {
        let mut op = operator(0.1, 0);
        op.current_button = Some(Button::Right);
        let w = world(0.0, 0.5);
        op.observe(&w);
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Right);
    }

    #[test]
    fn switch_cost_holds_then_moves() {
        // ceil(2 ticks/unit * 1.0 unit) = 2 ticks of Hold
        let mut op = operator(0.1, 0);
        op.current_button = Some(Button::Right);
        let w = world(0.0, -0.5);
        op.observe(&w);
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Hold);
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Hold);
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Left);
        assert_eq!(op.busy_ticks, 0);
    }

    #[test]
    fn fractional_switch_cost_rounds_up() {
        let layout = ButtonLayout {
            left: 0.0,
            right: 0.3,
        };
        let mut op = OperatorState::new(0.1, 0, layout, 2.0);
        op.current_button = Some(Button::Left);
        let w = world(0.0, 0.5);
        op.observe(&w);
        // ceil(0.6) = 1
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Hold);
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Right);
    }

    #[test]
    fn acuity_floor_stops_chasing() {
        let mut op = operator(0.1, 0);
        op.observe(&world(0.0, 0.3));
        assert!(op.is_ready());
        assert_eq!(op.act(&world(0.0, 0.04), 0.1), OperatorCommand::Hold);
        assert!(op.is_idle());
    }

    #[test]
    fn refuses_overshooting_move() {
        // fa below half a beam step: moving would overshoot the stream.
        let mut op = operator(0.01, 0);
        let w = world(0.0, 0.04);
        op.observe(&w);
        assert_eq!(op.act(&w, 0.1), OperatorCommand::Hold);
    }

    #[test]
    fn slope_flat_and_decreasing() {
        let mut h = SeHistory::new(50);
        for t in 0..60 {
            h.observe(10, 0.5, t);
        }
        assert_eq!(h.slope(), Some(0.0));

        let mut h = SeHistory::new(50);
        let mut last = None;
        for t in 100..=200u64 {
            last = Some(h.observe(t, 1.0 / (t as f64).sqrt(), t));
        }
        assert!(last.unwrap().se_rate.unwrap() < 0.0);
    }

    #[test]
    fn two_point_slope() {
        let mut h = SeHistory::new(2);
        h.observe(10, 0.01, 0);
        let r = h.observe(20, 0.008, 100);
        assert!((r.se_rate.unwrap() - -2e-5).abs() < 1e-15);
    }

    #[test]
    fn undefined_se_not_recorded() {
        let mut h = SeHistory::new(5);
        let r = h.observe(1, f64::INFINITY, 0);
        assert_eq!(r.se_rate, None);
        assert!(h.is_empty());
    }

    #[test]
    fn meso_continue_when_time_is_ample() {
        let r = AnalystReport {
            n: 100,
            se: 0.002,
            se_rate: Some(-1e-6),
            window: 50,
            stalled_ticks: 0,
        };
        assert_eq!(
            manager_meso_decide(&r, 0.001, Some(1_000_000_000)),
            MesoDecision::Continue
        );
        assert_eq!(manager_meso_decide(&r, 0.001, None), MesoDecision::Continue);
    }

    #[test]
    fn meso_projected_overrun() {
        // (0.002 - 0.001) / 1e-6 = 1000 ticks > 500
        let r = AnalystReport {
            n: 100,
            se: 0.002,
            se_rate: Some(-1e-6),
            window: 50,
            stalled_ticks: 0,
        };
        let projected = projected_ticks_to_te(0.002, -1e-6, 0.001).unwrap();
        assert!((projected - 1000.0).abs() < 1e-6);
        assert_eq!(
            manager_meso_decide(&r, 0.001, Some(500)),
            MesoDecision::Abort(AbortReason::ProjectedOverrun)
        );
        assert_eq!(manager_meso_decide(&r, 0.001, Some(1001)), MesoDecision::Continue);
    }

    #[test]
    fn meso_no_improvement() {
        let mut h = SeHistory::new(50);
        let mut report = None;
        for t in 0..60u64 {
            report = Some(h.observe(100 + t, 0.002 + 1e-7 * t as f64, t));
        }
        let report = report.unwrap();
        assert!(report.stalled_ticks >= 50);
        assert_eq!(
            manager_meso_decide(&report, 0.001, Some(1_000_000)),
            MesoDecision::Abort(AbortReason::NoImprovement)
        );
        // same trend but already at target: never an abort
        let at_target = AnalystReport { se: 0.0005, ..report };
        assert_eq!(manager_meso_decide(&at_target, 0.001, Some(10)), MesoDecision::Continue);
    }
}
