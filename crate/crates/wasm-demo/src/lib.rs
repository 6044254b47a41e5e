//! Browser bindings for the operations simulator. Every entry point takes and
//! returns plain strings (config text in, JSON or SVG out), so the same
//! functions run natively under `cargo test`.

use opsim::output::{emit_plot, facets_for, runs_rows};
use opsim::planner::{run_experiment, ExperimentPlan, Sample};
use opsim::scan::{execute_scan, ScanSpec};
use opsim::sim::{
    rng_from_seed, run_measurement_observed, MeasurementRecord, MeasurementTarget, RunState,
    TickSnapshot,
};
use opsim::{ExperimentLog, RunConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest trace handed to the page.
pub const MAX_TRACE_TICKS: u64 = 20_000;

/// Largest scan the page may request, in runs.
pub const MAX_SCAN_RUNS: u64 = 2_000;

fn config(text: &str) -> Result<RunConfig, String> {
    RunConfig::parse(text).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Trace<'a> {
    fa: f64,
    nd: u32,
    pq: f64,
    te: f64,
    record: &'a MeasurementRecord,
    ticks: &'a [TickSnapshot],
}

/// One measurement at quality `pq`, tick by tick: stream and beam positions,
/// operator command, datum and running SE. Capped at `MAX_TRACE_TICKS`.
#[wasm_bindgen]
pub fn trace_measurement(config_text: &str, seed: u64, pq: f64) -> Result<String, String> {
    let cfg = config(config_text)?;
    if !(pq > 0.0 && pq.is_finite()) {
        return Err(format!("pq must be a positive number, got {pq}"));
    }
    let mut state = RunState::new(&cfg, Some(MAX_TRACE_TICKS));
    let mut rng = rng_from_seed(seed);
    let target = MeasurementTarget {
        te: cfg.nominal_te,
        samples_left: 1,
    };
    let mut ticks = Vec::new();
    let record = run_measurement_observed(
        &Sample::new("trace", pq),
        target,
        &cfg,
        &mut state,
        &mut rng,
        &mut |s| ticks.push(*s),
    )
    .map_err(|e| e.to_string())?;
    let trace = Trace {
        fa: cfg.fa,
        nd: cfg.nd,
        pq,
        te: cfg.nominal_te,
        record: &record,
        ticks: &ticks,
    };
    serde_json::to_string(&trace).map_err(|e| e.to_string())
}

/// A full experiment over the configured PQ grid.
#[wasm_bindgen]
pub fn run_summary(config_text: &str, seed: u64) -> Result<String, String> {
    let cfg = config(config_text)?;
    let plan = ExperimentPlan::from_config(&cfg).map_err(|e| e.to_string())?;
    let log: ExperimentLog = run_experiment(&plan, &cfg, seed);
    serde_json::to_string(&log).map_err(|e| e.to_string())
}

/// Run a built-in scan and render its plot for one (adjust, cutoff) facet.
#[wasm_bindgen]
pub fn preset_plot(
    preset: &str,
    config_text: &str,
    replications: u32,
    seed: u64,
    adjust_error: bool,
) -> Result<String, String> {
    let mut cfg = config(config_text)?;
    cfg.replications = replications;
    cfg.base_seed = seed;
    let spec = ScanSpec::preset(preset, cfg).map_err(|e| e.to_string())?;
    let runs = spec.cells().len() as u64 * u64::from(replications);
    if runs > MAX_SCAN_RUNS {
        return Err(format!("{runs} runs requested; the page allows {MAX_SCAN_RUNS}"));
    }
    let result = execute_scan(&spec, Some(1)).map_err(|e| e.to_string())?;
    let rows = runs_rows(&result);
    let facets = facets_for(&rows);
    let facet = facets
        .iter()
        .find(|f| f.adjust_error == adjust_error)
        .or(facets.first())
        .ok_or("scan produced no rows")?;
    let title = format!(
        "{preset}: Adjust-Error={}, Cutoff-Time={}",
        facet.adjust_error, facet.cutoff
    );
    emit_plot(&rows, facet, &title).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn trace_ends_at_te_and_is_deterministic() {
        let json = trace_measurement("", 4, 100.0).unwrap();
        assert_eq!(json, trace_measurement("", 4, 100.0).unwrap());
        let v: Value = serde_json::from_str(&json).unwrap();
        let ticks = v["ticks"].as_array().unwrap();
        assert_eq!(ticks.len() as u64, v["record"]["events"].as_u64().unwrap());
        assert_eq!(v["record"]["termination"], "ReachedTe");
        let last_se = ticks.last().unwrap()["se"].as_f64().unwrap();
        assert!(last_se <= 0.001);
    }

    #[test]
    fn trace_is_capped() {
        let json = trace_measurement("operator.fa = 3\nnoise.misalign_gain = 5", 1, 1.0).unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["ticks"].as_array().unwrap().len() as u64, MAX_TRACE_TICKS);
        assert_eq!(v["record"]["termination"], "ClockExhausted");
    }

    #[test]
    fn bad_inputs_are_reported() {
        let err = trace_measurement("operator.fa = -1", 0, 10.0).unwrap_err();
        assert!(err.contains("operator.fa"), "{err}");
        assert!(trace_measurement("", 0, 0.0).is_err());
        assert!(run_summary("bogus = 1", 0).is_err());
        assert!(preset_plot("fig99", "", 2, 0, false).is_err());
        assert!(preset_plot("fig9", "", 1000, 0, false).is_err());
    }

    #[test]
    fn summary_covers_every_sample() {
        let json = run_summary("manager.adjust_error = true\nmanager.cutoff_time = true", 2).unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["records"].as_array().unwrap().len(), 5);
        assert!(v["total_ticks"].as_u64().unwrap() <= v["budget_ticks"].as_u64().unwrap());
    }

    #[test]
    fn plot_is_svg_for_requested_facet() {
        let svg = preset_plot("fig9", "", 3, 42, true).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
        assert!(svg.contains("Adjust-Error=true"));
        assert_eq!(svg, preset_plot("fig9", "", 3, 42, true).unwrap());
    }
}
