//! `opsim` command line: `run`, `scan`, `plot`, `presets`.
//!
//! Exit codes: 0 success, 1 validation error, 2 i/o error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::output::{
    emit_plot, facets_for, parse_runs_csv, plot_file_name, Manifest, OutputBundle, OutputError,
};
use crate::planner::{run_experiment, ExperimentPlan};
use crate::scan::{execute_scan, ScanSpec, PRESETS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

pub const SEED_ENV: &str = "OPSIM_SEED";

#[derive(Debug, Parser)]
#[command(name = "opsim", version, about = "Multi-scale simulator of instrument-side experiment operations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and print its measurement table.
    Run(RunArgs),
    /// Execute a parameter scan and write CSV tables, SVG plots and a manifest.
    Scan(ScanArgs),
    /// Re-render plots from a saved runs.csv.
    Plot(PlotArgs),
    /// List the built-in scan presets.
    Presets,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; falls back to $OPSIM_SEED, then the config's scan.base_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Per-parameter overrides; values go through the config parser, so they
/// are validated exactly like file entries.
#[derive(Debug, Args, Default)]
struct Overrides {
    /// Std-dev of one stream step.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    walk_sigma: Option<String>,
    /// Beam displacement per button press.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    beam_step: Option<String>,
    /// Intrinsic noise scale of a datum.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    sigma0: Option<String>,
    /// Noise inflation per unit misalignment.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    misalign_gain: Option<String>,
    /// True mean of the measured quantity.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    mu: Option<String>,
    /// Functional acuity: smallest misalignment noticed.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    fa: Option<String>,
    /// Noticing delay in ticks.
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    nd: Option<String>,
    /// Ticks per unit distance when changing buttons.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    switch_cost_per_unit: Option<String>,
    /// Layout position of the left button.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    button_left: Option<String>,
    /// Layout position of the right button.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    button_right: Option<String>,
    /// Observations in the analyst's SE-slope window.
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    se_window: Option<String>,
    /// Events required before TE can be declared.
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    min_events: Option<String>,
    /// Target error.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    nominal_te: Option<String>,
    /// Let the manager relax TE to fit the budget.
    #[arg(long, value_name = "BOOL", allow_hyphen_values = true)]
    adjust_error: Option<String>,
    /// Enforce the beam-time budget.
    #[arg(long, value_name = "BOOL", allow_hyphen_values = true)]
    cutoff_time: Option<String>,
    /// Beam-time budget in ticks, or `auto`.
    #[arg(long, value_name = "N|auto", allow_hyphen_values = true)]
    budget_ticks: Option<String>,
    /// Comma-separated sample qualities.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    pq_grid: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("walk_sigma", &self.walk_sigma),
            ("beam_step", &self.beam_step),
            ("sigma0", &self.sigma0),
            ("misalign_gain", &self.misalign_gain),
            ("mu", &self.mu),
            ("fa", &self.fa),
            ("nd", &self.nd),
            ("switch_cost_per_unit", &self.switch_cost_per_unit),
            ("button_left", &self.button_left),
            ("button_right", &self.button_right),
            ("se_window", &self.se_window),
            ("min_events", &self.min_events),
            ("nominal_te", &self.nominal_te),
            ("adjust_error", &self.adjust_error),
            ("cutoff_time", &self.cutoff_time),
            ("budget_ticks", &self.budget_ticks),
            ("pq_grid", &self.pq_grid),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    common: Common,
    /// Built-in scan design (see `presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Reproduce the scan recorded in a manifest.
    #[arg(long, conflicts_with_all = [
        "preset", "config", "seed", "replications", "fa_values", "nd_values",
        "adjust_values", "cutoff_values", "unpaired",
    ])]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replications per cell.
    #[arg(long)]
    replications: Option<u32>,
    /// Worker threads; 0 uses every core, 1 runs serially.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Comma-separated FA values (custom scans).
    #[arg(long, value_delimiter = ',')]
    fa_values: Option<Vec<f64>>,
    /// Comma-separated ND values.
    #[arg(long, value_delimiter = ',')]
    nd_values: Option<Vec<u32>>,
    /// Adjust-error settings to sweep.
    #[arg(long, value_delimiter = ',')]
    adjust_values: Option<Vec<bool>>,
    /// Cutoff-time settings to sweep.
    #[arg(long, value_delimiter = ',')]
    cutoff_values: Option<Vec<bool>>,
    /// Give every cell its own seed stream instead of pairing replications.
    #[arg(long)]
    unpaired: bool,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// A runs.csv written by `scan`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base name for the SVG files.
    #[arg(long, default_value = "plot")]
    name: String,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Io(m) => m,
        }
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        match e {
            OutputError::Io { .. } => Failure::Io(e.to_string()),
            OutputError::Parse { .. } | OutputError::Plot(_) => Failure::Validation(e.to_string()),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

/// Entry point; writes normal output to `out` and diagnostics to `err`.
pub fn cli_main<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args, out),
        Command::Scan(args) => cmd_scan(args, out),
        Command::Plot(args) => cmd_plot(args, out),
        Command::Presets => cmd_presets(out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "opsim: {}", f.message());
            f.code()
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| config_failure(path, e))?
        }
        None => RunConfig::default(),
    };
    for (key, value) in common.overrides.pairs() {
        cfg.set(key, value)
            .map_err(|e| validation(format!("--{}: {e}", key.replace('_', "-"))))?;
    }
    if let Some(seed) = resolve_seed(common.seed)? {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn config_failure(path: &Path, e: ConfigError) -> Failure {
    validation(format!("{}: {e}", path.display()))
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| validation(format!("${SEED_ENV} is not an unsigned integer: `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn cmd_run(args: RunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let plan = ExperimentPlan::from_config(&cfg).map_err(validation)?;
    let log = run_experiment(&plan, &cfg, cfg.base_seed);
    let io = |e: std::io::Error| Failure::Io(e.to_string());
    writeln!(
        out,
        "seed={} fa={} nd={} adjust_error={} cutoff_time={} budget_ticks={}",
        cfg.base_seed,
        cfg.fa,
        cfg.nd,
        cfg.adjust_error,
        cfg.cutoff_time,
        if cfg.cutoff_time {
            plan.budget_ticks.to_string()
        } else {
            "none".into()
        }
    )
    .map_err(io)?;
    writeln!(
        out,
        "sample          pq  target_te    events     ticks     final_se  misalign  termination"
    )
    .map_err(io)?;
    for r in &log.records {
        let se = r
            .final_se
            .map(|s| format!("{s:.6}"))
            .unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<8} {:>9} {:>10.6} {:>9} {:>9} {:>12} {:>9.4}  {}",
            r.sample_id,
            r.pq,
            r.target_te,
            r.events,
            r.ticks_used,
            se,
            r.mean_misalignment,
            r.termination.as_str()
        )
        .map_err(io)?;
    }
    writeln!(
        out,
        "total_ticks={} samples_with_data={}/{}",
        log.total_ticks,
        log.samples_with_data(),
        log.records.len()
    )
    .map_err(io)?;
    Ok(())
}

fn cmd_scan(args: ScanArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = if let Some(path) = &args.manifest {
        Manifest::read(path)?.spec
    } else {
        let mut cfg = load_config(&args.common)?;
        if let Some(r) = args.replications {
            cfg.set("scan.replications", &r.to_string()).map_err(validation)?;
        }
        let mut spec = match &args.preset {
            Some(name) => ScanSpec::preset(name, cfg).map_err(validation)?,
            None => ScanSpec::single("scan", cfg).map_err(validation)?,
        };
        if let Some(v) = args.fa_values {
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                return Err(validation(format!("--fa-values: {bad} is not a positive number")));
            }
            spec.fa_values = v;
        }
        if let Some(v) = args.nd_values {
            spec.nd_values = v;
        }
        if let Some(v) = args.adjust_values {
            spec.adjust_error_values = v;
        }
        if let Some(v) = args.cutoff_values {
            spec.cutoff_values = v;
        }
        spec.paired_seeds = !args.unpaired;
        spec
    };
    let threads = (args.threads > 0).then_some(args.threads);
    let result = execute_scan(&spec, threads).map_err(validation)?;
    let bundle = OutputBundle::from_result(&result).map_err(OutputError::from)?;
    let written = bundle.write_to(&args.out)?;
    for path in written {
        writeln!(out, "wrote {}", path.display()).map_err(|e| Failure::Io(e.to_string()))?;
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", args.input.display())))?;
    let rows = parse_runs_csv(&text, &args.input)?;
    let facets = facets_for(&rows);
    if facets.is_empty() {
        return Err(validation(format!("{} has no data rows", args.input.display())));
    }
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", args.out.display())))?;
    for facet in &facets {
        let title = format!(
            "{}: Adjust-Error={}, Cutoff-Time={}",
            args.name, facet.adjust_error, facet.cutoff
        );
        let svg = emit_plot(&rows, facet, &title).map_err(validation)?;
        let path = args.out.join(plot_file_name(&args.name, facet, facets.len()));
        fs::write(&path, svg)
            .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        writeln!(out, "wrote {}", path.display()).map_err(|e| Failure::Io(e.to_string()))?;
    }
    Ok(())
}

fn cmd_presets(out: &mut dyn Write) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(e.to_string());
    for name in PRESETS {
        let spec = ScanSpec::preset(name, RunConfig::default()).map_err(validation)?;
        writeln!(
            out,
            "{name:<11} fa={:?} nd={:?} adjust_error={:?} cutoff={:?}",
            spec.fa_values, spec.nd_values, spec.adjust_error_values, spec.cutoff_values
        )
        .map_err(io)?;
    }
    Ok(())
}
