//! Output bundle: runs/summary CSV tables, SVG line charts, and the
//! manifest that reproduces them.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scan::{ScanResult, ScanSpec};

/// Bump whenever the column layout of `runs.csv` or `summary.csv` changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const RUNS_HEADER: &str = "fa,nd,adjust_error,cutoff,sample_id,pq,mean_events,std_events,mean_ticks,mean_final_se,frac_reached_te,replications";

pub const SUMMARY_HEADER: &str = "fa,nd,adjust_error,cutoff,mean_total_events,std_total_events,mean_total_ticks,max_total_ticks,budget_ticks,mean_samples_with_data,frac_all_samples_with_data,replications";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Plot(#[from] PlotError),
}

impl OutputError {
    fn io(path: &Path, source: io::Error) -> Self {
        OutputError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RunsRow {
    pub fa: f64,
    pub nd: u32,
    pub adjust_error: bool,
    pub cutoff: bool,
    pub sample_id: String,
    pub pq: f64,
    pub mean_events: f64,
    pub std_events: f64,
    pub mean_ticks: f64,
    pub mean_final_se: f64,
    pub frac_reached_te: f64,
    pub replications: u64,
}

/// Rows sorted by (fa, nd, adjust, cutoff, descending pq).
pub fn runs_rows(result: &ScanResult) -> Vec<RunsRow> {
    let mut rows: Vec<RunsRow> = result
        .cells
        .iter()
        .flat_map(|cell| {
            cell.samples.iter().map(move |s| RunsRow {
                fa: cell.key.fa,
                nd: cell.key.nd,
                adjust_error: cell.key.adjust_error,
                cutoff: cell.key.cutoff,
                sample_id: s.sample_id.clone(),
                pq: s.pq,
                mean_events: s.events.mean,
                std_events: s.events.std_dev.unwrap_or(f64::NAN),
                mean_ticks: s.ticks.mean,
                mean_final_se: s.final_se.mean,
                frac_reached_te: s.reached_te.mean,
                replications: cell.replications() as u64,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        a.fa.total_cmp(&b.fa)
            .then(a.nd.cmp(&b.nd))
            .then(a.adjust_error.cmp(&b.adjust_error))
            .then(a.cutoff.cmp(&b.cutoff))
            .then(b.pq.total_cmp(&a.pq))
    });
    rows
}

/// `runs.csv` contents. Numbers use Rust's shortest round-trip formatting;
/// undefined statistics are written as `NaN`.
pub fn emit_runs_csv(result: &ScanResult) -> String {
    render_runs_csv(&runs_rows(result))
}

pub fn render_runs_csv(rows: &[RunsRow]) -> String {
    let records = rows.iter().map(|r| {
        vec![
            r.fa.to_string(),
            r.nd.to_string(),
            r.adjust_error.to_string(),
            r.cutoff.to_string(),
            r.sample_id.clone(),
            r.pq.to_string(),
            r.mean_events.to_string(),
            r.std_events.to_string(),
            r.mean_ticks.to_string(),
            r.mean_final_se.to_string(),
            r.frac_reached_te.to_string(),
            r.replications.to_string(),
        ]
    });
    write_csv(RUNS_HEADER, records)
}

fn write_csv(header: &str, records: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, rec: &[String]| {
        w.write_record(rec).expect("writing to memory cannot fail");
    };
    write(&mut w, &header.split(',').map(String::from).collect::<Vec<_>>());
    for rec in records {
        write(&mut w, &rec);
    }
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

/// Inverse of [`render_runs_csv`], used by the `plot` subcommand.
pub fn parse_runs_csv(text: &str, path: &Path) -> Result<Vec<RunsRow>, OutputError> {
    let err = |line: u64, reason: String| OutputError::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RUNS_HEADER {
        return Err(err(1, "missing or unexpected header".into()));
    }
    reader
        .deserialize::<RunsRow>()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                err(line, e.to_string())
            })
        })
        .collect()
}

/// One row per cell with whole-run totals.
pub fn emit_summary_csv(result: &ScanResult) -> String {
    let mut cells: Vec<_> = result.cells.iter().collect();
    cells.sort_by(|a, b| {
        a.key
            .fa
            .total_cmp(&b.key.fa)
            .then(a.key.nd.cmp(&b.key.nd))
            .then(a.key.adjust_error.cmp(&b.key.adjust_error))
            .then(a.key.cutoff.cmp(&b.key.cutoff))
    });
    let records = cells.into_iter().map(|c| {
        let budget = if c.key.cutoff {
            result.spec.plan.budget_ticks.to_string()
        } else {
            "none".to_string()
        };
        vec![
            c.key.fa.to_string(),
            c.key.nd.to_string(),
            c.key.adjust_error.to_string(),
            c.key.cutoff.to_string(),
            c.runs.total_events.mean.to_string(),
            c.runs.total_events.std_dev.unwrap_or(f64::NAN).to_string(),
            c.runs.total_ticks.mean.to_string(),
            c.runs.max_total_ticks.to_string(),
            budget,
            c.runs.samples_with_data.mean.to_string(),
            c.runs.frac_all_samples_with_data.to_string(),
            c.replications().to_string(),
        ]
    });
    write_csv(SUMMARY_HEADER, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Fa,
    Nd,
}

/// Which slice of a scan a chart shows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotFacet {
    pub adjust_error: bool,
    pub cutoff: bool,
    /// One series per value of this parameter.
    pub sweep: SweepAxis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("no scan rows match adjust_error={adjust_error}, cutoff={cutoff}")]
    EmptySelection { adjust_error: bool, cutoff: bool },
}

/// Facets that cover a set of rows: one per (adjust, cutoff) pair present,
/// sweeping whichever of FA/ND actually varies (FA if both or neither).
pub fn facets_for(rows: &[RunsRow]) -> Vec<PlotFacet> {
    let mut pairs: Vec<(bool, bool)> = rows.iter().map(|r| (r.adjust_error, r.cutoff)).collect();
    pairs.sort();
    pairs.dedup();
    let distinct_fa = {
        let mut v: Vec<u64> = rows.iter().map(|r| r.fa.to_bits()).collect();
        v.sort();
        v.dedup();
        v.len()
    };
    let distinct_nd = {
        let mut v: Vec<u32> = rows.iter().map(|r| r.nd).collect();
        v.sort();
        v.dedup();
        v.len()
    };
    let sweep = if distinct_nd > 1 && distinct_fa == 1 {
        SweepAxis::Nd
    } else {
        SweepAxis::Fa
    };
    pairs
        .into_iter()
        .map(|(adjust_error, cutoff)| PlotFacet {
            adjust_error,
            cutoff,
            sweep,
        })
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn select_series(rows: &[RunsRow], facet: &PlotFacet) -> Result<Vec<Series>, PlotError> {
    let picked: Vec<&RunsRow> = rows
        .iter()
        .filter(|r| r.adjust_error == facet.adjust_error && r.cutoff == facet.cutoff)
        .collect();
    if picked.is_empty() {
        return Err(PlotError::EmptySelection {
            adjust_error: facet.adjust_error,
            cutoff: facet.cutoff,
        });
    }
    // The non-swept parameter is pinned to its first (smallest) value.
    let pinned_fa = picked.iter().map(|r| r.fa).fold(f64::INFINITY, f64::min);
    let pinned_nd = picked.iter().map(|r| r.nd).min().unwrap_or(0);
    let mut series: Vec<(u64, Series)> = Vec::new();
    for r in picked {
        let (order, label) = match facet.sweep {
            SweepAxis::Fa if r.nd == pinned_nd => (r.fa.to_bits(), format!("FA = {}", r.fa)),
            SweepAxis::Nd if r.fa == pinned_fa => (u64::from(r.nd), format!("ND = {}", r.nd)),
            _ => continue,
        };
        let idx = match series.iter().position(|(o, _)| *o == order) {
            Some(i) => i,
            None => {
                series.push((
                    order,
                    Series {
                        label,
                        points: Vec::new(),
                    },
                ));
                series.len() - 1
            }
        };
        series[idx].1.points.push((r.pq, r.mean_events));
    }
    series.sort_by_key(|(o, _)| *o);
    Ok(series
        .into_iter()
        .map(|(_, mut s)| {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            s
        })
        .collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean events against PQ for one facet; log-log axes.
/// Output bytes depend only on the rows.
pub fn emit_plot(rows: &[RunsRow], facet: &PlotFacet, title: &str) -> Result<String, PlotError> {
    let series = select_series(rows, facet)?;

    const W: f64 = 760.0;
    const H: f64 = 500.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 50.0;
    const BOTTOM: f64 = 80.0;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;

    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    // Zero-event means cannot sit on a log axis; they are drawn on the floor.
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(|y| *y > 0.0 && y.is_finite())
        .collect();
    let (xmin, xmax) = bounds(&xs, 1.0);
    let (ymin, ymax) = bounds(&ys, 1.0);
    let (lx0, lx1) = (xmin.log10() - 0.05, xmax.log10() + 0.05);
    let (ly0, ly1) = (ymin.log10().floor(), ymax.log10().ceil().max(ymin.log10().floor() + 1.0));
    let sx = |x: f64| LEFT + (x.log10() - lx0) / (lx1 - lx0) * pw;
    let sy = |y: f64| {
        let ly = if y > 0.0 && y.is_finite() { y.log10() } else { ly0 };
        TOP + ph - (ly.max(ly0) - ly0) / (ly1 - ly0) * ph
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );

    // y grid and decade labels
    let mut d = ly0 as i32;
    while d as f64 <= ly1 {
        let y = sy(10f64.powi(d));
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            format_decade(d)
        );
        d += 1;
    }
    // x ticks at the PQ values present
    let mut ticks = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in &ticks {
        let px = sx(*x);
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333333"/>"##,
            TOP + ph,
            TOP + ph + 6.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            TOP + ph + 20.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Performance Quality (PQ)</text>"#,
        LEFT + pw / 2.0,
        TOP + ph + 42.0
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10" fill="#555555">Samples are run from high to low PQ (right to left). Log-log axes; zero-event means drawn on the floor.</text>"##,
        LEFT + pw / 2.0,
        TOP + ph + 62.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">Mean events per measurement</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(values: &[f64], fallback: f64) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (fallback, fallback * 10.0);
    }
    if lo == hi {
        return (lo / 2.0, hi * 2.0);
    }
    (lo, hi)
}

fn format_decade(d: i32) -> String {
    if (0..=6).contains(&d) {
        format!("{}", 10u64.pow(d as u32))
    } else {
        format!("1e{d}")
    }
}

/// File name for a facet's chart.
pub fn plot_file_name(name: &str, facet: &PlotFacet, facet_count: usize) -> String {
    if facet_count == 1 {
        format!("{name}.svg")
    } else {
        format!(
            "{name}-adjust-{}-cutoff-{}.svg",
            facet.adjust_error, facet.cutoff
        )
    }
}

/// Provenance written next to the outputs. Re-running the recorded
/// `spec` with the same tool version reproduces every file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub csv_schema_version: u32,
    pub base_seed: u64,
    /// `RunConfig` in config-file syntax, for humans.
    pub config_text: String,
    pub files: Vec<String>,
    pub spec: ScanSpec,
}

impl Manifest {
    pub fn new(spec: &ScanSpec, files: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            csv_schema_version: CSV_SCHEMA_VERSION,
            base_seed: spec.base_seed,
            config_text: spec.base.to_text(),
            files,
            spec: spec.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is serializable");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, OutputError> {
        let text = fs::read_to_string(path).map_err(|e| OutputError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| OutputError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// In-memory bundle for a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBundle {
    pub runs_csv: String,
    pub summary_csv: String,
    /// `(file name, svg)` pairs.
    pub plots: Vec<(String, String)>,
    pub manifest: Manifest,
}

impl OutputBundle {
    pub fn from_result(result: &ScanResult) -> Result<Self, PlotError> {
        let rows = runs_rows(result);
        let facets = facets_for(&rows);
        let mut plots = Vec::new();
        for facet in &facets {
            let file = plot_file_name(&result.spec.name, facet, facets.len());
            let title = format!(
                "{}: Adjust-Error={}, Cutoff-Time={}",
                result.spec.name, facet.adjust_error, facet.cutoff
            );
            plots.push((file, emit_plot(&rows, facet, &title)?));
        }
        let mut files = vec!["runs.csv".to_string(), "summary.csv".to_string()];
        files.extend(plots.iter().map(|(f, _)| f.clone()));
        Ok(Self {
            runs_csv: render_runs_csv(&rows),
            summary_csv: emit_summary_csv(result),
            plots,
            manifest: Manifest::new(&result.spec, files),
        })
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
        fs::create_dir_all(dir).map_err(|e| OutputError::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, body: &str| -> Result<(), OutputError> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| OutputError::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        put("runs.csv", &self.runs_csv)?;
        put("summary.csv", &self.summary_csv)?;
        for (name, svg) in &self.plots {
            put(name, svg)?;
        }
        put(MANIFEST_FILE, &self.manifest.to_json())?;
        Ok(written)
    }
}
