//! The `sweep` subcommand: preset experiments with deterministic CSV output.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use popsim::harness::{
    self, arithmetic_schedule, audit_confident_state, audit_csv, audit_points, chart,
    doubling_schedule, final_leaders_csv, final_leaders_points, fit_loglog, fits_csv,
    max_counter_csv, max_counter_points, occupancy_csv, occupancy_min_points, stabilization_csv,
    stabilization_points, sweep_final_leaders, sweep_max_counter, sweep_occupancy,
    sweep_stabilization, FitPoint, FitResult, Protocol1Variant, SweepSpec,
};
use popsim::protocol;
use popsim::scheduler::Mode;

use crate::{load_protocol, CliError, CliResult, ModeArg};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// Final leaders at the first computation-phase entry, base and improved
    #[value(name = "fig3.1")]
    Fig31,
    /// Highest counter value reached before a single leader remains
    #[value(name = "fig5.1")]
    Fig51,
    /// Per-state occupancy fractions after a linear call budget
    Occupancy,
    /// Interactions until a single leader remains
    Stabilization,
    /// Distinct visitors of one state, agent-indexed
    Audit,
}

impl PresetArg {
    fn parse(name: &str) -> Result<PresetArg, CliError> {
        match name {
            "fig3.1" => Ok(PresetArg::Fig31),
            "fig5.1" => Ok(PresetArg::Fig51),
            "occupancy" => Ok(PresetArg::Occupancy),
            "stabilization" => Ok(PresetArg::Stabilization),
            "audit" => Ok(PresetArg::Audit),
            _ => Err(CliError::usage(format!("unknown preset `{name}`"))),
        }
    }
}

#[derive(Args)]
pub struct SweepArgs {
    /// Experiment preset
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// TOML sweep spec file; explicit flags override its fields
    #[arg(long)]
    spec_file: Option<PathBuf>,
    /// Protocol address for the occupancy/stabilization/audit presets
    #[arg(long)]
    protocol: Option<String>,
    /// Phase threshold for fig3.1
    #[arg(long)]
    k: Option<u32>,
    /// Counter saturation cap for fig5.1
    #[arg(long)]
    cap: Option<u32>,
    /// Audited state for the audit preset
    #[arg(long)]
    state: Option<String>,
    /// Call budget coefficient C for the occupancy and audit presets
    #[arg(long)]
    call_coefficient: Option<u64>,
    /// Explicit population schedule, comma separated
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<u64>>,
    /// Upper end of the preset's default schedule
    #[arg(long)]
    n_max: Option<u64>,
    #[arg(long)]
    runs_per_n: Option<u32>,
    /// Use the original dense single-run schedule of the experiment
    #[arg(long)]
    paper_scale: bool,
    /// Master seed; per-row seeds derive from it and the row index
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory for CSV files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads [default: POPSIM_WORKERS or available parallelism]
    #[arg(long)]
    workers: Option<usize>,
    /// Exit 1 when the flagged-row rate exceeds --max-flagged
    #[arg(long)]
    strict: bool,
    /// Tolerated flagged-row rate under --strict
    #[arg(long, default_value_t = 0.0)]
    max_flagged: f64,
    /// Also write one SVG chart per fitted metric
    #[arg(long)]
    chart: bool,
}

/// TOML mirror of the sweep flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    preset: Option<String>,
    protocol: Option<String>,
    k: Option<u32>,
    cap: Option<u32>,
    state: Option<String>,
    call_coefficient: Option<u64>,
    n_values: Option<Vec<u64>>,
    n_max: Option<u64>,
    runs_per_n: Option<u32>,
    paper_scale: Option<bool>,
    seed: Option<u64>,
    mode: Option<String>,
    out: Option<PathBuf>,
    chart: Option<bool>,
}

struct Merged {
    preset: PresetArg,
    protocol: Option<String>,
    k: u32,
    cap: u32,
    state: String,
    call_coefficient: u64,
    n_values: Option<Vec<u64>>,
    n_max: Option<u64>,
    runs_per_n: Option<u32>,
    paper_scale: bool,
    seed: u64,
    mode: Mode,
    out: PathBuf,
    chart: bool,
}

fn merge(args: &SweepArgs) -> Result<Merged, CliError> {
    let file: SweepFile = match &args.spec_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read spec file {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("malformed spec file: {e}")))?
        }
        None => SweepFile::default(),
    };
    let preset = match (args.preset, &file.preset) {
        (Some(p), _) => p,
        (None, Some(name)) => PresetArg::parse(name)?,
        (None, None) => {
            return Err(CliError::usage(
                "pass --preset or a spec file naming one (fig3.1, fig5.1, occupancy, stabilization, audit)",
            ))
        }
    };
    let mode = match (args.mode, &file.mode) {
        (Some(m), _) => m.into(),
        (None, Some(name)) => match name.as_str() {
            "counts" => Mode::Counts,
            "agents" => Mode::Agents,
            _ => return Err(CliError::usage(format!("unknown mode `{name}`"))),
        },
        (None, None) => Mode::Counts,
    };
    Ok(Merged {
        preset,
        protocol: args.protocol.clone().or(file.protocol),
        k: args.k.or(file.k).unwrap_or(4),
        cap: args.cap.or(file.cap).unwrap_or(64),
        state: args.state.clone().or(file.state).unwrap_or_else(|| "s2".to_string()),
        call_coefficient: args.call_coefficient.or(file.call_coefficient).unwrap_or(10),
        n_values: args.n_values.clone().or(file.n_values),
        n_max: args.n_max.or(file.n_max),
        runs_per_n: args.runs_per_n.or(file.runs_per_n),
        paper_scale: args.paper_scale || file.paper_scale.unwrap_or(false),
        seed: args.seed.or(file.seed).unwrap_or(42),
        mode,
        out: if args.out == Path::new(".") {
            file.out.unwrap_or_else(|| args.out.clone())
        } else {
            args.out.clone()
        },
        chart: args.chart || file.chart.unwrap_or(false),
    })
}

fn geometric_schedule(start: u64, factor: u64, stop: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut n = start;
    while n <= stop {
        out.push(n);
        n *= factor;
    }
    out
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let count = match workers {
        Some(w) if w >= 1 => w,
        Some(_) => return Err(CliError::usage("--workers must be at least 1")),
        None => match std::env::var("POPSIM_WORKERS") {
            Ok(value) => value
                .parse()
                .map_err(|_| CliError::usage("POPSIM_WORKERS must be a positive integer"))?,
            Err(_) => std::thread::available_parallelism().map(usize::from).unwrap_or(1),
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(count)
        .build()
        .map_err(|e| CliError::runtime(format!("cannot build worker pool: {e}")))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn usage(e: harness::SweepError) -> CliError {
    CliError::usage(e.to_string())
}

/// Fits that fail (fewer than three positive means) are skipped with a note.
fn collect_fit(
    fits: &mut Vec<(String, FitResult)>,
    metric: &str,
    points: &[FitPoint],
) {
    match fit_loglog(points) {
        Ok(fit) => fits.push((metric.to_string(), fit)),
        Err(e) => eprintln!("note: no fit for {metric}: {e}"),
    }
}

fn write_charts(merged: &Merged, fits: &[(String, FitResult)]) -> CliResult {
    if !merged.chart {
        return Ok(());
    }
    for (metric, fit) in fits {
        let svg = chart::chart_svg(metric, metric, &fit.points);
        write_file(&merged.out, &format!("{metric}.svg"), &svg)?;
    }
    Ok(())
}

fn strict_gate(merged: &Merged, args: &SweepArgs, flagged: usize, total: usize) -> CliResult {
    let rate = if total == 0 { 0.0 } else { flagged as f64 / total as f64 };
    if flagged > 0 {
        println!("flagged rows: {flagged}/{total} ({rate:.4})");
    }
    let _ = merged;
    if args.strict && rate > args.max_flagged {
        return Err(CliError::runtime(format!(
            "flagged-row rate {rate:.4} exceeds --max-flagged {}",
            args.max_flagged
        )));
    }
    Ok(())
}

pub fn cmd_sweep(args: SweepArgs) -> CliResult {
    let merged = merge(&args)?;
    let pool = worker_pool(args.workers)?;
    match merged.preset {
        PresetArg::Fig31 => {
            let (n_values, runs) = if merged.paper_scale {
                (arithmetic_schedule(100, 50, merged.n_max.unwrap_or(300_000)), 1)
            } else {
                (
                    doubling_schedule(100, merged.n_max.unwrap_or(12_800)),
                    merged.runs_per_n.unwrap_or(20),
                )
            };
            let n_values = merged.n_values.clone().unwrap_or(n_values);
            let mut spec = SweepSpec::new("builtin:protocol1", n_values, runs, merged.seed);
            spec.mode = merged.mode;
            if let Some(r) = merged.runs_per_n {
                spec.runs_per_n = r;
            }
            let (base, improved) = pool.install(|| {
                let base = sweep_final_leaders(merged.k, &spec, Protocol1Variant::Base);
                let improved = sweep_final_leaders(merged.k, &spec, Protocol1Variant::Improved);
                (base, improved)
            });
            let mut rows = base.map_err(usage)?.rows;
            let improved_rows = improved.map_err(usage)?.rows;
            let mut fits = Vec::new();
            collect_fit(&mut fits, "final_leaders_base", &final_leaders_points(&rows));
            collect_fit(
                &mut fits,
                "final_leaders_improved",
                &final_leaders_points(&improved_rows),
            );
            rows.extend(improved_rows);
            let flagged = rows.iter().filter(|r| r.stop_reason == "cap").count();
            write_file(&merged.out, "final_leaders.csv", &final_leaders_csv(&rows))?;
            write_file(&merged.out, "fits.csv", &fits_csv(&fits))?;
            write_charts(&merged, &fits)?;
            strict_gate(&merged, &args, flagged, rows.len())
        }
        PresetArg::Fig51 => {
            let (n_values, runs) = if merged.paper_scale {
                (arithmetic_schedule(10, 50, merged.n_max.unwrap_or(50_000)), 1)
            } else {
                (
                    geometric_schedule(16, 4, merged.n_max.unwrap_or(4_096)),
                    merged.runs_per_n.unwrap_or(20),
                )
            };
            let n_values = merged.n_values.clone().unwrap_or(n_values);
            let mut spec = SweepSpec::new("builtin:unbounded", n_values, runs, merged.seed);
            spec.mode = merged.mode;
            if let Some(r) = merged.runs_per_n {
                spec.runs_per_n = r;
            }
            let rows = pool
                .install(|| sweep_max_counter(merged.cap, &spec))
                .map_err(usage)?
                .rows;
            let mut fits = Vec::new();
            collect_fit(&mut fits, "max_counter", &max_counter_points(&rows));
            let flagged = rows.iter().filter(|r| r.saturated).count();
            write_file(&merged.out, "max_counter.csv", &max_counter_csv(&rows))?;
            write_file(&merged.out, "fits.csv", &fits_csv(&fits))?;
            write_charts(&merged, &fits)?;
            strict_gate(&merged, &args, flagged, rows.len())
        }
        PresetArg::Occupancy => {
            let address = merged
                .protocol
                .clone()
                .unwrap_or_else(|| "builtin:ladder?m=4".to_string());
            let protocol = load_protocol(&address)?;
            let reachable = protocol::reachable_states(&protocol, protocol.start_state()).len();
            let n_values = merged
                .n_values
                .clone()
                .unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
            let mut spec = SweepSpec::new(&address, n_values, merged.runs_per_n.unwrap_or(20), merged.seed);
            spec.mode = merged.mode;
            let rows = pool
                .install(|| sweep_occupancy(&address, &spec, merged.call_coefficient))
                .map_err(usage)?
                .rows;
            let mut fits = Vec::new();
            collect_fit(&mut fits, "min_fraction", &occupancy_min_points(&rows, reachable));
            write_file(&merged.out, "occupancy.csv", &occupancy_csv(&rows))?;
            write_file(&merged.out, "fits.csv", &fits_csv(&fits))?;
            write_charts(&merged, &fits)?;
            strict_gate(&merged, &args, 0, rows.len())
        }
        PresetArg::Stabilization => {
            let address = merged
                .protocol
                .clone()
                .unwrap_or_else(|| "builtin:elim".to_string());
            let n_values = merged
                .n_values
                .clone()
                .unwrap_or_else(|| doubling_schedule(64, merged.n_max.unwrap_or(1_024)));
            let mut spec = SweepSpec::new(&address, n_values, merged.runs_per_n.unwrap_or(20), merged.seed);
            spec.mode = merged.mode;
            let rows = pool
                .install(|| sweep_stabilization(&address, &spec))
                .map_err(usage)?
                .rows;
            let mut fits = Vec::new();
            collect_fit(&mut fits, "interactions", &stabilization_points(&rows));
            let flagged = rows.iter().filter(|r| r.stop_reason == "cap").count();
            write_file(&merged.out, "stabilization.csv", &stabilization_csv(&rows))?;
            write_file(&merged.out, "fits.csv", &fits_csv(&fits))?;
            write_charts(&merged, &fits)?;
            strict_gate(&merged, &args, flagged, rows.len())
        }
        PresetArg::Audit => {
            let address = merged
                .protocol
                .clone()
                .unwrap_or_else(|| "builtin:ladder?m=3".to_string());
            let n_values = merged
                .n_values
                .clone()
                .unwrap_or_else(|| vec![100, 1_000, 10_000]);
            let mut spec = SweepSpec::new(&address, n_values, merged.runs_per_n.unwrap_or(50), merged.seed);
            // distinct-visitor audits need agent identity
            spec.mode = Mode::Agents;
            let rows = pool
                .install(|| {
                    audit_confident_state(&address, &merged.state, &spec, merged.call_coefficient)
                })
                .map_err(usage)?
                .rows;
            let mut fits = Vec::new();
            collect_fit(&mut fits, "distinct_visitors", &audit_points(&rows));
            write_file(&merged.out, "audit.csv", &audit_csv(&rows))?;
            write_file(&merged.out, "fits.csv", &fits_csv(&fits))?;
            write_charts(&merged, &fits)?;
            strict_gate(&merged, &args, 0, rows.len())
        }
    }
}
