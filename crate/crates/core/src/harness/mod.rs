//! Seeded experiment sweeps with deterministic output.
//!
//! A sweep executes a grid of runs — every population size in the schedule
//! times `runs_per_n` — as independent work units. Each row's seed is a
//! stable hash of the master seed and the row index, and rows are merged in
//! row-index order, so a sweep's CSV bytes are identical for any worker
//! count. Rows that hit the call cap or a saturation flag are reported but
//! never enter fit inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::builtins::{self, AddressError};
use crate::protocol::{
    self, parse_protocol, Configuration, ParseError, ProtocolSpec, StateId,
};
use crate::scheduler::{
    derive_seed, run, Mode, RunConfig, RunResult, StopCondition, StopReason,
};

pub mod chart;

/// Resolves a protocol address: `builtin:<name>?<params>` or a DSL file path.
pub fn resolve_protocol(address: &str) -> Result<ProtocolSpec, ResolveError> {
    if address.starts_with("builtin:") {
        return Ok(builtins::resolve_builtin(address)?);
    }
    let text = std::fs::read_to_string(address).map_err(|source| ResolveError::Io {
        path: address.to_string(),
        source,
    })?;
    Ok(parse_protocol(&text)?)
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error("cannot read protocol file `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Grid of runs: population schedule × runs per population size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    /// Protocol address recorded in output rows; sweeps that fix their own
    /// protocol (the leader-election figures) ignore it.
    pub protocol: String,
    /// Strictly increasing population sizes, all positive.
    pub n_values: Vec<u64>,
    pub runs_per_n: u32,
    pub mode: Mode,
    pub master_seed: u64,
    /// Per-run call cap; `None` selects the default `64·n²`.
    pub max_calls: Option<u64>,
}

impl SweepSpec {
    pub fn new(protocol: impl Into<String>, n_values: Vec<u64>, runs_per_n: u32, master_seed: u64) -> Self {
        SweepSpec {
            protocol: protocol.into(),
            n_values,
            runs_per_n,
            mode: Mode::Counts,
            master_seed,
            max_calls: None,
        }
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.n_values.is_empty() {
            return Err(SweepError::EmptySchedule);
        }
        if self.n_values[0] == 0 || !self.n_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(SweepError::BadSchedule);
        }
        if self.runs_per_n == 0 {
            return Err(SweepError::ZeroRuns);
        }
        Ok(())
    }

    fn cap_for(&self, n: u64) -> u64 {
        self.max_calls
            .unwrap_or_else(|| crate::scheduler::default_max_calls(n))
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("population schedule is empty")]
    EmptySchedule,
    #[error("population schedule must be strictly increasing and positive")]
    BadSchedule,
    #[error("runs_per_n must be at least 1")]
    ZeroRuns,
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("protocol has no computation-phase states")]
    NoComputationStates,
    #[error("protocol states carry no timer counters")]
    NoTimerCounters,
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("state `{0}` is not reachable from the start state")]
    UnreachableState(String),
    #[error("distinct-visitor audits require agents mode")]
    AgentsModeRequired,
}

/// Rows of one sweep, in deterministic row order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<R> {
    pub rows: Vec<R>,
}

/// Executes the row grid in parallel, merging by row index.
fn sweep_rows<R: Send>(
    spec: &SweepSpec,
    make: impl Fn(u64, u32, u64) -> R + Sync,
) -> Vec<R> {
    let runs = u64::from(spec.runs_per_n);
    let total = spec.n_values.len() as u64 * runs;
    (0..total)
        .into_par_iter()
        .map(|row| {
            let n = spec.n_values[(row / runs) as usize];
            let run_index = (row % runs) as u32;
            let seed = derive_seed(spec.master_seed, row);
            make(n, run_index, seed)
        })
        .collect()
}

fn leader_count(protocol: &ProtocolSpec, config: &Configuration) -> u64 {
    protocol
        .states()
        .filter(|&s| protocol.output(s))
        .map(|s| config.count(s))
        .sum()
}

/// Variant selector for the leader-election final-leaders experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol1Variant {
    Base,
    Improved,
}

impl Protocol1Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol1Variant::Base => "base",
            Protocol1Variant::Improved => "improved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalLeadersRow {
    pub protocol: String,
    pub variant: &'static str,
    pub k: u32,
    pub n: u64,
    pub run: u32,
    pub seed: u64,
    pub calls: u64,
    pub interactions: u64,
    pub final_leaders: u64,
    pub stop_reason: &'static str,
}

/// Runs the leader election protocol from the all-leader configuration until
/// the first agent enters the computation phase or a single leader remains,
/// recording the number of leaders still present.
pub fn sweep_final_leaders(
    k: u32,
    spec: &SweepSpec,
    variant: Protocol1Variant,
) -> Result<SweepResult<FinalLeadersRow>, SweepError> {
    spec.validate()?;
    let protocol = match variant {
        Protocol1Variant::Base => builtins::protocol_1(k),
        Protocol1Variant::Improved => builtins::improved_protocol_1(k),
    };
    let computation: std::collections::BTreeSet<StateId> =
        builtins::computation_states(&protocol).into_iter().collect();
    if computation.is_empty() {
        return Err(SweepError::NoComputationStates);
    }
    let stop = StopCondition::AnyOf(vec![
        StopCondition::FirstStateEntered(computation),
        StopCondition::LeaderCountIs(1),
    ]);
    let rows = sweep_rows(spec, |n, run_index, seed| {
        let mut config = RunConfig::new(
            &protocol,
            protocol.initial_configuration(n),
            spec.mode,
            seed,
            stop.clone(),
        );
        config.max_calls = spec.cap_for(n);
        let result = run(config).expect("validated sweep row");
        FinalLeadersRow {
            protocol: "protocol1".to_string(),
            variant: variant.as_str(),
            k,
            n,
            run: run_index,
            seed,
            calls: result.calls_made,
            interactions: result.interactions_made,
            final_leaders: leader_count(&protocol, &result.final_config),
            stop_reason: result.stop_reason.as_str(),
        }
    });
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxCounterRow {
    pub protocol: String,
    pub cap: u32,
    pub n: u64,
    pub run: u32,
    pub seed: u64,
    pub calls: u64,
    pub interactions: u64,
    pub max_counter: u64,
    pub saturated: bool,
}

/// Runs the unbounded-counter variant to a single leader, tracking the
/// highest counter value any agent ever held. Rows that saturate at the cap
/// or hit the call cap are flagged.
pub fn sweep_max_counter(cap: u32, spec: &SweepSpec) -> Result<SweepResult<MaxCounterRow>, SweepError> {
    spec.validate()?;
    let protocol = builtins::unbounded_counter_variant(cap);
    let weights = builtins::timer_count_weights(&protocol).ok_or(SweepError::NoTimerCounters)?;
    let rows = sweep_rows(spec, |n, run_index, seed| {
        let mut config = RunConfig::new(
            &protocol,
            protocol.initial_configuration(n),
            spec.mode,
            seed,
            StopCondition::LeaderCountIs(1),
        );
        config.max_calls = spec.cap_for(n);
        config.state_weights = Some(weights.clone());
        let result = run(config).expect("validated sweep row");
        let max_counter = result.max_state_weight.expect("weights configured");
        MaxCounterRow {
            protocol: "unbounded".to_string(),
            cap,
            n,
            run: run_index,
            seed,
            calls: result.calls_made,
            interactions: result.interactions_made,
            max_counter,
            saturated: max_counter >= u64::from(cap) || result.stop_reason == StopReason::Cap,
        }
    });
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRow {
    pub protocol: String,
    pub n: u64,
    pub run: u32,
    pub seed: u64,
    pub c: u64,
    pub state: String,
    pub fraction_at_stop: f64,
    pub first_full_coverage_call: Option<u64>,
}

/// Runs `C·n` scheduler calls from the all-start configuration, recording
/// each reachable state's occupancy fraction at stop and the first call at
/// which every reachable state was simultaneously nonempty. Emits one row
/// per reachable state per run, in state order.
pub fn sweep_occupancy(
    protocol_address: &str,
    spec: &SweepSpec,
    call_coefficient: u64,
) -> Result<SweepResult<OccupancyRow>, SweepError> {
    spec.validate()?;
    let protocol = resolve_protocol(protocol_address)?;
    let reachable = protocol::reachable_states(&protocol, protocol.start_state());
    let address = protocol_address.to_string();
    let rows_nested = sweep_rows(spec, |n, run_index, seed| {
        let mut config = RunConfig::new(
            &protocol,
            protocol.initial_configuration(n),
            spec.mode,
            seed,
            StopCondition::FixedCalls(call_coefficient * n),
        );
        config.max_calls = spec.cap_for(n).max(call_coefficient * n);
        config.coverage_states = Some(reachable.clone());
        let result = run(config).expect("validated sweep row");
        reachable
            .iter()
            .map(|&s| OccupancyRow {
                protocol: address.clone(),
                n,
                run: run_index,
                seed,
                c: call_coefficient,
                state: protocol.name(s).to_string(),
                fraction_at_stop: result.final_config.count(s) as f64 / n as f64,
                first_full_coverage_call: result.first_full_coverage_call,
            })
            .collect::<Vec<_>>()
    });
    Ok(SweepResult {
        rows: rows_nested.into_iter().flatten().collect(),
    })
}

/// Per-run minimum occupancy fraction over the reachable states, with a flag
/// for full coverage at stop. `states_per_run` is the reachable-state count.
pub fn occupancy_run_minima(rows: &[OccupancyRow], states_per_run: usize) -> Vec<(u64, f64, bool)> {
    rows.chunks(states_per_run)
        .map(|chunk| {
            let min = chunk
                .iter()
                .map(|r| r.fraction_at_stop)
                .fold(f64::INFINITY, f64::min);
            (chunk[0].n, min, min > 0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilizationRow {
    pub protocol: String,
    pub n: u64,
    pub run: u32,
    pub seed: u64,
    pub interactions: u64,
    pub stop_reason: &'static str,
}

/// Runs a leader protocol until exactly one agent with output 1 remains,
/// recording realized interactions. Cap-stopped rows are flagged.
pub fn sweep_stabilization(
    protocol_address: &str,
    spec: &SweepSpec,
) -> Result<SweepResult<StabilizationRow>, SweepError> {
    spec.validate()?;
    let protocol = resolve_protocol(protocol_address)?;
    let address = protocol_address.to_string();
    let rows = sweep_rows(spec, |n, run_index, seed| {
        let mut config = RunConfig::new(
            &protocol,
            protocol.initial_configuration(n),
            spec.mode,
            seed,
            StopCondition::LeaderCountIs(1),
        );
        config.max_calls = spec.cap_for(n);
        let result = run(config).expect("validated sweep row");
        StabilizationRow {
            protocol: address.clone(),
            n,
            run: run_index,
            seed,
            interactions: result.interactions_made,
            stop_reason: result.stop_reason.as_str(),
        }
    });
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub protocol: String,
    pub state: String,
    pub n: u64,
    pub run: u32,
    pub seed: u64,
    pub distinct_visitors: u64,
}

/// Runs `C·n` calls in agents mode auditing how many distinct agents ever
/// occupy `state_name` — the empirical face of the exclusive-state question:
/// a state only one agent ever visits.
pub fn audit_confident_state(
    protocol_address: &str,
    state_name: &str,
    spec: &SweepSpec,
    call_coefficient: u64,
) -> Result<SweepResult<AuditRow>, SweepError> {
    spec.validate()?;
    if spec.mode != Mode::Agents {
        return Err(SweepError::AgentsModeRequired);
    }
    let protocol = resolve_protocol(protocol_address)?;
    let state = protocol
        .state_id(state_name)
        .ok_or_else(|| SweepError::UnknownState(state_name.to_string()))?;
    let reachable = protocol::reachable_states(&protocol, protocol.start_state());
    if !reachable.contains(&state) {
        return Err(SweepError::UnreachableState(state_name.to_string()));
    }
    let address = protocol_address.to_string();
    let state_label = state_name.to_string();
    let rows = sweep_rows(spec, |n, run_index, seed| {
        let mut config = RunConfig::new(
            &protocol,
            protocol.initial_configuration(n),
            Mode::Agents,
            seed,
            StopCondition::FixedCalls(call_coefficient * n),
        );
        config.max_calls = spec.cap_for(n).max(call_coefficient * n);
        config.audit_states = vec![state];
        let result = run(config).expect("validated sweep row");
        AuditRow {
            protocol: address.clone(),
            state: state_label.clone(),
            n,
            run: run_index,
            seed,
            distinct_visitors: result.distinct_visitors(state).expect("audited"),
        }
    });
    Ok(SweepResult { rows })
}

/// One run of a protocol outside any sweep, for the CLI `run` command.
pub fn single_run(config: RunConfig<'_>) -> Result<RunResult, crate::scheduler::RunError> {
    run(config)
}

/// Per-population-size summary of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPoint {
    pub n: u64,
    pub mean: f64,
    pub std_dev: f64,
    /// Rows included (flagged rows are excluded before this point).
    pub runs: usize,
}

/// Least-squares line on `(ln n, ln mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<FitPoint>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FitError {
    #[error("need at least 3 population sizes with positive means, got {0}")]
    InsufficientData(usize),
}

/// Groups `(n, value)` items into per-n means; `None` values are excluded.
pub fn per_n_points<I>(items: I) -> Vec<FitPoint>
where
    I: IntoIterator<Item = (u64, Option<f64>)>,
{
    let mut grouped: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (n, value) in items {
        if let Some(v) = value {
            grouped.entry(n).or_default().push(v);
        }
    }
    grouped
        .into_iter()
        .map(|(n, values)| {
            let runs = values.len();
            let mean = values.iter().sum::<f64>() / runs as f64;
            let variance =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / runs as f64;
            FitPoint {
                n,
                mean,
                std_dev: variance.sqrt(),
                runs,
            }
        })
        .collect()
}

/// Ordinary least squares on `(ln n, ln mean)` over points with positive
/// means. Needs at least three of them.
pub fn fit_loglog(points: &[FitPoint]) -> Result<FitResult, FitError> {
    let usable: Vec<&FitPoint> = points.iter().filter(|p| p.mean > 0.0).collect();
    if usable.len() < 3 {
        return Err(FitError::InsufficientData(usable.len()));
    }
    let xs: Vec<f64> = usable.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.mean.ln()).collect();
    let count = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / count;
    let y_mean = ys.iter().sum::<f64>() / count;
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        points: usable.into_iter().cloned().collect(),
    })
}

/// Final-leaders means per n, cap-stopped rows excluded.
pub fn final_leaders_points(rows: &[FinalLeadersRow]) -> Vec<FitPoint> {
    per_n_points(rows.iter().map(|r| {
        let value = (r.stop_reason != "cap").then_some(r.final_leaders as f64);
        (r.n, value)
    }))
}

/// Max-counter means per n, saturated and cap-stopped rows excluded.
pub fn max_counter_points(rows: &[MaxCounterRow]) -> Vec<FitPoint> {
    per_n_points(rows.iter().map(|r| {
        let value = (!r.saturated).then_some(r.max_counter as f64);
        (r.n, value)
    }))
}

/// Interactions-to-single-leader means per n, cap-stopped rows excluded.
pub fn stabilization_points(rows: &[StabilizationRow]) -> Vec<FitPoint> {
    per_n_points(rows.iter().map(|r| {
        let value = (r.stop_reason != "cap").then_some(r.interactions as f64);
        (r.n, value)
    }))
}

/// Mean minimum occupancy fraction per n.
pub fn occupancy_min_points(rows: &[OccupancyRow], states_per_run: usize) -> Vec<FitPoint> {
    per_n_points(
        occupancy_run_minima(rows, states_per_run)
            .into_iter()
            .map(|(n, min, _)| (n, Some(min))),
    )
}

/// Mean distinct visitors per n.
pub fn audit_points(rows: &[AuditRow]) -> Vec<FitPoint> {
    per_n_points(rows.iter().map(|r| (r.n, Some(r.distinct_visitors as f64))))
}

fn push_csv_line(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn final_leaders_csv(rows: &[FinalLeadersRow]) -> String {
    let mut out = String::from(
        "protocol,variant,k,n,run,seed,calls,interactions,final_leaders,stop_reason\n",
    );
    for r in rows {
        push_csv_line(
            &mut out,
            &[
                r.protocol.clone(),
                r.variant.to_string(),
                r.k.to_string(),
                r.n.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                r.calls.to_string(),
                r.interactions.to_string(),
                r.final_leaders.to_string(),
                r.stop_reason.to_string(),
            ],
        );
    }
    out
}

pub fn max_counter_csv(rows: &[MaxCounterRow]) -> String {
    let mut out =
        String::from("protocol,cap,n,run,seed,calls,interactions,max_counter,saturated\n");
    for r in rows {
        push_csv_line(
            &mut out,
            &[
                r.protocol.clone(),
                r.cap.to_string(),
                r.n.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                r.calls.to_string(),
                r.interactions.to_string(),
                r.max_counter.to_string(),
                r.saturated.to_string(),
            ],
        );
    }
    out
}

pub fn occupancy_csv(rows: &[OccupancyRow]) -> String {
    let mut out =
        String::from("protocol,n,run,seed,C,state,fraction_at_stop,first_full_coverage_call\n");
    for r in rows {
        push_csv_line(
            &mut out,
            &[
                r.protocol.clone(),
                r.n.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                r.c.to_string(),
                r.state.clone(),
                r.fraction_at_stop.to_string(),
                r.first_full_coverage_call
                    .map(|c| c.to_string())
                    .unwrap_or_default(),
            ],
        );
    }
    out
}

pub fn stabilization_csv(rows: &[StabilizationRow]) -> String {
    let mut out = String::from("protocol,n,run,seed,interactions,stop_reason\n");
    for r in rows {
        push_csv_line(
            &mut out,
            &[
                r.protocol.clone(),
                r.n.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                r.interactions.to_string(),
                r.stop_reason.to_string(),
            ],
        );
    }
    out
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from("protocol,state,n,run,seed,distinct_visitors\n");
    for r in rows {
        push_csv_line(
            &mut out,
            &[
                r.protocol.clone(),
                r.state.clone(),
                r.n.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                r.distinct_visitors.to_string(),
            ],
        );
    }
    out
}

/// `fits.csv`: one line per fitted metric.
pub fn fits_csv(fits: &[(String, FitResult)]) -> String {
    let mut out = String::from("metric,slope,intercept,r2,n_min,n_max\n");
    for (metric, fit) in fits {
        let n_min = fit.points.first().map(|p| p.n).unwrap_or(0);
        let n_max = fit.points.last().map(|p| p.n).unwrap_or(0);
        let mut line = String::new();
        let _ = write!(
            line,
            "{metric},{},{},{},{n_min},{n_max}",
            fit.slope, fit.intercept, fit.r_squared
        );
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Dense arithmetic schedule `start, start+step, …, ≤ stop`.
pub fn arithmetic_schedule(start: u64, step: u64, stop: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut n = start;
    while n <= stop {
        out.push(n);
        n += step;
    }
    out
}

/// Doubling schedule `start, 2·start, …, ≤ stop`.
pub fn doubling_schedule(start: u64, stop: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut n = start;
    while n <= stop {
        out.push(n);
        n *= 2;
    }
    out
}
