//! `popsim` — run population protocols, sweeps, layer and bound reports.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use popsim::builtins;
use popsim::harness::resolve_protocol;
use popsim::protocol::{
    compute_layers, emit, is_stable_consensus, Configuration, ProtocolSpec, RulePosition,
    Stability, StateId,
};
use popsim::scheduler::{default_max_calls, Mode, Run, RunConfig, StartState, StopCondition};

mod sweep;

#[derive(Parser)]
#[command(
    name = "popsim",
    version,
    about = "Population protocol simulator under the uniformly random scheduler",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run and print a summary
    Run(RunArgs),
    /// Execute a seeded experiment sweep and write CSV results
    Sweep(sweep::SweepArgs),
    /// Print the reachability layers of a protocol
    Layers(LayersArgs),
    /// Print the occupancy bound report of a protocol
    Bounds(BoundsArgs),
    /// Check a configuration for stable consensus by explicit-state search
    Check(CheckArgs),
    /// List built-in protocols or emit one as DSL text
    Protocols(ProtocolsArgs),
}

/// Usage errors exit with 2, runtime errors with 1.
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }
}

pub type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => sweep::cmd_sweep(args),
        Command::Layers(args) => cmd_layers(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Check(args) => cmd_check(args),
        Command::Protocols(args) => cmd_protocols(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Counts,
    Agents,
}

impl From<ModeArg> for Mode {
    fn from(mode: ModeArg) -> Mode {
        match mode {
            ModeArg::Counts => Mode::Counts,
            ModeArg::Agents => Mode::Agents,
        }
    }
}

/// Resolves `builtin:<name>?<params>` or a DSL file path; failures are usage
/// errors, since the address must be resolvable before any work starts.
pub fn load_protocol(address: &str) -> Result<ProtocolSpec, CliError> {
    resolve_protocol(address).map_err(|e| CliError::usage(e.to_string()))
}

fn state_by_name(protocol: &ProtocolSpec, name: &str) -> Result<StateId, CliError> {
    protocol
        .state_id(name)
        .ok_or_else(|| CliError::usage(format!("unknown state `{name}`")))
}

fn start_state(protocol: &ProtocolSpec, flag: &Option<String>) -> Result<StateId, CliError> {
    match flag {
        Some(name) => state_by_name(protocol, name),
        None => Ok(protocol.start_state()),
    }
}

/// `calls:N`, `interactions:N`, `single-leader`, `leader-count:N`, or
/// `state:NAME[,NAME...]`. Repeated flags form a disjunction.
fn parse_stop(protocol: &ProtocolSpec, spec: &str) -> Result<StopCondition, CliError> {
    if spec == "single-leader" {
        return Ok(StopCondition::LeaderCountIs(1));
    }
    let (kind, value) = spec
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("malformed stop condition `{spec}`")))?;
    let number = |v: &str| {
        v.parse::<u64>()
            .map_err(|_| CliError::usage(format!("malformed stop condition `{spec}`")))
    };
    match kind {
        "calls" => Ok(StopCondition::FixedCalls(number(value)?)),
        "interactions" => Ok(StopCondition::FixedInteractions(number(value)?)),
        "leader-count" => Ok(StopCondition::LeaderCountIs(number(value)?)),
        "state" => {
            let mut states = BTreeSet::new();
            for name in value.split(',') {
                states.insert(state_by_name(protocol, name)?);
            }
            Ok(StopCondition::FirstStateEntered(states))
        }
        _ => Err(CliError::usage(format!("unknown stop condition `{spec}`"))),
    }
}

#[derive(Args)]
struct RunArgs {
    /// Protocol address: builtin:<name>?<params> or a DSL file path
    #[arg(long)]
    protocol: String,
    /// Population size
    #[arg(long)]
    n: u64,
    /// Start state for the all-agents-equal initial configuration
    #[arg(long)]
    start: Option<String>,
    /// Stop condition; repeatable, any satisfied condition stops the run
    #[arg(long)]
    stop: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "counts")]
    mode: ModeArg,
    /// Safety cap on scheduler calls [default: 64·n²]
    #[arg(long)]
    max_calls: Option<u64>,
    /// Write the interaction event trace to this file
    #[arg(long)]
    trace: Option<std::path::PathBuf>,
    /// Track distinct visitors of a state (requires agents mode); repeatable
    #[arg(long)]
    audit: Vec<String>,
}

fn cmd_run(args: RunArgs) -> CliResult {
    let protocol = load_protocol(&args.protocol)?;
    if args.n == 0 {
        return Err(CliError::usage("population size must be at least 1"));
    }
    let start = start_state(&protocol, &args.start)?;
    let stops = args
        .stop
        .iter()
        .map(|s| parse_stop(&protocol, s))
        .collect::<Result<Vec<_>, _>>()?;
    let stop = match stops.len() {
        0 => StopCondition::AnyOf(Vec::new()),
        1 => stops.into_iter().next().unwrap(),
        _ => StopCondition::AnyOf(stops),
    };
    let audits = args
        .audit
        .iter()
        .map(|name| state_by_name(&protocol, name))
        .collect::<Result<Vec<_>, _>>()?;
    if !audits.is_empty() && args.mode != ModeArg::Agents {
        return Err(CliError::usage("--audit requires --mode agents"));
    }
    let config = RunConfig {
        protocol: &protocol,
        initial: StartState::Counts(Configuration::uniform(protocol.num_states(), start, args.n)),
        mode: args.mode.into(),
        seed: args.seed,
        stop,
        probes: Vec::new(),
        max_calls: args.max_calls.unwrap_or_else(|| default_max_calls(args.n)),
        audit_states: audits.clone(),
        coverage_states: None,
        state_weights: None,
    };
    let mut run = Run::new(config).map_err(|e| CliError::usage(e.to_string()))?;
    let mut trace = match &args.trace {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::File::create(path)
                .map_err(|e| CliError::runtime(format!("cannot create trace file: {e}")))?,
        )),
        None => None,
    };
    while run.finished().is_none() {
        let Some(event) = run.step() else { break };
        if let Some(writer) = &mut trace {
            let line = match &event.interaction {
                None => format!("{} noop\n", event.call),
                Some(i) => format!(
                    "{} {} {} -> {} {}\n",
                    event.call,
                    protocol.name(i.initiator),
                    protocol.name(i.responder),
                    protocol.name(i.out_initiator),
                    protocol.name(i.out_responder)
                ),
            };
            writer
                .write_all(line.as_bytes())
                .map_err(|e| CliError::runtime(format!("cannot write trace: {e}")))?;
        }
    }
    if let Some(writer) = &mut trace {
        writer
            .flush()
            .map_err(|e| CliError::runtime(format!("cannot write trace: {e}")))?;
    }
    let result = run.finish();
    println!("protocol: {}", args.protocol);
    println!("n: {}", args.n);
    println!(
        "seed: {} (rng {})",
        result.seed, result.rng_algorithm
    );
    println!("calls: {}", result.calls_made);
    println!("interactions: {}", result.interactions_made);
    println!("stop_reason: {}", result.stop_reason.as_str());
    println!("final: {}", protocol.render_counts(&result.final_config));
    for state in audits {
        println!(
            "distinct_visitors[{}]: {}",
            protocol.name(state),
            result.distinct_visitors(state).expect("audited state")
        );
    }
    Ok(())
}

#[derive(Args)]
struct LayersArgs {
    /// Protocol address: builtin:<name>?<params> or a DSL file path
    #[arg(long)]
    protocol: String,
    /// Start state [default: the protocol's designated start]
    #[arg(long)]
    start: Option<String>,
}

fn cmd_layers(args: LayersArgs) -> CliResult {
    let protocol = load_protocol(&args.protocol)?;
    let start = start_state(&protocol, &args.start)?;
    let layers = compute_layers(&protocol, start);
    println!(
        "protocol: {} ({} states)",
        args.protocol,
        protocol.num_states()
    );
    println!("F_0: {}", protocol.name(start));
    for (layer_index, _) in layers.layers().iter().enumerate().skip(1) {
        let added: Vec<String> = layers
            .added_at(layer_index)
            .map(|w| {
                let slot = match w.position {
                    RulePosition::Initiator => "initiator",
                    RulePosition::Responder => "responder",
                };
                format!(
                    "{} via ({}, {}) {}",
                    protocol.name(w.state),
                    protocol.name(w.initiator),
                    protocol.name(w.responder),
                    slot
                )
            })
            .collect();
        println!("F_{layer_index} adds: {}", added.join("; "));
    }
    println!("l_max: {}", layers.l_max());
    println!("reachable states: {}", layers.reachable().len());
    Ok(())
}

#[derive(Args)]
struct BoundsArgs {
    /// Protocol address: builtin:<name>?<params> or a DSL file path
    #[arg(long)]
    protocol: String,
    /// Start state [default: the protocol's designated start]
    #[arg(long)]
    start: Option<String>,
    /// Initial fraction on the start state, as NUM/DEN [default: 1]
    #[arg(long)]
    fraction: Option<String>,
    /// Also evaluate concrete agent counts at this population size
    #[arg(long)]
    n: Option<u64>,
}

fn parse_fraction(text: &str) -> Result<popsim::Rational, CliError> {
    let make = |num: i64, den: i64| -> Result<popsim::Rational, CliError> {
        if den == 0 {
            return Err(CliError::usage("fraction denominator is zero"));
        }
        let value = popsim::Rational::new(num.into(), den.into());
        if value <= popsim::Rational::new(0.into(), 1.into())
            || value > popsim::Rational::new(1.into(), 1.into())
        {
            return Err(CliError::usage(format!("fraction {text} outside (0, 1]")));
        }
        Ok(value)
    };
    match text.split_once('/') {
        Some((num, den)) => {
            let num = num
                .parse()
                .map_err(|_| CliError::usage(format!("malformed fraction `{text}`")))?;
            let den = den
                .parse()
                .map_err(|_| CliError::usage(format!("malformed fraction `{text}`")))?;
            make(num, den)
        }
        None => {
            let num = text
                .parse()
                .map_err(|_| CliError::usage(format!("malformed fraction `{text}`")))?;
            make(num, 1)
        }
    }
}

fn cmd_bounds(args: BoundsArgs) -> CliResult {
    let protocol = load_protocol(&args.protocol)?;
    let start = start_state(&protocol, &args.start)?;
    let fraction = match &args.fraction {
        Some(text) => parse_fraction(text)?,
        None => popsim::Rational::new(1.into(), 1.into()),
    };
    let layers = compute_layers(&protocol, start);
    let initial = std::collections::BTreeMap::from([(start, fraction)]);
    let report = popsim::bounds::propagate_bounds(&layers, &initial)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    print!("{}", report.render(&protocol, args.n));
    Ok(())
}

#[derive(Args)]
struct CheckArgs {
    /// Protocol address: builtin:<name>?<params> or a DSL file path
    #[arg(long)]
    protocol: String,
    /// All agents start in the protocol's start state
    #[arg(long, conflicts_with = "counts")]
    n: Option<u64>,
    /// Explicit configuration, e.g. A=3,B=1
    #[arg(long)]
    counts: Option<String>,
    /// Limit on explored configurations
    #[arg(long, default_value_t = 200_000)]
    max_configs: usize,
    /// Exit 1 unless the verdict is `stable`
    #[arg(long)]
    strict: bool,
}

fn cmd_check(args: CheckArgs) -> CliResult {
    let protocol = load_protocol(&args.protocol)?;
    let config = match (&args.n, &args.counts) {
        (Some(n), None) => Configuration::uniform(protocol.num_states(), protocol.start_state(), *n),
        (None, Some(text)) => {
            let mut pairs = Vec::new();
            for part in text.split(',') {
                let (name, count) = part
                    .split_once('=')
                    .ok_or_else(|| CliError::usage(format!("malformed counts `{text}`")))?;
                let count: u64 = count
                    .parse()
                    .map_err(|_| CliError::usage(format!("malformed counts `{text}`")))?;
                pairs.push((name, count));
            }
            protocol
                .configuration(&pairs)
                .map_err(|e| CliError::usage(e.to_string()))?
        }
        _ => return Err(CliError::usage("pass exactly one of --n or --counts")),
    };
    let verdict = is_stable_consensus(&protocol, &config, args.max_configs);
    match &verdict {
        Stability::Stable => println!("stable"),
        Stability::Unstable { witness } => {
            println!("unstable (witness path of {} transitions)", witness.len() - 1);
            for config in witness {
                println!("  {}", protocol.render_counts(config));
            }
        }
        Stability::LimitExceeded => {
            println!("limit-exceeded (more than {} configurations)", args.max_configs)
        }
    }
    if args.strict && !matches!(verdict, Stability::Stable) {
        return Err(CliError::runtime("verdict is not stable under --strict"));
    }
    Ok(())
}

#[derive(Args)]
struct ProtocolsArgs {
    #[command(subcommand)]
    action: ProtocolsAction,
}

#[derive(Subcommand)]
enum ProtocolsAction {
    /// List built-in protocol addresses
    List,
    /// Print a protocol as DSL text
    Emit {
        /// Protocol address: builtin:<name>?<params> or a DSL file path
        address: String,
    },
}

fn cmd_protocols(args: ProtocolsArgs) -> CliResult {
    match args.action {
        ProtocolsAction::List => {
            for (address, description) in builtins::builtin_catalog() {
                println!("{address}\t{description}");
            }
            Ok(())
        }
        ProtocolsAction::Emit { address } => {
            let protocol = load_protocol(&address)?;
            print!("{}", emit(&protocol));
            Ok(())
        }
    }
}
