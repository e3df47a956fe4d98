//! The uniformly random scheduler and run drivers.
//!
//! Each scheduler call draws agent `a` and agent `b` independently and
//! uniformly from the whole population; if the draws coincide the call is a
//! no-op, otherwise the ordered pair `(a, b)` interacts with `a` as the
//! initiator. Conditioned on an interaction happening, every ordered pair of
//! distinct agents has probability `1/(n(n−1))`.
//!
//! Runs execute in one of two modes. Counts mode samples the drawn pair
//! directly from the count vector (categorical draws over state counts) and
//! never materializes agents. Agents mode keeps an agent-indexed state vector
//! so identity-dependent audits — which agents ever visited a state — are
//! possible. The ordered state-pair distribution of the two modes is exactly
//! equal.
//!
//! Time is measured in scheduler calls; realized interactions (calls that
//! were not no-ops) are recorded separately.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::protocol::{AgentPopulation, Configuration, ProtocolSpec, StateId};

/// Name of the pseudorandom algorithm behind [`RngState`], recorded in every
/// result. Fixed per release.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Deterministic pseudorandom stream: ChaCha8 keyed by a 64-bit seed.
///
/// Identical seeds produce identical streams. Bounded draws use widening
/// multiplication with rejection on the raw 64-bit output, so the mapping
/// from stream to indices is fixed by this crate, not by a dependency.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw from `[0, n)`.
    pub fn index(&mut self, n: u64) -> u64 {
        assert!(n > 0, "cannot draw from an empty range");
        let mut x = self.next_u64();
        let mut m = (x as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                x = self.next_u64();
                m = (x as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }
}

/// SplitMix64 step, used for stable seed derivation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-row seed for sweeps: a stable hash of the master seed and row index,
/// independent of worker count and completion order.
pub fn derive_seed(master_seed: u64, row_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(row_index ^ 0xA076_1D64_78BD_642F))
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("empty population")]
pub struct EmptyPopulation;

/// Agents mode draw: two independent uniform agent indices; a self-draw is a
/// no-op.
pub fn choose_pair_agents(
    rng: &mut RngState,
    n: u64,
) -> Result<Option<(u64, u64)>, EmptyPopulation> {
    if n == 0 {
        return Err(EmptyPopulation);
    }
    let a = rng.index(n);
    let b = rng.index(n);
    Ok(if a == b { None } else { Some((a, b)) })
}

/// Counts mode draw over the count vector.
///
/// The initiator state is categorical with probability `counts[s]/n`; with
/// probability exactly `1/n` the call is a no-op; otherwise the responder
/// state is categorical over the counts with the initiator's state
/// decremented, normalized by `n−1`. Realized by drawing two uniform indices
/// into the state-sorted virtual agent ordering, which produces that joint
/// distribution exactly.
pub fn choose_pair_counts(
    rng: &mut RngState,
    config: &Configuration,
) -> Result<Option<(StateId, StateId)>, EmptyPopulation> {
    let n = config.n();
    if n == 0 {
        return Err(EmptyPopulation);
    }
    Ok(draw_state_pair(rng, config.counts(), n))
}

fn draw_state_pair(rng: &mut RngState, counts: &[u64], n: u64) -> Option<(StateId, StateId)> {
    let a = rng.index(n);
    let b = rng.index(n);
    if a == b {
        return None;
    }
    Some((state_at(counts, a), state_at(counts, b)))
}

/// State of the `index`-th agent when agents are laid out sorted by state.
fn state_at(counts: &[u64], index: u64) -> StateId {
    let mut remaining = index;
    for (i, &count) in counts.iter().enumerate() {
        if remaining < count {
            return StateId::new(i);
        }
        remaining -= count;
    }
    unreachable!("index within population size")
}

/// Execution mode of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Anonymous count-vector population.
    Counts,
    /// Agent-indexed population; required for distinct-visitor audits.
    Agents,
}

/// When a run halts. Every condition is bounded by the run's call cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopCondition {
    /// Stop once this many scheduler calls were made.
    FixedCalls(u64),
    /// Stop once this many realized interactions were made.
    FixedInteractions(u64),
    /// Stop once the number of agents in output-1 states equals the target.
    LeaderCountIs(u64),
    /// Stop once any of the given states has ever been occupied.
    FirstStateEntered(BTreeSet<StateId>),
    /// Disjunction; the first satisfied branch names the stop reason.
    AnyOf(Vec<StopCondition>),
}

impl StopCondition {
    fn collect_entry_sets(&self, out: &mut Vec<BTreeSet<StateId>>) {
        match self {
            StopCondition::FirstStateEntered(set) => out.push(set.clone()),
            StopCondition::AnyOf(branches) => {
                for branch in branches {
                    branch.collect_entry_sets(out);
                }
            }
            _ => {}
        }
    }

    fn satisfied(
        &self,
        calls: u64,
        interactions: u64,
        leader_count: u64,
        entry_flags: &[bool],
        cursor: &mut usize,
    ) -> Option<StopReason> {
        match self {
            StopCondition::FixedCalls(target) => {
                (calls >= *target).then_some(StopReason::Calls)
            }
            StopCondition::FixedInteractions(target) => {
                (interactions >= *target).then_some(StopReason::Interactions)
            }
            StopCondition::LeaderCountIs(target) => {
                (leader_count == *target).then_some(StopReason::LeaderCount)
            }
            StopCondition::FirstStateEntered(_) => {
                let flag = entry_flags[*cursor];
                *cursor += 1;
                flag.then_some(StopReason::StateEntered)
            }
            StopCondition::AnyOf(branches) => {
                let mut hit = None;
                for branch in branches {
                    let verdict =
                        branch.satisfied(calls, interactions, leader_count, entry_flags, cursor);
                    if hit.is_none() {
                        hit = verdict;
                    }
                }
                hit
            }
        }
    }
}

/// Why a run halted. `Cap` means the safety cap on calls was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Calls,
    Interactions,
    LeaderCount,
    StateEntered,
    Cap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Calls => "calls",
            StopReason::Interactions => "interactions",
            StopReason::LeaderCount => "leader_count",
            StopReason::StateEntered => "state_entered",
            StopReason::Cap => "cap",
        }
    }
}

/// Probe cadence evaluated against the number of calls made.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeSchedule {
    /// Ticks at `start, start+step, start+2·step, …`.
    Linear { start: u64, step: u64 },
    /// Ticks at `start, start·factor, start·factor², …`.
    Geometric { start: u64, factor: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSpec {
    pub schedule: ProbeSchedule,
}

/// Count-vector snapshot taken at a probe tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeRecord {
    pub call: u64,
    pub counts: Vec<u64>,
}

/// One scheduler call. `interaction` is `None` for a no-op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    pub call: u64,
    pub interaction: Option<Interaction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub initiator: StateId,
    pub responder: StateId,
    pub out_initiator: StateId,
    pub out_responder: StateId,
    /// Drawn agent indices in agents mode.
    pub agents: Option<(u64, u64)>,
}

/// Initial population: anonymous counts, or explicit agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartState {
    Counts(Configuration),
    Agents(AgentPopulation),
}

/// Everything that determines a run. Two runs with equal configs produce
/// equal results.
#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub protocol: &'a ProtocolSpec,
    pub initial: StartState,
    pub mode: Mode,
    pub seed: u64,
    pub stop: StopCondition,
    pub probes: Vec<ProbeSpec>,
    /// Safety cap bounding every stop condition.
    pub max_calls: u64,
    /// States whose distinct visitors are tracked; requires agents mode.
    pub audit_states: Vec<StateId>,
    /// When set, the run records the first call at which every listed state
    /// is simultaneously nonempty.
    pub coverage_states: Option<BTreeSet<StateId>>,
    /// Per-state weights; the run records the maximum weight over all states
    /// ever occupied. Used to track the highest counter value reached.
    pub state_weights: Option<Vec<u64>>,
}

/// Default safety cap: `64·n²` calls, an order above the quadratic
/// stabilization scale of the leader election protocols.
pub fn default_max_calls(n: u64) -> u64 {
    64u64.saturating_mul(n.saturating_mul(n))
}

impl<'a> RunConfig<'a> {
    pub fn new(
        protocol: &'a ProtocolSpec,
        initial: Configuration,
        mode: Mode,
        seed: u64,
        stop: StopCondition,
    ) -> Self {
        let max_calls = default_max_calls(initial.n());
        RunConfig {
            protocol,
            initial: StartState::Counts(initial),
            mode,
            seed,
            stop,
            probes: Vec::new(),
            max_calls,
            audit_states: Vec::new(),
            coverage_states: None,
            state_weights: None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RunError {
    #[error("empty population")]
    EmptyPopulation,
    #[error("distinct-visitor audits require agents mode")]
    AgentsModeRequired,
    #[error("probe schedule does not advance")]
    InvalidProbe,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("state `{0}` was not audited in this run")]
pub struct AuditError(pub String);

/// Result of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub final_config: Configuration,
    pub calls_made: u64,
    pub interactions_made: u64,
    pub stop_reason: StopReason,
    pub seed: u64,
    pub rng_algorithm: &'static str,
    /// One record series per probe, in probe order.
    pub probes: Vec<Vec<ProbeRecord>>,
    visitor_counts: BTreeMap<StateId, u64>,
    pub first_full_coverage_call: Option<u64>,
    pub max_state_weight: Option<u64>,
}

impl RunResult {
    /// Number of distinct agents that ever occupied `state`, counting the
    /// initial configuration and every interaction.
    pub fn distinct_visitors(&self, state: StateId) -> Result<u64, AuditError> {
        self.visitor_counts
            .get(&state)
            .copied()
            .ok_or_else(|| AuditError(format!("state #{}", state.index())))
    }
}

struct Audit {
    state: StateId,
    bitmap: Vec<u64>,
    visitors: u64,
}

impl Audit {
    fn mark(&mut self, agent: u64) {
        let word = (agent / 64) as usize;
        let bit = 1u64 << (agent % 64);
        if self.bitmap[word] & bit == 0 {
            self.bitmap[word] |= bit;
            self.visitors += 1;
        }
    }
}

struct Coverage {
    watched: Vec<bool>,
    nonempty: usize,
    total: usize,
    first_full: Option<u64>,
}

/// In-flight run state; drive it with [`Run::step`] or [`run`].
pub struct Run<'a> {
    protocol: &'a ProtocolSpec,
    mode: Mode,
    counts: Vec<u64>,
    n: u64,
    agents: Option<AgentPopulation>,
    rng: RngState,
    calls_made: u64,
    interactions_made: u64,
    stop: StopCondition,
    max_calls: u64,
    leader_count: u64,
    entry_sets: Vec<BTreeSet<StateId>>,
    entry_flags: Vec<bool>,
    probe_schedules: Vec<(ProbeSchedule, Option<u64>)>,
    probe_records: Vec<Vec<ProbeRecord>>,
    audits: Vec<Audit>,
    coverage: Option<Coverage>,
    weights: Option<(Vec<u64>, u64)>,
    finished: Option<StopReason>,
}

impl ProbeSchedule {
    fn first(&self) -> Result<u64, RunError> {
        match self {
            ProbeSchedule::Linear { start, step } => {
                if *step == 0 {
                    return Err(RunError::InvalidProbe);
                }
                Ok(*start)
            }
            ProbeSchedule::Geometric { start, factor } => {
                if *start == 0 || *factor < 2 {
                    return Err(RunError::InvalidProbe);
                }
                Ok(*start)
            }
        }
    }

    fn next(&self, current: u64) -> Option<u64> {
        match self {
            ProbeSchedule::Linear { step, .. } => current.checked_add(*step),
            ProbeSchedule::Geometric { factor, .. } => current.checked_mul(*factor),
        }
    }
}

impl<'a> Run<'a> {
    pub fn new(config: RunConfig<'a>) -> Result<Self, RunError> {
        let (counts, agents) = match (&config.initial, config.mode) {
            (StartState::Counts(c), Mode::Counts) => (c.counts().to_vec(), None),
            (StartState::Counts(c), Mode::Agents) => (
                c.counts().to_vec(),
                Some(AgentPopulation::from_configuration(c)),
            ),
            (StartState::Agents(a), Mode::Counts) => (
                a.to_configuration(config.protocol.num_states()).counts().to_vec(),
                None,
            ),
            (StartState::Agents(a), Mode::Agents) => (
                a.to_configuration(config.protocol.num_states()).counts().to_vec(),
                Some(a.clone()),
            ),
        };
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(RunError::EmptyPopulation);
        }
        if !config.audit_states.is_empty() && config.mode != Mode::Agents {
            return Err(RunError::AgentsModeRequired);
        }
        let leader_count = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| config.protocol.output(StateId::new(*i)))
            .map(|(_, c)| *c)
            .sum();
        let mut entry_sets = Vec::new();
        config.stop.collect_entry_sets(&mut entry_sets);
        let entry_flags = entry_sets
            .iter()
            .map(|set| set.iter().any(|s| counts[s.index()] > 0))
            .collect();
        let mut audits = Vec::new();
        let words = (n as usize).div_ceil(64);
        for &state in &config.audit_states {
            audits.push(Audit {
                state,
                bitmap: vec![0; words],
                visitors: 0,
            });
        }
        if let (Some(population), false) = (&agents, audits.is_empty()) {
            for agent in 0..population.len() {
                let s = population.state_of(agent);
                for audit in &mut audits {
                    if audit.state == s {
                        audit.mark(agent as u64);
                    }
                }
            }
        }
        let coverage = config.coverage_states.as_ref().map(|set| {
            let mut watched = vec![false; counts.len()];
            for s in set {
                watched[s.index()] = true;
            }
            let nonempty = set.iter().filter(|s| counts[s.index()] > 0).count();
            let mut coverage = Coverage {
                watched,
                nonempty,
                total: set.len(),
                first_full: None,
            };
            if coverage.nonempty == coverage.total {
                coverage.first_full = Some(0);
            }
            coverage
        });
        let weights = config.state_weights.as_ref().map(|w| {
            let initial_max = counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, _)| w[i])
                .max()
                .unwrap_or(0);
            (w.clone(), initial_max)
        });
        let mut probe_schedules = Vec::new();
        let mut probe_records = Vec::new();
        for probe in &config.probes {
            probe_schedules.push((probe.schedule.clone(), Some(probe.schedule.first()?)));
            probe_records.push(Vec::new());
        }
        let mut run = Run {
            protocol: config.protocol,
            mode: config.mode,
            counts,
            n,
            agents,
            rng: RngState::new(config.seed),
            calls_made: 0,
            interactions_made: 0,
            stop: config.stop,
            max_calls: config.max_calls,
            leader_count,
            entry_sets,
            entry_flags,
            probe_schedules,
            probe_records,
            audits,
            coverage,
            weights,
            finished: None,
        };
        run.tick_probes();
        run.poll_stop();
        Ok(run)
    }

    pub fn calls_made(&self) -> u64 {
        self.calls_made
    }

    pub fn interactions_made(&self) -> u64 {
        self.interactions_made
    }

    pub fn leader_count(&self) -> u64 {
        self.leader_count
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.counts.clone())
    }

    pub fn finished(&self) -> Option<StopReason> {
        self.finished
    }

    /// Distinct visitors of an audited state so far; nondecreasing over the
    /// course of a run.
    pub fn distinct_visitors_so_far(&self, state: StateId) -> Option<u64> {
        self.audits
            .iter()
            .find(|a| a.state == state)
            .map(|a| a.visitors)
    }

    fn poll_stop(&mut self) {
        if self.finished.is_some() {
            return;
        }
        let mut cursor = 0;
        if let Some(reason) = self.stop.satisfied(
            self.calls_made,
            self.interactions_made,
            self.leader_count,
            &self.entry_flags,
            &mut cursor,
        ) {
            self.finished = Some(reason);
        } else if self.calls_made >= self.max_calls {
            self.finished = Some(StopReason::Cap);
        }
    }

    fn tick_probes(&mut self) {
        for (i, (schedule, next)) in self.probe_schedules.iter_mut().enumerate() {
            while let Some(tick) = *next {
                if tick > self.calls_made {
                    break;
                }
                self.probe_records[i].push(ProbeRecord {
                    call: self.calls_made,
                    counts: self.counts.clone(),
                });
                *next = schedule.next(tick);
            }
        }
    }

    fn bump(&mut self, s: StateId, delta: i64) {
        let count = &mut self.counts[s.index()];
        if delta > 0 {
            *count += delta as u64;
            if *count == delta as u64 {
                if let Some(cov) = &mut self.coverage {
                    if cov.watched[s.index()] {
                        cov.nonempty += 1;
                    }
                }
            }
        } else {
            *count -= (-delta) as u64;
            if *count == 0 {
                if let Some(cov) = &mut self.coverage {
                    if cov.watched[s.index()] {
                        cov.nonempty -= 1;
                    }
                }
            }
        }
        if self.protocol.output(s) {
            self.leader_count = (self.leader_count as i64 + delta) as u64;
        }
    }

    fn apply_transition(&mut self, a: StateId, b: StateId, c: StateId, d: StateId) {
        self.bump(a, -1);
        self.bump(b, -1);
        self.bump(c, 1);
        self.bump(d, 1);
        self.interactions_made += 1;
        for (i, set) in self.entry_sets.iter().enumerate() {
            if !self.entry_flags[i] && (set.contains(&c) || set.contains(&d)) {
                self.entry_flags[i] = true;
            }
        }
        if let Some((weights, max)) = &mut self.weights {
            *max = (*max).max(weights[c.index()]).max(weights[d.index()]);
        }
        if let Some(cov) = &mut self.coverage {
            if cov.first_full.is_none() && cov.nonempty == cov.total {
                cov.first_full = Some(self.calls_made);
            }
        }
    }

    /// One scheduler call. Returns `None` when the run already stopped.
    pub fn step(&mut self) -> Option<InteractionEvent> {
        if self.finished.is_some() {
            return None;
        }
        self.calls_made += 1;
        let interaction = match self.mode {
            Mode::Counts => draw_state_pair(&mut self.rng, &self.counts, self.n).map(|(sa, sb)| {
                let (sc, sd) = self.protocol.transition(sa, sb);
                self.apply_transition(sa, sb, sc, sd);
                Interaction {
                    initiator: sa,
                    responder: sb,
                    out_initiator: sc,
                    out_responder: sd,
                    agents: None,
                }
            }),
            Mode::Agents => choose_pair_agents(&mut self.rng, self.n)
                .expect("population is nonempty")
                .map(|(a, b)| {
                    let population = self.agents.as_mut().expect("agents mode");
                    let sa = population.state_of(a as usize);
                    let sb = population.state_of(b as usize);
                    let (sc, sd) = self.protocol.transition(sa, sb);
                    population.set_state(a as usize, sc);
                    population.set_state(b as usize, sd);
                    self.apply_transition(sa, sb, sc, sd);
                    for audit in &mut self.audits {
                        if audit.state == sc {
                            audit.mark(a);
                        }
                        if audit.state == sd {
                            audit.mark(b);
                        }
                    }
                    Interaction {
                        initiator: sa,
                        responder: sb,
                        out_initiator: sc,
                        out_responder: sd,
                        agents: Some((a, b)),
                    }
                }),
        };
        self.tick_probes();
        self.poll_stop();
        Some(InteractionEvent {
            call: self.calls_made,
            interaction,
        })
    }

    /// Runs to the stop condition and collects the result.
    pub fn finish(mut self) -> RunResult {
        while self.finished.is_none() {
            self.step();
        }
        let visitor_counts = self
            .audits
            .iter()
            .map(|a| (a.state, a.visitors))
            .collect();
        RunResult {
            final_config: Configuration::new(self.counts),
            calls_made: self.calls_made,
            interactions_made: self.interactions_made,
            stop_reason: self.finished.expect("finished"),
            seed: self.rng.seed(),
            rng_algorithm: RNG_ALGORITHM,
            probes: self.probe_records,
            visitor_counts,
            first_full_coverage_call: self.coverage.and_then(|c| c.first_full),
            max_state_weight: self.weights.map(|(_, max)| max),
        }
    }
}

/// Executes a run to completion. Deterministic in the full config.
pub fn run(config: RunConfig<'_>) -> Result<RunResult, RunError> {
    Ok(Run::new(config)?.finish())
}

#[cfg(test)]
mod tests;
