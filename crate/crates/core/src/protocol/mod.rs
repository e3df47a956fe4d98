//! Protocol tuples, configurations, and transition application.
//!
//! A protocol is the tuple `(Q, Σ, I, O, δ)`: a finite state set, an input
//! alphabet with an input mapping, a binary output mapping, and a total
//! transition function on ordered state pairs. Pairs without an explicit rule
//! take the identity (dummy) transition. Populations are anonymous, so a
//! configuration is canonically a count vector over `Q`; the agent-indexed
//! form exists for identity-dependent audits.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::collections::BTreeSet;

use thiserror::Error;

pub mod dsl;
pub mod layers;

pub use dsl::{emit, parse_protocol, ParseError, ParseErrorKind};
pub use layers::{compute_layers, reachable_states, LayerStructure, RulePosition, Witness};

/// Index of a state within one protocol's state set.
///
/// States are totally ordered by declaration index. A `StateId` is only
/// meaningful for the protocol that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(u32);

impl StateId {
    pub(crate) fn new(index: usize) -> Self {
        StateId(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Name and parameter record attached to a protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProtocolMetadata {
    /// Short protocol name, e.g. `ladder`.
    pub name: String,
    /// Free-form parameters, e.g. `k=4`.
    pub params: BTreeMap<String, String>,
    /// Designated start state for all-agents-equal initial configurations.
    pub start: Option<StateId>,
}

/// A population protocol: the tuple `(Q, Σ, I, O, δ)` with a total
/// transition table over ordered state pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    names: Vec<String>,
    input_alphabet: Vec<String>,
    input_map: Vec<StateId>,
    outputs: Vec<bool>,
    table: Vec<(StateId, StateId)>,
    metadata: ProtocolMetadata,
}

impl ProtocolSpec {
    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.names.len()).map(StateId::new)
    }

    pub fn name(&self, s: StateId) -> &str {
        &self.names[s.index()]
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.names.iter().position(|n| n == name).map(StateId::new)
    }

    pub fn output(&self, s: StateId) -> bool {
        self.outputs[s.index()]
    }

    /// Applies `δ` to the ordered pair `(initiator, responder)`.
    pub fn transition(&self, initiator: StateId, responder: StateId) -> (StateId, StateId) {
        self.table[initiator.index() * self.names.len() + responder.index()]
    }

    /// True if `δ(a, b) = (a, b)`, the dummy transition.
    pub fn is_identity(&self, a: StateId, b: StateId) -> bool {
        self.transition(a, b) == (a, b)
    }

    pub fn input_alphabet(&self) -> impl Iterator<Item = (&str, StateId)> {
        self.input_alphabet
            .iter()
            .map(String::as_str)
            .zip(self.input_map.iter().copied())
    }

    pub fn metadata(&self) -> &ProtocolMetadata {
        &self.metadata
    }

    /// Start state from metadata, defaulting to the first declared state.
    pub fn start_state(&self) -> StateId {
        self.metadata.start.unwrap_or(StateId(0))
    }

    /// Configuration with all `n` agents in the protocol's start state.
    pub fn initial_configuration(&self, n: u64) -> Configuration {
        Configuration::uniform(self.num_states(), self.start_state(), n)
    }

    /// Builds a configuration from `(state name, count)` pairs.
    pub fn configuration(&self, pairs: &[(&str, u64)]) -> Result<Configuration, UnknownStateError> {
        let mut counts = vec![0u64; self.num_states()];
        for (name, count) in pairs {
            let s = self
                .state_id(name)
                .ok_or_else(|| UnknownStateError(name.to_string()))?;
            counts[s.index()] += count;
        }
        Ok(Configuration::new(counts))
    }

    /// Renders the count vector as `name=count` pairs for occupied states.
    pub fn render_counts(&self, config: &Configuration) -> String {
        let mut parts = Vec::new();
        for s in self.states() {
            let c = config.count(s);
            if c > 0 {
                parts.push(format!("{}={}", self.name(s), c));
            }
        }
        parts.join(" ")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown state `{0}`")]
pub struct UnknownStateError(pub String);

/// Constructs a [`ProtocolSpec`], rejecting conflicting declarations.
#[derive(Debug, Clone)]
pub struct ProtocolBuilder {
    names: Vec<String>,
    index: HashMap<String, StateId>,
    outputs: Vec<Option<bool>>,
    input_alphabet: Vec<String>,
    input_map: Vec<StateId>,
    table: Vec<Option<(StateId, StateId)>>,
    metadata: ProtocolMetadata,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("no states declared")]
    NoStates,
    #[error("duplicate state name `{0}`")]
    DuplicateState(String),
    #[error("duplicate rule for the ordered pair ({0}, {1})")]
    DuplicateRule(String, String),
    #[error("duplicate output assignment for state `{0}`")]
    DuplicateOutput(String),
    #[error("missing output assignment for state `{0}`")]
    MissingOutput(String),
    #[error("duplicate input symbol `{0}`")]
    DuplicateInput(String),
}

impl ProtocolBuilder {
    pub fn new<I, S>(states: I) -> Result<Self, BuildError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut builder = ProtocolBuilder {
            names: Vec::new(),
            index: HashMap::new(),
            outputs: Vec::new(),
            input_alphabet: Vec::new(),
            input_map: Vec::new(),
            table: Vec::new(),
            metadata: ProtocolMetadata::default(),
        };
        for name in states {
            builder.add_state(name.into())?;
        }
        if builder.names.is_empty() {
            return Err(BuildError::NoStates);
        }
        Ok(builder)
    }

    fn add_state(&mut self, name: String) -> Result<StateId, BuildError> {
        if self.index.contains_key(&name) {
            return Err(BuildError::DuplicateState(name));
        }
        let id = StateId::new(self.names.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.outputs.push(None);
        Ok(id)
    }

    pub fn state(&self, name: &str) -> Option<StateId> {
        self.index.get(name).copied()
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn output(&mut self, s: StateId, bit: bool) -> Result<&mut Self, BuildError> {
        if self.outputs[s.index()].is_some() {
            return Err(BuildError::DuplicateOutput(self.names[s.index()].clone()));
        }
        self.outputs[s.index()] = Some(bit);
        Ok(self)
    }

    pub fn input(&mut self, symbol: impl Into<String>, s: StateId) -> Result<&mut Self, BuildError> {
        let symbol = symbol.into();
        if self.input_alphabet.contains(&symbol) {
            return Err(BuildError::DuplicateInput(symbol));
        }
        self.input_alphabet.push(symbol);
        self.input_map.push(s);
        Ok(self)
    }

    /// Installs `δ(a, b) = (c, d)`. Exactly one rule may name each ordered pair.
    pub fn rule(
        &mut self,
        a: StateId,
        b: StateId,
        outcome: (StateId, StateId),
    ) -> Result<&mut Self, BuildError> {
        if self.table.is_empty() {
            self.table = vec![None; self.names.len() * self.names.len()];
        }
        let cell = &mut self.table[a.index() * self.names.len() + b.index()];
        if cell.is_some() {
            return Err(BuildError::DuplicateRule(
                self.names[a.index()].clone(),
                self.names[b.index()].clone(),
            ));
        }
        *cell = Some(outcome);
        Ok(self)
    }

    /// Installs the rule in both orders: `(a,b) → (c,d)` and `(b,a) → (d,c)`.
    ///
    /// For a same-state pair the two orders coincide; they are installed once
    /// when the outcome is order-symmetric and conflict otherwise.
    pub fn sym_rule(
        &mut self,
        a: StateId,
        b: StateId,
        outcome: (StateId, StateId),
    ) -> Result<&mut Self, BuildError> {
        self.rule(a, b, outcome)?;
        if a == b && outcome.0 == outcome.1 {
            return Ok(self);
        }
        self.rule(b, a, (outcome.1, outcome.0))?;
        Ok(self)
    }

    pub fn protocol_name(&mut self, name: impl Into<String>) -> &mut Self {
        self.metadata.name = name.into();
        self
    }

    pub fn param(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.metadata.params.insert(key.into(), value.to_string());
        self
    }

    pub fn start(&mut self, s: StateId) -> &mut Self {
        self.metadata.start = Some(s);
        self
    }

    /// Finishes the protocol: unspecified pairs default to the identity
    /// transition, and every state must have an output assignment.
    pub fn build(self) -> Result<ProtocolSpec, BuildError> {
        let q = self.names.len();
        let mut outputs = Vec::with_capacity(q);
        for (i, bit) in self.outputs.iter().enumerate() {
            match bit {
                Some(b) => outputs.push(*b),
                None => return Err(BuildError::MissingOutput(self.names[i].clone())),
            }
        }
        let mut table = Vec::with_capacity(q * q);
        for a in 0..q {
            for b in 0..q {
                let explicit = self
                    .table
                    .get(a * q + b)
                    .copied()
                    .flatten();
                table.push(explicit.unwrap_or((StateId::new(a), StateId::new(b))));
            }
        }
        Ok(ProtocolSpec {
            names: self.names,
            input_alphabet: self.input_alphabet,
            input_map: self.input_map,
            outputs,
            table,
            metadata: self.metadata,
        })
    }
}

/// Anonymous population snapshot: a count vector over the state set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Configuration {
    counts: Vec<u64>,
    n: u64,
}

impl Configuration {
    pub fn new(counts: Vec<u64>) -> Self {
        let n = counts.iter().sum();
        Configuration { counts, n }
    }

    /// All `n` agents in one state.
    pub fn uniform(num_states: usize, state: StateId, n: u64) -> Self {
        let mut counts = vec![0; num_states];
        counts[state.index()] = n;
        Configuration { counts, n }
    }

    pub fn count(&self, s: StateId) -> u64 {
        self.counts[s.index()]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total agent count; preserved by every transition application.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn occupied(&self) -> impl Iterator<Item = StateId> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, _)| StateId::new(i))
    }
}

/// Agent-indexed population for identity-dependent audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPopulation {
    agent_states: Vec<StateId>,
}

impl AgentPopulation {
    pub fn new(agent_states: Vec<StateId>) -> Self {
        AgentPopulation { agent_states }
    }

    /// Expands a count vector into agents sorted by state index.
    pub fn from_configuration(config: &Configuration) -> Self {
        let mut agent_states = Vec::with_capacity(config.n() as usize);
        for s in config.occupied() {
            for _ in 0..config.count(s) {
                agent_states.push(s);
            }
        }
        AgentPopulation { agent_states }
    }

    pub fn len(&self) -> usize {
        self.agent_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_states.is_empty()
    }

    pub fn state_of(&self, agent: usize) -> StateId {
        self.agent_states[agent]
    }

    pub(crate) fn set_state(&mut self, agent: usize, s: StateId) {
        self.agent_states[agent] = s;
    }

    pub fn to_configuration(&self, num_states: usize) -> Configuration {
        let mut counts = vec![0u64; num_states];
        for s in &self.agent_states {
            counts[s.index()] += 1;
        }
        Configuration::new(counts)
    }
}

/// The configuration does not permit drawing an ordered pair of distinct
/// agents in the requested states.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid draw: no ordered pair of distinct agents in states ({initiator}, {responder})")]
pub struct DrawError {
    pub initiator: String,
    pub responder: String,
}

/// Applies `δ(initiator, responder)` to one drawn pair of distinct agents.
///
/// Requires `counts[initiator] ≥ 1`, `counts[responder] ≥ 1`, and at least
/// two agents in the shared state when `initiator = responder`.
pub fn apply_rule(
    protocol: &ProtocolSpec,
    config: &Configuration,
    initiator: StateId,
    responder: StateId,
) -> Result<Configuration, DrawError> {
    let needed_same = initiator == responder;
    let ok = if needed_same {
        config.count(initiator) >= 2
    } else {
        config.count(initiator) >= 1 && config.count(responder) >= 1
    };
    if !ok {
        return Err(DrawError {
            initiator: protocol.name(initiator).to_string(),
            responder: protocol.name(responder).to_string(),
        });
    }
    let (out_a, out_b) = protocol.transition(initiator, responder);
    let mut counts = config.counts.clone();
    counts[initiator.index()] -= 1;
    counts[responder.index()] -= 1;
    counts[out_a.index()] += 1;
    counts[out_b.index()] += 1;
    Ok(Configuration {
        counts,
        n: config.n,
    })
}

/// The exact set of configurations reachable in one transition.
///
/// Includes `config` itself iff some applicable ordered pair takes the dummy
/// transition. Empty when `n < 2` (no ordered pair is drawable).
pub fn successors(protocol: &ProtocolSpec, config: &Configuration) -> BTreeSet<Configuration> {
    let mut out = BTreeSet::new();
    if config.n() < 2 {
        return out;
    }
    let occupied: Vec<StateId> = config.occupied().collect();
    for &a in &occupied {
        for &b in &occupied {
            if a == b && config.count(a) < 2 {
                continue;
            }
            out.insert(apply_rule(protocol, config, a, b).expect("applicable pair"));
        }
    }
    out
}

/// True iff the output mapping is constant over states with positive count.
pub fn is_consensus(protocol: &ProtocolSpec, config: &Configuration) -> bool {
    let mut occupied = config.occupied();
    let first = match occupied.next() {
        Some(s) => protocol.output(s),
        None => return true,
    };
    occupied.all(|s| protocol.output(s) == first)
}

/// Verdict of the explicit-state stable-consensus check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stability {
    /// Consensus, and every reachable configuration keeps the same output.
    Stable,
    /// Shortest path from the input configuration to one that breaks the
    /// output, both endpoints included.
    Unstable { witness: Vec<Configuration> },
    /// The explored set would pass the configuration limit.
    LimitExceeded,
}

/// Explicit-state BFS over count vectors checking that `config` is a
/// consensus and that no reachable configuration changes any agent's output.
pub fn is_stable_consensus(
    protocol: &ProtocolSpec,
    config: &Configuration,
    max_configs: usize,
) -> Stability {
    if !is_consensus(protocol, config) {
        return Stability::Unstable {
            witness: vec![config.clone()],
        };
    }
    let target = match config.occupied().next() {
        Some(s) => protocol.output(s),
        None => return Stability::Stable,
    };
    let mut parents: HashMap<Configuration, Option<Configuration>> = HashMap::new();
    parents.insert(config.clone(), None);
    let mut queue = VecDeque::new();
    queue.push_back(config.clone());
    while let Some(current) = queue.pop_front() {
        for succ in successors(protocol, &current) {
            if parents.contains_key(&succ) {
                continue;
            }
            if parents.len() + 1 > max_configs {
                return Stability::LimitExceeded;
            }
            let violates = succ.occupied().any(|s| protocol.output(s) != target);
            if violates {
                let mut path = vec![succ];
                let mut cursor = Some(current);
                while let Some(c) = cursor {
                    cursor = parents[&c].clone();
                    path.push(c);
                }
                path.reverse();
                return Stability::Unstable { witness: path };
            }
            parents.insert(succ.clone(), Some(current.clone()));
            queue.push_back(succ);
        }
    }
    Stability::Stable
}
