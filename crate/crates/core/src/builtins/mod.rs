//! Built-in protocol generators.
//!
//! The timer-based leader election protocol and its variants are generated
//! from the per-agent variable tuple (leader bit, timer bit, timer_set bit,
//! timer_reset bit, timer_count ∈ [0, k]); state names join the fields with
//! underscores, e.g. `L1_T0_TS1_TR0_C3`. The improved variant appends a
//! has_seen_timer bit (`_H0` / `_H1`). Only tuples satisfying the state
//! invariants are enumerated:
//!
//! - an agent is never both a leader and a timer,
//! - timer_set and timer_reset imply the leader bit,
//! - a positive timer_count implies leader and timer_set.
//!
//! The computation phase is the regime in which a leader has met timers
//! `k` times in a row; a leader's state is in the computation phase exactly
//! when its timer_count is at the threshold, and any reset returns it to the
//! initialization phase.
//!
//! Built-ins are addressed as `builtin:<name>?<key>=<value>`:
//! `builtin:protocol1?k=4`, `builtin:improved1?k=4`, `builtin:unbounded?cap=64`,
//! `builtin:ladder?m=4`, `builtin:elim`.

use thiserror::Error;

use crate::protocol::{ProtocolBuilder, ProtocolSpec, StateId};

/// Initialization vs. computation regime of a leader state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Computation,
}

/// Decoded variable tuple of a leader-election protocol state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeaderTimerState {
    pub leader: bool,
    pub timer: bool,
    pub timer_set: bool,
    pub timer_reset: bool,
    pub timer_count: u32,
    /// Present only in the improved variant.
    pub has_seen_timer: Option<bool>,
}

impl LeaderTimerState {
    pub fn blank() -> Self {
        LeaderTimerState {
            leader: false,
            timer: false,
            timer_set: false,
            timer_reset: false,
            timer_count: 0,
            has_seen_timer: None,
        }
    }

    pub fn timer() -> Self {
        LeaderTimerState {
            timer: true,
            ..Self::blank()
        }
    }

    /// The all-agents-initial state: a fresh leader with every other bit 0.
    pub fn fresh_leader() -> Self {
        LeaderTimerState {
            leader: true,
            ..Self::blank()
        }
    }

    fn leader_with(timer_set: bool, timer_reset: bool, timer_count: u32) -> Self {
        LeaderTimerState {
            leader: true,
            timer: false,
            timer_set,
            timer_reset,
            timer_count,
            has_seen_timer: None,
        }
    }

    fn with_hst(mut self, hst: bool) -> Self {
        self.has_seen_timer = Some(hst);
        self
    }

    fn base(mut self) -> Self {
        self.has_seen_timer = None;
        self
    }

    /// State-tuple invariants; invalid combinations are not states.
    pub fn is_valid(&self, max_count: u32) -> bool {
        if self.leader && self.timer {
            return false;
        }
        if (self.timer_set || self.timer_reset) && !self.leader {
            return false;
        }
        if self.timer_count > 0 && !(self.leader && self.timer_set) {
            return false;
        }
        self.timer_count <= max_count
    }

    /// A leader state is in the computation phase once its consecutive-timer
    /// counter has reached the threshold.
    pub fn phase(&self, threshold: u32) -> Phase {
        if self.leader && self.timer_count >= threshold {
            Phase::Computation
        } else {
            Phase::Init
        }
    }

    pub fn encode(&self) -> String {
        let mut name = format!(
            "L{}_T{}_TS{}_TR{}_C{}",
            u8::from(self.leader),
            u8::from(self.timer),
            u8::from(self.timer_set),
            u8::from(self.timer_reset),
            self.timer_count
        );
        if let Some(hst) = self.has_seen_timer {
            name.push_str(&format!("_H{}", u8::from(hst)));
        }
        name
    }

    pub fn decode(name: &str) -> Option<Self> {
        let mut fields = name.split('_');
        let bit = |field: Option<&str>, prefix: &str| -> Option<bool> {
            match field?.strip_prefix(prefix)? {
                "0" => Some(false),
                "1" => Some(true),
                _ => None,
            }
        };
        let leader = bit(fields.next(), "L")?;
        let timer = bit(fields.next(), "T")?;
        let timer_set = bit(fields.next(), "TS")?;
        let timer_reset = bit(fields.next(), "TR")?;
        let timer_count = fields.next()?.strip_prefix('C')?.parse().ok()?;
        let has_seen_timer = match fields.next() {
            Some(field) => Some(bit(Some(field), "H")?),
            None => None,
        };
        if fields.next().is_some() {
            return None;
        }
        Some(LeaderTimerState {
            leader,
            timer,
            timer_set,
            timer_reset,
            timer_count,
            has_seen_timer,
        })
    }
}

fn enumerate_states(max_count: u32, with_hst: bool) -> Vec<LeaderTimerState> {
    let mut out = Vec::new();
    for leader in [false, true] {
        for timer in [false, true] {
            for timer_set in [false, true] {
                for timer_reset in [false, true] {
                    for timer_count in 0..=max_count {
                        let state = LeaderTimerState {
                            leader,
                            timer,
                            timer_set,
                            timer_reset,
                            timer_count,
                            has_seen_timer: None,
                        };
                        if !state.is_valid(max_count) {
                            continue;
                        }
                        if with_hst {
                            out.push(state.with_hst(false));
                            out.push(state.with_hst(true));
                        } else {
                            out.push(state);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Shared table for the timer-based leader election protocol. `threshold` is
/// the value at which the consecutive-timer counter stops growing: the phase
/// threshold `k`, or the saturation cap of the unbounded variant.
fn leader_timer_protocol(threshold: u32, name: &str, param_key: &str) -> ProtocolSpec {
    let states = enumerate_states(threshold, false);
    let mut builder =
        ProtocolBuilder::new(states.iter().map(LeaderTimerState::encode)).expect("states");
    // ProtocolBuilder assigns ids in declaration order.
    let id = |s: LeaderTimerState| -> StateId {
        let index = states
            .iter()
            .position(|x| *x == s)
            .expect("enumerated state");
        StateId::new(index)
    };
    for s in &states {
        builder.output(id(*s), s.leader).expect("single assignment");
    }
    let blank = id(LeaderTimerState::blank());
    let timer = id(LeaderTimerState::timer());
    let fresh = id(LeaderTimerState::fresh_leader());
    let leader = |ts: bool, tr: bool, c: u32| id(LeaderTimerState::leader_with(ts, tr, c));

    // 1. A fresh leader marks the first blank agent it meets as a timer.
    builder
        .sym_rule(fresh, blank, (leader(true, false, 0), timer))
        .expect("rule 1");
    // 2. A leader that has marked a timer counts consecutive timer meetings;
    //    the counter holds at the threshold.
    for c in 0..threshold {
        builder
            .sym_rule(
                leader(true, false, c),
                timer,
                (leader(true, false, c + 1), timer),
            )
            .expect("rule 2");
    }
    // 3. Two leaders meet, the responder fresh: the initiator wins, restarts
    //    its count, and marks the loser as a timer iff it had none marked.
    // 4. Two leaders meet, the responder having marked a timer: the winner
    //    raises timer_reset and the loser is blanked entirely.
    for &x in &states {
        if !(x.leader && !x.timer_reset) {
            continue;
        }
        let loser_of_3 = if x.timer_set {
            blank
        } else {
            timer
        };
        builder
            .rule(id(x), fresh, (leader(true, false, 0), loser_of_3))
            .expect("rule 3");
        for c2 in 0..=threshold {
            builder
                .rule(
                    id(x),
                    leader(true, false, c2),
                    (leader(x.timer_set, true, 0), blank),
                )
                .expect("rule 4");
        }
    }
    // 5. A timer_reset leader turns the next timer it meets back to blank.
    for ts in [false, true] {
        builder
            .sym_rule(
                leader(ts, true, 0),
                timer,
                (leader(ts, false, 0), blank),
            )
            .expect("rule 5");
    }
    // 6. A timer_reset leader resets the counter of a counting leader.
    for c1 in 0..=threshold {
        for ts2 in [false, true] {
            builder
                .sym_rule(
                    leader(true, false, c1),
                    leader(ts2, true, 0),
                    (leader(true, false, 0), leader(ts2, true, 0)),
                )
                .expect("rule 6");
        }
    }
    // 7. Meeting a plain blank agent also resets the counter.
    for c1 in 0..=threshold {
        builder
            .sym_rule(
                leader(true, false, c1),
                blank,
                (leader(true, false, 0), blank),
            )
            .expect("rule 7");
    }
    builder.protocol_name(name);
    builder.param(param_key, threshold);
    let start = builder.state(&LeaderTimerState::fresh_leader().encode()).expect("fresh");
    builder.start(start);
    builder.build().expect("complete")
}

/// The timer-based leader election protocol with phase threshold `k`.
///
/// All agents start as fresh leaders. A leader whose consecutive-timer
/// counter reaches `k` enters the computation phase; meeting another leader
/// restarts the initialization phase.
pub fn protocol_1(k: u32) -> ProtocolSpec {
    assert!(k >= 1, "threshold k must be positive");
    leader_timer_protocol(k, "protocol1", "k")
}

/// [`protocol_1`] without the computation phase: the counter saturates at
/// `cap` and the run is observed until a single leader remains.
pub fn unbounded_counter_variant(cap: u32) -> ProtocolSpec {
    assert!(cap >= 1, "cap must be positive");
    leader_timer_protocol(cap, "unbounded", "cap")
}

/// [`protocol_1`] extended with a has_seen_timer bit.
///
/// Any agent interacting with a timer sets the bit on top of the base rule's
/// effect. An agent whose bit is set removes the leader bit from leaders
/// whose bit is clear; the eliminated leader is blanked entirely, including
/// the bit, and the other agent is unchanged. The elimination takes
/// precedence over the base rules and applies in both orders.
pub fn improved_protocol_1(k: u32) -> ProtocolSpec {
    assert!(k >= 1, "threshold k must be positive");
    let base = leader_timer_protocol(k, "protocol1", "k");
    let states = enumerate_states(k, true);
    let mut builder =
        ProtocolBuilder::new(states.iter().map(LeaderTimerState::encode)).expect("states");
    for s in &states {
        let sid = builder.state(&s.encode()).expect("enumerated");
        builder.output(sid, s.leader).expect("single assignment");
    }
    let id = |builder: &ProtocolBuilder, s: LeaderTimerState| -> StateId {
        builder.state(&s.encode()).expect("enumerated state")
    };
    let blanked = LeaderTimerState::blank().with_hst(false);
    for &x in &states {
        for &y in &states {
            let x_hst = x.has_seen_timer.expect("improved state");
            let y_hst = y.has_seen_timer.expect("improved state");
            let outcome = if x_hst && y.leader && !y_hst {
                (x, blanked)
            } else if y_hst && x.leader && !x_hst {
                (blanked, y)
            } else {
                let bx = base.state_id(&x.base().encode()).expect("base state");
                let by = base.state_id(&y.base().encode()).expect("base state");
                let (bx_out, by_out) = base.transition(bx, by);
                let decode = |s: StateId| {
                    LeaderTimerState::decode(base.name(s)).expect("base encoding")
                };
                (
                    decode(bx_out).with_hst(x_hst || y.timer),
                    decode(by_out).with_hst(y_hst || x.timer),
                )
            };
            if outcome == (x, y) {
                continue;
            }
            let pair = (id(&builder, outcome.0), id(&builder, outcome.1));
            let (xid, yid) = (id(&builder, x), id(&builder, y));
            builder.rule(xid, yid, pair).expect("one rule per pair");
        }
    }
    builder.protocol_name("improved1");
    builder.param("k", k);
    let start = builder
        .state(&LeaderTimerState::fresh_leader().with_hst(false).encode())
        .expect("fresh");
    builder.start(start);
    builder.build().expect("complete")
}

/// Fixture chain `s0 … s_{m-1}` with `δ(s_i, s_i) = (s_{i+1}, s_i)`.
///
/// Every state keeps producing the next one without being consumed, so each
/// layer of the reachability chain adds exactly one state.
pub fn ladder_protocol(m: u32) -> ProtocolSpec {
    assert!(m >= 1, "ladder needs at least one state");
    let names: Vec<String> = (0..m).map(|i| format!("s{i}")).collect();
    let mut builder = ProtocolBuilder::new(names).expect("states");
    for i in 0..m {
        let s = builder.state(&format!("s{i}")).expect("declared");
        builder.output(s, true).expect("single assignment");
    }
    for i in 0..m.saturating_sub(1) {
        let lower = builder.state(&format!("s{i}")).expect("declared");
        let upper = builder.state(&format!("s{}", i + 1)).expect("declared");
        builder.rule(lower, lower, (upper, lower)).expect("one rule");
    }
    builder.protocol_name("ladder");
    builder.param("m", m);
    let start = builder.state("s0").expect("declared");
    builder.start(start);
    builder.build().expect("complete")
}

/// Baseline leader elimination: `δ(L, L) = (L, F)`, the initiator winning.
pub fn pairwise_elimination() -> ProtocolSpec {
    let mut builder = ProtocolBuilder::new(["L", "F"]).expect("states");
    let l = builder.state("L").expect("declared");
    let f = builder.state("F").expect("declared");
    builder.output(l, true).expect("single assignment");
    builder.output(f, false).expect("single assignment");
    builder.rule(l, l, (l, f)).expect("one rule");
    builder.protocol_name("elim");
    builder.start(l);
    builder.build().expect("complete")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddressError {
    #[error("`{0}` is not a builtin address (expected builtin:<name>?<params>)")]
    NotBuiltin(String),
    #[error("unknown builtin protocol `{0}`")]
    UnknownBuiltin(String),
    #[error("unknown parameter `{key}` for builtin `{name}`")]
    UnknownParam { name: String, key: String },
    #[error("parameter `{key}` must be a positive integer, got `{value}`")]
    BadParam { key: String, value: String },
}

fn positive_param(
    params: &[(String, String)],
    key: &str,
    default: u32,
) -> Result<u32, AddressError> {
    match params.iter().find(|(k, _)| k == key) {
        Some((_, value)) => match value.parse::<u32>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(AddressError::BadParam {
                key: key.to_string(),
                value: value.clone(),
            }),
        },
        None => Ok(default),
    }
}

/// Resolves a `builtin:<name>?<key>=<value>` address to a generated protocol.
pub fn resolve_builtin(address: &str) -> Result<ProtocolSpec, AddressError> {
    let rest = address
        .strip_prefix("builtin:")
        .ok_or_else(|| AddressError::NotBuiltin(address.to_string()))?;
    let (name, query) = match rest.split_once('?') {
        Some((name, query)) => (name, query),
        None => (rest, ""),
    };
    let mut params = Vec::new();
    for part in query.split('&').filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| AddressError::BadParam {
            key: part.to_string(),
            value: String::new(),
        })?;
        params.push((key.to_string(), value.to_string()));
    }
    let allowed: &[&str] = match name {
        "protocol1" | "improved1" => &["k"],
        "unbounded" => &["cap"],
        "ladder" => &["m"],
        "elim" => &[],
        _ => return Err(AddressError::UnknownBuiltin(name.to_string())),
    };
    if let Some((key, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(AddressError::UnknownParam {
            name: name.to_string(),
            key: key.clone(),
        });
    }
    Ok(match name {
        "protocol1" => protocol_1(positive_param(&params, "k", 4)?),
        "improved1" => improved_protocol_1(positive_param(&params, "k", 4)?),
        "unbounded" => unbounded_counter_variant(positive_param(&params, "cap", 64)?),
        "ladder" => ladder_protocol(positive_param(&params, "m", 4)?),
        "elim" => pairwise_elimination(),
        _ => unreachable!("validated above"),
    })
}

/// Builtin names with their parameters and defaults, for listings.
pub fn builtin_catalog() -> &'static [(&'static str, &'static str)] {
    &[
        ("builtin:protocol1?k=4", "timer-based leader election with phase threshold k"),
        ("builtin:improved1?k=4", "protocol1 extended with a has_seen_timer bit"),
        ("builtin:unbounded?cap=64", "protocol1 without a phase; counter saturates at cap"),
        ("builtin:ladder?m=4", "chain fixture s0..s_{m-1}, each state producing the next"),
        ("builtin:elim", "pairwise leader elimination baseline"),
    ]
}

/// States in the computation phase: leader states whose counter sits at the
/// phase threshold. Empty for protocols without a threshold parameter.
pub fn computation_states(protocol: &ProtocolSpec) -> Vec<StateId> {
    let meta = protocol.metadata();
    let threshold: u32 = match meta.params.get("k").and_then(|v| v.parse().ok()) {
        Some(k) => k,
        None => return Vec::new(),
    };
    protocol
        .states()
        .filter(|&s| {
            LeaderTimerState::decode(protocol.name(s))
                .map(|state| state.phase(threshold) == Phase::Computation)
                .unwrap_or(false)
        })
        .collect()
}

/// Per-state timer_count values, for protocols whose state names decode.
pub fn timer_count_weights(protocol: &ProtocolSpec) -> Option<Vec<u64>> {
    protocol
        .states()
        .map(|s| LeaderTimerState::decode(protocol.name(s)).map(|d| u64::from(d.timer_count)))
        .collect()
}
