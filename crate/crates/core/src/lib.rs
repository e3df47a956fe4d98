//! Population protocol simulation and analysis.
//!
//! A population protocol is a network of anonymous finite-state agents that
//! update their states through pairwise interactions chosen by a scheduler.
//! This crate provides:
//!
//! - [`protocol`] — the core data model: protocol tuples, configurations,
//!   transition application, a line-oriented protocol DSL, reachability
//!   layers, and explicit-state stable-consensus checking for small
//!   populations.
//! - [`scheduler`] — the uniformly random scheduler (two independent uniform
//!   agent draws per call, a self-draw being a no-op), run drivers, probe
//!   metrics, and per-agent distinct-visitor audits.
//! - [`builtins`] — generators for the built-in protocols: the timer-based
//!   leader election protocol and its variants, plus small fixture protocols.
//! - [`bounds`] — closed-form occupancy lower bounds: per-window fraction
//!   bounds, survivor shrinkage, failure-probability coefficients, and the
//!   linear call budget after which every reachable state holds a constant
//!   fraction of agents. Generic over the scalar type; exact rational
//!   arithmetic is the default.
//! - [`harness`] — seeded experiment sweeps with deterministic CSV output and
//!   log-log scaling fits.

pub mod bounds;
pub mod builtins;
pub mod harness;
pub mod protocol;
pub mod scheduler;

/// Exact scalar used for bound arithmetic: arbitrary-precision rationals.
pub type Rational = num_rational::BigRational;

/// Fraction pair over exact rationals.
pub type RationalPair = bounds::FractionPair<Rational>;

/// Bound report over exact rationals.
pub type RationalReport = bounds::BoundReport<Rational>;

/// Fraction pair over `f64`, for quick approximate evaluation.
pub type ApproxPair = bounds::FractionPair<f64>;

/// Bound report over `f64`.
pub type ApproxReport = bounds::BoundReport<f64>;
