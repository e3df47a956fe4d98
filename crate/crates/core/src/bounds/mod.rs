//! Closed-form occupancy lower bounds.
//!
//! For a pair of states holding fractions `c_i` and `c_j` of the population
//! with a transition producing a new state `s`, a window of
//! `(1/4)·min(c_i, c_j)·n` scheduler calls leaves at least a constant
//! fraction of agents in `s`, while every already-populated state keeps a
//! `(1 − 3t)` share of its untouched agents. Chaining one window per newly
//! reachable state over the reachability layers yields a per-state fraction
//! table and a total call budget `T_calls` linear in `n`.
//!
//! All arithmetic is generic over the scalar type: exact rationals for golden
//! values and reports, `f64` for quick evaluation. Fractions are converted to
//! agent counts by rounding down.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{FromPrimitive, Num, ToPrimitive};

use crate::protocol::{LayerStructure, ProtocolSpec, StateId};

/// Scalar for bound arithmetic. Implemented for `f64` and for
/// arbitrary-precision rationals.
pub trait Scalar:
    Clone + PartialOrd + Num + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display
{
    /// Largest integer-valued scalar `≤ self`.
    fn floor_int(&self) -> Self;
    /// Smallest integer-valued scalar `≥ self`.
    fn ceil_int(&self) -> Self;
}

impl Scalar for f64 {
    fn floor_int(&self) -> f64 {
        (*self).floor()
    }
    fn ceil_int(&self) -> f64 {
        (*self).ceil()
    }
}

impl Scalar for num_rational::BigRational {
    fn floor_int(&self) -> Self {
        self.floor()
    }
    fn ceil_int(&self) -> Self {
        self.ceil()
    }
}

/// The scalar `numerator / denominator`.
pub fn ratio<T: Scalar>(numerator: u64, denominator: u64) -> T {
    T::from_u64(numerator).expect("small constant") / T::from_u64(denominator).expect("small constant")
}

fn min_of<T: Scalar>(a: &T, b: &T) -> T {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Decimal rendering at 12 significant digits.
pub fn decimal<T: Scalar>(value: &T) -> String {
    match value.to_f64() {
        Some(v) => format!("{v:.11e}"),
        None => "~".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundError<T> {
    /// A fraction fell outside its valid range.
    InvalidFraction(T),
    /// The window period `t` was negative.
    InvalidWindow(T),
    /// The closed form is nonpositive; carries the raw value and, during
    /// propagation, the offending window index.
    Vacuous { value: T, window: Option<usize> },
    /// Propagation pre-condition: the initial fractions must be positive
    /// exactly on the first layer.
    MissingInitialFraction(StateId),
    UnexpectedInitialFraction(StateId),
}

impl<T> BoundError<T> {
    fn in_window(self, window: usize) -> Self {
        match self {
            BoundError::Vacuous { value, .. } => BoundError::Vacuous {
                value,
                window: Some(window),
            },
            other => other,
        }
    }

    /// Window index attached to a vacuous-bound error, if any.
    pub fn window(&self) -> Option<usize> {
        match self {
            BoundError::Vacuous { window, .. } => *window,
            _ => None,
        }
    }
}

impl<T: fmt::Display> fmt::Display for BoundError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundError::InvalidFraction(v) => write!(f, "fraction {v} outside its valid range"),
            BoundError::InvalidWindow(v) => write!(f, "window period {v} is negative"),
            BoundError::Vacuous {
                value,
                window: Some(w),
            } => write!(f, "vacuous bound in window {w}: closed form evaluates to {value}"),
            BoundError::Vacuous {
                value,
                window: None,
            } => write!(f, "vacuous bound: closed form evaluates to {value}"),
            BoundError::MissingInitialFraction(s) => {
                write!(f, "no initial fraction for first-layer state #{}", s.index())
            }
            BoundError::UnexpectedInitialFraction(s) => {
                write!(f, "positive initial fraction outside the first layer (state #{})", s.index())
            }
        }
    }
}

impl<T: fmt::Display + fmt::Debug> std::error::Error for BoundError<T> {}

/// Fractions of the population held by the two source states of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionPair<T> {
    c_i: T,
    c_j: T,
}

impl<T: Scalar> FractionPair<T> {
    /// Both fractions must lie strictly between 0 and 1.
    pub fn new(c_i: T, c_j: T) -> Result<Self, BoundError<T>> {
        for value in [&c_i, &c_j] {
            if *value <= T::zero() || *value >= T::one() {
                return Err(BoundError::InvalidFraction(value.clone()));
            }
        }
        Ok(FractionPair { c_i, c_j })
    }

    pub fn c_i(&self) -> &T {
        &self.c_i
    }

    pub fn c_j(&self) -> &T {
        &self.c_j
    }

    pub fn min(&self) -> T {
        min_of(&self.c_i, &self.c_j)
    }
}

/// Scheduler calls per window, as a coefficient of `n`: `(1/4)·min(c_i, c_j)`.
pub fn window_calls_coefficient<T: Scalar>(pair: &FractionPair<T>) -> T {
    ratio::<T>(1, 4) * pair.min()
}

/// Which closed form of the window fraction to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFractionForm {
    /// `c · (3/5 − (3/4)·min(c_i, c_j))`, positive only for `min < 4/5`.
    Exact,
    /// `(9/40) · c`, the floor of the exact form over `min ≤ 1/2`.
    Floor,
}

/// `c = (5/256)·c_i·c_j·min(c_i, c_j)`.
fn window_scale<T: Scalar>(pair: &FractionPair<T>) -> T {
    ratio::<T>(5, 256) * pair.c_i.clone() * pair.c_j.clone() * pair.min()
}

/// Fraction of agents guaranteed in the produced state at the window's end.
pub fn window_fraction<T: Scalar>(
    pair: &FractionPair<T>,
    form: WindowFractionForm,
) -> Result<T, BoundError<T>> {
    let c = window_scale(pair);
    match form {
        WindowFractionForm::Floor => Ok(ratio::<T>(9, 40) * c),
        WindowFractionForm::Exact => {
            let margin = ratio::<T>(3, 5) - ratio::<T>(3, 4) * pair.min();
            let value = c * margin.clone();
            if margin <= T::zero() {
                return Err(BoundError::Vacuous {
                    value,
                    window: None,
                });
            }
            Ok(value)
        }
    }
}

/// Surviving-fraction lower bound after a `t·n`-call window: `(1 − 3t)·c_i`.
///
/// `c_i` may be 1 (a fully populated state); `t` must stay below 1/3 for the
/// bound to be positive.
pub fn survivor_fraction<T: Scalar>(c_i: &T, t: &T) -> Result<T, BoundError<T>> {
    if *c_i <= T::zero() || *c_i > T::one() {
        return Err(BoundError::InvalidFraction(c_i.clone()));
    }
    if *t < T::zero() {
        return Err(BoundError::InvalidWindow(t.clone()));
    }
    let factor = T::one() - ratio::<T>(3, 1) * t.clone();
    let value = factor.clone() * c_i.clone();
    if factor <= T::zero() {
        return Err(BoundError::Vacuous {
            value,
            window: None,
        });
    }
    Ok(value)
}

/// Failure-probability coefficients of one window. The success probability of
/// the window is at least `(1 − const_2/n)(1 − const_3/n) − const_4/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureCoefficients<T> {
    pub const_2: T,
    pub const_3: T,
    pub const_4: T,
    /// Smallest integer population for which the success bound is positive
    /// and stays positive.
    pub min_population: T,
}

impl<T: Scalar> FailureCoefficients<T> {
    /// Evaluates the success-probability lower bound at population size `n`.
    pub fn success_bound(&self, n: &T) -> T {
        (T::one() - self.const_2.clone() / n.clone())
            * (T::one() - self.const_3.clone() / n.clone())
            - self.const_4.clone() / n.clone()
    }
}

/// Coefficients for one window over `pair`, with `survivors` holding the
/// current fractions of the already-populated states. Values are reported
/// raw, even when they exceed 1.
pub fn failure_coefficients<T: Scalar>(
    pair: &FractionPair<T>,
    survivors: &[T],
) -> FailureCoefficients<T> {
    let min = pair.min();
    let product = pair.c_i.clone() * pair.c_j.clone();
    let const_3 = ratio::<T>(1024, 1) * (T::one() - ratio::<T>(1, 16) * product.clone())
        / (min.clone() * product);
    let c = window_scale(pair);
    let const_2 = const_3.clone() + const_3.clone()
        + ratio::<T>(8, 1) * (T::one() - c.clone()) / (c * min.clone());
    let t = window_calls_coefficient(pair);
    let mut const_4 = T::zero();
    for fraction in survivors {
        const_4 = const_4
            + ratio::<T>(2, 1) * (T::one() - fraction.clone()) / (t.clone() * fraction.clone());
    }
    let min_population = smallest_positive_population(&const_2, &const_3, &const_4);
    FailureCoefficients {
        const_2,
        const_3,
        const_4,
        min_population,
    }
}

/// Smallest integer `n ≥ 1` past which `(1 − a/n)(1 − b/n) − d/n` is positive
/// and both factors are positive. Multiplying by `n²` this is the quadratic
/// `f(n) = n² − (a + b + d)·n + ab`, whose larger root lies in
/// `[max(a, b), a + b + d]`; the answer is the first integer beyond it.
fn smallest_positive_population<T: Scalar>(a: &T, b: &T, d: &T) -> T {
    let sum = a.clone() + b.clone() + d.clone();
    let f = |n: &T| -> T {
        n.clone() * n.clone() - sum.clone() * n.clone() + a.clone() * b.clone()
    };
    let mut lo = if a >= b { a.clone() } else { b.clone() }.ceil_int();
    if lo < T::one() {
        lo = T::one();
    }
    if f(&lo) > T::zero() {
        return lo;
    }
    let mut hi = sum.ceil_int() + T::one();
    while hi.clone() - lo.clone() > T::one() {
        let mid = ((lo.clone() + hi.clone()) * ratio::<T>(1, 2)).ceil_int();
        if f(&mid) > T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Population threshold at which a fraction bound promises at least one
/// agent: the ceiling of its reciprocal.
pub fn min_population_threshold<T: Scalar>(fraction: &T) -> Result<T, BoundError<T>> {
    if *fraction <= T::zero() || *fraction > T::one() {
        return Err(BoundError::InvalidFraction(fraction.clone()));
    }
    Ok((T::one() / fraction.clone()).ceil_int())
}

/// Best-case three-layer compound fraction: the floor-form window fraction at
/// `(1/2, 1/2)`, cubed. Its reciprocal exceeds 6·10⁹.
pub fn third_layer_compound_fraction<T: Scalar>() -> T {
    let pair = FractionPair::new(ratio::<T>(1, 2), ratio::<T>(1, 2)).expect("valid pair");
    let f = window_fraction(&pair, WindowFractionForm::Floor).expect("floor form is total");
    f.clone() * f.clone() * f
}

/// One propagation window: the bound for one newly reachable state.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport<T> {
    pub index: usize,
    pub layer: usize,
    pub new_state: StateId,
    pub initiator: StateId,
    pub responder: StateId,
    /// True when the witness pair shares a state and its fraction was split
    /// into two equal disjoint halves before applying the window bound.
    pub same_state_split: bool,
    pub pair: FractionPair<T>,
    pub call_coefficient: T,
    pub fraction_exact: T,
    pub fraction_floor: T,
    pub failure: FailureCoefficients<T>,
    pub fractions_before: Vec<(StateId, T)>,
    pub fractions_after: Vec<(StateId, T)>,
}

/// Propagated per-state fraction bounds and the total call budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    pub windows: Vec<WindowReport<T>>,
    /// Coefficient of `n` in the total call budget `T_calls`.
    pub t_calls_coefficient: T,
    pub final_fractions: BTreeMap<StateId, T>,
}

impl<T: Scalar> BoundReport<T> {
    /// Population threshold for at least one expected agent in `state`.
    pub fn min_population(&self, state: StateId) -> Option<T> {
        let fraction = self.final_fractions.get(&state)?;
        min_population_threshold(fraction).ok()
    }

    /// Guaranteed agent count at population `n`, rounding the fraction down.
    pub fn count_at(&self, state: StateId, n: u64) -> Option<T> {
        let fraction = self.final_fractions.get(&state)?;
        Some((fraction.clone() * T::from_u64(n).expect("population size")).floor_int())
    }

    /// Structured text rendering: one block per window and a footer with the
    /// call budget and per-state thresholds. With `at`, also the concrete
    /// counts promised at that population size.
    pub fn render(&self, protocol: &ProtocolSpec, at: Option<u64>) -> String {
        let mut out = String::new();
        let name = |s: StateId| protocol.name(s).to_string();
        for w in &self.windows {
            out.push_str(&format!(
                "window {}: layer {} adds {} via ({}, {})\n",
                w.index,
                w.layer,
                name(w.new_state),
                name(w.initiator),
                name(w.responder),
            ));
            out.push_str(&format!(
                "  pair fractions: c_i = {} (~{}), c_j = {} (~{}){}\n",
                w.pair.c_i(),
                decimal(w.pair.c_i()),
                w.pair.c_j(),
                decimal(w.pair.c_j()),
                if w.same_state_split {
                    "  [same-state split]"
                } else {
                    ""
                },
            ));
            out.push_str(&format!(
                "  calls coefficient: {} (~{})\n",
                w.call_coefficient,
                decimal(&w.call_coefficient)
            ));
            out.push_str(&format!(
                "  new-state fraction exact: {} (~{})\n",
                w.fraction_exact,
                decimal(&w.fraction_exact)
            ));
            out.push_str(&format!(
                "  new-state fraction floor: {} (~{})\n",
                w.fraction_floor,
                decimal(&w.fraction_floor)
            ));
            out.push_str(&format!(
                "  failure coefficients: const_2 ~{}, const_3 ~{}, const_4 ~{}\n",
                decimal(&w.failure.const_2),
                decimal(&w.failure.const_3),
                decimal(&w.failure.const_4)
            ));
            out.push_str(&format!(
                "  success bound positive from n >= {}\n",
                w.failure.min_population
            ));
            for (label, fractions) in [
                ("before", &w.fractions_before),
                ("after", &w.fractions_after),
            ] {
                let rendered: Vec<String> = fractions
                    .iter()
                    .map(|(s, f)| format!("{} ~{}", name(*s), decimal(f)))
                    .collect();
                out.push_str(&format!("  fractions {label}: {}\n", rendered.join(", ")));
            }
        }
        out.push_str(&format!(
            "T_calls coefficient: {} (~{}); T_calls = {} * n scheduler calls\n",
            self.t_calls_coefficient,
            decimal(&self.t_calls_coefficient),
            decimal(&self.t_calls_coefficient),
        ));
        for (state, fraction) in &self.final_fractions {
            let threshold = self
                .min_population(*state)
                .map(|t| t.to_string())
                .unwrap_or_else(|| "~".to_string());
            out.push_str(&format!(
                "state {}: fraction {} (~{}), >=1 expected agent from n >= {}\n",
                name(*state),
                fraction,
                decimal(fraction),
                threshold
            ));
            if let Some(n) = at {
                let count = self.count_at(*state, n).expect("state present");
                let clears = count >= T::one();
                out.push_str(&format!(
                    "  at n = {n}: {count} agents promised{}\n",
                    if clears { "" } else { "  [below 1 expected agent]" }
                ));
            }
        }
        out
    }
}

/// Chains the window bounds over the reachability layers, one window per
/// newly reachable state in witness order.
///
/// For each new state the window uses the current fractions of its witness
/// pair — halved equally when the pair shares a state, since the window's
/// marking argument needs two disjoint agent groups — and every
/// already-populated state shrinks by the untouched-survivor factor.
pub fn propagate_bounds<T: Scalar>(
    layers: &LayerStructure,
    initial_fractions: &BTreeMap<StateId, T>,
) -> Result<BoundReport<T>, BoundError<T>> {
    let first_layer = &layers.layers()[0];
    let mut fractions: BTreeMap<StateId, T> = BTreeMap::new();
    for s in first_layer {
        match initial_fractions.get(s) {
            Some(f) if *f > T::zero() && *f <= T::one() => {
                fractions.insert(*s, f.clone());
            }
            Some(f) => return Err(BoundError::InvalidFraction(f.clone())),
            None => return Err(BoundError::MissingInitialFraction(*s)),
        }
    }
    for (s, f) in initial_fractions {
        if !first_layer.contains(s) && *f > T::zero() {
            return Err(BoundError::UnexpectedInitialFraction(*s));
        }
    }
    let mut windows = Vec::new();
    let mut t_calls = T::zero();
    for (index, witness) in layers.witnesses().iter().enumerate() {
        let same_state = witness.initiator == witness.responder;
        let (c_i, c_j) = if same_state {
            let joint = fractions[&witness.initiator].clone();
            let half = joint * ratio::<T>(1, 2);
            (half.clone(), half)
        } else {
            (
                fractions[&witness.initiator].clone(),
                fractions[&witness.responder].clone(),
            )
        };
        let pair = FractionPair::new(c_i, c_j).map_err(|e| e.in_window(index))?;
        let call_coefficient = window_calls_coefficient(&pair);
        let fraction_exact =
            window_fraction(&pair, WindowFractionForm::Exact).map_err(|e| e.in_window(index))?;
        let fraction_floor =
            window_fraction(&pair, WindowFractionForm::Floor).map_err(|e| e.in_window(index))?;
        let survivors: Vec<T> = fractions.values().cloned().collect();
        let failure = failure_coefficients(&pair, &survivors);
        let fractions_before: Vec<(StateId, T)> =
            fractions.iter().map(|(s, f)| (*s, f.clone())).collect();
        for fraction in fractions.values_mut() {
            *fraction = survivor_fraction(fraction, &call_coefficient)
                .map_err(|e| e.in_window(index))?;
        }
        fractions.insert(witness.state, fraction_exact.clone());
        let fractions_after: Vec<(StateId, T)> =
            fractions.iter().map(|(s, f)| (*s, f.clone())).collect();
        t_calls = t_calls + call_coefficient.clone();
        windows.push(WindowReport {
            index,
            layer: witness.layer,
            new_state: witness.state,
            initiator: witness.initiator,
            responder: witness.responder,
            same_state_split: same_state,
            pair,
            call_coefficient,
            fraction_exact,
            fraction_floor,
            failure,
            fractions_before,
            fractions_after,
        });
    }
    Ok(BoundReport {
        windows,
        t_calls_coefficient: t_calls,
        final_fractions: fractions,
    })
}
