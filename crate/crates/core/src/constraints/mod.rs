//! Exactly-1 constraints over the (value, slot) grid, enforced with loopy
//! belief propagation unrolled for a fixed number of rounds.
//!
//! Every variable `X[v][s]` says "value `v` fills slot `s`". Each slot has
//! a factor requiring exactly one of its values to be true, and each value
//! has one requiring it to fill exactly one slot. The null pseudo-value, when
//! present, is the last row and takes part in the slot factors only, so any
//! number of slots may be null.

mod differentiable;

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::aggregator::{ValueScoreTable, NULL_KEY};
use crate::corpus::Slot;
use crate::scalar::{sigmoid, Scalar};

pub use differentiable::bp_on_tape;

/// Score given to (value, slot) pairs that have none.
pub const MISSING_SCORE: f64 = -20.0;
pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;
/// Weight kept on the previous messages in convergence mode. Undamped
/// flooding often settles into a period-2 cycle on these grids; damping
/// leaves the fixed points unchanged.
pub const DAMPING: f64 = 0.5;
/// Largest `V · S` the exhaustive oracle accepts.
pub const ORACLE_MAX_VARIABLES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("constraint grid needs at least one value and one slot (got {values}x{slots})")]
    EmptyGrid { values: usize, slots: usize },
    #[error("score table row {row} has {got} entries, expected {expected}")]
    RaggedScores { row: usize, got: usize, expected: usize },
    #[error("non-finite {message} message at value {value}, slot {slot}")]
    NonFinite { message: &'static str, value: usize, slot: usize },
    #[error("grid of {0} variables is too large to enumerate")]
    TooLarge(usize),
    #[error("no assignment satisfies both constraint families")]
    EmptySupport,
    #[error("invalid iteration count {0:?}")]
    BadIterations(String),
}

/// How many rounds of message passing to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpIterations {
    Fixed(usize),
    /// Damped rounds until the largest message change falls below
    /// [`CONVERGENCE_TOL`], at most [`MAX_ITERATIONS`] rounds.
    Convergence,
}

impl fmt::Display for BpIterations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BpIterations::Fixed(n) => write!(f, "{}", n),
            BpIterations::Convergence => f.write_str("conv"),
        }
    }
}

impl FromStr for BpIterations {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" | "convergence" => Ok(BpIterations::Convergence),
            n => n
                .parse()
                .map(BpIterations::Fixed)
                .map_err(|_| ConstraintError::BadIterations(n.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph<T> {
    pub values: Vec<String>,
    pub slots: Vec<Slot>,
    /// True when the last row is the null pseudo-value.
    pub has_null: bool,
    /// `local[v * S + s] = sigmoid(φ)`, clamped away from 0 and 1.
    pub local: Vec<T>,
}

impl<T: Scalar> ConstraintGraph<T> {
    pub fn num_values(&self) -> usize {
        self.values.len() + usize::from(self.has_null)
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn local(&self, v: usize, s: usize) -> T {
        self.local[v * self.num_slots() + s]
    }

    /// Whether row `v` has a factor across slots.
    pub fn has_value_factor(&self, v: usize) -> bool {
        !(self.has_null && v + 1 == self.num_values())
    }

    pub fn row_name(&self, v: usize) -> &str {
        self.values.get(v).map_or(NULL_KEY, String::as_str)
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::prob_eps();
    p.max(eps).min(T::one() - eps)
}

/// Builds the grid from `phi[v][s]`, plus an optional null row.
pub fn build_graph<T: Scalar>(
    phi: &[Vec<T>],
    null_phi: Option<&[T]>,
    values: Vec<String>,
    slots: Vec<Slot>,
) -> Result<ConstraintGraph<T>, ConstraintError> {
    let s_count = slots.len();
    let v_count = values.len() + usize::from(null_phi.is_some());
    if v_count == 0 || s_count == 0 {
        return Err(ConstraintError::EmptyGrid {
            values: v_count,
            slots: s_count,
        });
    }
    let mut local = Vec::with_capacity(v_count * s_count);
    if phi.len() > values.len() {
        return Err(ConstraintError::RaggedScores {
            row: values.len(),
            got: phi.len(),
            expected: values.len(),
        });
    }
    for (row, r) in phi.iter().enumerate() {
        if r.len() != s_count {
            return Err(ConstraintError::RaggedScores {
                row,
                got: r.len(),
                expected: s_count,
            });
        }
        local.extend(r.iter().map(|&x| clamp_prob(sigmoid(x))));
    }
    // value rows without scores get the missing-pair fill
    for _ in phi.len()..values.len() {
        local.extend(std::iter::repeat_n(clamp_prob(sigmoid(T::lit(MISSING_SCORE))), s_count));
    }
    if let Some(n) = null_phi {
        if n.len() != s_count {
            return Err(ConstraintError::RaggedScores {
                row: values.len(),
                got: n.len(),
                expected: s_count,
            });
        }
        local.extend(n.iter().map(|&x| clamp_prob(sigmoid(x))));
    }
    Ok(ConstraintGraph {
        values,
        slots,
        has_null: null_phi.is_some(),
        local,
    })
}

/// Builds the grid from a value-level score table, treating scores as φ.
pub fn graph_from_table<T: Scalar>(table: &ValueScoreTable<T>) -> Result<ConstraintGraph<T>, ConstraintError> {
    build_graph(&table.scores, table.null.as_deref(), table.values.clone(), table.slots.clone())
}

/// All messages, stored as the true-side mass of a normalized pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState<T> {
    pub var_to_slot: Vec<T>,
    pub var_to_value: Vec<T>,
    pub slot_to_var: Vec<T>,
    pub value_to_var: Vec<T>,
    pub iteration: usize,
}

/// `(mass_true, mass_false)` for a stored true mass.
pub fn pair<T: Scalar>(t: T) -> (T, T) {
    (t, T::one() - t)
}

pub fn init_messages<T: Scalar>(graph: &ConstraintGraph<T>) -> MessageState<T> {
    let half = T::lit(0.5);
    let n = graph.local.len();
    MessageState {
        var_to_slot: graph.local.clone(),
        var_to_value: graph.local.clone(),
        slot_to_var: vec![half; n],
        value_to_var: vec![half; n],
        iteration: 0,
    }
}

/// Exactly-1 factor to variable `target`, as the normalized pair built from
/// the unnormalized masses of [`exactly1_unnormalized`].
pub fn exactly1_to_variable<T: Scalar>(incoming: &[T], target: usize) -> (T, T) {
    let (t, f) = exactly1_unnormalized(incoming, target);
    let z = t + f;
    (t / z, f / z)
}

/// Unnormalized Exactly-1 message: true mass `∏_{j≠i}(1-μ_j)` and false
/// mass `Σ_{j≠i} μ_j ∏_{l≠i,j}(1-μ_l)`. Inputs are clamped away from 0 and 1.
pub fn exactly1_unnormalized<T: Scalar>(incoming: &[T], target: usize) -> (T, T) {
    let mut t = T::one();
    let mut f = T::zero();
    for (j, &mu) in incoming.iter().enumerate() {
        if j == target {
            continue;
        }
        let mu = clamp_prob(mu);
        // f tracks "exactly one true so far", t "none true so far"
        f = f * (T::one() - mu) + t * mu;
        t = t * (T::one() - mu);
    }
    (t, f)
}

/// True mass in the partition form `Z / (1-μ_i)` with `Z = ∏_j (1-μ_j)`.
pub fn exactly1_true_via_partition<T: Scalar>(incoming: &[T], target: usize) -> T {
    let z: T = incoming.iter().map(|&m| T::one() - clamp_prob(m)).fold(T::one(), |a, b| a * b);
    z / (T::one() - clamp_prob(incoming[target]))
}

/// The factor's true-side messages to all neighbors at once, in odds form:
/// `1 / (1 + Σ_{j≠i} μ_j / (1-μ_j))`.
pub fn exactly1_all<T: Scalar>(incoming: &[T]) -> Vec<T> {
    let odds: Vec<T> = incoming
        .iter()
        .map(|&m| {
            let m = clamp_prob(m);
            m / (T::one() - m)
        })
        .collect();
    let mut out = vec![T::zero(); odds.len()];
    let mut prefix = T::zero();
    for (o, &x) in out.iter_mut().zip(&odds) {
        *o = prefix;
        prefix = prefix + x;
    }
    let mut suffix = T::zero();
    for (o, &x) in out.iter_mut().zip(&odds).rev() {
        *o = T::one() / (T::one() + *o + suffix);
        suffix = suffix + x;
    }
    out
}

/// Variable to one factor: local potential times the other factor's message.
pub fn variable_to_factor<T: Scalar>(local: T, other: (T, T)) -> (T, T) {
    let t = local * other.0;
    let f = (T::one() - local) * other.1;
    let z = t + f;
    (t / z, f / z)
}

fn check<T: Scalar>(xs: &[T], message: &'static str, slots: usize) -> Result<(), ConstraintError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(ConstraintError::NonFinite {
            message,
            value: i / slots,
            slot: i % slots,
        }),
        None => Ok(()),
    }
}

/// One synchronous round: all factor messages from the current variable
/// messages, then all variable messages from the new factor messages.
pub fn bp_iterate<T: Scalar>(state: &MessageState<T>, graph: &ConstraintGraph<T>) -> Result<MessageState<T>, ConstraintError> {
    let (nv, ns) = (graph.num_values(), graph.num_slots());
    let half = T::lit(0.5);

    let mut slot_to_var = vec![half; nv * ns];
    let mut column = vec![T::zero(); nv];
    for s in 0..ns {
        for v in 0..nv {
            column[v] = state.var_to_slot[v * ns + s];
        }
        for (v, m) in exactly1_all(&column).into_iter().enumerate() {
            slot_to_var[v * ns + s] = m;
        }
    }
    let mut value_to_var = vec![half; nv * ns];
    for v in (0..nv).filter(|&v| graph.has_value_factor(v)) {
        let msgs = exactly1_all(&state.var_to_value[v * ns..(v + 1) * ns]);
        value_to_var[v * ns..(v + 1) * ns].copy_from_slice(&msgs);
    }
    check(&slot_to_var, "slot factor", ns)?;
    check(&value_to_var, "value factor", ns)?;

    let mut var_to_slot = vec![T::zero(); nv * ns];
    let mut var_to_value = vec![T::zero(); nv * ns];
    for i in 0..nv * ns {
        let u = graph.local[i];
        var_to_slot[i] = clamp_prob(variable_to_factor(u, pair(value_to_var[i])).0);
        var_to_value[i] = clamp_prob(variable_to_factor(u, pair(slot_to_var[i])).0);
    }
    check(&var_to_slot, "variable-to-slot", ns)?;
    check(&var_to_value, "variable-to-value", ns)?;

    Ok(MessageState {
        var_to_slot,
        var_to_value,
        slot_to_var,
        value_to_var,
        iteration: state.iteration + 1,
    })
}

fn damp<T: Scalar>(prev: &MessageState<T>, mut next: MessageState<T>, keep: T) -> MessageState<T> {
    let mix = |old: &[T], new: &mut [T]| {
        for (n, &o) in new.iter_mut().zip(old) {
            *n = keep * o + (T::one() - keep) * *n;
        }
    };
    mix(&prev.var_to_slot, &mut next.var_to_slot);
    mix(&prev.var_to_value, &mut next.var_to_value);
    mix(&prev.slot_to_var, &mut next.slot_to_var);
    mix(&prev.value_to_var, &mut next.value_to_var);
    next
}

/// Largest absolute change between two message states.
pub fn max_delta<T: Scalar>(a: &MessageState<T>, b: &MessageState<T>) -> T {
    let parts = [
        (&a.var_to_slot, &b.var_to_slot),
        (&a.var_to_value, &b.var_to_value),
        (&a.slot_to_var, &b.slot_to_var),
        (&a.value_to_var, &b.value_to_var),
    ];
    parts
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(&p, &q)| (p - q).abs()))
        .fold(T::zero(), T::max)
}

/// Posterior probability that each variable is true.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTable<T> {
    pub num_values: usize,
    pub num_slots: usize,
    pub b: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> BeliefTable<T> {
    pub fn get(&self, v: usize, s: usize) -> T {
        self.b[v * self.num_slots + s]
    }

    /// Best row per slot. Rows are in value order with null last, so the
    /// first maximum is the tie-break winner.
    pub fn decode(&self) -> Vec<usize> {
        (0..self.num_slots)
            .map(|s| {
                let mut best = 0;
                for v in 1..self.num_values {
                    if self.get(v, s) > self.get(best, s) {
                        best = v;
                    }
                }
                best
            })
            .collect()
    }

    /// The beliefs as a value score table, null row split out.
    pub fn to_table(&self, graph: &ConstraintGraph<T>) -> ValueScoreTable<T> {
        let ns = self.num_slots;
        let row = |v: usize| self.b[v * ns..(v + 1) * ns].to_vec();
        ValueScoreTable {
            slots: graph.slots.clone(),
            values: graph.values.clone(),
            scores: (0..graph.values.len()).map(row).collect(),
            null: graph.has_null.then(|| row(graph.values.len())),
        }
    }
}

pub fn beliefs<T: Scalar>(state: &MessageState<T>, graph: &ConstraintGraph<T>) -> BeliefTable<T> {
    if state.iteration == 0 {
        return BeliefTable {
            num_values: graph.num_values(),
            num_slots: graph.num_slots(),
            b: graph.local.clone(),
            iterations: 0,
        };
    }
    let b = (0..graph.local.len())
        .map(|i| {
            let u = graph.local[i];
            let (r, c) = (state.slot_to_var[i], state.value_to_var[i]);
            let t = u * r * c;
            let f = (T::one() - u) * (T::one() - r) * (T::one() - c);
            t / (t + f)
        })
        .collect();
    BeliefTable {
        num_values: graph.num_values(),
        num_slots: graph.num_slots(),
        b,
        iterations: state.iteration,
    }
}

pub fn run_bp<T: Scalar>(graph: &ConstraintGraph<T>, iterations: BpIterations) -> Result<BeliefTable<T>, ConstraintError> {
    run_bp_traced(graph, iterations, |_| {})
}

/// Like [`run_bp`], calling `observe` with the beliefs before the first
/// round and after every round.
pub fn run_bp_traced<T: Scalar>(
    graph: &ConstraintGraph<T>,
    iterations: BpIterations,
    mut observe: impl FnMut(&BeliefTable<T>),
) -> Result<BeliefTable<T>, ConstraintError> {
    let mut state = init_messages(graph);
    observe(&beliefs(&state, graph));
    let (cap, tol) = match iterations {
        BpIterations::Fixed(n) => (n, None),
        BpIterations::Convergence => (MAX_ITERATIONS, Some(T::lit(CONVERGENCE_TOL))),
    };
    for _ in 0..cap {
        let mut next = bp_iterate(&state, graph)?;
        if tol.is_some() {
            next = damp(&state, next, T::lit(DAMPING));
        }
        let delta = max_delta(&state, &next);
        state = next;
        observe(&beliefs(&state, graph));
        if tol.is_some_and(|t| delta < t) {
            break;
        }
    }
    Ok(beliefs(&state, graph))
}

/// Writes `iteration,value,slot,belief` rows for a recorded trace.
pub fn write_trace_csv<T: Scalar, W: Write>(mut w: W, graph: &ConstraintGraph<T>, trace: &[BeliefTable<T>]) -> io::Result<()> {
    writeln!(w, "iteration,value,slot,belief")?;
    for table in trace {
        for v in 0..graph.num_values() {
            for (s, slot) in graph.slots.iter().enumerate() {
                writeln!(w, "{},{},{},{}", table.iterations, graph.row_name(v), slot.key(), table.get(v, s))?;
            }
        }
    }
    Ok(())
}

/// Exact marginals and the most probable assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub marginals: BeliefTable<f64>,
    /// Row chosen for each slot in the most probable assignment.
    pub map: Vec<usize>,
}

/// Exact inference by enumerating every assignment that satisfies both
/// constraint families, weighted by `∏ u^x (1-u)^(1-x)`.
pub fn brute_force_oracle<T: Scalar>(graph: &ConstraintGraph<T>) -> Result<OracleResult, ConstraintError> {
    let (nv, ns) = (graph.num_values(), graph.num_slots());
    let n = nv * ns;
    if n > ORACLE_MAX_VARIABLES {
        return Err(ConstraintError::TooLarge(n));
    }
    let local: Vec<f64> = graph.local.iter().map(|x| x.to_f64_lossy()).collect();
    let mut marg = vec![0.0; n];
    let mut total = 0.0;
    let mut best = (f64::NEG_INFINITY, 0u32);
    'outer: for mask in 0u32..(1u32 << n) {
        let on = |v: usize, s: usize| mask >> (v * ns + s) & 1 == 1;
        for s in 0..ns {
            if (0..nv).filter(|&v| on(v, s)).count() != 1 {
                continue 'outer;
            }
        }
        for v in (0..nv).filter(|&v| graph.has_value_factor(v)) {
            if (0..ns).filter(|&s| on(v, s)).count() != 1 {
                continue 'outer;
            }
        }
        let w: f64 = (0..n)
            .map(|i| if mask >> i & 1 == 1 { local[i] } else { 1.0 - local[i] })
            .product();
        total += w;
        for (i, m) in marg.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                *m += w;
            }
        }
        if w > best.0 {
            best = (w, mask);
        }
    }
    if total <= 0.0 {
        return Err(ConstraintError::EmptySupport);
    }
    let map = (0..ns)
        .map(|s| (0..nv).find(|&v| best.1 >> (v * ns + s) & 1 == 1).unwrap_or(0))
        .collect();
    Ok(OracleResult {
        marginals: BeliefTable {
            num_values: nv,
            num_slots: ns,
            b: marg.into_iter().map(|m| m / total).collect(),
            iterations: 0,
        },
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slots(n: usize) -> Vec<Slot> {
        Slot::EVALUABLE[..n].to_vec()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{}", i)).collect()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn grid(locals: &[&[f64]]) -> ConstraintGraph<f64> {
        let phi: Vec<Vec<f64>> = locals.iter().map(|r| r.iter().map(|&p| logit(p)).collect()).collect();
        build_graph(&phi, None, names(locals.len()), slots(locals[0].len())).unwrap()
    }

    #[test]
    fn build_examples() {
        let g = build_graph(&[vec![0.0, 0.0]], None, names(1), slots(2)).unwrap();
        assert_eq!(g.local, vec![0.5, 0.5]);
        let g = build_graph::<f64>(&[], None, names(1), slots(2)).unwrap();
        assert!(g.local.iter().all(|&u| u < 1e-8));
        assert!(build_graph::<f64>(&[], None, vec![], slots(2)).is_err());
        let g = build_graph(&[vec![100.0]], Some(&[-100.0]), names(1), slots(1)).unwrap();
        assert_eq!(g.num_values(), 2);
        assert!(g.local.iter().all(|&u| u > 0.0 && u < 1.0));
        assert_eq!(g.row_name(1), NULL_KEY);
    }

    #[test]
    fn init_examples() {
        let g = grid(&[&[0.9, 0.5]]);
        let m = init_messages(&g);
        assert!((m.var_to_slot[0] - 0.9).abs() < 1e-15);
        assert_eq!(m.var_to_slot, m.var_to_value);
        assert!(m.slot_to_var.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn exactly1_examples() {
        let (t, f) = exactly1_unnormalized(&[0.8f64, 0.3, 0.1], 0);
        assert!((t - 0.63).abs() < 1e-12 && (f - 0.34).abs() < 1e-12);
        let (t, f) = exactly1_to_variable(&[0.8f64, 0.3, 0.1], 0);
        assert!((t - 0.63 / 0.97).abs() < 1e-12 && (t + f - 1.0).abs() < 1e-15);
        let (t, _) = exactly1_to_variable(&[0.5f64; 3], 1);
        assert!((t - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(exactly1_to_variable(&[0.7], 0), (1.0, 0.0));
        let all = exactly1_all(&[0.8f64, 0.3, 0.1]);
        for (i, a) in all.iter().enumerate() {
            assert!((a - exactly1_to_variable(&[0.8, 0.3, 0.1], i).0).abs() < 1e-12);
        }
    }

    #[test]
    fn variable_to_factor_examples() {
        let (t, f) = variable_to_factor(0.5f64, (0.63 / 0.97, 0.34 / 0.97));
        assert!((t - 0.6494845).abs() < 1e-6 && (f - 0.3505155).abs() < 1e-6);
        assert_eq!(variable_to_factor(0.3, (0.5, 0.5)).0, 0.3);
        let eps = f64::prob_eps();
        assert!(variable_to_factor(1.0 - eps, (0.4, 0.6)).0 > 1.0 - 1e-8);
    }

    #[test]
    fn single_variable_is_forced_true() {
        let g = grid(&[&[0.2]]);
        let b = run_bp(&g, BpIterations::Fixed(1)).unwrap();
        assert!((b.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(brute_force_oracle(&g).unwrap().marginals.b, vec![1.0]);
    }

    #[test]
    fn zero_rounds_return_locals() {
        let g = grid(&[&[0.9, 0.6], &[0.4, 0.2]]);
        let b = run_bp(&g, BpIterations::Fixed(0)).unwrap();
        assert_eq!(b.b, g.local);
    }

    #[test]
    fn two_by_two_picks_best_permutation() {
        let g = grid(&[&[0.9, 0.6], &[0.4, 0.2]]);
        let b = run_bp(&g, BpIterations::Convergence).unwrap();
        assert_eq!(b.decode(), vec![0, 1]);
        let o = brute_force_oracle(&g).unwrap();
        assert_eq!(o.map, vec![0, 1]);
        // two permutations: diag 0.9*0.2*0.4*0.4... computed directly
        let diag = 0.9 * 0.2 * (1.0 - 0.6) * (1.0 - 0.4);
        let anti = 0.6 * 0.4 * (1.0 - 0.9) * (1.0 - 0.2);
        assert!((o.marginals.get(0, 0) - diag / (diag + anti)).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_is_stable() {
        let g = grid(&[&[0.9, 0.6], &[0.4, 0.2]]);
        let mut s = init_messages(&g);
        for _ in 0..200 {
            s = bp_iterate(&s, &g).unwrap();
        }
        let next = bp_iterate(&s, &g).unwrap();
        assert!(max_delta(&s, &next) < 1e-12);
    }

    #[test]
    fn one_round_sharpens_dominant_value() {
        // one slot factor over three values, no value factors
        let u = [0.8f64, 0.3, 0.1];
        let msgs = exactly1_all(&u);
        let b: Vec<f64> = u.iter().zip(&msgs).map(|(&u, &m)| variable_to_factor(u, pair(m)).0).collect();
        assert!(b[0] > 0.8 && b[1] < 0.3 && b[2] < 0.1);
        // exactly-one-true configurations weighted by the locals
        let w = [0.8 * 0.7 * 0.9, 0.2 * 0.3 * 0.9, 0.2 * 0.7 * 0.1];
        let z: f64 = w.iter().sum();
        for (bi, wi) in b.iter().zip(&w) {
            assert!((bi - wi / z).abs() < 1e-12);
        }
    }

    #[test]
    fn null_row_joins_slot_factors_only() {
        let phi = vec![vec![logit(0.3), logit(0.3)]];
        let null = [logit(0.9), logit(0.9)];
        let g = build_graph(&phi, Some(&null), names(1), slots(2)).unwrap();
        assert!(!g.has_value_factor(1));
        let o = brute_force_oracle(&g).unwrap();
        // the one value must fill exactly one slot; null takes the other
        assert!((o.marginals.get(0, 0) + o.marginals.get(0, 1) - 1.0).abs() < 1e-12);
        let b = run_bp(&g, BpIterations::Convergence).unwrap();
        assert!(b.b.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn convergence_within_cap_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let phi: Vec<Vec<f64>> = (0..8).map(|_| (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let g = build_graph(&phi, None, names(8), slots(8)).unwrap();
            let mut rounds = 0;
            run_bp_traced(&g, BpIterations::Convergence, |b| rounds = b.iterations).unwrap();
            assert!(rounds <= MAX_ITERATIONS);
        }
    }

    #[test]
    fn messages_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let g = build_graph(&phi, Some(&[0.0, 1.0, -1.0]), names(4), slots(3)).unwrap();
        let mut s = init_messages(&g);
        for _ in 0..10 {
            s = bp_iterate(&s, &g).unwrap();
            for m in [&s.var_to_slot, &s.var_to_value, &s.slot_to_var, &s.value_to_var] {
                assert!(m.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn oracle_limits() {
        let g = build_graph(&vec![vec![0.0; 5]; 5], None, names(5), slots(5)).unwrap();
        assert_eq!(brute_force_oracle(&g), Err(ConstraintError::TooLarge(25)));
        // three values cannot each fill exactly one of two slots
        let g = build_graph(&vec![vec![0.0; 2]; 3], None, names(3), slots(2)).unwrap();
        assert_eq!(brute_force_oracle(&g), Err(ConstraintError::EmptySupport));
    }

    #[test]
    fn iteration_parsing_and_trace() {
        assert_eq!("conv".parse::<BpIterations>().unwrap(), BpIterations::Convergence);
        assert_eq!("2".parse::<BpIterations>().unwrap(), BpIterations::Fixed(2));
        assert!("x".parse::<BpIterations>().is_err());
        let g = build_graph(&[vec![0.0]], None, names(1), slots(1)).unwrap();
        let mut trace = Vec::new();
        run_bp_traced(&g, BpIterations::Fixed(1), |b| trace.push(b.clone())).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &g, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,value,slot,belief\n0,v0,aircraft_type,0.5\n"));
        assert!(text.lines().nth(2).unwrap().starts_with("1,v0,aircraft_type,1"));
        assert_eq!(text.lines().count(), 3);
    }
}
