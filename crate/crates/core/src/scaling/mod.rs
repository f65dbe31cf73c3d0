//! Scaling engine: phase loop, flow augmentation, arc revelation and the
//! trial-and-error step that makes the phase count strongly polynomial.

mod circulation;
mod dijkstra;

pub use circulation::f_optimal_to_optimal;
pub use dijkstra::{shortest_path, shortest_path_additive, shortest_path_multiplicative, PathResult};

use crate::backend::{CostBackend, TightVector};
use crate::cost::{forward_cost, ArcCost, OracleMode};
use crate::error::SolverError;
use crate::network::{
    discrepancy, excess, residual_arcs, rho, ArcOrigin, FlowNetwork, Pseudoflow, ResKey,
    RevealedArcSet,
};
use crate::rational::{rat_usize, Rat};
use num::{One, Signed, Zero};

/// Node potentials; additive values `π` or multiplicative values `e^π`
/// depending on the oracle mode. Engine potentials are always finite, and
/// multiplicative values are strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Potentials {
    pub mode: OracleMode,
    pub values: Vec<Rat>,
}

impl Potentials {
    pub fn zero_additive(n: usize) -> Self {
        Potentials { mode: OracleMode::Additive, values: vec![Rat::zero(); n] }
    }

    pub fn one_multiplicative(n: usize) -> Self {
        Potentials { mode: OracleMode::Multiplicative, values: vec![Rat::one(); n] }
    }

    /// `π_to − π_from ≤ cost`, in the matching mode.
    pub fn satisfies(&self, cost: &ArcCost, from: usize, to: usize) -> bool {
        match cost {
            ArcCost::PosInfinite => true,
            ArcCost::NegInfinite => false,
            ArcCost::Finite(c) => match self.mode {
                OracleMode::Additive => &self.values[to] - &self.values[from] <= *c,
                OracleMode::Multiplicative => c * &self.values[from] >= self.values[to],
            },
        }
    }

    /// `π_to − π_from < cost`, strictly.
    pub fn strictly_below(&self, cost: &ArcCost, from: usize, to: usize) -> bool {
        match cost {
            ArcCost::PosInfinite => true,
            ArcCost::NegInfinite => false,
            ArcCost::Finite(c) => match self.mode {
                OracleMode::Additive => &self.values[to] - &self.values[from] < *c,
                OracleMode::Multiplicative => c * &self.values[from] > self.values[to],
            },
        }
    }

    pub fn is_tight(&self, cost: &ArcCost, from: usize, to: usize) -> bool {
        match cost {
            ArcCost::Finite(c) => match self.mode {
                OracleMode::Additive => &self.values[to] - &self.values[from] == *c,
                OracleMode::Multiplicative => c * &self.values[from] == self.values[to],
            },
            _ => false,
        }
    }
}

/// Events recorded by every run; the acceptance suite reads bounds off them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    PhaseStart { phase: usize, delta: Rat },
    Augment { phase: usize, delta: Rat, path: Vec<ResKey>, source: usize, target: usize },
    Extend { phase: usize, delta: Rat, arc: usize },
    TrialSuccess { phase: usize, delta: Rat, err: Rat, delta_next: Option<Rat> },
    TrialFail { phase: usize, delta: Rat, err: Rat },
    Halve { phase: usize, delta: Rat },
}

#[derive(Debug, Clone)]
pub struct ScalingState {
    pub delta: Rat,
    pub flow: Pseudoflow,
    pub revealed: RevealedArcSet,
    pub potentials: Potentials,
    pub phase_index: usize,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub flow: Pseudoflow,
    pub potentials: Potentials,
    pub revealed: Vec<usize>,
    pub phases: usize,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Optimal(Solution),
    /// The optimum routes flow through hub arcs: the original instance has no
    /// feasible flow. The solution of the augmented network is attached.
    Infeasible { solution: Solution, hub_arcs: Vec<usize> },
    Unbounded,
}

impl SolveOutcome {
    pub fn optimal(self) -> Option<Solution> {
        match self {
            SolveOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub enum TrialOutcome {
    /// Trial accepted: state now holds the trial vector, its witness and the
    /// next scale.
    NewState { err: Rat, delta_next: Rat },
    /// Trial rejected: state kept its flow, adjusted to half the scale.
    KeepAndHalve { err: Rat },
    /// The trial vector is optimal on the revealed set.
    Terminate { tight: TightVector, witness: Potentials },
}

#[derive(Debug, Clone)]
pub struct BasicRun {
    pub flow: Pseudoflow,
    pub potentials: Potentials,
    pub final_delta: Rat,
    pub events: Vec<TraceEvent>,
}

/// Exact scan of the feasibility condition at scale `delta`: potentials must
/// satisfy every residual arc.
pub fn check_feasibility(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    revealed: &RevealedArcSet,
    delta: &Rat,
    pot: &Potentials,
) -> Result<(), SolverError> {
    for ra in residual_arcs(net, flow, revealed, delta) {
        if !pot.satisfies(&ra.cost, ra.from, ra.to) {
            return Err(SolverError::invariant(format!(
                "feasibility violated on arc {} ({})",
                ra.key.arc,
                if ra.key.backward { "backward" } else { "forward" }
            )));
        }
    }
    Ok(())
}

/// Label-correcting potentials for a given state, or `None` when the residual
/// graph has a negative cycle (no potentials exist). Used to validate the
/// starting scale of the basic algorithm.
pub fn initial_potentials(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    revealed: &RevealedArcSet,
    delta: &Rat,
) -> Option<Potentials> {
    let n = net.node_count();
    let res = residual_arcs(net, flow, revealed, delta);
    let mut pot = match net.mode {
        OracleMode::Additive => Potentials::zero_additive(n),
        OracleMode::Multiplicative => Potentials::one_multiplicative(n),
    };
    for round in 0..=n {
        let mut changed = false;
        for ra in &res {
            match &ra.cost {
                ArcCost::PosInfinite => continue,
                ArcCost::NegInfinite => return None,
                ArcCost::Finite(c) => {
                    let candidate = match net.mode {
                        OracleMode::Additive => &pot.values[ra.from] + c,
                        OracleMode::Multiplicative => &pot.values[ra.from] * c,
                    };
                    if candidate < pot.values[ra.to] {
                        pot.values[ra.to] = candidate;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return Some(pot);
        }
        if round == n {
            return None;
        }
    }
    Some(pot)
}

/// Scale transition: turns a flow feasible at `2·delta` into one feasible at
/// `delta` under the same potentials, changing each arc by at most `delta`.
/// Linear arcs never move; each nonlinear move can add `delta` to the excess.
pub fn adjust(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    pot: &Potentials,
    delta: &Rat,
    revealed: &RevealedArcSet,
) -> Result<Pseudoflow, SolverError> {
    let mut out = flow.clone();
    for (e, arc) in net.arcs.iter().enumerate() {
        let fe = &flow.values[e];
        let up_cost = forward_cost(&arc.cost, net.mode, &(fe + delta));
        let raise = !pot.satisfies(&up_cost, arc.tail, arc.head);
        let down_available = revealed.contains(e) || fe >= delta;
        let lower = down_available && {
            let down_cost = forward_cost(&arc.cost, net.mode, &(fe - delta));
            pot.strictly_below(&down_cost, arc.tail, arc.head)
        };
        if raise && lower {
            return Err(SolverError::invariant(
                "both adjust conditions fired; cost function is not convex",
            ));
        }
        if raise {
            out.values[e] = fe + delta;
        } else if lower {
            out.values[e] = fe - delta;
        }
    }
    Ok(out)
}

fn surplus_sets(net: &FlowNetwork, flow: &Pseudoflow, delta: &Rat) -> (Vec<bool>, Vec<bool>) {
    let r = rho(net, flow);
    let n = net.node_count();
    let mut sources = vec![false; n];
    let mut targets = vec![false; n];
    for v in 0..n {
        let s = &r[v] - &net.demands[v];
        if s >= *delta {
            sources[v] = true;
        } else if -s >= *delta {
            targets[v] = true;
        }
    }
    (sources, targets)
}

/// Main part of a phase: move `delta` units along tight paths from surplus to
/// deficit nodes until one side is exhausted. Returns the augmentation count.
pub fn run_phase_main(
    net: &FlowNetwork,
    state: &mut ScalingState,
    max_augmentations: usize,
) -> Result<usize, SolverError> {
    let n = net.node_count();
    let mut count = 0usize;
    loop {
        let (sources, targets) = surplus_sets(net, &state.flow, &state.delta);
        if !sources.iter().any(|&b| b) || !targets.iter().any(|&b| b) {
            break;
        }
        count += 1;
        if count > max_augmentations {
            return Err(SolverError::invariant(format!(
                "phase exceeded {max_augmentations} augmentations"
            )));
        }
        let res = residual_arcs(net, &state.flow, &state.revealed, &state.delta);
        let pr = shortest_path(n, &res, &sources, &targets, &mut state.potentials)?;
        for key in &pr.path {
            if key.backward {
                state.flow.values[key.arc] -= &state.delta;
            } else {
                state.flow.values[key.arc] += &state.delta;
            }
            if net.arcs[key.arc].cost.is_restricted() && state.flow.values[key.arc].is_negative() {
                return Err(SolverError::invariant(
                    "augmentation drove a restricted arc negative",
                ));
            }
        }
        state.events.push(TraceEvent::Augment {
            phase: state.phase_index,
            delta: state.delta.clone(),
            path: pr.path,
            source: pr.source,
            target: pr.target,
        });
    }
    // One side exhausted: total surplus is below n·delta.
    let ex = excess(net, &state.flow);
    if ex > rat_usize(n) * &state.delta {
        return Err(SolverError::invariant("excess above n·delta after the main part"));
    }
    Ok(count)
}

/// Reveals arcs whose flow exceeds `(2n+m+1)·delta`. A linear arc that would
/// close a linear cycle is not revealed; its flow is rerouted along the
/// existing linear path and the arc reset to zero.
pub fn extend(net: &FlowNetwork, state: &mut ScalingState) -> Result<bool, SolverError> {
    let n = net.node_count();
    let m = net.arc_count();
    let threshold = rat_usize(2 * n + m + 1) * &state.delta;
    let mut extended = false;
    for e in 0..m {
        if state.revealed.contains(e) {
            continue;
        }
        if state.flow.values[e] <= threshold {
            continue;
        }
        if state.revealed.can_add(net, e) {
            state.revealed.add(net, e)?;
            state.events.push(TraceEvent::Extend {
                phase: state.phase_index,
                delta: state.delta.clone(),
                arc: e,
            });
            extended = true;
        } else {
            let amount = state.flow.values[e].clone();
            let arc = &net.arcs[e];
            let path = state
                .revealed
                .linear_path(net, arc.tail, arc.head)
                .ok_or_else(|| SolverError::invariant("linear cycle without a linear path"))?;
            for (pe, forward) in path {
                if forward {
                    state.flow.values[pe] += &amount;
                } else {
                    state.flow.values[pe] -= &amount;
                }
            }
            state.flow.values[e] = Rat::zero();
        }
    }
    Ok(extended)
}

/// Demand rounding for a trial: zero out each component's imbalance at its
/// anchor (the hub or sink when the component has one, else its lowest node).
fn build_b_hat(net: &FlowNetwork, revealed: &RevealedArcSet) -> Vec<Rat> {
    let n = net.node_count();
    let roots = revealed.component_roots(n);
    let mut sums: std::collections::BTreeMap<usize, Rat> = std::collections::BTreeMap::new();
    let mut anchors: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for v in 0..n {
        let root = roots[v];
        *sums.entry(root).or_insert_with(Rat::zero) += &net.demands[v];
        let preferred = net.anchor == Some(v);
        match anchors.get(&root) {
            None => {
                anchors.insert(root, v);
            }
            Some(&cur) => {
                if preferred && net.anchor != Some(cur) {
                    anchors.insert(root, v);
                }
            }
        }
    }
    let mut b_hat = net.demands.clone();
    for (root, sum) in sums {
        b_hat[anchors[&root]] -= sum;
    }
    b_hat
}

fn verify_trial_output(
    net: &FlowNetwork,
    revealed: &RevealedArcSet,
    b_hat: &[Rat],
    tight: &TightVector,
) -> Result<(), SolverError> {
    for (e, v) in tight.flow.values.iter().enumerate() {
        if !revealed.contains(e) && !v.is_zero() {
            return Err(SolverError::contract("trial output is nonzero off the revealed set"));
        }
        if net.arcs[e].cost.is_restricted() && v.is_negative() {
            return Err(SolverError::contract("trial output negative on a restricted arc"));
        }
    }
    let r = rho(net, &tight.flow);
    for v in 0..net.node_count() {
        if r[v] != b_hat[v] {
            return Err(SolverError::contract("trial output does not meet the rounded demands"));
        }
    }
    Ok(())
}

/// One trial-and-error step. Requires that the revealed set was just extended
/// and its demand discrepancy is at most the current scale.
pub fn trial_and_error<B: CostBackend>(
    net: &FlowNetwork,
    state: &mut ScalingState,
    backend: &B,
) -> Result<TrialOutcome, SolverError> {
    let n = net.node_count();
    let m = net.arc_count();
    let m_n = net.nonlinear_arc_count();
    let b_hat = build_b_hat(net, &state.revealed);
    let tight = backend.trial(net, &state.revealed, &b_hat)?;
    verify_trial_output(net, &state.revealed, &b_hat, &tight)?;

    let err = match backend.error_value(net, &tight.flow, &state.revealed)? {
        crate::backend::ErrValue::Infinite => {
            return Err(SolverError::invariant("infinite error value mid-run"));
        }
        crate::backend::ErrValue::Finite(v) => v,
    };
    let err_cap = rat_usize(2 * (2 * n + m + 4) * m) * &state.delta;
    if err > err_cap {
        return Err(SolverError::invariant("error value exceeds its proximity bound"));
    }

    let b_unchanged = b_hat == net.demands;
    if b_unchanged && err.is_zero() {
        let witness = backend.witness(net, &tight.flow, &state.revealed, &Rat::zero())?;
        check_feasibility(net, &tight.flow, &state.revealed, &Rat::zero(), &witness)?;
        state.events.push(TraceEvent::TrialSuccess {
            phase: state.phase_index,
            delta: state.delta.clone(),
            err,
            delta_next: None,
        });
        return Ok(TrialOutcome::Terminate { tight, witness });
    }

    let half = &state.delta / rat_usize(2);
    if err >= half {
        state.events.push(TraceEvent::TrialFail {
            phase: state.phase_index,
            delta: state.delta.clone(),
            err: err.clone(),
        });
        let before = excess(net, &state.flow);
        state.flow = adjust(net, &state.flow, &state.potentials, &half, &state.revealed)?;
        let after = excess(net, &state.flow);
        if after > before + rat_usize(m_n) * &half {
            return Err(SolverError::invariant("adjust exceeded its excess bound"));
        }
        state.delta = half;
        state.events.push(TraceEvent::Halve {
            phase: state.phase_index,
            delta: state.delta.clone(),
        });
        return Ok(TrialOutcome::KeepAndHalve { err });
    }

    let ex_hat = excess(net, &tight.flow);
    let mut delta_next = ex_hat / rat_usize(2 * n + m_n);
    if err > delta_next {
        delta_next = err.clone();
    }
    if !delta_next.is_positive() {
        return Err(SolverError::invariant("next scale must be positive outside termination"));
    }
    let witness = backend.witness(net, &tight.flow, &state.revealed, &delta_next)?;
    check_feasibility(net, &tight.flow, &state.revealed, &delta_next, &witness)?;
    state.events.push(TraceEvent::TrialSuccess {
        phase: state.phase_index,
        delta: state.delta.clone(),
        err: err.clone(),
        delta_next: Some(delta_next.clone()),
    });
    state.flow = tight.flow;
    state.potentials = witness;
    state.delta = delta_next.clone();
    Ok(TrialOutcome::NewState { err, delta_next })
}

fn ceil_log2(v: usize) -> usize {
    if v <= 1 {
        return 0;
    }
    (usize::BITS - (v - 1).leading_zeros()) as usize
}

fn phase_bound(n: usize, m: usize, m_n: usize) -> usize {
    (n + m_n) * 2 * ceil_log2(8 * (2 * n + m + 4) * m) + 1
}

fn phase_start_checks(
    net: &FlowNetwork,
    state: &ScalingState,
    excess_slack: usize,
) -> Result<(), SolverError> {
    check_feasibility(net, &state.flow, &state.revealed, &state.delta, &state.potentials)?;
    let ex = excess(net, &state.flow);
    if ex > rat_usize(excess_slack) * &state.delta {
        return Err(SolverError::invariant("excess above its phase-start bound"));
    }
    for (e, arc) in net.arcs.iter().enumerate() {
        let v = &state.flow.values[e];
        if arc.cost.is_restricted() && v.is_negative() {
            return Err(SolverError::invariant("restricted arc carries negative flow"));
        }
        if !state.revealed.contains(e) && !(v / &state.delta).is_integer() {
            return Err(SolverError::invariant(
                "flow off the revealed set is not a multiple of the scale",
            ));
        }
    }
    Ok(())
}

fn finalize(net: &FlowNetwork, state: ScalingState) -> Result<SolveOutcome, SolverError> {
    let flow = state.flow;
    let pot = state.potentials;

    for e in state.revealed.iter_members() {
        let arc = &net.arcs[e];
        let cost = forward_cost(&arc.cost, net.mode, &flow.values[e]);
        if !pot.is_tight(&cost, arc.tail, arc.head) {
            return Err(SolverError::invariant("revealed arc not tight at the optimum"));
        }
    }
    if flow.values.iter().any(|v| v.is_negative()) {
        return Err(SolverError::invariant("final flow has a negative arc value"));
    }
    let r = rho(net, &flow);
    for v in 0..net.node_count() {
        if r[v] != net.demands[v] {
            return Err(SolverError::invariant("final flow violates conservation"));
        }
    }
    let empty = RevealedArcSet::new(net);
    check_feasibility(net, &flow, &empty, &Rat::zero(), &pot)?;

    let hub_arcs: Vec<usize> = net
        .arcs
        .iter()
        .enumerate()
        .filter(|(e, a)| a.origin == ArcOrigin::Hub && !flow.values[*e].is_zero())
        .map(|(e, _)| e)
        .collect();

    let solution = Solution {
        flow,
        potentials: pot,
        revealed: state.revealed.iter_members().collect(),
        phases: state.phase_index,
        events: state.events,
    };
    if hub_arcs.is_empty() {
        Ok(SolveOutcome::Optimal(solution))
    } else {
        Ok(SolveOutcome::Infeasible { solution, hub_arcs })
    }
}

/// The enhanced scaling algorithm: terminates with an exact optimum, an
/// unboundedness verdict, or an infeasibility verdict via hub arcs.
pub fn run_enhanced<B: CostBackend>(
    net: &FlowNetwork,
    backend: &B,
) -> Result<SolveOutcome, SolverError> {
    net.validate()?;
    let n = net.node_count();
    let m = net.arc_count();
    let m_n = net.nonlinear_arc_count();

    let zero_flow = Pseudoflow::zeros(m);
    let empty = RevealedArcSet::new(net);
    let err0 = match backend.error_value(net, &zero_flow, &empty)? {
        crate::backend::ErrValue::Infinite => return Ok(SolveOutcome::Unbounded),
        crate::backend::ErrValue::Finite(v) => v,
    };
    let ex0 = excess(net, &zero_flow);
    let mut delta = ex0 / rat_usize(2 * n + m_n);
    if err0 > delta {
        delta = err0;
    }

    if delta.is_zero() {
        // Zero excess and zero error: the zero flow is already optimal.
        let witness = backend.witness(net, &zero_flow, &empty, &Rat::zero())?;
        let state = ScalingState {
            delta,
            flow: zero_flow,
            revealed: empty,
            potentials: witness,
            phase_index: 0,
            events: Vec::new(),
        };
        return finalize(net, state);
    }

    let potentials = backend.witness(net, &zero_flow, &empty, &delta)?;
    check_feasibility(net, &zero_flow, &empty, &delta, &potentials)?;
    let mut state = ScalingState {
        delta,
        flow: zero_flow,
        revealed: empty,
        potentials,
        phase_index: 0,
        events: Vec::new(),
    };

    let cap = phase_bound(n, m, m_n);
    loop {
        state.phase_index += 1;
        if state.phase_index > cap {
            return Err(SolverError::invariant("scaling phase bound exceeded"));
        }
        state.events.push(TraceEvent::PhaseStart {
            phase: state.phase_index,
            delta: state.delta.clone(),
        });
        phase_start_checks(net, &state, 2 * n + m_n)?;
        run_phase_main(net, &mut state, 2 * n + m_n)?;
        let extended = extend(net, &mut state)?;

        let run_trial =
            extended && discrepancy(net, &state.revealed, &net.demands) <= state.delta;
        if run_trial {
            match trial_and_error(net, &mut state, backend)? {
                TrialOutcome::Terminate { tight, witness } => {
                    let optimal =
                        f_optimal_to_optimal(net, &tight.flow, &witness, &state.revealed)?;
                    state.flow = optimal;
                    state.potentials = witness;
                    return finalize(net, state);
                }
                TrialOutcome::NewState { .. } | TrialOutcome::KeepAndHalve { .. } => {}
            }
        } else {
            let half = &state.delta / rat_usize(2);
            let before = excess(net, &state.flow);
            state.flow = adjust(net, &state.flow, &state.potentials, &half, &state.revealed)?;
            let after = excess(net, &state.flow);
            if after > before + rat_usize(m_n) * &half {
                return Err(SolverError::invariant("adjust exceeded its excess bound"));
            }
            state.delta = half;
            state.events.push(TraceEvent::Halve {
                phase: state.phase_index,
                delta: state.delta.clone(),
            });
        }
    }
}

/// The basic scaling algorithm, run for a fixed number of phases. It does not
/// terminate on its own; the caller provides the starting scale, which must
/// make the zero flow feasible and cover the initial excess.
pub fn run_basic(
    net: &FlowNetwork,
    delta0: &Rat,
    phase_budget: usize,
) -> Result<BasicRun, SolverError> {
    net.validate()?;
    if !delta0.is_positive() {
        return Err(SolverError::contract("starting scale must be positive"));
    }
    let n = net.node_count();
    let m = net.arc_count();
    let m_n = net.nonlinear_arc_count();
    let empty = RevealedArcSet::new(net);
    let zero_flow = Pseudoflow::zeros(m);
    let potentials = initial_potentials(net, &zero_flow, &empty, delta0)
        .ok_or_else(|| SolverError::contract("zero flow is not feasible at the starting scale"))?;
    if excess(net, &zero_flow) > rat_usize(2 * n + m) * delta0 {
        return Err(SolverError::contract("starting scale does not cover the initial excess"));
    }

    let mut state = ScalingState {
        delta: delta0.clone(),
        flow: zero_flow,
        revealed: empty,
        potentials,
        phase_index: 0,
        events: Vec::new(),
    };
    for phase in 0..phase_budget {
        state.phase_index += 1;
        state.events.push(TraceEvent::PhaseStart {
            phase: state.phase_index,
            delta: state.delta.clone(),
        });
        let cap = if phase == 0 { 2 * n + m } else { 2 * n + m_n };
        run_phase_main(net, &mut state, cap)?;
        let half = &state.delta / rat_usize(2);
        let before = excess(net, &state.flow);
        state.flow = adjust(net, &state.flow, &state.potentials, &half, &state.revealed)?;
        let after = excess(net, &state.flow);
        if after > before + rat_usize(m_n) * &half {
            return Err(SolverError::invariant("adjust exceeded its excess bound"));
        }
        state.delta = half;
        state.events.push(TraceEvent::Halve { phase: state.phase_index, delta: state.delta.clone() });
    }
    check_feasibility(net, &state.flow, &state.revealed, &state.delta, &state.potentials)?;
    Ok(BasicRun {
        flow: state.flow,
        potentials: state.potentials,
        final_delta: state.delta,
        events: state.events,
    })
}
