//! Independent reference checks: exhaustive support enumeration and direct
//! optimality verification. Nothing here reuses the engine's path machinery,
//! so agreement between the two is meaningful evidence.

use crate::backend::{CostBackend, TightVector};
use crate::cost::{forward_cost, reverse_cost, ArcCost, CostDescriptor, OracleMode};
use crate::error::SolverError;
use crate::network::{rho, ArcOrigin, CapacitatedInstance, FlowNetwork, Pseudoflow, ResKey, RevealedArcSet, UnionFind};
use crate::rational::Rat;
use crate::scaling::Potentials;
use num::{One, Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KktResult {
    Optimal,
    Violation { key: ResKey, slack: Option<Rat> },
}

/// Exact optimality check of a flow against given potentials: every residual
/// arc must satisfy its derivative bound. `slack` is the violation amount,
/// `None` when the bound itself is infinite.
pub fn kkt_check(net: &FlowNetwork, flow: &Pseudoflow, pot: &Potentials) -> KktResult {
    for (e, arc) in net.arcs.iter().enumerate() {
        let fe = &flow.values[e];
        let fwd = forward_cost(&arc.cost, net.mode, fe);
        if let Some(v) = violation(pot, &fwd, arc.tail, arc.head) {
            return KktResult::Violation { key: ResKey { arc: e, backward: false }, slack: v };
        }
        if fe.is_positive() {
            let bwd = reverse_cost(&arc.cost, net.mode, fe);
            if let Some(v) = violation(pot, &bwd, arc.head, arc.tail) {
                return KktResult::Violation { key: ResKey { arc: e, backward: true }, slack: v };
            }
        }
    }
    KktResult::Optimal
}

fn violation(pot: &Potentials, cost: &ArcCost, from: usize, to: usize) -> Option<Option<Rat>> {
    match cost {
        ArcCost::PosInfinite => None,
        ArcCost::NegInfinite => Some(None),
        ArcCost::Finite(c) => match pot.mode {
            OracleMode::Additive => {
                let slack = &pot.values[to] - &pot.values[from] - c;
                if slack.is_positive() {
                    Some(Some(slack))
                } else {
                    None
                }
            }
            OracleMode::Multiplicative => {
                let slack = &pot.values[to] - c * &pot.values[from];
                if slack.is_positive() {
                    Some(Some(slack))
                } else {
                    None
                }
            }
        },
    }
}

/// Label-correcting search for potentials certifying optimality of `flow`.
/// Independent of the engine's potential maintenance.
fn feasible_potentials(net: &FlowNetwork, flow: &Pseudoflow) -> Option<Potentials> {
    let n = net.node_count();
    struct Cand {
        from: usize,
        to: usize,
        cost: ArcCost,
    }
    let mut arcs = Vec::new();
    for (e, arc) in net.arcs.iter().enumerate() {
        let fe = &flow.values[e];
        arcs.push(Cand { from: arc.tail, to: arc.head, cost: forward_cost(&arc.cost, net.mode, fe) });
        if fe.is_positive() {
            arcs.push(Cand { from: arc.head, to: arc.tail, cost: reverse_cost(&arc.cost, net.mode, fe) });
        }
    }
    let mut values = match net.mode {
        OracleMode::Additive => vec![Rat::zero(); n],
        OracleMode::Multiplicative => vec![Rat::one(); n],
    };
    for round in 0..=n {
        let mut changed = false;
        for a in &arcs {
            match &a.cost {
                ArcCost::PosInfinite => continue,
                ArcCost::NegInfinite => return None,
                ArcCost::Finite(c) => {
                    let candidate = match net.mode {
                        OracleMode::Additive => &values[a.from] + c,
                        OracleMode::Multiplicative => &values[a.from] * c,
                    };
                    if candidate < values[a.to] {
                        values[a.to] = candidate;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
        if round == n {
            return None;
        }
    }
    if net.mode == OracleMode::Multiplicative && values.iter().any(|v| !v.is_positive()) {
        return None;
    }
    Some(Potentials { mode: net.mode, values })
}

#[derive(Debug)]
pub enum BruteForceOutcome {
    Optimal { tight: TightVector, potentials: Potentials },
    Unbounded,
    Infeasible,
}

/// Exhaustive search for an optimal solution over candidate supports.
///
/// Every linear acyclic subset of the (non-hub) arcs with zero demand
/// discrepancy is handed to the backend's trial; a candidate wins when it is
/// a nonnegative flow admitting optimality potentials. Exponential in the
/// arc count; refuses more than 16 candidate arcs.
pub fn brute_force_support<B: CostBackend>(
    net: &FlowNetwork,
    backend: &B,
) -> Result<BruteForceOutcome, SolverError> {
    let n = net.node_count();
    let candidates: Vec<usize> = (0..net.arc_count())
        .filter(|&e| net.arcs[e].origin != ArcOrigin::Hub)
        .collect();
    if candidates.len() > 16 {
        return Err(SolverError::contract("support enumeration limited to 16 arcs"));
    }

    // Nodes with nonzero demand must be covered by the support; checking the
    // bit pattern first skips most masks without touching any rationals.
    let coverage = if n <= 64 {
        let mut required = 0u64;
        for v in 0..n {
            if !net.demands[v].is_zero() {
                required |= 1 << v;
            }
        }
        let arc_bits: Vec<u64> = candidates
            .iter()
            .map(|&e| (1u64 << net.arcs[e].tail) | (1u64 << net.arcs[e].head))
            .collect();
        Some((required, arc_bits))
    } else {
        None
    };

    for mask in 0u32..(1u32 << candidates.len()) {
        if let Some((required, arc_bits)) = &coverage {
            let mut covered = 0u64;
            for (i, bits) in arc_bits.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    covered |= bits;
                }
            }
            if covered & required != *required {
                continue;
            }
        }
        let chosen: Vec<usize> =
            (0..candidates.len()).filter(|i| mask & (1 << i) != 0).map(|i| candidates[i]).collect();

        // Linear acyclicity.
        let mut uf_lin = UnionFind::new(n);
        let mut ok = true;
        for &e in &chosen {
            if net.arcs[e].cost.is_linear() && !uf_lin.union(net.arcs[e].tail, net.arcs[e].head) {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        // Zero discrepancy, isolated nodes included.
        let mut uf = UnionFind::new(n);
        for &e in &chosen {
            uf.union(net.arcs[e].tail, net.arcs[e].head);
        }
        let mut sums: std::collections::BTreeMap<usize, Rat> = std::collections::BTreeMap::new();
        for v in 0..n {
            *sums.entry(uf.find(v)).or_insert_with(Rat::zero) += &net.demands[v];
        }
        if sums.values().any(|s| !s.is_zero()) {
            continue;
        }

        let mut revealed = RevealedArcSet::new(net);
        for &e in &chosen {
            revealed.add(net, e)?;
        }
        let tight = match backend.trial(net, &revealed, &net.demands) {
            Ok(t) => t,
            Err(SolverError::Contract(_)) => continue,
            Err(other) => return Err(other),
        };
        if tight.flow.values.iter().any(|v| v.is_negative()) {
            continue;
        }
        let r = rho(net, &tight.flow);
        if (0..n).any(|v| r[v] != net.demands[v]) {
            continue;
        }
        if let Some(pot) = feasible_potentials(net, &tight.flow) {
            return Ok(BruteForceOutcome::Optimal { tight, potentials: pot });
        }
    }

    if has_negative_linear_cycle(net) {
        Ok(BruteForceOutcome::Unbounded)
    } else {
        Ok(BruteForceOutcome::Infeasible)
    }
}

/// Negative cycle among the linear arcs alone: flow around it decreases the
/// objective forever.
fn has_negative_linear_cycle(net: &FlowNetwork) -> bool {
    let n = net.node_count();
    let mut arcs = Vec::new();
    for arc in &net.arcs {
        if !arc.cost.is_linear() {
            continue;
        }
        match forward_cost(&arc.cost, net.mode, &Rat::zero()) {
            ArcCost::Finite(c) => arcs.push((arc.tail, arc.head, c)),
            _ => {}
        }
    }
    let neutral = match net.mode {
        OracleMode::Additive => Rat::zero(),
        OracleMode::Multiplicative => Rat::one(),
    };
    let mut dist = vec![neutral; n];
    for round in 0..=n {
        let mut changed = false;
        for (from, to, c) in &arcs {
            let candidate = match net.mode {
                OracleMode::Additive => &dist[*from] + c,
                OracleMode::Multiplicative => &dist[*from] * c,
            };
            if candidate < dist[*to] {
                dist[*to] = candidate;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
        if round == n {
            return true;
        }
    }
    false
}

/// Objective `Σ c·f² + d·f` of a capacitated quadratic instance.
pub fn quadratic_objective(inst: &CapacitatedInstance, flows: &[Rat]) -> Rat {
    let mut total = Rat::zero();
    for (e, arc) in inst.arcs.iter().enumerate() {
        match &arc.cost {
            CostDescriptor::Linear { d } => total += d * &flows[e],
            CostDescriptor::Quadratic { c, d } => {
                total += c * &flows[e] * &flows[e] + d * &flows[e];
            }
            _ => panic!("quadratic objective of a market descriptor"),
        }
    }
    total
}

/// Direct optimum of a tiny capacitated quadratic instance by enumerating,
/// per arc, whether it sits at a bound or strictly inside. Interior arcs
/// must be tight; bound arcs must satisfy the matching dual inequality after
/// aligning the per-component potential shifts.
pub fn brute_force_capacitated_quadratic(
    inst: &CapacitatedInstance,
) -> Result<Option<(Vec<Rat>, Rat)>, SolverError> {
    let m = inst.arcs.len();
    if m > 10 {
        return Err(SolverError::contract("regime enumeration limited to 10 arcs"));
    }
    if inst.mode != OracleMode::Additive {
        return Err(SolverError::contract("regime enumeration is quadratic-only"));
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Regime {
        Lower,
        Interior,
        Upper,
    }
    let n = inst.demands.len();
    let mut best: Option<(Vec<Rat>, Rat)> = None;

    let mut regime = vec![Regime::Lower; m];
    loop {
        'check: {
            // Fixed boundary flows and the demands left for interior arcs.
            let mut fixed = vec![Rat::zero(); m];
            let mut residual = inst.demands.clone();
            let mut interior = Vec::new();
            for (e, arc) in inst.arcs.iter().enumerate() {
                match regime[e] {
                    Regime::Lower => fixed[e] = arc.lower.clone(),
                    Regime::Upper => match &arc.upper {
                        Some(u) => fixed[e] = u.clone(),
                        None => break 'check,
                    },
                    Regime::Interior => {
                        interior.push(e);
                        continue;
                    }
                }
                residual[arc.tail] += &fixed[e];
                residual[arc.head] -= &fixed[e];
            }

            // Interior arcs as an uncapacitated tight system.
            let sub_arcs: Vec<crate::network::Arc> = interior
                .iter()
                .map(|&e| crate::network::Arc {
                    tail: inst.arcs[e].tail,
                    head: inst.arcs[e].head,
                    cost: inst.arcs[e].cost.clone(),
                    origin: ArcOrigin::Native,
                })
                .collect();
            let sub = FlowNetwork {
                demands: residual.clone(),
                arcs: sub_arcs,
                mode: OracleMode::Additive,
                anchor: None,
                node_origin: vec![crate::network::NodeOrigin::Native; n],
            };
            let mut revealed = RevealedArcSet::new(&sub);
            let mut acyclic = true;
            for e_sub in 0..interior.len() {
                if !revealed.can_add(&sub, e_sub) {
                    acyclic = false;
                    break;
                }
                revealed.add(&sub, e_sub)?;
            }
            if !acyclic {
                break 'check;
            }
            let tight = match crate::quadratic::trial_quadratic(&sub, &revealed, &residual) {
                Ok(t) => t,
                Err(SolverError::Contract(_)) => break 'check,
                Err(other) => return Err(other),
            };
            let mut flows = fixed.clone();
            let mut pot = Vec::with_capacity(n);
            for p in &tight.potentials {
                match p {
                    crate::backend::PotValue::Finite(v) => pot.push(v.clone()),
                    crate::backend::PotValue::Infinite => break 'check,
                }
            }
            for (idx, &e) in interior.iter().enumerate() {
                flows[e] = tight.flow.values[idx].clone();
                if flows[e] < inst.arcs[e].lower {
                    break 'check;
                }
                if let Some(u) = &inst.arcs[e].upper {
                    if &flows[e] > u {
                        break 'check;
                    }
                }
            }

            // Bound arcs link components of the interior system; the free
            // per-component shifts must satisfy their dual inequalities.
            // Difference constraints, solved by label correcting.
            let mut uf = UnionFind::new(n);
            for &e in &interior {
                uf.union(inst.arcs[e].tail, inst.arcs[e].head);
            }
            let mut cons: Vec<(usize, usize, Rat)> = Vec::new(); // s[to] - s[from] <= w
            for (e, arc) in inst.arcs.iter().enumerate() {
                let deriv = match crate::cost::derivative(&arc.cost, &flows[e]) {
                    crate::cost::DerivativeValue::Finite(v) => v,
                    crate::cost::DerivativeValue::NegInfinite => break 'check,
                };
                let gap = &pot[arc.head] - &pot[arc.tail];
                let (ktail, khead) = (uf.find(arc.tail), uf.find(arc.head));
                let below_upper = match &arc.upper {
                    Some(u) => &flows[e] < u,
                    None => true,
                };
                if below_upper {
                    // f may grow: (π + s)_head − (π + s)_tail ≤ C'(f)
                    cons.push((ktail, khead, &deriv - &gap));
                }
                if flows[e] > arc.lower {
                    // f may shrink: (π + s)_head − (π + s)_tail ≥ C'(f)
                    cons.push((khead, ktail, &gap - &deriv));
                }
            }
            let mut shift: std::collections::BTreeMap<usize, Rat> = std::collections::BTreeMap::new();
            for v in 0..n {
                shift.entry(uf.find(v)).or_insert_with(Rat::zero);
            }
            let comps = shift.len();
            let mut feasible = true;
            for round in 0..=comps {
                let mut changed = false;
                for (from, to, w) in &cons {
                    let candidate = &shift[from] + w;
                    if candidate < shift[to] {
                        shift.insert(*to, candidate);
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
                if round == comps {
                    feasible = false;
                    break;
                }
            }
            if !feasible {
                break 'check;
            }

            let obj = quadratic_objective(inst, &flows);
            match &best {
                Some((_, b)) if *b <= obj => {}
                _ => best = Some((flows, obj)),
            }
        }

        // Next regime vector.
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(best);
            }
            regime[pos] = match regime[pos] {
                Regime::Lower => Regime::Interior,
                Regime::Interior => Regime::Upper,
                Regime::Upper => {
                    regime[pos] = Regime::Lower;
                    pos += 1;
                    continue;
                }
            };
            break;
        }
    }
}

/// Wrapper for checking a solution of the original capacitated instance:
/// conservation, bounds, and two-sided dual feasibility.
pub fn kkt_check_capacitated(
    inst: &CapacitatedInstance,
    flows: &[Rat],
    pot: &[Rat],
) -> Result<(), String> {
    let n = inst.demands.len();
    let mut r = vec![Rat::zero(); n];
    for (e, arc) in inst.arcs.iter().enumerate() {
        if flows[e] < arc.lower {
            return Err(format!("arc {e} below its lower bound"));
        }
        if let Some(u) = &arc.upper {
            if &flows[e] > u {
                return Err(format!("arc {e} above its upper bound"));
            }
        }
        r[arc.tail] -= &flows[e];
        r[arc.head] += &flows[e];
    }
    for v in 0..n {
        if r[v] != inst.demands[v] {
            return Err(format!("conservation fails at node {v}"));
        }
    }
    for (e, arc) in inst.arcs.iter().enumerate() {
        let deriv = match crate::cost::derivative(&arc.cost, &flows[e]) {
            crate::cost::DerivativeValue::Finite(v) => v,
            crate::cost::DerivativeValue::NegInfinite => {
                return Err(format!("arc {e} has an infinite derivative"));
            }
        };
        let gap = &pot[arc.head] - &pot[arc.tail];
        let below_upper = match &arc.upper {
            Some(u) => &flows[e] < u,
            None => true,
        };
        if below_upper && gap > deriv {
            return Err(format!("arc {e}: potential gap exceeds the derivative"));
        }
        if flows[e] > arc.lower && gap < deriv {
            return Err(format!("arc {e}: derivative exceeds the potential gap"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Arc, CapArc, NodeOrigin};
    use crate::quadratic::QuadraticBackend;
    use crate::rational::{rat, rat_int};

    fn quad(c: i64, d: i64) -> CostDescriptor {
        CostDescriptor::Quadratic { c: rat_int(c), d: rat_int(d) }
    }

    fn net(demands: Vec<i64>, arcs: Vec<(usize, usize, CostDescriptor)>) -> FlowNetwork {
        let n = demands.len();
        FlowNetwork {
            demands: demands.into_iter().map(rat_int).collect(),
            arcs: arcs
                .into_iter()
                .map(|(t, h, c)| Arc { tail: t, head: h, cost: c, origin: ArcOrigin::Native })
                .collect(),
            mode: OracleMode::Additive,
            anchor: None,
            node_origin: vec![NodeOrigin::Native; n],
        }
    }

    #[test]
    fn kkt_accepts_tight_single_arc() {
        let network = net(vec![-4, 4], vec![(0, 1, quad(1, 0))]);
        let f = Pseudoflow { values: vec![rat_int(4)] };
        let pot = Potentials { mode: OracleMode::Additive, values: vec![rat_int(0), rat_int(8)] };
        assert_eq!(kkt_check(&network, &f, &pot), KktResult::Optimal);
    }

    #[test]
    fn kkt_rejects_perturbed_dual() {
        let network = net(vec![-4, 4], vec![(0, 1, quad(1, 0))]);
        let f = Pseudoflow { values: vec![rat_int(4)] };
        let pot = Potentials { mode: OracleMode::Additive, values: vec![rat_int(0), rat_int(9)] };
        match kkt_check(&network, &f, &pot) {
            KktResult::Violation { key, slack } => {
                // The gap 9 exceeds the derivative window [8, 8] from above,
                // which breaks the forward bound by exactly one.
                assert_eq!(key, ResKey { arc: 0, backward: false });
                assert_eq!(slack, Some(rat_int(1)));
            }
            KktResult::Optimal => panic!("perturbed dual must fail"),
        }
    }

    #[test]
    fn kkt_empty_network() {
        let network = net(vec![], vec![]);
        let f = Pseudoflow::zeros(0);
        let pot = Potentials::zero_additive(0);
        assert_eq!(kkt_check(&network, &f, &pot), KktResult::Optimal);
    }

    #[test]
    fn brute_force_single_arc() {
        let network = net(vec![-4, 4], vec![(0, 1, quad(1, 0))]);
        match brute_force_support(&network, &QuadraticBackend).unwrap() {
            BruteForceOutcome::Optimal { tight, .. } => {
                assert_eq!(tight.flow.values, vec![rat_int(4)]);
            }
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn brute_force_parallel_quadratics() {
        let network = net(vec![-6, 6], vec![(0, 1, quad(1, 0)), (0, 1, quad(2, 0))]);
        match brute_force_support(&network, &QuadraticBackend).unwrap() {
            BruteForceOutcome::Optimal { tight, .. } => {
                assert_eq!(tight.flow.values, vec![rat_int(4), rat_int(2)]);
            }
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn brute_force_fisher_diag() {
        let mkt = crate::fisher::LinearMarket {
            budgets: vec![rat_int(2), rat_int(3)],
            num_goods: 2,
            utilities: vec![
                crate::fisher::UtilityEntry { buyer: 0, good: 0, utility: rat_int(1) },
                crate::fisher::UtilityEntry { buyer: 1, good: 1, utility: rat_int(1) },
            ],
        };
        let (network, map) = crate::fisher::build_shmyrev(&mkt).unwrap();
        let backend = crate::fisher::FisherBackend { map: map.clone() };
        match brute_force_support(&network, &backend).unwrap() {
            BruteForceOutcome::Optimal { tight, .. } => {
                assert_eq!(tight.flow.values[map.good_sink_arc[0]], rat_int(2));
                assert_eq!(tight.flow.values[map.good_sink_arc[1]], rat_int(3));
            }
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn regime_oracle_matches_simple_box() {
        // One arc 0→1 with bounds [1, 5], cost α²−6α, demands force f = 3
        // when free; b chosen so conservation allows any f in [1,5]... flows
        // are pinned by b, so pick b = (−3, 3): f = 3 interior.
        let inst = CapacitatedInstance {
            demands: vec![rat_int(-3), rat_int(3)],
            arcs: vec![CapArc {
                tail: 0,
                head: 1,
                cost: quad(1, -6),
                lower: rat_int(1),
                upper: Some(rat_int(5)),
            }],
            mode: OracleMode::Additive,
        };
        let (flows, obj) = brute_force_capacitated_quadratic(&inst).unwrap().unwrap();
        assert_eq!(flows, vec![rat_int(3)]);
        assert_eq!(obj, rat_int(9 - 18));
        assert!(kkt_check_capacitated(&inst, &flows, &vec![rat_int(0), rat_int(0)]).is_ok());
    }

    #[test]
    fn regime_oracle_clamps_to_bounds() {
        // Cost pulls flow to 3 but the upper bound stops at 2.
        let inst = CapacitatedInstance {
            demands: vec![rat_int(0), rat_int(0)],
            arcs: vec![
                CapArc { tail: 0, head: 1, cost: quad(1, -6), lower: rat_int(0), upper: Some(rat_int(2)) },
                CapArc { tail: 1, head: 0, cost: quad(1, 0), lower: rat_int(0), upper: Some(rat_int(10)) },
            ],
            mode: OracleMode::Additive,
        };
        let (flows, _) = brute_force_capacitated_quadratic(&inst).unwrap().unwrap();
        // circulation: f on both arcs equal; optimum of (f²−6f) + f² is at
        // f = 3/2, inside the bounds.
        assert_eq!(flows, vec![rat(3, 2), rat(3, 2)]);
    }
}
