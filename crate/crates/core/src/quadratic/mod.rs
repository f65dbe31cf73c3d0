//! Backend for convex quadratic arc costs `c·α² + d·α` (and linear arcs as
//! the `c = 0` case).
//!
//! `trial` solves the tight system on the revealed set exactly: linear trees
//! fix potential differences, nonlinear arcs spanned inside a tree get forced
//! flows, the contracted tree graph yields a weighted Laplacian system, and
//! tree flows follow by leaf peeling. `error` reduces to a minimum
//! cost-to-time ratio cycle computation.

mod laplacian;
mod ratio_cycle;

pub use ratio_cycle::{bellman_ford, min_ratio_cycle, RatioArc, RatioCycleInstance};

use crate::backend::{CostBackend, ErrValue, PotValue, TightVector};
use crate::cost::{CostDescriptor, OracleMode};
use crate::error::SolverError;
use crate::network::{rho, FlowNetwork, Pseudoflow, RevealedArcSet};
use crate::rational::{rat_usize, Rat};
use crate::scaling::Potentials;
use laplacian::solve_dense;
use num::Zero;
use std::collections::BTreeMap;

pub struct QuadraticBackend;

fn coeffs(desc: &CostDescriptor) -> (Rat, Rat) {
    match desc {
        CostDescriptor::Linear { d } => (Rat::zero(), d.clone()),
        CostDescriptor::Quadratic { c, d } => (c.clone(), d.clone()),
        _ => panic!("quadratic backend received a market cost descriptor"),
    }
}

/// Solves the tight system on `revealed` for demands `b_hat`.
pub fn trial_quadratic(
    net: &FlowNetwork,
    revealed: &RevealedArcSet,
    b_hat: &[Rat],
) -> Result<TightVector, SolverError> {
    if net.mode != OracleMode::Additive {
        return Err(SolverError::contract("quadratic trial requires an additive network"));
    }
    let n = net.node_count();
    let m = net.arc_count();
    let roots = revealed.component_roots(n);

    let mut comp_nodes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        comp_nodes.entry(roots[v]).or_default().push(v);
    }
    let mut comp_arcs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in revealed.iter_members() {
        comp_arcs.entry(roots[net.arcs[e].tail]).or_default().push(e);
    }

    for (root, nodes) in &comp_nodes {
        let mut sum = Rat::zero();
        for &v in nodes {
            sum += &b_hat[v];
        }
        if !sum.is_zero() {
            return Err(SolverError::contract(format!(
                "component {root} of the revealed set has nonzero demand"
            )));
        }
    }

    let mut flow = Pseudoflow::zeros(m);
    let mut pot = vec![Rat::zero(); n];

    for (_root, nodes) in &comp_nodes {
        let arcs = comp_arcs.get(_root).cloned().unwrap_or_default();
        solve_component(net, b_hat, nodes, &arcs, &mut flow, &mut pot)?;
    }

    // Exact residual check of the tight system.
    let r = rho(net, &flow);
    for v in 0..n {
        if r[v] != b_hat[v] {
            return Err(SolverError::invariant("trial flow misses its demands"));
        }
    }
    for e in revealed.iter_members() {
        let (c, d) = coeffs(&net.arcs[e].cost);
        let want = c * &flow.values[e] * rat_usize(2) + d;
        let have = &pot[net.arcs[e].head] - &pot[net.arcs[e].tail];
        if want != have {
            return Err(SolverError::invariant("trial potentials not tight on a revealed arc"));
        }
    }

    Ok(TightVector {
        flow,
        potentials: pot.into_iter().map(PotValue::Finite).collect(),
    })
}

fn solve_component(
    net: &FlowNetwork,
    b_hat: &[Rat],
    nodes: &[usize],
    arcs: &[usize],
    flow: &mut Pseudoflow,
    pot: &mut [Rat],
) -> Result<(), SolverError> {
    // Trees of linear revealed arcs, with potential offsets inside each tree.
    let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut linear_arcs = Vec::new();
    let mut nonlinear_arcs = Vec::new();
    for &e in arcs {
        let (c, _) = coeffs(&net.arcs[e].cost);
        if c.is_zero() {
            linear_arcs.push(e);
            adj.entry(net.arcs[e].tail).or_default().push((e, net.arcs[e].head));
            adj.entry(net.arcs[e].head).or_default().push((e, net.arcs[e].tail));
        } else {
            nonlinear_arcs.push(e);
        }
    }

    let mut tree_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut offset: BTreeMap<usize, Rat> = BTreeMap::new();
    let mut tree_nodes: Vec<Vec<usize>> = Vec::new();
    for &v in nodes {
        if tree_of.contains_key(&v) {
            continue;
        }
        let tree_id = tree_nodes.len();
        let mut members = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        tree_of.insert(v, tree_id);
        offset.insert(v, Rat::zero());
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            members.push(u);
            for &(e, w) in adj.get(&u).into_iter().flatten() {
                if tree_of.contains_key(&w) {
                    continue;
                }
                let (_, d) = coeffs(&net.arcs[e].cost);
                let off = if net.arcs[e].tail == u {
                    offset[&u].clone() + d
                } else {
                    offset[&u].clone() - d
                };
                tree_of.insert(w, tree_id);
                offset.insert(w, off);
                queue.push_back(w);
            }
        }
        tree_nodes.push(members);
    }
    let k = tree_nodes.len();

    // Nonlinear arcs inside one tree have forced flow; the rest couple trees.
    let mut cross: Vec<(usize, usize, usize, Rat, Rat)> = Vec::new(); // (arc, tu, tv, d', w)
    for &e in &nonlinear_arcs {
        let (c, d) = coeffs(&net.arcs[e].cost);
        let (u, v) = (net.arcs[e].tail, net.arcs[e].head);
        let (tu, tv) = (tree_of[&u], tree_of[&v]);
        if tu == tv {
            flow.values[e] = (&offset[&v] - &offset[&u] - d) / (c * rat_usize(2));
        } else {
            let d_shift = d + &offset[&u] - &offset[&v];
            let w = (c * rat_usize(2)).recip();
            cross.push((e, tu, tv, d_shift, w));
        }
    }

    // Weighted Laplacian over trees, grounded at the tree holding the
    // component's lowest node.
    let mut matrix = vec![vec![Rat::zero(); k]; k];
    let mut rhs = vec![Rat::zero(); k];
    for (t, members) in tree_nodes.iter().enumerate() {
        for &v in members {
            rhs[t] += &b_hat[v];
        }
    }
    for (_e, tu, tv, d_shift, w) in &cross {
        matrix[*tv][*tv] += w;
        matrix[*tv][*tu] -= w;
        matrix[*tu][*tu] += w;
        matrix[*tu][*tv] -= w;
        rhs[*tv] += w * d_shift;
        rhs[*tu] -= w * d_shift;
    }
    let lowest = *nodes.iter().min().expect("component has a node");
    let ground = tree_of[&lowest];
    for c in 0..k {
        matrix[ground][c] = Rat::zero();
    }
    matrix[ground][ground] = Rat::from_integer(1.into());
    rhs[ground] = -offset[&lowest].clone();

    let tree_pot = solve_dense(matrix, rhs)
        .ok_or_else(|| SolverError::invariant("singular system for a connected component"))?;

    for &v in nodes {
        pot[v] = &tree_pot[tree_of[&v]] + &offset[&v];
    }
    for (e, tu, tv, d_shift, w) in &cross {
        flow.values[*e] = (&tree_pot[*tv] - &tree_pot[*tu] - d_shift) * w;
    }

    // Remaining demands fall on the linear trees; peel leaves.
    let mut residual: BTreeMap<usize, Rat> = nodes.iter().map(|&v| (v, b_hat[v].clone())).collect();
    for &e in &nonlinear_arcs {
        let x = flow.values[e].clone();
        *residual.get_mut(&net.arcs[e].tail).unwrap() += &x;
        *residual.get_mut(&net.arcs[e].head).unwrap() -= &x;
    }
    let mut degree: BTreeMap<usize, usize> = nodes.iter().map(|&v| (v, 0)).collect();
    let mut remaining: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &e in &linear_arcs {
        let (u, v) = (net.arcs[e].tail, net.arcs[e].head);
        *degree.get_mut(&u).unwrap() += 1;
        *degree.get_mut(&v).unwrap() += 1;
        remaining.entry(u).or_default().push((e, v));
        remaining.entry(v).or_default().push((e, u));
    }
    let mut used = vec![false; net.arc_count()];
    let mut stack: Vec<usize> = nodes.iter().copied().filter(|v| degree[v] == 1).collect();
    while let Some(v) = stack.pop() {
        if degree[&v] != 1 {
            continue;
        }
        let &(e, u) = remaining[&v]
            .iter()
            .find(|(e, _)| !used[*e])
            .expect("leaf must have one unused arc");
        used[e] = true;
        let need = residual[&v].clone();
        if net.arcs[e].head == v {
            flow.values[e] = need.clone();
            *residual.get_mut(&u).unwrap() += &need;
        } else {
            flow.values[e] = -need.clone();
            *residual.get_mut(&u).unwrap() += &need;
        }
        *residual.get_mut(&v).unwrap() = Rat::zero();
        *degree.get_mut(&v).unwrap() = 0;
        *degree.get_mut(&u).unwrap() -= 1;
        if degree[&u] == 1 {
            stack.push(u);
        }
    }
    for (v, r) in &residual {
        if !r.is_zero() {
            return Err(SolverError::invariant(format!(
                "leaf peeling left node {v} unbalanced"
            )));
        }
    }
    Ok(())
}

/// Residual arc data for the ratio-cycle reduction: every arc forward and
/// every revealed arc backward, cost `2cf + d` (negated backward), time `2c`.
fn ratio_instance(net: &FlowNetwork, flow: &Pseudoflow, revealed: &RevealedArcSet) -> RatioCycleInstance {
    let mut arcs = Vec::new();
    for (e, arc) in net.arcs.iter().enumerate() {
        let (c, d) = coeffs(&arc.cost);
        let p = &c * &flow.values[e] * rat_usize(2) + &d;
        let tau = &c * rat_usize(2);
        arcs.push(RatioArc { from: arc.tail, to: arc.head, cost: p.clone(), time: tau.clone() });
        if revealed.contains(e) {
            arcs.push(RatioArc { from: arc.head, to: arc.tail, cost: -p, time: tau });
        }
    }
    RatioCycleInstance { nodes: net.node_count(), arcs }
}

/// Smallest scale making a tight vector feasible, with witness potentials.
/// A negative cycle among the linear arcs alone means no scale works.
pub fn error_quadratic(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    revealed: &RevealedArcSet,
) -> Result<(ErrValue, Option<Potentials>), SolverError> {
    let inst = ratio_instance(net, flow, revealed);
    // Zero-time (linear) arcs first: a negative cycle among them cannot be
    // repaired by any scale.
    let linear_arcs: Vec<(usize, usize, Rat)> = inst
        .arcs
        .iter()
        .filter(|a| a.time.is_zero())
        .map(|a| (a.from, a.to, a.cost.clone()))
        .collect();
    if bellman_ford(inst.nodes, &linear_arcs).is_err() {
        return Ok((ErrValue::Infinite, None));
    }
    let (nu, labels) = ratio_cycle::newton_min_nu(&inst)?;
    let pot = Potentials { mode: OracleMode::Additive, values: labels };
    Ok((ErrValue::Finite(nu), Some(pot)))
}

/// Witness potentials at scale `delta ≥ err`: shortest-path labels for costs
/// `p + delta·τ` over the same arc set.
pub fn witness_quadratic(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    revealed: &RevealedArcSet,
    delta: &Rat,
) -> Result<Potentials, SolverError> {
    let inst = ratio_instance(net, flow, revealed);
    let arcs: Vec<(usize, usize, Rat)> = inst
        .arcs
        .iter()
        .map(|a| (a.from, a.to, &a.cost + delta * &a.time))
        .collect();
    match bellman_ford(inst.nodes, &arcs) {
        Ok(labels) => Ok(Potentials { mode: OracleMode::Additive, values: labels }),
        Err(_) => Err(SolverError::invariant("witness requested below the error value")),
    }
}

impl CostBackend for QuadraticBackend {
    fn trial(
        &self,
        net: &FlowNetwork,
        revealed: &RevealedArcSet,
        b_hat: &[Rat],
    ) -> Result<TightVector, SolverError> {
        trial_quadratic(net, revealed, b_hat)
    }

    fn error_value(
        &self,
        net: &FlowNetwork,
        flow: &Pseudoflow,
        revealed: &RevealedArcSet,
    ) -> Result<ErrValue, SolverError> {
        Ok(error_quadratic(net, flow, revealed)?.0)
    }

    fn witness(
        &self,
        net: &FlowNetwork,
        flow: &Pseudoflow,
        revealed: &RevealedArcSet,
        delta: &Rat,
    ) -> Result<Potentials, SolverError> {
        witness_quadratic(net, flow, revealed, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Arc, ArcOrigin, NodeOrigin};
    use crate::rational::{rat, rat_int};

    fn quad(c: i64, d: i64) -> CostDescriptor {
        CostDescriptor::Quadratic { c: rat_int(c), d: rat_int(d) }
    }

    fn lin(d: i64) -> CostDescriptor {
        CostDescriptor::Linear { d: rat_int(d) }
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

    fn reveal(network: &FlowNetwork, arcs: &[usize]) -> RevealedArcSet {
        let mut r = RevealedArcSet::new(network);
        for &e in arcs {
            r.add(network, e).unwrap();
        }
        r
    }

    fn fin(p: &PotValue) -> Rat {
        match p {
            PotValue::Finite(v) => v.clone(),
            PotValue::Infinite => panic!("unexpected infinite potential"),
        }
    }

    #[test]
    fn trial_two_arc_path() {
        let network = net(vec![-2, 0, 2], vec![(0, 1, quad(1, 0)), (1, 2, quad(1, 0))]);
        let revealed = reveal(&network, &[0, 1]);
        let b_hat = vec![rat_int(-2), rat_int(0), rat_int(2)];
        let out = trial_quadratic(&network, &revealed, &b_hat).unwrap();
        assert_eq!(out.flow.values, vec![rat_int(2), rat_int(2)]);
        let pots: Vec<Rat> = out.potentials.iter().map(fin).collect();
        assert_eq!(pots, vec![rat_int(0), rat_int(4), rat_int(8)]);
    }

    #[test]
    fn trial_linear_tree() {
        let network = net(vec![-3, 3], vec![(0, 1, lin(5))]);
        let revealed = reveal(&network, &[0]);
        let b_hat = vec![rat_int(-3), rat_int(3)];
        let out = trial_quadratic(&network, &revealed, &b_hat).unwrap();
        assert_eq!(out.flow.values, vec![rat_int(3)]);
        let pots: Vec<Rat> = out.potentials.iter().map(fin).collect();
        assert_eq!(pots, vec![rat_int(0), rat_int(5)]);
    }

    #[test]
    fn trial_empty_set() {
        let network = net(vec![0, 0], vec![(0, 1, quad(1, 0))]);
        let revealed = RevealedArcSet::new(&network);
        let b_hat = vec![rat_int(0), rat_int(0)];
        let out = trial_quadratic(&network, &revealed, &b_hat).unwrap();
        assert_eq!(out.flow.values, vec![rat_int(0)]);
        let pots: Vec<Rat> = out.potentials.iter().map(fin).collect();
        assert_eq!(pots, vec![rat_int(0), rat_int(0)]);
    }

    #[test]
    fn trial_rejects_nonzero_discrepancy() {
        let network = net(vec![-1, 1], vec![(0, 1, quad(1, 0))]);
        let revealed = RevealedArcSet::new(&network);
        let b_hat = vec![rat_int(-1), rat_int(1)];
        assert!(matches!(
            trial_quadratic(&network, &revealed, &b_hat),
            Err(SolverError::Contract(_))
        ));
    }

    #[test]
    fn trial_mixed_linear_and_quadratic_component() {
        // 0 -lin(1)- 1 -quad(1,0)- 2, demands (-3, 0, 3)
        let network = net(vec![-3, 0, 3], vec![(0, 1, lin(1)), (1, 2, quad(1, 0))]);
        let revealed = reveal(&network, &[0, 1]);
        let out = trial_quadratic(&network, &revealed, &network.demands.clone()).unwrap();
        assert_eq!(out.flow.values, vec![rat_int(3), rat_int(3)]);
        let pots: Vec<Rat> = out.potentials.iter().map(fin).collect();
        assert_eq!(pots, vec![rat_int(0), rat_int(1), rat_int(7)]);
    }

    #[test]
    fn error_lone_tight_arc() {
        let network = net(vec![-4, 4], vec![(0, 1, quad(1, 0))]);
        let revealed = reveal(&network, &[0]);
        let f = Pseudoflow { values: vec![rat_int(4)] };
        let (err, pot) = error_quadratic(&network, &f, &revealed).unwrap();
        assert_eq!(err, ErrValue::Finite(rat_int(0)));
        let pot = pot.unwrap();
        assert_eq!(&pot.values[1] - &pot.values[0], rat_int(8));
    }

    #[test]
    fn error_parallel_linear_arc() {
        let network = net(vec![-4, 4], vec![(0, 1, quad(1, 0)), (0, 1, lin(5))]);
        let revealed = reveal(&network, &[0]);
        let f = Pseudoflow { values: vec![rat_int(4), rat_int(0)] };
        let (err, _) = error_quadratic(&network, &f, &revealed).unwrap();
        assert_eq!(err, ErrValue::Finite(rat(3, 2)));
    }

    #[test]
    fn error_antiparallel_linear_cycle_is_infinite() {
        let network = net(vec![0, 0], vec![(0, 1, lin(2)), (1, 0, lin(-6))]);
        let revealed = RevealedArcSet::new(&network);
        let f = Pseudoflow::zeros(2);
        let (err, _) = error_quadratic(&network, &f, &revealed).unwrap();
        assert_eq!(err, ErrValue::Infinite);
    }

    #[test]
    fn error_minimality_probe() {
        // err > 0: feasibility holds at err but fails slightly below it.
        let network = net(vec![-4, 4], vec![(0, 1, quad(1, 0)), (0, 1, lin(5))]);
        let revealed = reveal(&network, &[0]);
        let f = Pseudoflow { values: vec![rat_int(4), rat_int(0)] };
        let (err, pot) = error_quadratic(&network, &f, &revealed).unwrap();
        let err = match err {
            ErrValue::Finite(v) => v,
            ErrValue::Infinite => panic!(),
        };
        let pot = pot.unwrap();
        crate::scaling::check_feasibility(&network, &f, &revealed, &err, &pot).unwrap();
        let shrunk = &err * rat(((1u64 << 20) - 1) as i64, 1 << 20);
        assert!(witness_quadratic(&network, &f, &revealed, &shrunk).is_err());
    }
}
