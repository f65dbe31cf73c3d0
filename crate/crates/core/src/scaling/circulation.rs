//! Conversion of an F-optimal vector into a genuine optimum.
//!
//! Nonlinear arc values are already unique; only flow on tight linear arcs
//! may be redistributed. Fixing everything else reduces the task to one
//! feasible-circulation problem on the tight linear arcs, solved by a single
//! max-flow computation.

use crate::cost::forward_cost;
use crate::error::SolverError;
use crate::network::{rho, FlowNetwork, Pseudoflow, RevealedArcSet};
use crate::rational::Rat;
use crate::scaling::Potentials;
use num::{Signed, Zero};
use std::collections::VecDeque;

/// Exact max-flow (shortest augmenting paths). Capacities `None` mean
/// unbounded; arcs are directed and parallel arcs are allowed.
struct MaxFlow {
    n: usize,
    // arc: (from, to, cap); reverse residual tracked via flow values
    arcs: Vec<(usize, usize, Option<Rat>)>,
    flow: Vec<Rat>,
}

impl MaxFlow {
    fn new(n: usize) -> Self {
        MaxFlow { n, arcs: Vec::new(), flow: Vec::new() }
    }

    fn add(&mut self, from: usize, to: usize, cap: Option<Rat>) -> usize {
        self.arcs.push((from, to, cap));
        self.flow.push(Rat::zero());
        self.arcs.len() - 1
    }

    fn residual(&self, e: usize, backward: bool) -> Option<Rat> {
        let (_, _, cap) = &self.arcs[e];
        if backward {
            let f = &self.flow[e];
            if f.is_positive() {
                Some(f.clone())
            } else {
                None
            }
        } else {
            match cap {
                None => Some(Rat::from_integer((-1).into())), // sentinel: unbounded
                Some(c) => {
                    let slack = c - &self.flow[e];
                    if slack.is_positive() {
                        Some(slack)
                    } else {
                        None
                    }
                }
            }
        }
    }

    /// Sends as much flow as possible from `s` to `t`; returns the value.
    fn run(&mut self, s: usize, t: usize) -> Rat {
        let mut total = Rat::zero();
        loop {
            // BFS over residual arcs.
            let mut pred: Vec<Option<(usize, bool)>> = vec![None; self.n];
            let mut seen = vec![false; self.n];
            seen[s] = true;
            let mut q = VecDeque::new();
            q.push_back(s);
            'bfs: while let Some(v) = q.pop_front() {
                for e in 0..self.arcs.len() {
                    for backward in [false, true] {
                        let (from, to) = if backward {
                            (self.arcs[e].1, self.arcs[e].0)
                        } else {
                            (self.arcs[e].0, self.arcs[e].1)
                        };
                        if from != v || seen[to] || self.residual(e, backward).is_none() {
                            continue;
                        }
                        seen[to] = true;
                        pred[to] = Some((e, backward));
                        if to == t {
                            break 'bfs;
                        }
                        q.push_back(to);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            // Bottleneck along the path; unbounded residuals never bind here
            // because source arcs are finite.
            let mut bottleneck: Option<Rat> = None;
            let mut v = t;
            while v != s {
                let (e, backward) = pred[v].unwrap();
                let r = self.residual(e, backward).unwrap();
                if !r.is_negative() {
                    bottleneck = match bottleneck {
                        Some(b) if b <= r => Some(b),
                        _ => Some(r),
                    };
                }
                v = if backward { self.arcs[e].1 } else { self.arcs[e].0 };
            }
            let amount = bottleneck.expect("augmenting path with no finite capacity");
            let mut v = t;
            while v != s {
                let (e, backward) = pred[v].unwrap();
                if backward {
                    self.flow[e] -= &amount;
                } else {
                    self.flow[e] += &amount;
                }
                v = if backward { self.arcs[e].1 } else { self.arcs[e].0 };
            }
            total += amount;
        }
    }
}

/// Replaces flow on tight linear arcs so that the result is a nonnegative
/// flow meeting all demands, leaving every other arc untouched.
pub fn f_optimal_to_optimal(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    pot: &Potentials,
    _revealed: &RevealedArcSet,
) -> Result<Pseudoflow, SolverError> {
    let n = net.node_count();
    let m = net.arc_count();

    // Tight linear arcs; everything else keeps its value.
    let mut in_h = vec![false; m];
    for (e, arc) in net.arcs.iter().enumerate() {
        if !arc.cost.is_linear() {
            continue;
        }
        let cost = forward_cost(&arc.cost, net.mode, &flow.values[e]);
        if pot.is_tight(&cost, arc.tail, arc.head) {
            in_h[e] = true;
        }
    }

    // Demands left for the tight-arc circulation.
    let mut residual_demand = net.demands.clone();
    for (e, arc) in net.arcs.iter().enumerate() {
        if !in_h[e] {
            if flow.values[e].is_negative() {
                return Err(SolverError::invariant(
                    "negative flow on an arc that is not tight linear",
                ));
            }
            residual_demand[arc.tail] += &flow.values[e];
            residual_demand[arc.head] -= &flow.values[e];
        }
    }

    // One max-flow: supply nodes feed a super-source, demand nodes drain into
    // a super-sink, tight arcs are unbounded.
    let source = n;
    let sink = n + 1;
    let mut mf = MaxFlow::new(n + 2);
    let mut h_ids = Vec::new();
    for (e, arc) in net.arcs.iter().enumerate() {
        if in_h[e] {
            h_ids.push((e, mf.add(arc.tail, arc.head, None)));
        }
    }
    let mut need = Rat::zero();
    for v in 0..n {
        let r = &residual_demand[v];
        if r.is_negative() {
            mf.add(source, v, Some(-r.clone()));
            need += -r.clone();
        } else if r.is_positive() {
            mf.add(v, sink, Some(r.clone()));
        }
    }
    let sent = mf.run(source, sink);
    if sent != need {
        return Err(SolverError::invariant(
            "feasible circulation on tight arcs does not exist",
        ));
    }

    let mut out = flow.clone();
    for (e, id) in h_ids {
        out.values[e] = mf.flow[id].clone();
    }

    // The result must be a nonnegative flow meeting all demands exactly.
    if out.values.iter().any(|v| v.is_negative()) {
        return Err(SolverError::invariant("circulation produced a negative arc value"));
    }
    let r = rho(net, &out);
    for v in 0..n {
        if r[v] != net.demands[v] {
            return Err(SolverError::invariant("circulation broke flow conservation"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostDescriptor, OracleMode};
    use crate::network::{Arc, ArcOrigin, NodeOrigin};
    use crate::rational::rat_int;

    fn lin(d: i64) -> CostDescriptor {
        CostDescriptor::Linear { d: rat_int(d) }
    }

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
    fn nonnegative_input_is_unchanged() {
        let net = net(vec![-4, 4], vec![(0, 1, quad(1, 0))]);
        let f = Pseudoflow { values: vec![rat_int(4)] };
        let pot = Potentials { mode: OracleMode::Additive, values: vec![rat_int(0), rat_int(8)] };
        let revealed = RevealedArcSet::new(&net);
        let out = f_optimal_to_optimal(&net, &f, &pot, &revealed).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn reroutes_negative_linear_flow_over_tight_parallel() {
        // Arc 0: linear 0→1 carrying −1 (revealed); arc 1: parallel linear
        // 0→1, tight as well. The circulation moves the unit onto arc 1.
        let network = net(vec![-1, 1], vec![(0, 1, lin(5)), (0, 1, lin(5))]);
        let mut revealed = RevealedArcSet::new(&network);
        revealed.add(&network, 0).unwrap();
        let f = Pseudoflow { values: vec![rat_int(-1), rat_int(2)] };
        let pot = Potentials { mode: OracleMode::Additive, values: vec![rat_int(0), rat_int(5)] };
        let out = f_optimal_to_optimal(&network, &f, &pot, &revealed).unwrap();
        assert_eq!(rho(&network, &out), network.demands);
        assert!(out.values.iter().all(|v| !v.is_negative()));
    }

    #[test]
    fn all_nonlinear_is_identity() {
        let network = net(vec![-2, 2], vec![(0, 1, quad(1, 0))]);
        let revealed = RevealedArcSet::new(&network);
        let f = Pseudoflow { values: vec![rat_int(2)] };
        let pot = Potentials { mode: OracleMode::Additive, values: vec![rat_int(0), rat_int(4)] };
        let out = f_optimal_to_optimal(&network, &f, &pot, &revealed).unwrap();
        assert_eq!(out, f);
    }
}
