//! Minimum cost-to-time ratio cycles by discrete Newton iteration.
//!
//! The decision oracle is Bellman-Ford negative-cycle detection on costs
//! `p + ν·τ`. Each Newton step moves `ν` to the negated ratio of a realized
//! cycle, so the iterates strictly increase and the loop terminates with the
//! exact optimum.

use crate::error::SolverError;
use crate::rational::Rat;
use num::{Signed, Zero};

#[derive(Debug, Clone)]
pub struct RatioArc {
    pub from: usize,
    pub to: usize,
    pub cost: Rat,
    pub time: Rat,
}

#[derive(Debug, Clone)]
pub struct RatioCycleInstance {
    pub nodes: usize,
    pub arcs: Vec<RatioArc>,
}

/// Bellman-Ford from a virtual source (all labels start at zero). Returns
/// distance labels, or a cycle (as arc indices) that is negative under the
/// given costs.
pub fn bellman_ford(n: usize, arcs: &[(usize, usize, Rat)]) -> Result<Vec<Rat>, Vec<usize>> {
    let mut dist = vec![Rat::zero(); n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut last_relaxed = None;
    for _round in 0..=n {
        last_relaxed = None;
        for (idx, (from, to, cost)) in arcs.iter().enumerate() {
            let candidate = &dist[*from] + cost;
            if candidate < dist[*to] {
                dist[*to] = candidate;
                pred[*to] = Some(idx);
                last_relaxed = Some(*to);
            }
        }
        if last_relaxed.is_none() {
            return Ok(dist);
        }
    }
    // A relaxation in round n certifies a negative cycle reachable through
    // the predecessor graph.
    let mut v = last_relaxed.expect("loop exits early when no relaxation happened");
    for _ in 0..n {
        v = arcs[pred[v].expect("relaxed node must have a predecessor")].0;
    }
    let start = v;
    let mut cycle = Vec::new();
    loop {
        let e = pred[v].expect("cycle nodes have predecessors");
        cycle.push(e);
        v = arcs[e].0;
        if v == start {
            break;
        }
    }
    cycle.reverse();
    Err(cycle)
}

/// Exact minimum cycle ratio `min Σp/Στ`, clamped to 0 when no cycle is
/// negative at `ν = 0` (then the zero value doubles as the "all cycles
/// nonnegative" certificate). The witness labels satisfy
/// `p + (−μ*)·τ − π_to + π_from ≥ 0` on every arc.
///
/// Requires every cycle with `Στ = 0` to have `Σp ≥ 0`.
pub fn min_ratio_cycle(inst: &RatioCycleInstance) -> Result<(Rat, Vec<Rat>), SolverError> {
    let (nu, labels) = newton_min_nu(inst)?;
    Ok((-nu, labels))
}

/// Smallest `ν ≥ 0` with no negative cycle under `p + ν·τ`, plus feasible
/// labels at that value.
pub(crate) fn newton_min_nu(inst: &RatioCycleInstance) -> Result<(Rat, Vec<Rat>), SolverError> {
    let n = inst.nodes;
    let mut nu = Rat::zero();
    // Iterations are bounded by the number of distinct simple-cycle ratios;
    // the cap only guards against internal bugs.
    for _ in 0..100_000 {
        let arcs: Vec<(usize, usize, Rat)> = inst
            .arcs
            .iter()
            .map(|a| (a.from, a.to, &a.cost + &nu * &a.time))
            .collect();
        match bellman_ford(n, &arcs) {
            Ok(labels) => return Ok((nu, labels)),
            Err(cycle) => {
                let mut sum_p = Rat::zero();
                let mut sum_t = Rat::zero();
                for &e in &cycle {
                    sum_p += &inst.arcs[e].cost;
                    sum_t += &inst.arcs[e].time;
                }
                if sum_t.is_zero() || sum_t.is_negative() {
                    return Err(SolverError::contract(
                        "zero-time cycle with negative cost; ratio is unbounded below",
                    ));
                }
                let next = -(sum_p / sum_t);
                if next <= nu {
                    return Err(SolverError::invariant("ratio iterates failed to increase"));
                }
                nu = next;
            }
        }
    }
    Err(SolverError::invariant("ratio search failed to converge"))
}
