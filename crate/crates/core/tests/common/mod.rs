//! Shared instance generators for the integration suites. All generation is
//! seeded, so every suite is reproducible.

use convexflow::cost::CostDescriptor;
use convexflow::fisher::{LinearMarket, Segment, SegmentedPair, SpendingMarket, UtilityEntry};
use convexflow::network::{Arc, ArcOrigin, CapArc, CapacitatedInstance, FlowNetwork, NodeOrigin};
use convexflow::rational::{rat_int, Rat};
use convexflow::OracleMode;
use num::Zero;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_cost(rng: &mut ChaCha8Rng) -> CostDescriptor {
    let c = rng.gen_range(0..=5i64);
    let d = rng.gen_range(-5..=5i64);
    if c == 0 {
        CostDescriptor::Linear { d: rat_int(d) }
    } else {
        CostDescriptor::Quadratic { c: rat_int(c), d: rat_int(d) }
    }
}

/// Negative cycle among linear arcs means the objective is unbounded below.
fn has_negative_linear_cycle(demand_count: usize, arcs: &[(usize, usize, &CostDescriptor)]) -> bool {
    let mut linear: Vec<(usize, usize, Rat)> = Vec::new();
    for (t, h, cost) in arcs {
        if let CostDescriptor::Linear { d } = cost {
            linear.push((*t, *h, d.clone()));
        }
    }
    let n = demand_count;
    let mut dist = vec![Rat::zero(); n];
    for round in 0..=n {
        let mut changed = false;
        for (t, h, d) in &linear {
            let cand = &dist[*t] + d;
            if cand < dist[*h] {
                dist[*h] = cand;
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

/// Strongly connected uncapacitated quadratic instance: a covering cycle plus
/// random extra arcs, balanced integer demands, bounded objective.
pub fn gen_quadratic_network(rng: &mut ChaCha8Rng) -> FlowNetwork {
    loop {
        let n = rng.gen_range(2..=8usize);
        let m = rng.gen_range(n.max(3)..=12usize);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut arcs: Vec<(usize, usize, CostDescriptor)> = Vec::new();
        for i in 0..n {
            arcs.push((order[i], order[(i + 1) % n], random_cost(rng)));
        }
        while arcs.len() < m {
            let t = rng.gen_range(0..n);
            let h = rng.gen_range(0..n);
            if t != h {
                arcs.push((t, h, random_cost(rng)));
            }
        }
        let borrowed: Vec<(usize, usize, &CostDescriptor)> =
            arcs.iter().map(|(t, h, c)| (*t, *h, c)).collect();
        if has_negative_linear_cycle(n, &borrowed) {
            continue;
        }

        let mut demands;
        loop {
            demands = (0..n - 1).map(|_| rng.gen_range(-5..=5i64)).collect::<Vec<_>>();
            let last: i64 = -demands.iter().sum::<i64>();
            if last.abs() <= 20 {
                demands.push(last);
                break;
            }
        }
        if demands.iter().all(|&d| d == 0) {
            continue;
        }

        return FlowNetwork {
            demands: demands.into_iter().map(rat_int).collect(),
            arcs: arcs
                .into_iter()
                .map(|(t, h, c)| Arc { tail: t, head: h, cost: c, origin: ArcOrigin::Native })
                .collect(),
            mode: OracleMode::Additive,
            anchor: None,
            node_origin: vec![NodeOrigin::Native; n],
        };
    }
}

/// Capacitated instance made feasible by construction: demands are the
/// imbalance of a random flow within the bounds.
pub fn gen_capacitated(rng: &mut ChaCha8Rng) -> CapacitatedInstance {
    let n = rng.gen_range(2..=6usize);
    let m = rng.gen_range(2..=8usize);
    let mut arcs = Vec::new();
    let mut flows = Vec::new();
    while arcs.len() < m {
        let t = rng.gen_range(0..n);
        let h = rng.gen_range(0..n);
        if t == h {
            continue;
        }
        let upper = rng.gen_range(0..=10i64);
        let lower = rng.gen_range(0..=upper);
        let f0 = rng.gen_range(lower..=upper);
        arcs.push(CapArc {
            tail: t,
            head: h,
            cost: random_cost(rng),
            lower: rat_int(lower),
            upper: Some(rat_int(upper)),
        });
        flows.push(f0);
    }
    let mut demands = vec![0i64; n];
    for (e, arc) in arcs.iter().enumerate() {
        demands[arc.tail] -= flows[e];
        demands[arc.head] += flows[e];
    }
    CapacitatedInstance {
        demands: demands.into_iter().map(rat_int).collect(),
        arcs,
        mode: OracleMode::Additive,
    }
}

/// Linear market with random sparsity but full incidence.
pub fn gen_linear_market(rng: &mut ChaCha8Rng) -> LinearMarket {
    loop {
        let nb = rng.gen_range(1..=4usize);
        let ng = rng.gen_range(1..=4usize);
        let mut utilities = Vec::new();
        for i in 0..nb {
            for j in 0..ng {
                if rng.gen_bool(0.55) {
                    utilities.push(UtilityEntry {
                        buyer: i,
                        good: j,
                        utility: rat_int(rng.gen_range(1..=10i64)),
                    });
                }
            }
        }
        let mkt = LinearMarket {
            budgets: (0..nb).map(|_| rat_int(rng.gen_range(1..=10i64))).collect(),
            num_goods: ng,
            utilities,
        };
        if mkt.validate().is_ok() {
            return mkt;
        }
    }
}

/// Spending-constraint market with at most six segments in total.
pub fn gen_spending_market(rng: &mut ChaCha8Rng) -> SpendingMarket {
    loop {
        let nb = rng.gen_range(1..=3usize);
        let ng = rng.gen_range(1..=3usize);
        let mut pairs: Vec<SegmentedPair> = Vec::new();
        let mut total_segments = 0usize;
        for i in 0..nb {
            for j in 0..ng {
                if total_segments >= 6 || !rng.gen_bool(0.6) {
                    continue;
                }
                let count = rng.gen_range(1..=2usize).min(6 - total_segments);
                let mut utility = rng.gen_range(2..=10i64);
                let mut segments = Vec::new();
                for _ in 0..count {
                    segments.push(Segment {
                        utility: rat_int(utility),
                        cap: rat_int(rng.gen_range(1..=5i64)),
                    });
                    if utility <= 1 {
                        break;
                    }
                    utility = rng.gen_range(1..utility);
                }
                total_segments += segments.len();
                pairs.push(SegmentedPair { buyer: i, good: j, segments });
            }
        }
        let mkt = SpendingMarket {
            budgets: (0..nb).map(|_| rat_int(rng.gen_range(1..=10i64))).collect(),
            num_goods: ng,
            pairs,
        };
        if mkt.validate().is_ok() && mkt.segment_count() <= 6 {
            return mkt;
        }
    }
}

pub fn ceil_log2(v: usize) -> usize {
    if v <= 1 {
        0
    } else {
        (usize::BITS - (v - 1).leading_zeros()) as usize
    }
}
