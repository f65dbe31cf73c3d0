//! Fisher market equilibria as convex flow problems.
//!
//! Money is the flow: buyers push their budgets toward a sink, spending arcs
//! carry constant derivatives `−log U` and good-to-sink arcs the entropic
//! price term. Everything runs in multiplicative mode, so all potentials are
//! kept as rational `e^π` values and logarithms never materialize.

use crate::backend::{CostBackend, ErrValue, PotValue, TightVector};
use crate::cost::{CostDescriptor, DerivativeValue, OracleMode};
use crate::error::SolverError;
use crate::network::{residual_arcs, rho, Arc, ArcOrigin, FlowNetwork, NodeOrigin, Pseudoflow, RevealedArcSet};
use crate::rational::Rat;
use crate::scaling::{Potentials, Solution};
use num::{One, Signed, Zero};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct UtilityEntry {
    pub buyer: usize,
    pub good: usize,
    pub utility: Rat,
}

/// Linear-utility market: buyer `i` gains `U_ij` per unit of good `j`.
#[derive(Debug, Clone)]
pub struct LinearMarket {
    pub budgets: Vec<Rat>,
    pub num_goods: usize,
    pub utilities: Vec<UtilityEntry>,
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub utility: Rat,
    pub cap: Rat,
}

#[derive(Debug, Clone)]
pub struct SegmentedPair {
    pub buyer: usize,
    pub good: usize,
    pub segments: Vec<Segment>,
}

/// Spending-constraint market: utilities decrease over successive spending
/// brackets, each bracket capped.
#[derive(Debug, Clone)]
pub struct SpendingMarket {
    pub budgets: Vec<Rat>,
    pub num_goods: usize,
    pub pairs: Vec<SegmentedPair>,
}

impl LinearMarket {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.budgets.is_empty() || self.num_goods == 0 {
            return Err(SolverError::domain("market needs at least one buyer and one good"));
        }
        for (i, b) in self.budgets.iter().enumerate() {
            if !b.is_positive() {
                return Err(SolverError::domain(format!("buyer {i} budget must be positive")));
            }
        }
        let mut buyer_seen = vec![false; self.budgets.len()];
        let mut good_seen = vec![false; self.num_goods];
        for (k, e) in self.utilities.iter().enumerate() {
            if e.buyer >= self.budgets.len() || e.good >= self.num_goods {
                return Err(SolverError::domain(format!("utilities[{k}] indexes out of range")));
            }
            if !e.utility.is_positive() {
                return Err(SolverError::domain(format!(
                    "utilities[{k}]: only pairs with positive utility belong to the market"
                )));
            }
            buyer_seen[e.buyer] = true;
            good_seen[e.good] = true;
        }
        if let Some(i) = buyer_seen.iter().position(|&s| !s) {
            return Err(SolverError::domain(format!("buyer {i} has no positive-utility good")));
        }
        if let Some(j) = good_seen.iter().position(|&s| !s) {
            return Err(SolverError::domain(format!("good {j} interests no buyer")));
        }
        Ok(())
    }
}

impl SpendingMarket {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.budgets.is_empty() || self.num_goods == 0 {
            return Err(SolverError::domain("market needs at least one buyer and one good"));
        }
        for (i, b) in self.budgets.iter().enumerate() {
            if !b.is_positive() {
                return Err(SolverError::domain(format!("buyer {i} budget must be positive")));
            }
        }
        let mut buyer_seen = vec![false; self.budgets.len()];
        let mut good_seen = vec![false; self.num_goods];
        for (k, p) in self.pairs.iter().enumerate() {
            if p.buyer >= self.budgets.len() || p.good >= self.num_goods {
                return Err(SolverError::domain(format!("segments[{k}] indexes out of range")));
            }
            if p.segments.is_empty() {
                return Err(SolverError::domain(format!("segments[{k}] has no brackets")));
            }
            for (s, seg) in p.segments.iter().enumerate() {
                if !seg.utility.is_positive() {
                    return Err(SolverError::domain(format!(
                        "segments[{k}].utils[{s}] must be positive"
                    )));
                }
                if !seg.cap.is_positive() {
                    return Err(SolverError::domain(format!(
                        "segments[{k}].caps[{s}] must be positive"
                    )));
                }
                if s > 0 && seg.utility >= p.segments[s - 1].utility {
                    return Err(SolverError::domain(format!(
                        "segments[{k}] utilities must strictly decrease"
                    )));
                }
            }
            buyer_seen[p.buyer] = true;
            good_seen[p.good] = true;
        }
        if let Some(i) = buyer_seen.iter().position(|&s| !s) {
            return Err(SolverError::domain(format!("buyer {i} has no segment")));
        }
        if let Some(j) = good_seen.iter().position(|&s| !s) {
            return Err(SolverError::domain(format!("good {j} has no segment")));
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.pairs.iter().map(|p| p.segments.len()).sum()
    }
}

/// What each arc of a market network means.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArcRole {
    /// Money from a buyer toward a good, possibly through a segment node.
    Spend { buyer: usize, good: usize, segment: Option<usize>, utility: Rat },
    /// Good-to-sink arc; its flow is the good's price.
    GoodSink { good: usize },
    /// Zero-cost arc from a good to one of its segment nodes.
    GoodSegment { good: usize, segment: usize },
}

/// Node and arc layout of a market network.
#[derive(Debug, Clone)]
pub struct ShmyrevMap {
    pub buyer_nodes: Vec<usize>,
    pub good_nodes: Vec<usize>,
    /// Segment list as (buyer, good, bracket index, cap); empty for linear markets.
    pub segments: Vec<(usize, usize, usize, Rat)>,
    pub segment_nodes: Vec<usize>,
    pub sink: usize,
    pub roles: Vec<ArcRole>,
    pub good_sink_arc: Vec<usize>,
    /// Per segment, the good-to-segment arc index.
    pub segment_good_arc: Vec<usize>,
}

/// Builds the money-flow network of a linear market: buyers and goods plus a
/// sink, spending arcs with constant derivatives, entropic good-to-sink arcs.
pub fn build_shmyrev(mkt: &LinearMarket) -> Result<(FlowNetwork, ShmyrevMap), SolverError> {
    mkt.validate()?;
    let nb = mkt.budgets.len();
    let ng = mkt.num_goods;
    let sink = nb + ng;
    let mut demands = Vec::with_capacity(nb + ng + 1);
    let mut total = Rat::zero();
    for b in &mkt.budgets {
        demands.push(-b.clone());
        total += b;
    }
    demands.extend(std::iter::repeat(Rat::zero()).take(ng));
    demands.push(total);

    let mut arcs = Vec::new();
    let mut roles = Vec::new();
    for e in &mkt.utilities {
        arcs.push(Arc {
            tail: e.buyer,
            head: nb + e.good,
            cost: CostDescriptor::NegLogConstant { u: e.utility.clone() },
            origin: ArcOrigin::Native,
        });
        roles.push(ArcRole::Spend {
            buyer: e.buyer,
            good: e.good,
            segment: None,
            utility: e.utility.clone(),
        });
    }
    let mut good_sink_arc = Vec::with_capacity(ng);
    for j in 0..ng {
        good_sink_arc.push(arcs.len());
        arcs.push(Arc {
            tail: nb + j,
            head: sink,
            cost: CostDescriptor::LogEntropic,
            origin: ArcOrigin::Native,
        });
        roles.push(ArcRole::GoodSink { good: j });
    }

    let net = FlowNetwork {
        demands,
        arcs,
        mode: OracleMode::Multiplicative,
        anchor: Some(sink),
        node_origin: vec![NodeOrigin::Native; nb + ng + 1],
    };
    net.validate()?;
    let map = ShmyrevMap {
        buyer_nodes: (0..nb).collect(),
        good_nodes: (nb..nb + ng).collect(),
        segments: Vec::new(),
        segment_nodes: Vec::new(),
        sink,
        roles,
        good_sink_arc,
        segment_good_arc: Vec::new(),
    };
    Ok((net, map))
}

/// Builds the expanded network of a spending-constraint market: one node per
/// segment absorbs that bracket's cap, fed by the buyer (utility arc) and by
/// the good (zero-cost slack arc).
pub fn build_spending(mkt: &SpendingMarket) -> Result<(FlowNetwork, ShmyrevMap), SolverError> {
    mkt.validate()?;
    let nb = mkt.budgets.len();
    let ng = mkt.num_goods;
    let m_seg = mkt.segment_count();
    let sink = nb + ng + m_seg;

    let mut demands = vec![Rat::zero(); nb + ng + m_seg + 1];
    let mut total = Rat::zero();
    for (i, b) in mkt.budgets.iter().enumerate() {
        demands[i] = -b.clone();
        total += b;
    }
    demands[sink] = total;

    let mut segments = Vec::new();
    let mut segment_nodes = Vec::new();
    let mut arcs = Vec::new();
    let mut roles = Vec::new();
    let mut segment_good_arc = Vec::new();
    for pair in &mkt.pairs {
        for (k, seg) in pair.segments.iter().enumerate() {
            let node = nb + ng + segment_nodes.len();
            segment_nodes.push(node);
            let seg_idx = segments.len();
            segments.push((pair.buyer, pair.good, k, seg.cap.clone()));
            demands[node] = seg.cap.clone();
            demands[nb + pair.good] -= &seg.cap;

            arcs.push(Arc {
                tail: pair.buyer,
                head: node,
                cost: CostDescriptor::NegLogConstant { u: seg.utility.clone() },
                origin: ArcOrigin::Native,
            });
            roles.push(ArcRole::Spend {
                buyer: pair.buyer,
                good: pair.good,
                segment: Some(seg_idx),
                utility: seg.utility.clone(),
            });
            segment_good_arc.push(arcs.len());
            arcs.push(Arc {
                tail: nb + pair.good,
                head: node,
                cost: CostDescriptor::NegLogConstant { u: Rat::one() },
                origin: ArcOrigin::Native,
            });
            roles.push(ArcRole::GoodSegment { good: pair.good, segment: seg_idx });
        }
    }
    let mut good_sink_arc = Vec::with_capacity(ng);
    for j in 0..ng {
        good_sink_arc.push(arcs.len());
        arcs.push(Arc {
            tail: nb + j,
            head: sink,
            cost: CostDescriptor::LogEntropic,
            origin: ArcOrigin::Native,
        });
        roles.push(ArcRole::GoodSink { good: j });
    }

    let net = FlowNetwork {
        demands,
        arcs,
        mode: OracleMode::Multiplicative,
        anchor: Some(sink),
        node_origin: vec![NodeOrigin::Native; nb + ng + m_seg + 1],
    };
    net.validate()?;
    let map = ShmyrevMap {
        buyer_nodes: (0..nb).collect(),
        good_nodes: (nb..nb + ng).collect(),
        segments,
        segment_nodes,
        sink,
        roles,
        good_sink_arc,
        segment_good_arc,
    };
    Ok((net, map))
}

fn gamma_of(net: &FlowNetwork, e: usize, alpha: &Rat) -> Rat {
    match crate::cost::e_derivative(&net.arcs[e].cost, alpha) {
        DerivativeValue::Finite(v) => v,
        DerivativeValue::NegInfinite => Rat::zero(),
    }
}

/// Solves the tight system on a market network. Potentials carry the
/// infinite sentinel on components forced to zero prices.
pub fn trial_fisher(
    net: &FlowNetwork,
    map: &ShmyrevMap,
    revealed: &RevealedArcSet,
    b_hat: &[Rat],
) -> Result<TightVector, SolverError> {
    let n = net.node_count();
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

    let mut flow = Pseudoflow::zeros(net.arc_count());
    let mut pot: Vec<PotValue> = vec![PotValue::Finite(Rat::one()); n];

    for (_root, nodes) in &comp_nodes {
        let arcs = comp_arcs.get(_root).cloned().unwrap_or_default();
        if nodes.contains(&map.sink) {
            solve_sink_component(net, map, b_hat, nodes, &arcs, &mut flow, &mut pot)?;
        } else {
            solve_free_component(net, b_hat, nodes, &arcs, &mut flow, &mut pot)?;
        }
    }

    verify_market_tight(net, revealed, b_hat, &flow, &pot)?;
    Ok(TightVector { flow, potentials: pot })
}

/// Component without the sink: a tree of constant-derivative arcs. One scale
/// is free; it is pinned at the lowest node.
fn solve_free_component(
    net: &FlowNetwork,
    b_hat: &[Rat],
    nodes: &[usize],
    arcs: &[usize],
    flow: &mut Pseudoflow,
    pot: &mut [PotValue],
) -> Result<(), SolverError> {
    for &e in arcs {
        if net.arcs[e].cost.is_restricted() {
            return Err(SolverError::invariant(
                "entropic arc in a component that misses the sink",
            ));
        }
    }
    let mu = propagate_tree_potentials(net, nodes, arcs, *nodes.iter().min().unwrap(), Rat::one())?;
    for (&v, m) in &mu {
        pot[v] = PotValue::Finite(m.clone());
    }
    let mut demands: BTreeMap<usize, Rat> = nodes.iter().map(|&v| (v, b_hat[v].clone())).collect();
    peel_tree_flows(net, arcs, &mut demands, flow)
}

/// Component holding the sink: each subtree hanging off the sink gets its
/// price level from the money it must forward.
fn solve_sink_component(
    net: &FlowNetwork,
    map: &ShmyrevMap,
    b_hat: &[Rat],
    nodes: &[usize],
    arcs: &[usize],
    flow: &mut Pseudoflow,
    pot: &mut [PotValue],
) -> Result<(), SolverError> {
    pot[map.sink] = PotValue::Finite(Rat::one());
    let sink_arcs: Vec<usize> = arcs
        .iter()
        .copied()
        .filter(|&e| net.arcs[e].tail == map.sink || net.arcs[e].head == map.sink)
        .collect();
    let inner_arcs: Vec<usize> = arcs
        .iter()
        .copied()
        .filter(|e| !sink_arcs.contains(e))
        .collect();

    // Subtrees of the component after deleting the sink.
    let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &e in &inner_arcs {
        let (t, h) = (net.arcs[e].tail, net.arcs[e].head);
        adj.entry(t).or_default().push((e, h));
        adj.entry(h).or_default().push((e, t));
    }
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut subtrees: Vec<(Vec<usize>, Vec<usize>)> = Vec::new(); // (nodes, arcs)
    for &v in nodes {
        if v == map.sink || seen.contains_key(&v) {
            continue;
        }
        let id = subtrees.len();
        let mut members = Vec::new();
        let mut tree_arcs = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen.insert(v, id);
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            members.push(u);
            for &(e, w) in adj.get(&u).into_iter().flatten() {
                if !seen.contains_key(&w) {
                    seen.insert(w, id);
                    tree_arcs.push(e);
                    queue.push_back(w);
                }
            }
        }
        subtrees.push((members, tree_arcs));
    }

    for (members, tree_arcs) in &subtrees {
        let pin = *members.iter().min().unwrap();
        let nu = propagate_tree_potentials(net, members, tree_arcs, pin, Rat::one())?;

        // Goods of this subtree whose sink arc is revealed.
        let adjacent: Vec<usize> = sink_arcs
            .iter()
            .copied()
            .filter(|&e| members.contains(&net.arcs[e].tail))
            .collect();
        let mut money = Rat::zero();
        for &v in members {
            money -= &b_hat[v];
        }
        if money.is_negative() {
            return Err(SolverError::contract(
                "revealed sink arc forces a negative price",
            ));
        }
        let mut demands: BTreeMap<usize, Rat> =
            members.iter().map(|&v| (v, b_hat[v].clone())).collect();
        if money.is_zero() {
            // Zero money: prices collapse to the restricted bound; the whole
            // subtree's potentials become the infinite sentinel.
            for &v in members {
                pot[v] = PotValue::Infinite;
            }
            for &e in &adjacent {
                flow.values[e] = Rat::zero();
            }
        } else {
            if adjacent.is_empty() {
                return Err(SolverError::invariant(
                    "sink component subtree without a revealed sink arc",
                ));
            }
            let mut q_sum = Rat::zero();
            for &e in &adjacent {
                q_sum += nu[&net.arcs[e].tail].recip();
            }
            let scale = &q_sum / &money;
            for &v in members {
                pot[v] = PotValue::Finite(&scale * &nu[&v]);
            }
            for &e in &adjacent {
                let good = net.arcs[e].tail;
                let price = (&nu[&good] * &scale).recip();
                flow.values[e] = price.clone();
                *demands.get_mut(&good).unwrap() += &price;
            }
        }
        peel_tree_flows(net, tree_arcs, &mut demands, flow)?;
    }
    Ok(())
}

/// Propagates potentials over a tree of constant-derivative arcs from a
/// pinned node; tightness fixes every ratio.
fn propagate_tree_potentials(
    net: &FlowNetwork,
    nodes: &[usize],
    arcs: &[usize],
    pin: usize,
    pin_value: Rat,
) -> Result<BTreeMap<usize, Rat>, SolverError> {
    let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &e in arcs {
        let (t, h) = (net.arcs[e].tail, net.arcs[e].head);
        adj.entry(t).or_default().push((e, h));
        adj.entry(h).or_default().push((e, t));
    }
    let mut mu: BTreeMap<usize, Rat> = BTreeMap::new();
    mu.insert(pin, pin_value);
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(pin);
    while let Some(u) = queue.pop_front() {
        for &(e, w) in adj.get(&u).into_iter().flatten() {
            if mu.contains_key(&w) {
                continue;
            }
            let gamma = gamma_of(net, e, &Rat::zero());
            if gamma.is_zero() {
                return Err(SolverError::invariant("restricted arc inside a tree propagation"));
            }
            let val = if net.arcs[e].tail == u {
                &mu[&u] * &gamma
            } else {
                &mu[&u] / &gamma
            };
            mu.insert(w, val);
            queue.push_back(w);
        }
    }
    for &v in nodes {
        if !mu.contains_key(&v) {
            return Err(SolverError::invariant("component tree is disconnected"));
        }
    }
    Ok(mu)
}

/// Unique flows on a tree meeting the given demands; leaves peel off one by
/// one. A leftover imbalance is an invariant fault.
fn peel_tree_flows(
    net: &FlowNetwork,
    arcs: &[usize],
    demands: &mut BTreeMap<usize, Rat>,
    flow: &mut Pseudoflow,
) -> Result<(), SolverError> {
    let mut degree: BTreeMap<usize, usize> = demands.keys().map(|&v| (v, 0)).collect();
    let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &e in arcs {
        let (t, h) = (net.arcs[e].tail, net.arcs[e].head);
        *degree.get_mut(&t).unwrap() += 1;
        *degree.get_mut(&h).unwrap() += 1;
        adj.entry(t).or_default().push((e, h));
        adj.entry(h).or_default().push((e, t));
    }
    let mut used: BTreeMap<usize, bool> = arcs.iter().map(|&e| (e, false)).collect();
    let mut stack: Vec<usize> =
        degree.iter().filter(|(_, &d)| d == 1).map(|(&v, _)| v).collect();
    while let Some(v) = stack.pop() {
        if degree[&v] != 1 {
            continue;
        }
        let &(e, u) = adj[&v].iter().find(|(e, _)| !used[e]).expect("leaf has an unused arc");
        *used.get_mut(&e).unwrap() = true;
        let need = demands[&v].clone();
        if net.arcs[e].head == v {
            flow.values[e] = need.clone();
        } else {
            flow.values[e] = -need.clone();
        }
        *demands.get_mut(&u).unwrap() += &need;
        *demands.get_mut(&v).unwrap() = Rat::zero();
        *degree.get_mut(&v).unwrap() = 0;
        *degree.get_mut(&u).unwrap() -= 1;
        if degree[&u] == 1 {
            stack.push(u);
        }
    }
    for (v, r) in demands.iter() {
        if !r.is_zero() {
            return Err(SolverError::invariant(format!("tree flow left node {v} unbalanced")));
        }
    }
    Ok(())
}

fn verify_market_tight(
    net: &FlowNetwork,
    revealed: &RevealedArcSet,
    b_hat: &[Rat],
    flow: &Pseudoflow,
    pot: &[PotValue],
) -> Result<(), SolverError> {
    let r = rho(net, flow);
    for v in 0..net.node_count() {
        if r[v] != b_hat[v] {
            return Err(SolverError::invariant("market trial flow misses its demands"));
        }
    }
    for (e, v) in flow.values.iter().enumerate() {
        if !revealed.contains(e) && !v.is_zero() {
            return Err(SolverError::invariant("market trial flow nonzero off the revealed set"));
        }
    }
    for e in revealed.iter_members() {
        let arc = &net.arcs[e];
        let gamma = gamma_of(net, e, &flow.values[e]);
        match (&pot[arc.tail], &pot[arc.head]) {
            (PotValue::Finite(mt), PotValue::Finite(mh)) => {
                if &gamma * mt != *mh {
                    return Err(SolverError::invariant("revealed market arc is not tight"));
                }
            }
            (PotValue::Infinite, PotValue::Infinite) => {}
            (PotValue::Infinite, PotValue::Finite(_)) => {
                // Only the entropic sink arc of a zero-price good may bridge
                // the sentinel region, and only at flow zero.
                if !(arc.cost.is_restricted() && gamma.is_zero()) {
                    return Err(SolverError::invariant(
                        "sentinel potential leaks over a non-restricted arc",
                    ));
                }
            }
            (PotValue::Finite(_), PotValue::Infinite) => {
                return Err(SolverError::invariant(
                    "finite-to-infinite potential on a revealed arc",
                ));
            }
        }
    }
    Ok(())
}

/// Good-to-good gain bounds realizable through a shared buyer, then their
/// max-product closure. `None` marks a residual gain cycle above 1.
fn beta_closure(
    net: &FlowNetwork,
    map: &ShmyrevMap,
    revealed: &RevealedArcSet,
) -> Option<Vec<Vec<Rat>>> {
    let g = map.good_nodes.len();
    let mut beta = vec![vec![Rat::zero(); g]; g];
    for j in 0..g {
        beta[j][j] = Rat::one();
    }

    // Spend arcs grouped by buyer.
    let mut by_buyer: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (e, role) in map.roles.iter().enumerate() {
        if let ArcRole::Spend { buyer, .. } = role {
            by_buyer.entry(*buyer).or_default().push(e);
        }
    }
    for arcs in by_buyer.values() {
        for &a1 in arcs {
            if !revealed.contains(a1) {
                continue;
            }
            let ArcRole::Spend { good: j, utility: u1, .. } = &map.roles[a1] else { continue };
            for &a2 in arcs {
                let ArcRole::Spend { good: j2, utility: u2, segment, .. } = &map.roles[a2] else {
                    continue;
                };
                // In the segmented network the target-side path also
                // traverses the reverse of a good-to-segment arc.
                if let Some(s) = segment {
                    if !revealed.contains(map.segment_good_arc[*s]) {
                        continue;
                    }
                }
                let ratio = u2 / u1;
                if ratio > beta[*j][*j2] {
                    beta[*j][*j2] = ratio;
                }
            }
        }
    }
    let _ = net;

    for k in 0..g {
        for a in 0..g {
            if beta[a][k].is_zero() {
                continue;
            }
            for b in 0..g {
                let through = &beta[a][k] * &beta[k][b];
                if through > beta[a][b] {
                    beta[a][b] = through;
                }
            }
        }
    }
    for j in 0..g {
        if beta[j][j] > Rat::one() {
            return None;
        }
    }
    Some(beta)
}

/// Smallest scale making a tight market vector feasible, from the pairwise
/// price constraints `(p_j − Δ)·β̃_jj' ≤ p_j' + Δ`.
pub fn error_fisher(
    net: &FlowNetwork,
    map: &ShmyrevMap,
    flow: &Pseudoflow,
    revealed: &RevealedArcSet,
) -> Result<ErrValue, SolverError> {
    let Some(beta) = beta_closure(net, map, revealed) else {
        return Ok(ErrValue::Infinite);
    };
    let g = map.good_nodes.len();
    let prices: Vec<Rat> =
        (0..g).map(|j| flow.values[map.good_sink_arc[j]].clone()).collect();
    let mut err = Rat::zero();
    for j in 0..g {
        for j2 in 0..g {
            if beta[j][j2].is_zero() {
                continue;
            }
            let bound = (&prices[j] * &beta[j][j2] - &prices[j2])
                / (&beta[j][j2] + Rat::one());
            if bound > err {
                err = bound;
            }
        }
    }
    Ok(ErrValue::Finite(err))
}

/// Witness potentials at scale `delta`: multiplicative shortest-path labels
/// over the residual arcs, all positive rationals.
pub fn witness_fisher(
    net: &FlowNetwork,
    flow: &Pseudoflow,
    revealed: &RevealedArcSet,
    delta: &Rat,
) -> Result<Potentials, SolverError> {
    let n = net.node_count();
    let res = residual_arcs(net, flow, revealed, delta);
    let mut mu = vec![Rat::one(); n];
    for round in 0..=n {
        let mut changed = false;
        for ra in &res {
            match &ra.cost {
                crate::cost::ArcCost::PosInfinite => continue,
                crate::cost::ArcCost::NegInfinite => {
                    return Err(SolverError::invariant(
                        "witness requested at a scale with a zero-derivative arc",
                    ));
                }
                crate::cost::ArcCost::Finite(gamma) => {
                    let candidate = &mu[ra.from] * gamma;
                    if candidate < mu[ra.to] {
                        mu[ra.to] = candidate;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
        if round == n {
            return Err(SolverError::invariant("witness requested below the error value"));
        }
    }
    if mu.iter().any(|m| !m.is_positive()) {
        return Err(SolverError::invariant("nonpositive multiplicative potential"));
    }
    Ok(Potentials { mode: OracleMode::Multiplicative, values: mu })
}

/// Market backend: trial and error specialised to the money-flow structure.
pub struct FisherBackend {
    pub map: ShmyrevMap,
}

impl CostBackend for FisherBackend {
    fn trial(
        &self,
        net: &FlowNetwork,
        revealed: &RevealedArcSet,
        b_hat: &[Rat],
    ) -> Result<TightVector, SolverError> {
        trial_fisher(net, &self.map, revealed, b_hat)
    }

    fn error_value(
        &self,
        net: &FlowNetwork,
        flow: &Pseudoflow,
        revealed: &RevealedArcSet,
    ) -> Result<ErrValue, SolverError> {
        error_fisher(net, &self.map, flow, revealed)
    }

    fn witness(
        &self,
        net: &FlowNetwork,
        flow: &Pseudoflow,
        revealed: &RevealedArcSet,
        delta: &Rat,
    ) -> Result<Potentials, SolverError> {
        witness_fisher(net, flow, revealed, delta)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpendingRecord {
    pub buyer: usize,
    pub good: usize,
    /// Bracket index for spending-constraint markets, `None` for linear ones.
    pub segment: Option<usize>,
    pub amount: Rat,
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub prices: Vec<Rat>,
    pub spending: Vec<SpendingRecord>,
    pub bang_per_buck: Vec<Rat>,
}

/// Reads prices, spending and bang-per-buck values off an optimal solution
/// and verifies the equilibrium conditions exactly before returning.
pub fn extract_equilibrium(
    net: &FlowNetwork,
    map: &ShmyrevMap,
    solution: &Solution,
) -> Result<Equilibrium, SolverError> {
    let g = map.good_nodes.len();
    let nb = map.buyer_nodes.len();
    let flow = &solution.flow;
    let mu = &solution.potentials.values;
    let mu_sink = &mu[map.sink];
    if !mu_sink.is_positive() {
        return Err(SolverError::invariant("sink potential must be positive"));
    }

    let prices: Vec<Rat> = (0..g).map(|j| flow.values[map.good_sink_arc[j]].clone()).collect();
    let bang_per_buck: Vec<Rat> =
        (0..nb).map(|i| &mu[map.buyer_nodes[i]] / mu_sink).collect();

    let mut spending = Vec::new();
    for (e, role) in map.roles.iter().enumerate() {
        if let ArcRole::Spend { buyer, good, segment, .. } = role {
            spending.push(SpendingRecord {
                buyer: *buyer,
                good: *good,
                segment: segment.map(|s| map.segments[s].2),
                amount: flow.values[e].clone(),
            });
        }
    }

    // Market clearing: budgets fully spent, prices equal money received.
    for i in 0..nb {
        let budget = -net.demands[map.buyer_nodes[i]].clone();
        let mut spent = Rat::zero();
        for rec in spending.iter().filter(|r| r.buyer == i) {
            spent += &rec.amount;
        }
        if spent != budget {
            return Err(SolverError::invariant(format!("buyer {i} does not spend its budget")));
        }
    }
    for j in 0..g {
        let mut received = Rat::zero();
        for rec in spending.iter().filter(|r| r.good == j) {
            received += &rec.amount;
        }
        if received != prices[j] {
            return Err(SolverError::invariant(format!("good {j} price differs from its sales")));
        }
    }

    // Best bundle, cross-multiplied to stay in rationals.
    for (e, role) in map.roles.iter().enumerate() {
        let ArcRole::Spend { buyer, good, segment, utility } = role else { continue };
        let rp = &bang_per_buck[*buyer] * &prices[*good];
        let amount = &flow.values[e];
        match segment {
            None => {
                if *utility > rp || (amount.is_positive() && *utility != rp) {
                    return Err(SolverError::invariant(format!(
                        "buyer {buyer} misses a best-bundle condition on good {good}"
                    )));
                }
            }
            Some(s) => {
                let cap = &map.segments[*s].3;
                let saturated = amount == cap;
                let untouched = amount.is_zero();
                let ok = if saturated {
                    *utility >= rp
                } else if untouched {
                    *utility <= rp
                } else {
                    *utility == rp
                };
                if !ok {
                    return Err(SolverError::invariant(format!(
                        "buyer {buyer} misses a segment condition on good {good}"
                    )));
                }
            }
        }
    }

    // Segment spending must fill brackets in order of decreasing utility.
    if !map.segments.is_empty() {
        let mut per_pair: BTreeMap<(usize, usize), Vec<(usize, &Rat, &Rat)>> = BTreeMap::new();
        for (e, role) in map.roles.iter().enumerate() {
            if let ArcRole::Spend { buyer, good, segment: Some(s), .. } = role {
                per_pair.entry((*buyer, *good)).or_default().push((
                    map.segments[*s].2,
                    &flow.values[e],
                    &map.segments[*s].3,
                ));
            }
        }
        for ((i, j), mut segs) in per_pair {
            segs.sort_by_key(|(k, _, _)| *k);
            for w in 1..segs.len() {
                if segs[w].1.is_positive() && segs[w - 1].1 != segs[w - 1].2 {
                    return Err(SolverError::invariant(format!(
                        "buyer {i} buys bracket {w} of good {j} before filling bracket {}",
                        w - 1
                    )));
                }
            }
        }
    }

    Ok(Equilibrium { prices, spending, bang_per_buck })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};
    use crate::scaling::run_enhanced;

    fn market(budgets: Vec<i64>, num_goods: usize, entries: Vec<(usize, usize, i64)>) -> LinearMarket {
        LinearMarket {
            budgets: budgets.into_iter().map(rat_int).collect(),
            num_goods,
            utilities: entries
                .into_iter()
                .map(|(b, g, u)| UtilityEntry { buyer: b, good: g, utility: rat_int(u) })
                .collect(),
        }
    }

    #[test]
    fn shmyrev_single_pair() {
        let (net, map) = build_shmyrev(&market(vec![3], 1, vec![(0, 0, 2)])).unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.arc_count(), 2);
        assert_eq!(gamma_of(&net, 0, &rat_int(7)), rat(1, 2));
        assert!(net.arcs[map.good_sink_arc[0]].cost.is_restricted());
        assert_eq!(net.demands, vec![rat_int(-3), rat_int(0), rat_int(3)]);
    }

    #[test]
    fn shmyrev_counts_and_balance() {
        let (net, _) = build_shmyrev(&market(
            vec![2, 3],
            2,
            vec![(0, 0, 1), (0, 1, 2), (1, 0, 3), (1, 1, 4)],
        ))
        .unwrap();
        assert_eq!(net.node_count(), 5);
        assert_eq!(net.arc_count(), 6);
        assert_eq!(
            net.demands,
            vec![rat_int(-2), rat_int(-3), rat_int(0), rat_int(0), rat_int(5)]
        );
    }

    fn spending_market() -> SpendingMarket {
        SpendingMarket {
            budgets: vec![rat_int(4), rat_int(2)],
            num_goods: 2,
            pairs: vec![
                SegmentedPair {
                    buyer: 0,
                    good: 0,
                    segments: vec![
                        Segment { utility: rat_int(6), cap: rat_int(2) },
                        Segment { utility: rat_int(3), cap: rat_int(4) },
                    ],
                },
                SegmentedPair {
                    buyer: 1,
                    good: 1,
                    segments: vec![Segment { utility: rat_int(5), cap: rat_int(5) }],
                },
            ],
        }
    }

    #[test]
    fn spending_network_shape() {
        let mkt = spending_market();
        assert_eq!(mkt.segment_count(), 3);
        let (net, map) = build_spending(&mkt).unwrap();
        // |B| + |G| + segments + sink
        assert_eq!(net.node_count(), 2 + 2 + 3 + 1);
        // 2 per segment + one per good
        assert_eq!(net.arc_count(), 2 * 3 + 2);
        assert_eq!(net.demands[map.segment_nodes[0]], rat_int(2));
        assert_eq!(net.demands[map.good_nodes[0]], rat_int(-6));
        let total: Rat = net.demands.iter().sum();
        assert!(total.is_zero());
    }

    #[test]
    fn trial_prices_from_component_money() {
        // Buyers 0 (m=2) and 1 (m=3) both revealed into good a, whose sink
        // arc is revealed too: the price is the component's money.
        let (net, map) =
            build_shmyrev(&market(vec![2, 3], 1, vec![(0, 0, 5), (1, 0, 7)])).unwrap();
        let mut revealed = RevealedArcSet::new(&net);
        for e in [0, 1, map.good_sink_arc[0]] {
            revealed.add(&net, e).unwrap();
        }
        let b_hat = crate::network::rho(&net, &Pseudoflow::zeros(net.arc_count()))
            .iter()
            .zip(net.demands.iter())
            .map(|(_, b)| b.clone())
            .collect::<Vec<_>>();
        let out = trial_fisher(&net, &map, &revealed, &b_hat).unwrap();
        assert_eq!(out.flow.values[map.good_sink_arc[0]], rat_int(5));
        assert_eq!(out.flow.values[0], rat_int(2));
        assert_eq!(out.flow.values[1], rat_int(3));
    }

    #[test]
    fn trial_free_component_pins_scale() {
        // Second good keeps the sink component balanced so the buyer-good
        // pair forms a free component.
        let (net, map) =
            build_shmyrev(&market(vec![2], 2, vec![(0, 0, 5), (0, 1, 1)])).unwrap();
        let mut revealed = RevealedArcSet::new(&net);
        revealed.add(&net, 0).unwrap(); // buyer -> good 0
        let mut b_hat = net.demands.clone();
        // component {buyer, good0} balanced at (-2, 2); rest zeroed at anchor
        b_hat[map.good_nodes[0]] = rat_int(2);
        b_hat[map.sink] = rat_int(0);
        let out = trial_fisher(&net, &map, &revealed, &b_hat).unwrap();
        assert_eq!(out.flow.values[0], rat_int(2));
        let (PotValue::Finite(mb), PotValue::Finite(mg)) =
            (&out.potentials[0], &out.potentials[map.good_nodes[0]])
        else {
            panic!("finite potentials expected")
        };
        // R_i · P_a = U: with R = mu_buyer and P = 1/mu_good.
        assert_eq!(mb / mg, rat_int(5));
        assert_eq!(mb, &rat_int(1), "scale pinned at the lowest node");
    }

    #[test]
    fn trial_singleton_good_gets_zero_price() {
        let (net, map) =
            build_shmyrev(&market(vec![3], 2, vec![(0, 0, 2), (0, 1, 1)])).unwrap();
        let mut revealed = RevealedArcSet::new(&net);
        revealed.add(&net, 0).unwrap(); // buyer -> good 0
        revealed.add(&net, map.good_sink_arc[0]).unwrap();
        revealed.add(&net, map.good_sink_arc[1]).unwrap(); // good 1 alone with the sink
        let b_hat = net.demands.clone();
        let out = trial_fisher(&net, &map, &revealed, &b_hat).unwrap();
        assert_eq!(out.flow.values[map.good_sink_arc[1]], rat_int(0));
        assert_eq!(out.potentials[map.good_nodes[1]], PotValue::Infinite);
        assert_eq!(out.flow.values[map.good_sink_arc[0]], rat_int(3));
    }

    #[test]
    fn error_pairwise_pressure() {
        let (net, map) =
            build_shmyrev(&market(vec![5], 2, vec![(0, 0, 1), (0, 1, 1)])).unwrap();
        let mut revealed = RevealedArcSet::new(&net);
        revealed.add(&net, 0).unwrap(); // buyer -> good 0 revealed
        revealed.add(&net, map.good_sink_arc[0]).unwrap();
        revealed.add(&net, map.good_sink_arc[1]).unwrap();
        let mut flow = Pseudoflow::zeros(net.arc_count());
        flow.values[0] = rat_int(4);
        flow.values[map.good_sink_arc[0]] = rat_int(4);
        flow.values[map.good_sink_arc[1]] = rat_int(1);
        let err = error_fisher(&net, &map, &flow, &revealed).unwrap();
        assert_eq!(err, ErrValue::Finite(rat(3, 2)));

        let witness = witness_fisher(&net, &flow, &revealed, &rat(3, 2)).unwrap();
        let p0 = &witness.values[map.sink] / &witness.values[map.good_nodes[0]];
        let p1 = &witness.values[map.sink] / &witness.values[map.good_nodes[1]];
        assert_eq!(p0, rat(5, 2));
        assert_eq!(p1, rat(5, 2));
    }

    #[test]
    fn error_zero_when_prices_balanced() {
        let (net, map) = build_shmyrev(&market(
            vec![2, 2],
            2,
            vec![(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)],
        ))
        .unwrap();
        let mut revealed = RevealedArcSet::new(&net);
        for e in 0..net.arc_count() {
            if revealed.can_add(&net, e) {
                revealed.add(&net, e).unwrap();
            }
        }
        let mut flow = Pseudoflow::zeros(net.arc_count());
        flow.values[map.good_sink_arc[0]] = rat_int(2);
        flow.values[map.good_sink_arc[1]] = rat_int(2);
        let err = error_fisher(&net, &map, &flow, &revealed).unwrap();
        assert_eq!(err, ErrValue::Finite(rat_int(0)));
    }

    #[test]
    fn error_gain_cycle_is_infinite() {
        let (net, map) = build_shmyrev(&market(
            vec![1, 1],
            2,
            vec![(0, 0, 1), (0, 1, 2), (1, 0, 1), (1, 1, 1)],
        ))
        .unwrap();
        let mut revealed = RevealedArcSet::new(&net);
        revealed.add(&net, 0).unwrap(); // buyer0 -> good0
        revealed.add(&net, 3).unwrap(); // buyer1 -> good1
        let flow = Pseudoflow::zeros(net.arc_count());
        let err = error_fisher(&net, &map, &flow, &revealed).unwrap();
        assert_eq!(err, ErrValue::Infinite);
        let _ = map;
    }

    #[test]
    fn equilibrium_single_buyer_single_good() {
        let (net, map) = build_shmyrev(&market(vec![3], 1, vec![(0, 0, 2)])).unwrap();
        let backend = FisherBackend { map: map.clone() };
        let solution = run_enhanced(&net, &backend).unwrap().optimal().unwrap();
        let eq = extract_equilibrium(&net, &map, &solution).unwrap();
        assert_eq!(eq.prices, vec![rat_int(3)]);
    }

    #[test]
    fn equilibrium_disjoint_interests() {
        let (net, map) =
            build_shmyrev(&market(vec![2, 3], 2, vec![(0, 0, 1), (1, 1, 1)])).unwrap();
        let backend = FisherBackend { map: map.clone() };
        let solution = run_enhanced(&net, &backend).unwrap().optimal().unwrap();
        let eq = extract_equilibrium(&net, &map, &solution).unwrap();
        assert_eq!(eq.prices, vec![rat_int(2), rat_int(3)]);
    }

    #[test]
    fn equilibrium_symmetric_preferences() {
        let (net, map) = build_shmyrev(&market(
            vec![1, 1],
            2,
            vec![(0, 0, 2), (0, 1, 1), (1, 0, 1), (1, 1, 2)],
        ))
        .unwrap();
        let backend = FisherBackend { map: map.clone() };
        let solution = run_enhanced(&net, &backend).unwrap().optimal().unwrap();
        let eq = extract_equilibrium(&net, &map, &solution).unwrap();
        assert_eq!(eq.prices, vec![rat_int(1), rat_int(1)]);
        for rec in &eq.spending {
            if rec.amount.is_positive() {
                assert_eq!(rec.buyer, rec.good, "each buyer buys only its preferred good");
                assert_eq!(rec.amount, rat_int(1));
            }
        }
    }

    #[test]
    fn equilibrium_spending_market() {
        let mkt = spending_market();
        let (net, map) = build_spending(&mkt).unwrap();
        let backend = FisherBackend { map: map.clone() };
        let solution = run_enhanced(&net, &backend).unwrap().optimal().unwrap();
        let eq = extract_equilibrium(&net, &map, &solution).unwrap();
        // Decoupled pairs clear at the budgets.
        assert_eq!(eq.prices, vec![rat_int(4), rat_int(2)]);
        // Bracket 0 (utility 6) fills before bracket 1 carries money.
        let first = eq
            .spending
            .iter()
            .find(|r| r.buyer == 0 && r.segment == Some(0))
            .unwrap();
        assert_eq!(first.amount, rat_int(2));
    }
}
