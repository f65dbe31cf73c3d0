//! Network representation and the reduction to uncapacitated form.
//!
//! The solver works on directed multigraphs with node demands, no self-loops,
//! lower bound 0 and no upper bound on every arc. Capacitated input is reduced
//! by splitting each bounded arc through a fresh node; weakly connected
//! additive instances get a hub node with expensive linear arcs so that the
//! graph is strongly connected and the problem always feasible.

use crate::cost::{
    classify, forward_cost, reverse_cost, ArcCost, CostDescriptor, Linearity, OracleMode,
};
use crate::error::SolverError;
use crate::rational::{rat_usize, Rat};
use num::{One, Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArcOrigin {
    /// Arc of an internally built network (markets).
    Native,
    /// Input arc passed through unchanged.
    Input { arc: usize },
    /// Input arc with positive lower bound and no upper bound; flow shifted by `lower`.
    Shifted { arc: usize, lower: Rat },
    /// Flow-carrying half of a split bounded arc; original flow is this plus `lower`.
    Split { arc: usize, lower: Rat },
    /// Slack half of a split bounded arc.
    Slack { arc: usize },
    /// Strong-connectivity hub arc; nonzero flow at the optimum flags infeasibility.
    Hub,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeOrigin {
    Native,
    Input { node: usize },
    ArcNode { arc: usize },
    Hub,
}

#[derive(Debug, Clone)]
pub struct Arc {
    pub tail: usize,
    pub head: usize,
    pub cost: CostDescriptor,
    pub origin: ArcOrigin,
}

/// Uncapacitated flow network with exact rational node demands.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    pub demands: Vec<Rat>,
    pub arcs: Vec<Arc>,
    pub mode: OracleMode,
    /// Preferred node for absorbing component imbalances when demands are
    /// rounded for a trial (the market sink or the hub, when present).
    pub anchor: Option<usize>,
    pub node_origin: Vec<NodeOrigin>,
}

impl FlowNetwork {
    pub fn node_count(&self) -> usize {
        self.demands.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn nonlinear_arc_count(&self) -> usize {
        self.arcs
            .iter()
            .filter(|a| classify(&a.cost).0 == Linearity::Nonlinear)
            .count()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.node_count();
        let mut total = Rat::zero();
        for d in &self.demands {
            total += d;
        }
        if !total.is_zero() {
            return Err(SolverError::domain("node demands do not sum to zero"));
        }
        for (idx, arc) in self.arcs.iter().enumerate() {
            if arc.tail >= n || arc.head >= n {
                return Err(SolverError::domain(format!("arc {idx} endpoint out of range")));
            }
            if arc.tail == arc.head {
                return Err(SolverError::domain(format!("arc {idx} is a self-loop")));
            }
            arc.cost
                .validate()
                .map_err(|e| SolverError::domain(format!("arc {idx}: {e}")))?;
            let capable = match self.mode {
                OracleMode::Additive => arc.cost.additive_capable(),
                OracleMode::Multiplicative => arc.cost.multiplicative_capable(),
            };
            if !capable {
                return Err(SolverError::domain(format!(
                    "arc {idx} cost kind incompatible with the network oracle mode"
                )));
            }
        }
        Ok(())
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.node_count();
        if n <= 1 {
            return true;
        }
        let mut fwd = vec![Vec::new(); n];
        let mut bwd = vec![Vec::new(); n];
        for a in &self.arcs {
            fwd[a.tail].push(a.head);
            bwd[a.head].push(a.tail);
        }
        let reach = |adj: &Vec<Vec<usize>>| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(&fwd) && reach(&bwd)
    }

    pub fn hub_node(&self) -> Option<usize> {
        self.node_origin.iter().position(|o| *o == NodeOrigin::Hub)
    }
}

/// Arc-indexed flow values. Negative values are permitted only on revealed
/// arcs; restricted arcs stay nonnegative at all times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pseudoflow {
    pub values: Vec<Rat>,
}

impl Pseudoflow {
    pub fn zeros(m: usize) -> Self {
        Pseudoflow { values: vec![Rat::zero(); m] }
    }
}

/// Per-node imbalance: inflow minus outflow.
pub fn rho(net: &FlowNetwork, f: &Pseudoflow) -> Vec<Rat> {
    let mut r = vec![Rat::zero(); net.node_count()];
    for (e, arc) in net.arcs.iter().enumerate() {
        r[arc.tail] -= &f.values[e];
        r[arc.head] += &f.values[e];
    }
    r
}

/// Total positive excess `Σ_i max{ρ_f(i) − b_i, 0}`.
pub fn excess(net: &FlowNetwork, f: &Pseudoflow) -> Rat {
    let r = rho(net, f);
    let mut total = Rat::zero();
    for (i, ri) in r.iter().enumerate() {
        let surplus = ri - &net.demands[i];
        if surplus.is_positive() {
            total += surplus;
        }
    }
    total
}

/// Revealed arcs: arcs proven tight in every optimal dual pair. Monotone
/// (arcs are only added) and linear acyclic: no undirected cycle of linear
/// arcs.
#[derive(Debug, Clone)]
pub struct RevealedArcSet {
    members: Vec<bool>,
    count: usize,
    uf_all: UnionFind,
    uf_linear: UnionFind,
    /// Adjacency over linear revealed arcs, for rerouting paths.
    linear_adj: Vec<Vec<(usize, usize)>>, // node -> (arc index, other endpoint)
}

impl RevealedArcSet {
    pub fn new(net: &FlowNetwork) -> Self {
        let n = net.node_count();
        RevealedArcSet {
            members: vec![false; net.arc_count()],
            count: 0,
            uf_all: UnionFind::new(n),
            uf_linear: UnionFind::new(n),
            linear_adj: vec![Vec::new(); n],
        }
    }

    pub fn contains(&self, arc: usize) -> bool {
        self.members[arc]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter_members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(e, &m)| if m { Some(e) } else { None })
    }

    /// Whether `F ∪ {arc}` keeps the linear acyclic property.
    pub fn can_add(&self, net: &FlowNetwork, arc: usize) -> bool {
        let a = &net.arcs[arc];
        if !a.cost.is_linear() {
            return true;
        }
        self.uf_linear.find(a.tail) != self.uf_linear.find(a.head)
    }

    pub fn add(&mut self, net: &FlowNetwork, arc: usize) -> Result<(), SolverError> {
        if self.members[arc] {
            return Ok(());
        }
        let a = &net.arcs[arc];
        if a.cost.is_linear() {
            if !self.uf_linear.union(a.tail, a.head) {
                return Err(SolverError::invariant(
                    "adding a linear arc would close a linear cycle in the revealed set",
                ));
            }
            self.linear_adj[a.tail].push((arc, a.head));
            self.linear_adj[a.head].push((arc, a.tail));
        }
        self.uf_all.union(a.tail, a.head);
        self.members[arc] = true;
        self.count += 1;
        Ok(())
    }

    /// Component labels of the undirected graph of revealed arcs; isolated
    /// nodes form singleton components.
    pub fn component_roots(&self, n: usize) -> Vec<usize> {
        (0..n).map(|v| self.uf_all.find(v)).collect()
    }

    /// Path of linear revealed arcs from `from` to `to`, as (arc, traversed
    /// forward) pairs. `None` when the endpoints lie in different linear trees.
    pub fn linear_path(&self, net: &FlowNetwork, from: usize, to: usize) -> Option<Vec<(usize, bool)>> {
        if from == to {
            return Some(Vec::new());
        }
        if self.uf_linear.find(from) != self.uf_linear.find(to) {
            return None;
        }
        let n = self.linear_adj.len();
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; n]; // node -> (prev node, arc)
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[from] = true;
        queue.push_back(from);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for &(arc, w) in &self.linear_adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    pred[w] = Some((v, arc));
                    queue.push_back(w);
                }
            }
        }
        if !seen[to] {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = to;
        while cur != from {
            let (prev, arc) = pred[cur].expect("predecessor chain broken");
            let forward = net.arcs[arc].tail == prev;
            path.push((arc, forward));
            cur = prev;
        }
        path.reverse();
        Some(path)
    }
}

/// Maximum absolute demand imbalance over undirected components of the
/// revealed set; isolated nodes count as singletons.
pub fn discrepancy(net: &FlowNetwork, revealed: &RevealedArcSet, demands: &[Rat]) -> Rat {
    let n = net.node_count();
    let roots = revealed.component_roots(n);
    let mut sums: std::collections::BTreeMap<usize, Rat> = std::collections::BTreeMap::new();
    for v in 0..n {
        *sums.entry(roots[v]).or_insert_with(Rat::zero) += &demands[v];
    }
    let mut best = Rat::zero();
    for s in sums.values() {
        let a = s.abs();
        if a > best {
            best = a;
        }
    }
    best
}

/// Residual arc identifier: an arc index together with a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ResKey {
    pub arc: usize,
    pub backward: bool,
}

impl ResKey {
    pub fn order_key(&self) -> usize {
        self.arc * 2 + usize::from(self.backward)
    }
}

#[derive(Debug, Clone)]
pub struct ResArc {
    pub from: usize,
    pub to: usize,
    pub key: ResKey,
    pub cost: ArcCost,
}

/// Residual arcs at scale `delta`: every arc forward, every revealed arc
/// backward, and the reverse of any arc with flow at least `delta`
/// (strictly positive flow when `delta = 0`). Costs are derivatives at
/// `f ± delta` with the reverse-arc convention `C'_ji(α) = −C'_ij(−α)`.
pub fn residual_arcs(
    net: &FlowNetwork,
    f: &Pseudoflow,
    revealed: &RevealedArcSet,
    delta: &Rat,
) -> Vec<ResArc> {
    let mut out = Vec::with_capacity(net.arc_count() * 2);
    for (e, arc) in net.arcs.iter().enumerate() {
        let fe = &f.values[e];
        let fwd_level = fe + delta;
        out.push(ResArc {
            from: arc.tail,
            to: arc.head,
            key: ResKey { arc: e, backward: false },
            cost: forward_cost(&arc.cost, net.mode, &fwd_level),
        });
        let has_back = revealed.contains(e)
            || if delta.is_zero() { fe.is_positive() } else { fe >= delta };
        if has_back {
            let bwd_level = fe - delta;
            out.push(ResArc {
                from: arc.head,
                to: arc.tail,
                key: ResKey { arc: e, backward: true },
                cost: reverse_cost(&arc.cost, net.mode, &bwd_level),
            });
        }
    }
    out
}

/// Capacitated problem statement, before reduction.
#[derive(Debug, Clone)]
pub struct CapArc {
    pub tail: usize,
    pub head: usize,
    pub cost: CostDescriptor,
    pub lower: Rat,
    pub upper: Option<Rat>,
}

#[derive(Debug, Clone)]
pub struct CapacitatedInstance {
    pub demands: Vec<Rat>,
    pub arcs: Vec<CapArc>,
    pub mode: OracleMode,
}

/// How each input arc is represented in the reduced network.
#[derive(Debug, Clone)]
pub enum ArcImage {
    Direct { arc: usize },
    Shifted { arc: usize, lower: Rat },
    Split { flow_arc: usize, lower: Rat },
}

#[derive(Debug, Clone)]
pub struct ReductionMap {
    pub images: Vec<ArcImage>,
}

impl ReductionMap {
    /// Flow on an input arc recovered from a reduced-network flow.
    pub fn original_flow(&self, input_arc: usize, reduced: &Pseudoflow) -> Rat {
        match &self.images[input_arc] {
            ArcImage::Direct { arc } => reduced.values[*arc].clone(),
            ArcImage::Shifted { arc, lower } => &reduced.values[*arc] + lower,
            ArcImage::Split { flow_arc, lower } => &reduced.values[*flow_arc] + lower,
        }
    }
}

fn shift_descriptor(cost: &CostDescriptor, lower: &Rat) -> Result<CostDescriptor, SolverError> {
    if lower.is_zero() {
        return Ok(cost.clone());
    }
    match cost {
        // C(α + ℓ) up to an additive constant, which cannot change the optimizer.
        CostDescriptor::Linear { d } => Ok(CostDescriptor::Linear { d: d.clone() }),
        CostDescriptor::Quadratic { c, d } => Ok(CostDescriptor::Quadratic {
            c: c.clone(),
            d: d + c * lower * rat_usize(2),
        }),
        _ => Err(SolverError::domain(
            "restricted cost descriptor cannot be shifted by a lower bound",
        )),
    }
}

/// Reduces a capacitated instance to lower bound 0 and no upper bounds.
///
/// Each arc with a finite upper bound becomes a fresh node `k` with arcs
/// `tail→k` (shifted cost) and `head→k` (zero cost) and demand `u − ℓ`;
/// demands at the endpoints absorb `ℓ` and `−u`. Unbounded arcs keep their
/// place, shifted when `ℓ > 0`.
pub fn uncapacitate(inst: &CapacitatedInstance) -> Result<(FlowNetwork, ReductionMap), SolverError> {
    let n0 = inst.demands.len();
    let mut demands = inst.demands.clone();
    let mut arcs: Vec<Arc> = Vec::new();
    let mut node_origin: Vec<NodeOrigin> =
        (0..n0).map(|v| NodeOrigin::Input { node: v }).collect();
    let mut images = Vec::with_capacity(inst.arcs.len());

    for (e, cap) in inst.arcs.iter().enumerate() {
        if cap.tail >= n0 || cap.head >= n0 {
            return Err(SolverError::domain(format!("arc {e} endpoint out of range")));
        }
        if cap.tail == cap.head {
            return Err(SolverError::domain(format!("arc {e} is a self-loop")));
        }
        if cap.lower.is_negative() {
            return Err(SolverError::domain(format!("arc {e} has a negative lower bound")));
        }
        match &cap.upper {
            None => {
                let cost = shift_descriptor(&cap.cost, &cap.lower)?;
                if cap.lower.is_zero() {
                    images.push(ArcImage::Direct { arc: arcs.len() });
                    arcs.push(Arc {
                        tail: cap.tail,
                        head: cap.head,
                        cost,
                        origin: ArcOrigin::Input { arc: e },
                    });
                } else {
                    demands[cap.tail] += &cap.lower;
                    demands[cap.head] -= &cap.lower;
                    images.push(ArcImage::Shifted { arc: arcs.len(), lower: cap.lower.clone() });
                    arcs.push(Arc {
                        tail: cap.tail,
                        head: cap.head,
                        cost,
                        origin: ArcOrigin::Shifted { arc: e, lower: cap.lower.clone() },
                    });
                }
            }
            Some(upper) => {
                if &cap.lower > upper {
                    return Err(SolverError::domain(format!(
                        "arc {e} has lower bound above its upper bound"
                    )));
                }
                let k = demands.len();
                node_origin.push(NodeOrigin::ArcNode { arc: e });
                demands.push(upper - &cap.lower);
                demands[cap.tail] += &cap.lower;
                demands[cap.head] -= upper;
                let cost = shift_descriptor(&cap.cost, &cap.lower)?;
                images.push(ArcImage::Split { flow_arc: arcs.len(), lower: cap.lower.clone() });
                arcs.push(Arc {
                    tail: cap.tail,
                    head: k,
                    cost,
                    origin: ArcOrigin::Split { arc: e, lower: cap.lower.clone() },
                });
                arcs.push(Arc {
                    tail: cap.head,
                    head: k,
                    cost: CostDescriptor::Linear { d: Rat::zero() },
                    origin: ArcOrigin::Slack { arc: e },
                });
            }
        }
    }

    let net = FlowNetwork {
        demands,
        arcs,
        mode: inst.mode,
        anchor: None,
        node_origin,
    };
    net.validate()?;
    Ok((net, ReductionMap { images }))
}

/// Ensures strong connectivity of an additive network by adding a hub node
/// with linear arcs `v→hub` and `hub→v` for every `v`, each costing `M` per
/// unit. `M` exceeds any potential spread realizable by a hub-free optimum,
/// so hub arcs carry flow at the optimum only when the instance is infeasible.
pub fn with_strong_connectivity(mut net: FlowNetwork) -> FlowNetwork {
    if net.is_strongly_connected() {
        return net;
    }
    assert_eq!(
        net.mode,
        OracleMode::Additive,
        "hub augmentation is only defined for additive networks"
    );
    let m_big = hub_cost_bound(&net);
    let hub = net.node_count();
    net.demands.push(Rat::zero());
    net.node_origin.push(NodeOrigin::Hub);
    for v in 0..hub {
        net.arcs.push(Arc {
            tail: v,
            head: hub,
            cost: CostDescriptor::Linear { d: m_big.clone() },
            origin: ArcOrigin::Hub,
        });
        net.arcs.push(Arc {
            tail: hub,
            head: v,
            cost: CostDescriptor::Linear { d: m_big.clone() },
            origin: ArcOrigin::Hub,
        });
    }
    net.anchor = Some(hub);
    net
}

/// Bound on per-unit hub cost: 1 plus the sum over arcs of a derivative bound
/// at a flow level no optimum can exceed. The flow level covers path flows
/// (total positive demand) plus the largest circulation any cycle can carry
/// before its derivative sum turns nonnegative.
fn hub_cost_bound(net: &FlowNetwork) -> Rat {
    let mut abs_b = Rat::zero();
    for d in &net.demands {
        abs_b += d.abs();
    }
    let mut sum_abs_d = Rat::zero();
    let mut max_inv_2c = Rat::zero();
    for arc in &net.arcs {
        match &arc.cost {
            CostDescriptor::Linear { d } => sum_abs_d += d.abs(),
            CostDescriptor::Quadratic { c, d } => {
                sum_abs_d += d.abs();
                let inv = (c * rat_usize(2)).recip();
                if inv > max_inv_2c {
                    max_inv_2c = inv;
                }
            }
            _ => unreachable!("hub augmentation is additive-only"),
        }
    }
    let level = abs_b + rat_usize(net.arc_count()) * sum_abs_d * max_inv_2c + Rat::one();
    let mut m_big = Rat::one();
    for arc in &net.arcs {
        let hi = match forward_cost(&arc.cost, OracleMode::Additive, &level) {
            ArcCost::Finite(v) => v.abs(),
            _ => unreachable!(),
        };
        let lo = match forward_cost(&arc.cost, OracleMode::Additive, &(-level.clone())) {
            ArcCost::Finite(v) => v.abs(),
            _ => unreachable!(),
        };
        m_big += if hi > lo { hi } else { lo };
    }
    m_big
}

/// Union-find with path halving; deterministic and index-based.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: std::cell::RefCell<Vec<usize>>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: std::cell::RefCell::new((0..n).collect()) }
    }

    pub fn find(&self, mut v: usize) -> usize {
        let mut p = self.parent.borrow_mut();
        while p[v] != v {
            let gp = p[p[v]];
            p[v] = gp;
            v = gp;
        }
        v
    }

    /// Returns false when both endpoints were already in one component.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return false;
        }
        // Smaller root wins so component representatives are stable.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent.borrow_mut()[hi] = lo;
        true
    }
}
