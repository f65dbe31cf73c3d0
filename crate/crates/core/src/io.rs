//! Instance and solution files. Every number travels as an exact `"p/q"`
//! string; nothing is ever rounded.

use crate::cost::{CostDescriptor, OracleMode};
use crate::error::SolverError;
use crate::fisher::{LinearMarket, Segment, SegmentedPair, SpendingMarket, UtilityEntry};
use crate::network::{CapArc, CapacitatedInstance};
use crate::rational::{format_rat, parse_rat, Rat};
use crate::scaling::TraceEvent;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct NodeJson {
    pub id: usize,
    pub demand: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ArcJson {
    pub tail: usize,
    pub head: usize,
    pub c: String,
    pub d: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct BuyerJson {
    pub id: usize,
    pub budget: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct UtilityJson {
    pub buyer: usize,
    pub good: usize,
    pub u: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct SegmentJson {
    pub buyer: usize,
    pub good: usize,
    pub utils: Vec<String>,
    pub caps: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(tag = "kind")]
pub enum InstanceJson {
    #[serde(rename = "quadratic_flow")]
    Quadratic { nodes: Vec<NodeJson>, arcs: Vec<ArcJson> },
    #[serde(rename = "fisher_linear")]
    FisherLinear { buyers: Vec<BuyerJson>, goods: Vec<usize>, utilities: Vec<UtilityJson> },
    #[serde(rename = "fisher_spending")]
    FisherSpending { buyers: Vec<BuyerJson>, goods: Vec<usize>, segments: Vec<SegmentJson> },
}

#[derive(Debug, Clone)]
pub enum ParsedInstance {
    Quadratic(CapacitatedInstance),
    FisherLinear(LinearMarket),
    FisherSpending(SpendingMarket),
}

fn rat_at(path: String, text: &str) -> Result<Rat, SolverError> {
    parse_rat(text).map_err(|e| SolverError::domain(format!("{path}: {e}")))
}

/// Parses and validates an instance file.
pub fn parse_instance(bytes: &[u8]) -> Result<ParsedInstance, SolverError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| SolverError::domain("instance file is not UTF-8"))?;
    let raw: InstanceJson = serde_json::from_str(text)
        .map_err(|e| SolverError::domain(format!("instance JSON: {e}")))?;
    match raw {
        InstanceJson::Quadratic { nodes, arcs } => {
            let mut demands = vec![None; nodes.len()];
            for (i, node) in nodes.iter().enumerate() {
                if node.id >= nodes.len() || demands[node.id].is_some() {
                    return Err(SolverError::domain(format!(
                        "nodes[{i}].id: ids must be 0..{} without repeats",
                        nodes.len()
                    )));
                }
                demands[node.id] = Some(rat_at(format!("nodes[{i}].demand"), &node.demand)?);
            }
            let demands: Vec<Rat> = demands.into_iter().map(|d| d.unwrap()).collect();
            let mut total = Rat::from_integer(0.into());
            for d in &demands {
                total += d;
            }
            if !num::Zero::is_zero(&total) {
                return Err(SolverError::domain("nodes: demands must sum to zero"));
            }
            let mut cap_arcs = Vec::with_capacity(arcs.len());
            for (i, arc) in arcs.iter().enumerate() {
                let c = rat_at(format!("arcs[{i}].c"), &arc.c)?;
                let d = rat_at(format!("arcs[{i}].d"), &arc.d)?;
                if num::Signed::is_negative(&c) {
                    return Err(SolverError::domain(format!("arcs[{i}].c: must be nonnegative")));
                }
                let cost = if num::Zero::is_zero(&c) {
                    CostDescriptor::Linear { d }
                } else {
                    CostDescriptor::Quadratic { c, d }
                };
                let lower = match &arc.lower {
                    Some(l) => rat_at(format!("arcs[{i}].lower"), l)?,
                    None => Rat::from_integer(0.into()),
                };
                let upper = match &arc.upper {
                    Some(u) => Some(rat_at(format!("arcs[{i}].upper"), u)?),
                    None => None,
                };
                cap_arcs.push(CapArc { tail: arc.tail, head: arc.head, cost, lower, upper });
            }
            Ok(ParsedInstance::Quadratic(CapacitatedInstance {
                demands,
                arcs: cap_arcs,
                mode: OracleMode::Additive,
            }))
        }
        InstanceJson::FisherLinear { buyers, goods, utilities } => {
            let budgets = parse_buyers(&buyers)?;
            let num_goods = parse_goods(&goods)?;
            let mut entries = Vec::with_capacity(utilities.len());
            for (i, u) in utilities.iter().enumerate() {
                let val = rat_at(format!("utilities[{i}].u"), &u.u)?;
                if !num::Signed::is_positive(&val) {
                    return Err(SolverError::domain(format!(
                        "utilities[{i}].u: market edges require a positive utility"
                    )));
                }
                entries.push(UtilityEntry { buyer: u.buyer, good: u.good, utility: val });
            }
            let mkt = LinearMarket { budgets, num_goods, utilities: entries };
            mkt.validate()?;
            Ok(ParsedInstance::FisherLinear(mkt))
        }
        InstanceJson::FisherSpending { buyers, goods, segments } => {
            let budgets = parse_buyers(&buyers)?;
            let num_goods = parse_goods(&goods)?;
            let mut pairs = Vec::with_capacity(segments.len());
            for (i, s) in segments.iter().enumerate() {
                if s.utils.len() != s.caps.len() {
                    return Err(SolverError::domain(format!(
                        "segments[{i}]: utils and caps must have equal length"
                    )));
                }
                let mut segs = Vec::with_capacity(s.utils.len());
                for k in 0..s.utils.len() {
                    segs.push(Segment {
                        utility: rat_at(format!("segments[{i}].utils[{k}]"), &s.utils[k])?,
                        cap: rat_at(format!("segments[{i}].caps[{k}]"), &s.caps[k])?,
                    });
                }
                pairs.push(SegmentedPair { buyer: s.buyer, good: s.good, segments: segs });
            }
            let mkt = SpendingMarket { budgets, num_goods, pairs };
            mkt.validate()?;
            Ok(ParsedInstance::FisherSpending(mkt))
        }
    }
}

fn parse_buyers(buyers: &[BuyerJson]) -> Result<Vec<Rat>, SolverError> {
    let mut budgets = vec![None; buyers.len()];
    for (i, b) in buyers.iter().enumerate() {
        if b.id >= buyers.len() || budgets[b.id].is_some() {
            return Err(SolverError::domain(format!("buyers[{i}].id: ids must be dense")));
        }
        let val = rat_at(format!("buyers[{i}].budget"), &b.budget)?;
        if !num::Signed::is_positive(&val) {
            return Err(SolverError::domain(format!("buyers[{i}].budget: must be positive")));
        }
        budgets[b.id] = Some(val);
    }
    Ok(budgets.into_iter().map(|b| b.unwrap()).collect())
}

fn parse_goods(goods: &[usize]) -> Result<usize, SolverError> {
    let mut seen = vec![false; goods.len()];
    for &g in goods {
        if g >= goods.len() || seen[g] {
            return Err(SolverError::domain("goods: ids must be dense and unique"));
        }
        seen[g] = true;
    }
    if goods.is_empty() {
        return Err(SolverError::domain("goods: at least one good required"));
    }
    Ok(goods.len())
}

/// Canonical serialization of an instance; `parse_instance` of the result
/// reproduces the input exactly.
pub fn serialize_instance(inst: &ParsedInstance) -> String {
    let raw = match inst {
        ParsedInstance::Quadratic(q) => InstanceJson::Quadratic {
            nodes: q
                .demands
                .iter()
                .enumerate()
                .map(|(id, d)| NodeJson { id, demand: format_rat(d) })
                .collect(),
            arcs: q
                .arcs
                .iter()
                .map(|a| {
                    let (c, d) = match &a.cost {
                        CostDescriptor::Linear { d } => (Rat::from_integer(0.into()), d.clone()),
                        CostDescriptor::Quadratic { c, d } => (c.clone(), d.clone()),
                        _ => unreachable!("quadratic instances carry polynomial descriptors"),
                    };
                    ArcJson {
                        tail: a.tail,
                        head: a.head,
                        c: format_rat(&c),
                        d: format_rat(&d),
                        lower: if num::Zero::is_zero(&a.lower) {
                            None
                        } else {
                            Some(format_rat(&a.lower))
                        },
                        upper: a.upper.as_ref().map(format_rat),
                    }
                })
                .collect(),
        },
        ParsedInstance::FisherLinear(m) => InstanceJson::FisherLinear {
            buyers: m
                .budgets
                .iter()
                .enumerate()
                .map(|(id, b)| BuyerJson { id, budget: format_rat(b) })
                .collect(),
            goods: (0..m.num_goods).collect(),
            utilities: m
                .utilities
                .iter()
                .map(|e| UtilityJson { buyer: e.buyer, good: e.good, u: format_rat(&e.utility) })
                .collect(),
        },
        ParsedInstance::FisherSpending(m) => InstanceJson::FisherSpending {
            buyers: m
                .budgets
                .iter()
                .enumerate()
                .map(|(id, b)| BuyerJson { id, budget: format_rat(b) })
                .collect(),
            goods: (0..m.num_goods).collect(),
            segments: m
                .pairs
                .iter()
                .map(|p| SegmentJson {
                    buyer: p.buyer,
                    good: p.good,
                    utils: p.segments.iter().map(|s| format_rat(&s.utility)).collect(),
                    caps: p.segments.iter().map(|s| format_rat(&s.cap)).collect(),
                })
                .collect(),
        },
    };
    serde_json::to_string_pretty(&raw).expect("instance serialization cannot fail")
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FlowJson {
    pub arc: usize,
    pub value: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct PotentialJson {
    pub node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct PriceJson {
    pub good: usize,
    pub price: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct SpendingJson {
    pub buyer: usize,
    pub good: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    pub amount: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct SolutionJson {
    pub status: String,
    pub flow: Vec<FlowJson>,
    pub potentials: Vec<PotentialJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<Vec<PriceJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spending: Option<Vec<SpendingJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    pub phases: usize,
    pub revealed_arcs: Vec<usize>,
}

/// One trace line per event: `{type, phase, delta, payload}`.
pub fn trace_line(event: &TraceEvent) -> String {
    let (ty, phase, delta, payload) = match event {
        TraceEvent::PhaseStart { phase, delta } => {
            ("phase_start", *phase, delta, serde_json::json!({}))
        }
        TraceEvent::Augment { phase, delta, path, source, target } => (
            "augment",
            *phase,
            delta,
            serde_json::json!({
                "source": source,
                "target": target,
                "path": path
                    .iter()
                    .map(|k| serde_json::json!({
                        "arc": k.arc,
                        "dir": if k.backward { "backward" } else { "forward" },
                    }))
                    .collect::<Vec<_>>(),
            }),
        ),
        TraceEvent::Extend { phase, delta, arc } => {
            ("extend", *phase, delta, serde_json::json!({ "arc": arc }))
        }
        TraceEvent::TrialSuccess { phase, delta, err, delta_next } => (
            "trial_success",
            *phase,
            delta,
            match delta_next {
                Some(dn) => serde_json::json!({ "err": format_rat(err), "delta_next": format_rat(dn) }),
                None => serde_json::json!({ "err": format_rat(err) }),
            },
        ),
        TraceEvent::TrialFail { phase, delta, err } => {
            ("trial_fail", *phase, delta, serde_json::json!({ "err": format_rat(err) }))
        }
        TraceEvent::Halve { phase, delta } => ("halve", *phase, delta, serde_json::json!({})),
    };
    serde_json::json!({
        "type": ty,
        "phase": phase,
        "delta": format_rat(delta),
        "payload": payload,
    })
    .to_string()
}
