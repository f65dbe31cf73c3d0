//! Shortest-path subroutine with potential maintenance.
//!
//! The reached set grows by raising potentials of unreached nodes until new
//! arcs become tight; reduced costs stay nonnegative throughout and are zero
//! on every arc of the returned path. The multiplicative variant runs the
//! same procedure on `e^π` values, with products in place of sums.

use crate::cost::{ArcCost, OracleMode};
use crate::error::SolverError;
use crate::network::{ResArc, ResKey};
use crate::rational::Rat;
use crate::scaling::Potentials;
use num::One;

#[derive(Debug, Clone)]
pub struct PathResult {
    pub path: Vec<ResKey>,
    pub source: usize,
    pub target: usize,
}

/// Multi-source, multi-target tight-path search. Ties break toward the
/// smallest head index, then the smallest residual arc key.
pub fn shortest_path(
    n: usize,
    residual: &[ResArc],
    sources: &[bool],
    targets: &[bool],
    pot: &mut Potentials,
) -> Result<PathResult, SolverError> {
    if !sources.iter().any(|&s| s) || !targets.iter().any(|&t| t) {
        return Err(SolverError::contract("shortest path needs nonempty source and target sets"));
    }
    if (0..n).any(|v| sources[v] && targets[v]) {
        return Err(SolverError::contract("source and target sets must be disjoint"));
    }

    let mut reached = sources.to_vec();
    let mut pred: Vec<Option<(usize, ResKey)>> = vec![None; n];

    loop {
        // Raise potentials outside the reached set by the smallest reduced cost
        // crossing the cut.
        let mut alpha: Option<Rat> = None;
        for ra in residual {
            if !reached[ra.from] || reached[ra.to] {
                continue;
            }
            let red = match reduced_cost(pot, &ra.cost, ra.from, ra.to) {
                Some(r) => r,
                None => continue,
            };
            if below_zero(pot.mode, &red) {
                return Err(SolverError::invariant(
                    "negative reduced cost in the residual graph",
                ));
            }
            match &alpha {
                Some(a) if *a <= red => {}
                _ => alpha = Some(red),
            }
        }
        let alpha = alpha.ok_or_else(|| {
            SolverError::invariant("target set unreachable in the residual graph")
        })?;

        for v in 0..n {
            if !reached[v] {
                match pot.mode {
                    OracleMode::Additive => pot.values[v] += &alpha,
                    OracleMode::Multiplicative => pot.values[v] *= &alpha,
                }
            }
        }

        // Collect nodes now reachable on tight arcs; per head keep the
        // smallest residual key as predecessor.
        let mut newly: Vec<(usize, ResKey, usize)> = Vec::new(); // (head, key, tail)
        for ra in residual {
            if !reached[ra.from] || reached[ra.to] {
                continue;
            }
            let Some(red) = reduced_cost(pot, &ra.cost, ra.from, ra.to) else {
                continue;
            };
            if is_zero_reduced(pot.mode, &red) {
                match newly.iter_mut().find(|(h, _, _)| *h == ra.to) {
                    Some(entry) => {
                        if ra.key.order_key() < entry.1.order_key() {
                            entry.1 = ra.key;
                            entry.2 = ra.from;
                        }
                    }
                    None => newly.push((ra.to, ra.key, ra.from)),
                }
            }
        }
        if newly.is_empty() {
            return Err(SolverError::invariant("no arc became tight after a potential raise"));
        }
        newly.sort_by_key(|(h, _, _)| *h);
        for (h, key, tail) in &newly {
            reached[*h] = true;
            pred[*h] = Some((*tail, *key));
        }
        if let Some(&(t, _, _)) = newly.iter().find(|(h, _, _)| targets[*h]) {
            let mut path = Vec::new();
            let mut cur = t;
            while let Some((prev, key)) = pred[cur] {
                path.push(key);
                cur = prev;
            }
            path.reverse();
            return Ok(PathResult { path, source: cur, target: t });
        }
    }
}

fn reduced_cost(pot: &Potentials, cost: &ArcCost, from: usize, to: usize) -> Option<Rat> {
    let c = cost.finite()?;
    Some(match pot.mode {
        OracleMode::Additive => c + &pot.values[from] - &pot.values[to],
        OracleMode::Multiplicative => c * &pot.values[from] / &pot.values[to],
    })
}

fn below_zero(mode: OracleMode, red: &Rat) -> bool {
    match mode {
        OracleMode::Additive => red < &Rat::from_integer(0.into()),
        OracleMode::Multiplicative => red < &Rat::one(),
    }
}

fn is_zero_reduced(mode: OracleMode, red: &Rat) -> bool {
    match mode {
        OracleMode::Additive => red == &Rat::from_integer(0.into()),
        OracleMode::Multiplicative => red == &Rat::one(),
    }
}

/// Additive-mode entry point; potentials must satisfy all reduced-cost
/// constraints on the given residual arcs.
pub fn shortest_path_additive(
    n: usize,
    residual: &[ResArc],
    sources: &[bool],
    targets: &[bool],
    pot: &mut Potentials,
) -> Result<PathResult, SolverError> {
    assert_eq!(pot.mode, OracleMode::Additive);
    shortest_path(n, residual, sources, targets, pot)
}

/// Multiplicative-mode entry point over `e^π` values.
pub fn shortest_path_multiplicative(
    n: usize,
    residual: &[ResArc],
    sources: &[bool],
    targets: &[bool],
    pot: &mut Potentials,
) -> Result<PathResult, SolverError> {
    assert_eq!(pot.mode, OracleMode::Multiplicative);
    shortest_path(n, residual, sources, targets, pot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat_int;

    fn res(from: usize, to: usize, arc: usize, cost: i64) -> ResArc {
        ResArc {
            from,
            to,
            key: ResKey { arc, backward: false },
            cost: ArcCost::Finite(rat_int(cost)),
        }
    }

    fn mask(n: usize, on: &[usize]) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in on {
            m[i] = true;
        }
        m
    }

    #[test]
    fn picks_cheaper_route_and_updates_potentials() {
        // arcs 0→1 (3), 0→2 (1), 2→1 (1)
        let residual = vec![res(0, 1, 0, 3), res(0, 2, 1, 1), res(2, 1, 2, 1)];
        let mut pot = Potentials::zero_additive(3);
        let r =
            shortest_path_additive(3, &residual, &mask(3, &[0]), &mask(3, &[1]), &mut pot).unwrap();
        assert_eq!(r.source, 0);
        assert_eq!(r.target, 1);
        assert_eq!(
            r.path,
            vec![ResKey { arc: 1, backward: false }, ResKey { arc: 2, backward: false }]
        );
        assert_eq!(pot.values, vec![rat_int(0), rat_int(2), rat_int(1)]);
    }

    #[test]
    fn tight_arc_needs_no_raise() {
        let residual = vec![res(0, 1, 0, 0)];
        let mut pot = Potentials::zero_additive(2);
        let r =
            shortest_path_additive(2, &residual, &mask(2, &[0]), &mask(2, &[1]), &mut pot).unwrap();
        assert_eq!(r.path, vec![ResKey { arc: 0, backward: false }]);
        assert_eq!(pot.values, vec![rat_int(0), rat_int(0)]);
    }

    #[test]
    fn equal_cost_paths_break_to_lower_index() {
        // 0→2→1 and 0→3→1, both cost 2; the node-2 route wins.
        let residual = vec![
            res(0, 2, 0, 1),
            res(0, 3, 1, 1),
            res(2, 1, 2, 1),
            res(3, 1, 3, 1),
        ];
        let mut pot = Potentials::zero_additive(4);
        let r =
            shortest_path_additive(4, &residual, &mask(4, &[0]), &mask(4, &[1]), &mut pot).unwrap();
        assert_eq!(
            r.path,
            vec![ResKey { arc: 0, backward: false }, ResKey { arc: 2, backward: false }]
        );
    }

    #[test]
    fn multiplicative_route() {
        // Factors 4 direct vs 2·2 via node 2: equal length; contract tie-break
        // prefers the smaller arc key, potentials match either way.
        let residual = vec![
            ResArc { from: 0, to: 1, key: ResKey { arc: 0, backward: false }, cost: ArcCost::Finite(rat_int(4)) },
            ResArc { from: 0, to: 2, key: ResKey { arc: 1, backward: false }, cost: ArcCost::Finite(rat_int(2)) },
            ResArc { from: 2, to: 1, key: ResKey { arc: 2, backward: false }, cost: ArcCost::Finite(rat_int(2)) },
        ];
        let mut pot = Potentials::one_multiplicative(3);
        let r = shortest_path_multiplicative(3, &residual, &mask(3, &[0]), &mask(3, &[1]), &mut pot)
            .unwrap();
        assert_eq!(pot.values, vec![rat_int(1), rat_int(4), rat_int(2)]);
        assert_eq!(r.path, vec![ResKey { arc: 0, backward: false }]);
    }

    #[test]
    fn multiplicative_identity_arc() {
        let residual = vec![ResArc {
            from: 0,
            to: 1,
            key: ResKey { arc: 0, backward: false },
            cost: ArcCost::Finite(rat_int(1)),
        }];
        let mut pot = Potentials::one_multiplicative(2);
        let r = shortest_path_multiplicative(2, &residual, &mask(2, &[0]), &mask(2, &[1]), &mut pot)
            .unwrap();
        assert_eq!(r.path.len(), 1);
        assert_eq!(pot.values, vec![rat_int(1), rat_int(1)]);
    }

    #[test]
    fn zero_factor_arc_is_unusable() {
        let residual = vec![ResArc {
            from: 0,
            to: 1,
            key: ResKey { arc: 0, backward: false },
            cost: ArcCost::NegInfinite,
        }];
        let mut pot = Potentials::one_multiplicative(2);
        let err = shortest_path_multiplicative(2, &residual, &mask(2, &[0]), &mask(2, &[1]), &mut pot)
            .unwrap_err();
        assert!(matches!(err, SolverError::Invariant(_)));
    }
}
