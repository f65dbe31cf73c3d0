//! Differential cost oracle.
//!
//! Arc costs are never evaluated; the solver only ever queries derivatives.
//! In additive mode the oracle returns `C'(α)` directly, in multiplicative
//! mode it returns `e^{C'(α)}` so that all intermediate values stay rational.

use crate::rational::Rat;
use num::{Signed, Zero};

/// Network-wide oracle mode. An instance is entirely additive or entirely
/// multiplicative; comparisons across arcs must share a scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Additive,
    Multiplicative,
}

/// Cost function of a single arc.
///
/// * `Linear(d)`: `C(α) = d·α`
/// * `Quadratic(c, d)`: `C(α) = c·α² + d·α` with `c > 0`
/// * `LogEntropic`: `C(α) = α(log α − 1)`, restricted to `α ≥ 0`
/// * `NegLogConstant(u)`: `C(α) = −α·log u` with `u > 0`
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CostDescriptor {
    Linear { d: Rat },
    Quadratic { c: Rat, d: Rat },
    LogEntropic,
    NegLogConstant { u: Rat },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearity {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    Free,
    Restricted,
}

/// Raw oracle output. Additive mode yields a finite rational except below a
/// restricted arc's lower bound; multiplicative mode yields a rational `≥ 0`
/// where `0` encodes `e^{−∞}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DerivativeValue {
    Finite(Rat),
    NegInfinite,
}

/// Extended cost of a residual arc. Reverse arcs of restricted arcs at their
/// bound have cost `+∞`; such arcs are never relaxed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArcCost {
    NegInfinite,
    Finite(Rat),
    PosInfinite,
}

impl CostDescriptor {
    pub fn is_restricted(&self) -> bool {
        matches!(self, CostDescriptor::LogEntropic)
    }

    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            CostDescriptor::Linear { .. } | CostDescriptor::NegLogConstant { .. }
        )
    }

    pub fn additive_capable(&self) -> bool {
        matches!(
            self,
            CostDescriptor::Linear { .. } | CostDescriptor::Quadratic { .. }
        )
    }

    pub fn multiplicative_capable(&self) -> bool {
        matches!(
            self,
            CostDescriptor::LogEntropic | CostDescriptor::NegLogConstant { .. }
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            CostDescriptor::Quadratic { c, .. } if !c.is_positive() => {
                Err("quadratic coefficient must be positive; use Linear for c = 0".into())
            }
            CostDescriptor::NegLogConstant { u } if !u.is_positive() => {
                Err("NegLogConstant requires u > 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// `C'(α)` for additive-capable descriptors.
///
/// Calling this on `LogEntropic` or `NegLogConstant` is a contract violation.
pub fn derivative(desc: &CostDescriptor, alpha: &Rat) -> DerivativeValue {
    match desc {
        CostDescriptor::Linear { d } => DerivativeValue::Finite(d.clone()),
        CostDescriptor::Quadratic { c, d } => {
            DerivativeValue::Finite(c * alpha * Rat::from_integer(2.into()) + d)
        }
        _ => panic!("additive derivative queried on a multiplicative-only descriptor"),
    }
}

/// `e^{C'(α)}` for multiplicative-capable descriptors. `0` encodes `e^{−∞}`.
pub fn e_derivative(desc: &CostDescriptor, alpha: &Rat) -> DerivativeValue {
    match desc {
        CostDescriptor::NegLogConstant { u } => DerivativeValue::Finite(u.recip()),
        CostDescriptor::LogEntropic => {
            if alpha.is_positive() {
                DerivativeValue::Finite(alpha.clone())
            } else {
                DerivativeValue::Finite(Rat::zero())
            }
        }
        _ => panic!("multiplicative derivative queried on an additive-only descriptor"),
    }
}

/// Arc classification: derivative constant vs. strictly increasing, and
/// whether the domain is restricted to nonnegative flow.
pub fn classify(desc: &CostDescriptor) -> (Linearity, Restriction) {
    let lin = if desc.is_linear() {
        Linearity::Linear
    } else {
        Linearity::Nonlinear
    };
    let res = if desc.is_restricted() {
        Restriction::Restricted
    } else {
        Restriction::Free
    };
    (lin, res)
}

/// Cost of the forward residual copy of an arc, evaluated at flow `alpha`.
pub fn forward_cost(desc: &CostDescriptor, mode: OracleMode, alpha: &Rat) -> ArcCost {
    match mode {
        OracleMode::Additive => match derivative(desc, alpha) {
            DerivativeValue::Finite(v) => ArcCost::Finite(v),
            DerivativeValue::NegInfinite => ArcCost::NegInfinite,
        },
        OracleMode::Multiplicative => match e_derivative(desc, alpha) {
            DerivativeValue::Finite(v) if v.is_zero() => ArcCost::NegInfinite,
            DerivativeValue::Finite(v) => ArcCost::Finite(v),
            DerivativeValue::NegInfinite => ArcCost::NegInfinite,
        },
    }
}

/// Cost of the reverse residual copy: `C'_ji(α) = −C'_ij(−α)`, so the reverse
/// at residual level `β` evaluates the forward derivative at `−β` and negates
/// (additively) or reciprocates (multiplicatively).
pub fn reverse_cost(desc: &CostDescriptor, mode: OracleMode, forward_flow_after: &Rat) -> ArcCost {
    match forward_cost(desc, mode, forward_flow_after) {
        ArcCost::NegInfinite => ArcCost::PosInfinite,
        ArcCost::PosInfinite => ArcCost::NegInfinite,
        ArcCost::Finite(v) => match mode {
            OracleMode::Additive => ArcCost::Finite(-v),
            OracleMode::Multiplicative => ArcCost::Finite(v.recip()),
        },
    }
}

impl ArcCost {
    pub fn finite(&self) -> Option<&Rat> {
        match self {
            ArcCost::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_pos_infinite(&self) -> bool {
        matches!(self, ArcCost::PosInfinite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};
    use proptest::prelude::*;

    #[test]
    fn quadratic_derivative() {
        let desc = CostDescriptor::Quadratic { c: rat_int(1), d: rat_int(2) };
        assert_eq!(derivative(&desc, &rat_int(3)), DerivativeValue::Finite(rat_int(8)));
    }

    #[test]
    fn linear_derivative_constant() {
        let desc = CostDescriptor::Linear { d: rat_int(5) };
        for a in [-7, 0, 3] {
            assert_eq!(derivative(&desc, &rat_int(a)), DerivativeValue::Finite(rat_int(5)));
        }
    }

    #[test]
    fn quadratic_derivative_negative_flow() {
        let desc = CostDescriptor::Quadratic { c: rat_int(2), d: rat_int(0) };
        assert_eq!(derivative(&desc, &rat_int(-1)), DerivativeValue::Finite(rat_int(-4)));
    }

    #[test]
    fn entropic_e_derivative() {
        assert_eq!(
            e_derivative(&CostDescriptor::LogEntropic, &rat_int(5)),
            DerivativeValue::Finite(rat_int(5))
        );
        assert_eq!(
            e_derivative(&CostDescriptor::LogEntropic, &rat_int(0)),
            DerivativeValue::Finite(rat_int(0))
        );
        assert_eq!(
            e_derivative(&CostDescriptor::LogEntropic, &rat_int(-2)),
            DerivativeValue::Finite(rat_int(0))
        );
    }

    #[test]
    fn neg_log_constant_e_derivative() {
        let desc = CostDescriptor::NegLogConstant { u: rat_int(4) };
        for a in [-1, 0, 9] {
            assert_eq!(e_derivative(&desc, &rat_int(a)), DerivativeValue::Finite(rat(1, 4)));
        }
    }

    #[test]
    fn classification() {
        assert_eq!(
            classify(&CostDescriptor::Quadratic { c: rat_int(1), d: rat_int(0) }),
            (Linearity::Nonlinear, Restriction::Free)
        );
        assert_eq!(
            classify(&CostDescriptor::NegLogConstant { u: rat_int(3) }),
            (Linearity::Linear, Restriction::Free)
        );
        assert_eq!(
            classify(&CostDescriptor::LogEntropic),
            (Linearity::Nonlinear, Restriction::Restricted)
        );
        assert_eq!(
            classify(&CostDescriptor::Linear { d: rat_int(-2) }),
            (Linearity::Linear, Restriction::Free)
        );
    }

    #[test]
    #[should_panic]
    fn additive_on_entropic_panics() {
        derivative(&CostDescriptor::LogEntropic, &rat_int(1));
    }

    fn additive_descs() -> impl Strategy<Value = CostDescriptor> {
        prop_oneof![
            (-50i64..50).prop_map(|d| CostDescriptor::Linear { d: rat_int(d) }),
            ((1i64..20), (-50i64..50))
                .prop_map(|(c, d)| CostDescriptor::Quadratic { c: rat_int(c), d: rat_int(d) }),
        ]
    }

    proptest! {
        #[test]
        fn additive_monotone(desc in additive_descs(), a in -60i64..60, b in -60i64..60) {
            prop_assume!(a < b);
            let da = derivative(&desc, &rat_int(a));
            let db = derivative(&desc, &rat_int(b));
            match (da, db) {
                (DerivativeValue::Finite(x), DerivativeValue::Finite(y)) => {
                    prop_assert!(x <= y);
                    if matches!(desc, CostDescriptor::Quadratic { .. }) {
                        prop_assert!(x < y);
                    }
                }
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn multiplicative_monotone(a in 1i64..60, b in 1i64..60) {
            prop_assume!(a < b);
            let desc = CostDescriptor::LogEntropic;
            let (DerivativeValue::Finite(x), DerivativeValue::Finite(y)) =
                (e_derivative(&desc, &rat_int(a)), e_derivative(&desc, &rat_int(b)))
            else { unreachable!() };
            prop_assert!(x < y);
        }

        #[test]
        fn reverse_identity_additive(desc in additive_descs(), num in -90i64..90, den in 1i64..10) {
            let alpha = rat(num, den);
            // C'_ji(α) = −C'_ij(−α): reverse cost at forward level −α equals
            // the negated forward cost at −α.
            let fwd = forward_cost(&desc, OracleMode::Additive, &(-alpha.clone()));
            let rev = reverse_cost(&desc, OracleMode::Additive, &(-alpha.clone()));
            match (fwd, rev) {
                (ArcCost::Finite(f), ArcCost::Finite(r)) => prop_assert_eq!(r, -f),
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn reverse_identity_multiplicative(num in 1i64..90, den in 1i64..10) {
            let alpha = rat(num, den);
            let desc = CostDescriptor::LogEntropic;
            let fwd = forward_cost(&desc, OracleMode::Multiplicative, &alpha);
            let rev = reverse_cost(&desc, OracleMode::Multiplicative, &alpha);
            match (fwd, rev) {
                (ArcCost::Finite(f), ArcCost::Finite(r)) => prop_assert_eq!(f * r, rat_int(1)),
                _ => prop_assert!(false),
            }
        }
    }
}
