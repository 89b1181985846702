//! Integrability-exponent arithmetic: conjugates, Sobolev exponents and the
//! pass/fail gates on `(r, γ, r₁, γ₁)` and on the appendix pair `(q, β)`.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::serde_ext::ext_f64;

/// Hölder conjugate `p' = p/(p−1)`, with `1' = ∞` and `∞' = 1`.
pub fn conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// Sobolev exponent `p*` with `1/p* = 1/p − 1/d` when `p < d`, otherwise `+∞`.
pub fn sobolev_conjugate(p: f64, d: usize) -> f64 {
    let d = d as f64;
    if p < d {
        p * d / (d - p)
    } else {
        f64::INFINITY
    }
}

/// `(2q)*`, the exponent used by the appendix embeddings.
pub fn sobolev_2q(q: f64, d: usize) -> f64 {
    sobolev_conjugate(2.0 * q, d)
}

/// Weak-solution exponents `(r, γ)`, strong-solution exponents `(r₁, γ₁)` and the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentProfile {
    pub r: f64,
    pub gamma: f64,
    pub r1: f64,
    pub gamma1: f64,
    pub d: usize,
}

impl ExponentProfile {
    pub fn new(r: f64, gamma: f64, r1: f64, gamma1: f64, d: usize) -> Result<Self> {
        for (name, v) in [("r", r), ("gamma", gamma), ("r1", r1), ("gamma1", gamma1)] {
            if !v.is_finite() || v <= 1.0 {
                return Err(MfgError::InvalidExponent(format!("{name} = {v} must be a finite real > 1")));
            }
        }
        if d == 0 {
            return Err(MfgError::InvalidExponent("dimension must be positive".into()));
        }
        Ok(Self { r, gamma, r1, gamma1, d })
    }

    pub fn r_conj(&self) -> f64 {
        conjugate(self.r)
    }

    pub fn gamma_conj(&self) -> f64 {
        conjugate(self.gamma)
    }

    /// `γ*`; `+∞` when `γ ≥ d`.
    pub fn gamma_star(&self) -> f64 {
        sobolev_conjugate(self.gamma, self.d)
    }
}

/// `r₁ ≥ r > 1` and `γ₁ ≥ γ > 1`.
pub fn gate_a4(prof: &ExponentProfile) -> bool {
    prof.r1 >= prof.r && prof.r > 1.0 && prof.gamma1 >= prof.gamma && prof.gamma > 1.0
}

/// If `γ < d`, require `γ* ≥ r'`; vacuous otherwise.
pub fn gate_a3(prof: &ExponentProfile) -> bool {
    if prof.gamma < prof.d as f64 {
        prof.gamma_star() >= prof.r_conj()
    } else {
        true
    }
}

/// The four Hölder complements attached to the path-(a) integrability conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntAExponents {
    /// `1/r + 1/γ + 1/q₁ = 1`; integrability of `D_pH`.
    pub q1: f64,
    /// `2/r + 1/q₂ = 1`; integrability of `D_mH`.
    pub q2: f64,
    /// `2/r + 1/γ + 1/q₃ = 1`; integrability of `D²_{pm}H`.
    pub q3: f64,
    /// `1/r + 2/γ + 1/q₄ = 1`; integrability of `D²_{pp}H`.
    pub q4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "broken", rename_all = "snake_case")]
pub enum IntAFailure {
    /// `2/r + 1/γ < 1` does not hold; carries the left-hand side.
    TwoOverRPlusOneOverGamma { value: f64 },
    /// `1/r + 2/γ < 1` does not hold.
    OneOverRPlusTwoOverGamma { value: f64 },
}

impl std::fmt::Display for IntAFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TwoOverRPlusOneOverGamma { value } => write!(f, "2/r + 1/gamma = {value} is not < 1"),
            Self::OneOverRPlusTwoOverGamma { value } => write!(f, "1/r + 2/gamma = {value} is not < 1"),
        }
    }
}

pub fn gate_int_a(prof: &ExponentProfile) -> std::result::Result<IntAExponents, IntAFailure> {
    let (ir, ig) = (1.0 / prof.r, 1.0 / prof.gamma);
    let first = 2.0 * ir + ig;
    if first >= 1.0 {
        return Err(IntAFailure::TwoOverRPlusOneOverGamma { value: first });
    }
    let second = ir + 2.0 * ig;
    if second >= 1.0 {
        return Err(IntAFailure::OneOverRPlusTwoOverGamma { value: second });
    }
    Ok(IntAExponents {
        q1: 1.0 / (1.0 - ir - ig),
        q2: 1.0 / (1.0 - 2.0 * ir),
        q3: 1.0 / (1.0 - 2.0 * ir - ig),
        q4: 1.0 / (1.0 - ir - 2.0 * ig),
    })
}

/// `2β' ≤ (2q)*` for `q ∈ [1/2, 1)` and `β ∈ [1, ∞]`.
pub fn gate_appendix_qbeta(q: f64, beta: f64, d: usize) -> Result<bool> {
    if !(0.5..1.0).contains(&q) {
        return Err(MfgError::InvalidExponent(format!("q = {q} must lie in [1/2, 1)")));
    }
    if beta.is_nan() || beta < 1.0 {
        return Err(MfgError::InvalidExponent(format!("beta = {beta} must be >= 1")));
    }
    let lhs = 2.0 * conjugate(beta);
    Ok(lhs <= sobolev_2q(q, d))
}

/// One row of the `check-exponents` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub gate: String,
    pub pass: bool,
    pub detail: String,
}

/// Everything `check-exponents` reports, in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    #[serde(with = "ext_f64")]
    pub r_conj: f64,
    #[serde(with = "ext_f64")]
    pub gamma_conj: f64,
    #[serde(with = "ext_f64")]
    pub gamma_star: f64,
    pub rows: Vec<GateRow>,
}

impl ExponentReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

pub fn exponent_report(prof: &ExponentProfile, qbeta: Option<(f64, f64)>) -> Result<ExponentReport> {
    let mut rows = vec![
        GateRow {
            gate: "a4".into(),
            pass: gate_a4(prof),
            detail: format!(
                "r1={} >= r={} > 1, gamma1={} >= gamma={} > 1",
                prof.r1, prof.r, prof.gamma1, prof.gamma
            ),
        },
        GateRow {
            gate: "a3".into(),
            pass: gate_a3(prof),
            detail: if prof.gamma < prof.d as f64 {
                format!("gamma*={} >= r'={}", prof.gamma_star(), prof.r_conj())
            } else {
                format!("vacuous: gamma={} >= d={}", prof.gamma, prof.d)
            },
        },
    ];
    rows.push(match gate_int_a(prof) {
        Ok(q) => GateRow {
            gate: "intA".into(),
            pass: true,
            detail: format!("q1={} q2={} q3={} q4={}", q.q1, q.q2, q.q3, q.q4),
        },
        Err(e) => GateRow {
            gate: "intA".into(),
            pass: false,
            detail: e.to_string(),
        },
    });
    if let Some((q, beta)) = qbeta {
        let pass = gate_appendix_qbeta(q, beta, prof.d)?;
        rows.push(GateRow {
            gate: "appendix_qbeta".into(),
            pass,
            detail: format!("2*beta'={} <= (2q)*={}", 2.0 * conjugate(beta), sobolev_2q(q, prof.d)),
        });
    }
    Ok(ExponentReport {
        r_conj: prof.r_conj(),
        gamma_conj: prof.gamma_conj(),
        gamma_star: prof.gamma_star(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prof(r: f64, gamma: f64, r1: f64, gamma1: f64, d: usize) -> ExponentProfile {
        ExponentProfile::new(r, gamma, r1, gamma1, d).unwrap()
    }

    #[test]
    fn a4_examples() {
        assert!(gate_a4(&prof(2.0, 2.0, 4.0, 4.0, 1)));
        assert!(gate_a4(&prof(2.0, 2.0, 2.0, 2.0, 1)));
        assert!(!gate_a4(&prof(3.0, 2.0, 2.0, 4.0, 1)));
    }

    #[test]
    fn a3_examples() {
        let p = prof(2.0, 2.0, 4.0, 4.0, 3);
        assert!((p.gamma_star() - 6.0).abs() < 1e-12);
        assert!(gate_a3(&p));
        let p = prof(2.0, 2.0, 4.0, 4.0, 1);
        assert!(p.gamma_star().is_infinite());
        assert!(gate_a3(&p));
        let p = prof(1.1, 1.2, 2.0, 2.0, 3);
        assert!((p.gamma_star() - 2.0).abs() < 1e-12);
        assert!((p.r_conj() - 11.0).abs() < 1e-12);
        assert!(!gate_a3(&p));
    }

    #[test]
    fn int_a_examples() {
        let q = gate_int_a(&prof(4.0, 4.0, 8.0, 8.0, 1)).unwrap();
        assert_eq!((q.q1, q.q2, q.q3, q.q4), (2.0, 2.0, 4.0, 4.0));
        assert!(matches!(
            gate_int_a(&prof(3.0, 3.0, 3.0, 3.0, 1)),
            Err(IntAFailure::TwoOverRPlusOneOverGamma { .. })
        ));
        let q = gate_int_a(&prof(6.0, 6.0, 6.0, 6.0, 1)).unwrap();
        for (got, want) in [(q.q1, 1.5), (q.q2, 1.5), (q.q3, 2.0), (q.q4, 2.0)] {
            assert!((got - want).abs() < 1e-12);
        }
        // second inequality alone broken: 1/r + 2/γ ≥ 1 with 2/r + 1/γ < 1
        assert!(matches!(
            gate_int_a(&prof(10.0, 2.2, 10.0, 10.0, 1)),
            Err(IntAFailure::OneOverRPlusTwoOverGamma { .. })
        ));
    }

    #[test]
    fn qbeta_examples() {
        for q in [0.5, 0.6, 0.75, 0.95] {
            for beta in [1.0, 2.0, f64::INFINITY] {
                assert!(gate_appendix_qbeta(q, beta, 1).unwrap());
            }
        }
        assert!((sobolev_2q(0.9, 3) - 4.5).abs() < 1e-12);
        assert!(gate_appendix_qbeta(0.9, 2.0, 3).unwrap());
        assert!((sobolev_2q(0.5, 3) - 1.5).abs() < 1e-12);
        assert!(!gate_appendix_qbeta(0.5, 2.0, 3).unwrap());
        assert!(gate_appendix_qbeta(1.0, 2.0, 1).is_err());
        assert!(gate_appendix_qbeta(0.4, 2.0, 1).is_err());
        assert!(gate_appendix_qbeta(0.6, 0.5, 1).is_err());
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(ExponentProfile::new(1.0, 2.0, 2.0, 2.0, 1).is_err());
        assert!(ExponentProfile::new(2.0, f64::INFINITY, 2.0, 2.0, 1).is_err());
    }

    #[test]
    fn report_table() {
        let rep = exponent_report(&prof(4.0, 4.0, 8.0, 8.0, 1), Some((0.5, f64::INFINITY))).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert!(rep.all_pass());
        let rep = exponent_report(&prof(3.0, 2.0, 2.0, 4.0, 1), None).unwrap();
        assert!(!rep.all_pass());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conjugate_identities(r in 1.0001f64..50.0, g in 1.0001f64..50.0) {
                let p = prof(r, g, r, g, 2);
                prop_assert!((1.0 / r + 1.0 / p.r_conj() - 1.0).abs() < 1e-12);
                prop_assert!((1.0 / g + 1.0 / p.gamma_conj() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn q_identities_reconstruct(r in 2.0f64..60.0, g in 2.0f64..60.0) {
                let p = prof(r, g, r, g, 2);
                if let Ok(q) = gate_int_a(&p) {
                    prop_assert!((1.0 / r + 1.0 / g + 1.0 / q.q1 - 1.0).abs() < 1e-12);
                    prop_assert!((2.0 / r + 1.0 / q.q2 - 1.0).abs() < 1e-12);
                    prop_assert!((2.0 / r + 1.0 / g + 1.0 / q.q3 - 1.0).abs() < 1e-12);
                    prop_assert!((1.0 / r + 2.0 / g + 1.0 / q.q4 - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn a4_monotone_in_strong_exponents(
                r in 1.01f64..10.0, g in 1.01f64..10.0,
                r1 in 1.01f64..10.0, g1 in 1.01f64..10.0,
                dr in 0.0f64..5.0, dg in 0.0f64..5.0,
            ) {
                let base = prof(r, g, r1, g1, 2);
                let raised = prof(r, g, r1 + dr, g1 + dg, 2);
                prop_assert!(!gate_a4(&base) || gate_a4(&raised));
            }

            #[test]
            fn qbeta_monotone_in_q(q in 0.5f64..0.99, dq in 0.0f64..0.5, beta in 1.0f64..20.0, d in 1usize..5) {
                let q2 = (q + dq).min(0.999);
                prop_assert!(!gate_appendix_qbeta(q, beta, d).unwrap() || gate_appendix_qbeta(q2, beta, d).unwrap());
            }
        }
    }
}
