//! The power-type and congestion Hamiltonians with closed-form first and
//! second derivatives, plus growth and feasibility arithmetic.
//!
//! With `s = 1 + |p|²`:
//!
//! ```text
//! power:       H = s^{γ/2}/γ − g(m) + V(x)
//! congestion:  H = s^{γ/2}/(γ m^α) + V(x)
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::exponents::ExponentProfile;
use crate::field::{TorusGrid, TrigPolynomial};

/// Densities below this are domain errors for the congestion family.
pub const CONGESTION_M_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Power,
    Congestion,
}

/// The increasing coupling `g` of the power family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `g(m) = c·m^exponent`
    PowerLaw { c: f64, exponent: f64 },
    /// `g(m) = k0 + k1·m`
    Affine { k0: f64, k1: f64 },
}

impl Coupling {
    pub fn identity() -> Self {
        Coupling::Affine { k0: 0.0, k1: 1.0 }
    }

    pub fn value(&self, m: f64) -> f64 {
        match *self {
            Coupling::PowerLaw { c, exponent } => c * m.powf(exponent),
            Coupling::Affine { k0, k1 } => k0 + k1 * m,
        }
    }

    pub fn derivative(&self, m: f64) -> f64 {
        match *self {
            Coupling::PowerLaw { c, exponent } => c * exponent * m.powf(exponent - 1.0),
            Coupling::Affine { k1, .. } => k1,
        }
    }

    /// Whether `g(θ) ≤ C(1 + θ^r)` for all `θ ≥ 0`, decided from the parametrization.
    pub fn grows_at_most(&self, r: f64) -> bool {
        match *self {
            Coupling::PowerLaw { exponent, .. } => exponent <= r,
            Coupling::Affine { .. } => r >= 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityDomain {
    /// `m > 0`
    Positive,
    /// `m ≥ 0`
    Nonnegative,
}

impl DensityDomain {
    pub fn name(&self) -> &'static str {
        match self {
            DensityDomain::Positive => "positive",
            DensityDomain::Nonnegative => "nonnegative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub family: Family,
    pub gamma: f64,
    /// Congestion exponent; ignored by the power family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Coupling of the power family; ignored by the congestion family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_g: Option<Coupling>,
    #[serde(rename = "potential_V", default)]
    pub potential_v: TrigPolynomial,
    pub density_domain: DensityDomain,
}

/// Every derivative the solver and verifiers need at one point. Vectors and
/// matrices are zero-padded to `2`; only the leading `d` entries are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointDerivatives {
    pub h: f64,
    pub dp: [f64; 2],
    pub dm: f64,
    pub dpp: [[f64; 2]; 2],
    pub dpm: [f64; 2],
}

impl HamiltonianSpec {
    pub fn power(gamma: f64, coupling: Coupling) -> Self {
        Self {
            family: Family::Power,
            gamma,
            alpha: None,
            coupling_g: Some(coupling),
            potential_v: TrigPolynomial::zero(),
            density_domain: DensityDomain::Nonnegative,
        }
    }

    pub fn congestion(gamma: f64, alpha: f64) -> Self {
        Self {
            family: Family::Congestion,
            gamma,
            alpha: Some(alpha),
            coupling_g: None,
            potential_v: TrigPolynomial::zero(),
            density_domain: DensityDomain::Positive,
        }
    }

    pub fn with_potential(mut self, v: TrigPolynomial) -> Self {
        self.potential_v = v;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return Err(MfgError::InvalidSpec(format!("gamma = {} must be > 1", self.gamma)));
        }
        match self.family {
            Family::Congestion => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| MfgError::InvalidSpec("congestion family requires alpha".into()))?;
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(MfgError::InvalidSpec(format!("alpha = {alpha} must be > 0")));
                }
                if self.density_domain != DensityDomain::Positive {
                    return Err(MfgError::InvalidSpec(
                        "congestion family requires density_domain = positive".into(),
                    ));
                }
            }
            Family::Power => {
                let g = self
                    .coupling_g
                    .ok_or_else(|| MfgError::InvalidSpec("power family requires coupling_g".into()))?;
                for m in [1e-6, 1e-3, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
                    let dg = g.derivative(m);
                    if !(dg > 0.0 && dg.is_finite()) {
                        return Err(MfgError::InvalidSpec(format!(
                            "coupling_g must be strictly increasing: g'({m}) = {dg}"
                        )));
                    }
                }
            }
        }
        if self.potential_v.terms.iter().any(|t| t.k.len() > 2) {
            return Err(MfgError::InvalidSpec("potential_V wave vectors have at most 2 entries".into()));
        }
        Ok(())
    }

    /// Rejects the potential if it is not resolved on `grid` (frequency above `n/4`)
    /// or its wave vectors are longer than the dimension.
    pub fn check_grid(&self, grid: TorusGrid) -> Result<()> {
        if self.potential_v.terms.iter().any(|t| t.k.len() > grid.dim()) {
            return Err(MfgError::InvalidSpec(format!(
                "potential_V has wave vectors longer than d = {}",
                grid.dim()
            )));
        }
        if self.potential_v.max_frequency() as usize > grid.n() / 4 {
            return Err(MfgError::InvalidSpec(format!(
                "potential_V frequency {} exceeds the band limit n/4 = {}",
                self.potential_v.max_frequency(),
                grid.n() / 4
            )));
        }
        Ok(())
    }

    pub fn check_density(&self, m: f64, index: Option<usize>) -> Result<()> {
        let ok = match (self.family, self.density_domain) {
            (Family::Congestion, _) => m >= CONGESTION_M_FLOOR,
            (_, DensityDomain::Positive) => m > 0.0,
            (_, DensityDomain::Nonnegative) => m >= 0.0,
        };
        if ok && m.is_finite() {
            Ok(())
        } else {
            Err(MfgError::DensityDomain {
                index,
                value: m,
                domain: self.density_domain.name(),
            })
        }
    }

    /// All derivatives at `(p, m)` given the potential value `v = V(x)`.
    pub fn derivatives_at(&self, v: f64, p: [f64; 2], m: f64, d: usize) -> Result<PointDerivatives> {
        self.derivatives_at_index(v, p, m, d, None)
    }

    pub(crate) fn derivatives_at_index(
        &self,
        v: f64,
        p: [f64; 2],
        m: f64,
        d: usize,
        index: Option<usize>,
    ) -> Result<PointDerivatives> {
        self.check_density(m, index)?;
        let g = self.gamma;
        let p2 = p[0] * p[0] + p[1] * p[1];
        let s = 1.0 + p2;
        let s_half = s.powf(0.5 * g);
        let s_m1 = s.powf(0.5 * g - 1.0);
        let s_m2 = s.powf(0.5 * g - 2.0);
        let mut dpp = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                dpp[i][j] = (g - 2.0) * s_m2 * p[i] * p[j];
            }
            dpp[i][i] += s_m1;
        }
        let dp = [s_m1 * p[0], s_m1 * p[1]];
        match self.family {
            Family::Power => {
                let coupling = self.coupling_g.unwrap_or_else(Coupling::identity);
                Ok(PointDerivatives {
                    h: s_half / g - coupling.value(m) + v,
                    dp,
                    dm: -coupling.derivative(m),
                    dpp,
                    dpm: [0.0; 2],
                })
            }
            Family::Congestion => {
                let a = self.alpha();
                let ma = m.powf(-a);
                for row in dpp.iter_mut().take(d) {
                    for e in row.iter_mut().take(d) {
                        *e *= ma;
                    }
                }
                Ok(PointDerivatives {
                    h: s_half * ma / g + v,
                    dp: [dp[0] * ma, dp[1] * ma],
                    dm: -a * s_half * ma / (g * m),
                    dpp,
                    dpm: [-a * dp[0] * ma / m, -a * dp[1] * ma / m],
                })
            }
        }
    }

    fn pad(p: &[f64]) -> [f64; 2] {
        [p.first().copied().unwrap_or(0.0), p.get(1).copied().unwrap_or(0.0)]
    }

    fn at(&self, x: &[f64], p: &[f64], m: f64) -> Result<PointDerivatives> {
        self.derivatives_at(self.potential_v.eval(x), Self::pad(p), m, p.len())
    }

    pub fn eval_h(&self, x: &[f64], p: &[f64], m: f64) -> Result<f64> {
        Ok(self.at(x, p, m)?.h)
    }

    pub fn eval_dp_h(&self, x: &[f64], p: &[f64], m: f64) -> Result<Vec<f64>> {
        Ok(self.at(x, p, m)?.dp[..p.len()].to_vec())
    }

    pub fn eval_dm_h(&self, x: &[f64], p: &[f64], m: f64) -> Result<f64> {
        Ok(self.at(x, p, m)?.dm)
    }

    pub fn eval_dpp_h(&self, x: &[f64], p: &[f64], m: f64) -> Result<DMatrix<f64>> {
        let dv = self.at(x, p, m)?;
        let d = p.len();
        Ok(DMatrix::from_fn(d, d, |i, j| dv.dpp[i][j]))
    }

    pub fn eval_dpm_h(&self, x: &[f64], p: &[f64], m: f64) -> Result<Vec<f64>> {
        Ok(self.at(x, p, m)?.dpm[..p.len()].to_vec())
    }
}

/// Outcome of the growth relations that make the strong solution regular
/// enough for the weak formulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Lower bound on `γ₁`: `γ r'`.
    pub required_gamma1: f64,
    /// Lower bound on `r₁`: `max{r r', r γ'}` (power) or `γ' r` (congestion).
    pub required_r1: f64,
    pub gamma1_ok: bool,
    pub r1_ok: bool,
    /// `g(θ) ≤ c(1 + θ^r)`; `None` for the congestion family.
    pub coupling_growth_ok: Option<bool>,
    /// The Hamiltonian's own `|p|`-growth exponent does not exceed the profile's `γ`.
    pub hamiltonian_gamma_ok: bool,
    pub pass: bool,
}

pub fn check_growth(spec: &HamiltonianSpec, prof: &ExponentProfile) -> GrowthReport {
    let (rc, gc) = (prof.r_conj(), prof.gamma_conj());
    let required_gamma1 = prof.gamma * rc;
    let (required_r1, coupling_growth_ok) = match spec.family {
        Family::Power => (
            (prof.r * rc).max(prof.r * gc),
            Some(
                spec.coupling_g
                    .map(|g| g.grows_at_most(prof.r))
                    .unwrap_or(false),
            ),
        ),
        Family::Congestion => (gc * prof.r, None),
    };
    let gamma1_ok = prof.gamma1 >= required_gamma1;
    let r1_ok = prof.r1 >= required_r1;
    let hamiltonian_gamma_ok = spec.gamma <= prof.gamma;
    GrowthReport {
        required_gamma1,
        required_r1,
        gamma1_ok,
        r1_ok,
        coupling_growth_ok,
        hamiltonian_gamma_ok,
        pass: gamma1_ok && r1_ok && coupling_growth_ok.unwrap_or(true) && hamiltonian_gamma_ok,
    }
}

/// `(2/γ)(−1 + √(1+γ²))`, the bound on `α` under which the block condition holds.
pub fn congestion_alpha_bound_unclamped(gamma: f64) -> Result<f64> {
    if !(gamma >= 1.0) {
        return Err(MfgError::InvalidSpec(format!("gamma = {gamma} must be >= 1")));
    }
    Ok(2.0 / gamma * (-1.0 + (1.0 + gamma * gamma).sqrt()))
}

/// `min{1, (2/γ)(−1 + √(1+γ²))}`.
pub fn congestion_alpha_max(gamma: f64) -> Result<f64> {
    Ok(congestion_alpha_bound_unclamped(gamma)?.min(1.0))
}
