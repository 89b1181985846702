//! The MFG operator, strong residuals, the weak-solution variational
//! inequality and randomized monotonicity probes.
//!
//! Operator outputs are stored in a [`FieldPair`] whose `m` slot holds the
//! Hamilton-Jacobi component and whose `u` slot holds the Fokker-Planck
//! component, so that [`pair_inner`] of an input difference with an output
//! difference is the bracket of the variational inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::{
    divergence_unchecked, gradient_unchecked, integrate, pair_inner, ScalarField, TorusGrid, TrigPolynomial,
    VectorField,
};
use crate::hamiltonian::{HamiltonianSpec, PointDerivatives};

/// A density / value-function pair, or a test pair `(η, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub m: ScalarField,
    pub u: ScalarField,
}

impl FieldPair {
    pub fn new(m: ScalarField, u: ScalarField) -> Result<Self> {
        if m.grid() != u.grid() {
            return Err(MfgError::GridMismatch);
        }
        Ok(Self { m, u })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            m: ScalarField::zeros(grid),
            u: ScalarField::zeros(grid),
        }
    }

    pub fn constant(grid: TorusGrid, m: f64, u: f64) -> Self {
        Self {
            m: ScalarField::constant(grid, m),
            u: ScalarField::constant(grid, u),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.m.grid()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            m: &self.m - &other.m,
            u: &self.u - &other.u,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            m: &self.m + &other.m,
            u: &self.u + &other.u,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            m: &self.m * s,
            u: &self.u * s,
        }
    }

    /// `∫(m m̃ + u ũ)`.
    pub fn inner(&self, other: &Self) -> f64 {
        pair_inner((&self.m, &self.u), (&other.m, &other.u)).expect("pairs share a grid")
    }

    pub fn norm_inf(&self) -> f64 {
        self.m.norm_inf().max(self.u.norm_inf())
    }

    /// Discrete `L²` norm of the pair.
    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn shifted(&self, sx: usize, sy: usize) -> Self {
        Self {
            m: self.m.shifted(sx, sy),
            u: self.u.shifted(sx, sy),
        }
    }

    /// Concatenated `[m, u]` values.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.m.values().to_vec();
        v.extend_from_slice(self.u.values());
        v
    }
}

/// Potential samples, reused across many evaluations on the same grid.
pub(crate) fn sample_potential(spec: &HamiltonianSpec, grid: TorusGrid) -> Vec<f64> {
    if spec.potential_v.is_zero() {
        vec![0.0; grid.len()]
    } else {
        spec.potential_v.sample(grid).into_values()
    }
}

/// All Hamiltonian derivatives at every grid point for density `m` and gradient `du`.
pub(crate) fn pointwise(
    spec: &HamiltonianSpec,
    potential: &[f64],
    m: &[f64],
    du: &VectorField,
) -> Result<Vec<PointDerivatives>> {
    let grid = du.grid();
    if let Some((index, &value)) = m
        .iter()
        .enumerate()
        .find(|(i, &v)| spec.check_density(v, Some(*i)).is_err())
    {
        return Err(MfgError::DensityDomain {
            index: Some(index),
            value,
            domain: spec.density_domain.name(),
        });
    }
    let d = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .with_min_len(512)
        .map(|i| spec.derivatives_at_index(potential[i], du.at(i), m[i], d, Some(i)))
        .collect()
}

fn flux_divergence(grid: TorusGrid, flux: [Vec<f64>; 2]) -> ScalarField {
    let comps = flux
        .into_iter()
        .take(grid.dim())
        .map(|c| ScalarField::from_vec_unchecked(grid, c))
        .collect();
    divergence_unchecked(&VectorField::from_components_unchecked(comps))
}

pub(crate) fn apply_with_potential(spec: &HamiltonianSpec, potential: &[f64], w: &FieldPair) -> Result<FieldPair> {
    let grid = w.grid();
    let du = gradient_unchecked(&w.u);
    let pd = pointwise(spec, potential, w.m.values(), &du)?;
    let m = w.m.values();
    let n = grid.len();
    let hj: Vec<f64> = (0..n).map(|i| -w.u.values()[i] - pd[i].h).collect();
    let mut flux = [vec![0.0; n], vec![0.0; n]];
    for (axis, f) in flux.iter_mut().enumerate().take(grid.dim()) {
        for i in 0..n {
            f[i] = m[i] * pd[i].dp[axis];
        }
    }
    let div = flux_divergence(grid, flux);
    let fp: Vec<f64> = (0..n).map(|i| m[i] - div.values()[i] - 1.0).collect();
    Ok(FieldPair {
        m: ScalarField::from_vec_unchecked(grid, hj),
        u: ScalarField::from_vec_unchecked(grid, fp),
    })
}

/// `A[η, v] = (−v − H(x, Dv, η), η − div(η D_pH(x, Dv, η)) − 1)`, stored as
/// `FieldPair { m: HJ, u: FP }`.
pub fn apply_operator(spec: &HamiltonianSpec, w: &FieldPair) -> Result<FieldPair> {
    apply_with_potential(spec, &sample_potential(spec, w.grid()), w)
}

/// `‖A[w]‖_∞`.
pub fn strong_residual_norm(spec: &HamiltonianSpec, w: &FieldPair) -> Result<f64> {
    Ok(apply_operator(spec, w)?.norm_inf())
}

/// Left-hand side of the weak-solution inequality after integration by parts:
/// `∫(η−m̃)(−v−H) + ∫[(v−ũ)(η−1) + (Dv−Dũ)·η D_pH]`.
pub fn vi_lhs(spec: &HamiltonianSpec, test: &FieldPair, cand: &FieldPair) -> Result<f64> {
    let grid = test.grid();
    if cand.grid() != grid {
        return Err(MfgError::GridMismatch);
    }
    let potential = sample_potential(spec, grid);
    let dv = gradient_unchecked(&test.u);
    let du = gradient_unchecked(&cand.u);
    let pd = pointwise(spec, &potential, test.m.values(), &dv)?;
    let (eta, v) = (test.m.values(), test.u.values());
    let (mt, ut) = (cand.m.values(), cand.u.values());
    let vals: Vec<f64> = (0..grid.len())
        .map(|i| {
            let mut transport = 0.0;
            for axis in 0..grid.dim() {
                let dd = dv.component(axis).values()[i] - du.component(axis).values()[i];
                transport += dd * eta[i] * pd[i].dp[axis];
            }
            (eta[i] - mt[i]) * (-v[i] - pd[i].h) + (v[i] - ut[i]) * (eta[i] - 1.0) + transport
        })
        .collect();
    Ok(integrate(&ScalarField::from_vec_unchecked(grid, vals)))
}

/// The same quantity before integration by parts, `⟨test − cand, A[test]⟩`,
/// with the divergence taken on the test side.
pub fn vi_lhs_pre_ibp(spec: &HamiltonianSpec, test: &FieldPair, cand: &FieldPair) -> Result<f64> {
    if cand.grid() != test.grid() {
        return Err(MfgError::GridMismatch);
    }
    Ok(test.sub(cand).inner(&apply_operator(spec, test)?))
}

/// `⟨w₁ − w₂, A[w₁] − A[w₂]⟩`.
pub fn monotonicity_gap(spec: &HamiltonianSpec, w1: &FieldPair, w2: &FieldPair) -> Result<f64> {
    if w1.grid() != w2.grid() {
        return Err(MfgError::GridMismatch);
    }
    let a1 = apply_operator(spec, w1)?;
    let a2 = apply_operator(spec, w2)?;
    Ok(w1.sub(w2).inner(&a1.sub(&a2)))
}

/// Random smooth test pair: `v` a trigonometric polynomial of frequency at most
/// `max_freq` plus a constant, `η = floor + s²` with `s` of frequency at most
/// `max_freq / 2`, so that `η` stays in the same band.
pub fn random_test_pair(grid: TorusGrid, max_freq: u32, positivity_floor: f64, seed: u64) -> Result<FieldPair> {
    if max_freq as usize > grid.n() / 4 {
        return Err(MfgError::InvalidOptions(format!(
            "max_freq = {max_freq} exceeds the band limit n/4 = {}",
            grid.n() / 4
        )));
    }
    if !(positivity_floor > 0.0) {
        return Err(MfgError::InvalidOptions(format!(
            "positivity floor {positivity_floor} must be > 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    let s = TrigPolynomial::random(d, (max_freq / 2).max(1).min(max_freq.max(1)), &mut rng)
        .normalized()
        .sample(grid);
    let amp: f64 = rng.gen_range(0.5..1.5);
    let eta = s.map(|x| positivity_floor + amp * x * x);
    let mut v = TrigPolynomial::random(d, max_freq.max(1), &mut rng).normalized();
    v.constant = rng.gen_range(-1.0..=1.0);
    Ok(FieldPair {
        m: eta,
        u: v.sample(grid),
    })
}

/// Bounds the first and second pairs of the randomized monotonicity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub samples: usize,
    pub seed: u64,
    pub mmin: f64,
    pub mmax: f64,
    /// Frequency band of the random fields; `None` means `n/4`.
    #[serde(default)]
    pub max_freq: Option<u32>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 0,
            mmin: 0.2,
            mmax: 3.0,
            max_freq: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub index: usize,
    pub gap: f64,
    /// `max(1, ‖w₁−w₂‖ ‖A[w₁]−A[w₂]‖)`, the scale the tolerance is applied to.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: Vec<ProbeSample>,
    pub min_gap: f64,
    /// Smallest `gap / scale`.
    pub min_scaled_gap: f64,
}

impl ProbeReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.samples.iter().all(|s| s.gap >= -tol * s.scale)
    }
}

/// Density with values in `[mmin, mmax]`.
fn random_density(grid: TorusGrid, max_freq: u32, mmin: f64, mmax: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    let (mid, half) = (0.5 * (mmin + mmax), 0.5 * (mmax - mmin));
    let amp: f64 = rng.gen_range(0.3..1.0);
    TrigPolynomial::random(grid.dim(), max_freq, rng)
        .normalized()
        .sample(grid)
        .map(|x| mid + half * amp * x)
}

/// Randomized search for pairs violating monotonicity. The value function of
/// the second pair interpolates between the first's and an independent draw
/// (weights 1, 1/2, 1/4, 0 in rotation), which exposes decreasing couplings.
pub fn probe_monotonicity(spec: &HamiltonianSpec, grid: TorusGrid, opts: &ProbeOptions) -> Result<ProbeReport> {
    if !(opts.mmin > 0.0 && opts.mmax >= opts.mmin) {
        return Err(MfgError::InvalidOptions(format!(
            "density range [{}, {}] must satisfy 0 < mmin <= mmax",
            opts.mmin, opts.mmax
        )));
    }
    let band = opts.max_freq.unwrap_or((grid.n() / 4) as u32);
    if band as usize > grid.n() / 4 || band == 0 {
        return Err(MfgError::InvalidOptions(format!("band {band} outside 1..=n/4")));
    }
    let potential = sample_potential(spec, grid);
    let weights = [1.0, 0.5, 0.25, 0.0];
    let samples: Vec<ProbeSample> = (0..opts.samples)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64));
            let m1 = random_density(grid, band, opts.mmin, opts.mmax, &mut rng);
            let m2 = random_density(grid, band, opts.mmin, opts.mmax, &mut rng);
            let u1 = TrigPolynomial::random(grid.dim(), band, &mut rng).normalized().sample(grid);
            let u2 = TrigPolynomial::random(grid.dim(), band, &mut rng).normalized().sample(grid);
            let s = weights[index % weights.len()];
            let u2 = &u1 + &(&(&u2 - &u1) * s);
            let w1 = FieldPair { m: m1, u: u1 };
            let w2 = FieldPair { m: m2, u: u2 };
            let a1 = apply_with_potential(spec, &potential, &w1)?;
            let a2 = apply_with_potential(spec, &potential, &w2)?;
            let dw = w1.sub(&w2);
            let da = a1.sub(&a2);
            Ok(ProbeSample {
                index,
                gap: dw.inner(&da),
                scale: (dw.norm_l2() * da.norm_l2()).max(1.0),
            })
        })
        .collect::<Result<_>>()?;
    let min_gap = samples.iter().map(|s| s.gap).fold(f64::INFINITY, f64::min);
    let min_scaled_gap = samples.iter().map(|s| s.gap / s.scale).fold(f64::INFINITY, f64::min);
    Ok(ProbeReport {
        samples,
        min_gap,
        min_scaled_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_grid;
    use crate::hamiltonian::Coupling;
    use std::f64::consts::PI;

    fn power() -> HamiltonianSpec {
        HamiltonianSpec::power(2.0, Coupling::identity())
    }

    #[test]
    fn constant_fixed_points() {
        let g = make_grid(1, 16).unwrap();
        let r = apply_operator(&power(), &FieldPair::constant(g, 1.0, 0.5)).unwrap();
        assert_eq!(r.norm_inf(), 0.0);
        let c = HamiltonianSpec::congestion(2.0, 1.0);
        let r = apply_operator(&c, &FieldPair::constant(g, 1.0, -0.5)).unwrap();
        assert_eq!(r.norm_inf(), 0.0);
        let r = apply_operator(&power(), &FieldPair::constant(g, 1.0, 0.0)).unwrap();
        assert!(r.m.values().iter().all(|&v| v == 0.5));
        assert!(r.u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_positive_off_solution() {
        let g = make_grid(1, 32).unwrap();
        let w = random_test_pair(g, 8, 0.2, 3).unwrap();
        assert!(strong_residual_norm(&power(), &w).unwrap() > 0.0);
    }

    #[test]
    fn operator_matches_analytic_for_single_mode() {
        // power γ=2, g=id: HJ = −u − |Du|²/2 + m, FP = m − div(m Du) − 1
        let g = make_grid(1, 64).unwrap();
        let u = ScalarField::from_fn(g, |x| 0.1 * (2.0 * PI * x[0]).sin());
        let m = ScalarField::from_fn(g, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).cos());
        let r = apply_operator(&power(), &FieldPair::new(m.clone(), u.clone()).unwrap()).unwrap();
        for i in 0..g.len() {
            let x = g.point(i)[0];
            let (s, c) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
            let du = 0.2 * PI * c;
            let ddu = -0.4 * PI * PI * s;
            let mm = 1.0 + 0.2 * c;
            let dm = -0.4 * PI * s;
            let hj = -0.1 * s - 0.5 * (1.0 + du * du) + mm;
            let fp = mm - (dm * du + mm * ddu) - 1.0;
            assert!((r.m.values()[i] - hj).abs() < 1e-12);
            assert!((r.u.values()[i] - fp).abs() < 1e-12);
        }
    }

    #[test]
    fn congestion_rejects_zero_density() {
        let g = make_grid(1, 8).unwrap();
        let c = HamiltonianSpec::congestion(2.0, 1.0);
        let mut m = ScalarField::constant(g, 1.0);
        m.values_mut()[3] = 0.0;
        let err = apply_operator(&c, &FieldPair::new(m, ScalarField::zeros(g)).unwrap()).unwrap_err();
        assert!(matches!(err, MfgError::DensityDomain { index: Some(3), .. }));
    }

    #[test]
    fn vi_identity_case() {
        let g = make_grid(2, 16).unwrap();
        let t = random_test_pair(g, 4, 0.1, 11).unwrap();
        assert!(vi_lhs(&power(), &t, &t).unwrap().abs() < 1e-13);
    }

    #[test]
    fn vi_forms_agree() {
        let spec = HamiltonianSpec::power(3.0, Coupling::PowerLaw { c: 1.0, exponent: 1.5 })
            .with_potential(TrigPolynomial::cosine(0.2, &[1, 0]));
        let cong = HamiltonianSpec::congestion(2.0, 0.5);
        for d in [1, 2] {
            let g = make_grid(d, 32).unwrap();
            for seed in 0..10 {
                let t = random_test_pair(g, 8, 0.1, seed).unwrap();
                let c = random_test_pair(g, 8, 0.3, seed + 100).unwrap();
                for s in [&spec, &cong] {
                    let a = vi_lhs(s, &t, &c).unwrap();
                    let b = vi_lhs_pre_ibp(s, &t, &c).unwrap();
                    assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn test_pairs() {
        let g = make_grid(1, 64).unwrap();
        let t = random_test_pair(g, 16, 0.1, 5).unwrap();
        assert!(t.m.min() >= 0.1);
        assert_eq!(t, random_test_pair(g, 16, 0.1, 5).unwrap());
        assert_ne!(t, random_test_pair(g, 16, 0.1, 6).unwrap());
        assert!(random_test_pair(g, 17, 0.1, 5).is_err());
    }

    #[test]
    fn test_pair_band_limit() {
        let g = make_grid(1, 64).unwrap();
        let t = random_test_pair(g, 8, 0.1, 9).unwrap();
        for f in [&t.m, &t.u] {
            let vals = f.values();
            let n = vals.len();
            for k in 9..=n / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, v) in vals.iter().enumerate() {
                    let th = 2.0 * PI * (k * j) as f64 / n as f64;
                    re += v * th.cos();
                    im += v * th.sin();
                }
                assert!((re * re + im * im).sqrt() / (n as f64) < 1e-12, "mode {k}");
            }
        }
    }

    #[test]
    fn monotone_probes() {
        let g = make_grid(1, 32).unwrap();
        let opts = ProbeOptions { samples: 40, ..Default::default() };
        for spec in [power(), HamiltonianSpec::congestion(2.0, 0.5)] {
            let rep = probe_monotonicity(&spec, g, &opts).unwrap();
            assert!(rep.passes(1e-8), "min scaled gap {}", rep.min_scaled_gap);
        }
    }

    #[test]
    fn decreasing_coupling_is_caught() {
        let g = make_grid(1, 32).unwrap();
        let bad = HamiltonianSpec::power(2.0, Coupling::Affine { k0: 0.0, k1: -1.0 });
        let rep = probe_monotonicity(&bad, g, &ProbeOptions { samples: 8, ..Default::default() }).unwrap();
        assert!(rep.min_gap < 0.0);
    }

    #[test]
    fn probe_is_deterministic() {
        let g = make_grid(2, 16).unwrap();
        let opts = ProbeOptions { samples: 6, seed: 7, ..Default::default() };
        let a = probe_monotonicity(&power(), g, &opts).unwrap();
        let b = probe_monotonicity(&power(), g, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_equivariance() {
        let g = make_grid(2, 16).unwrap();
        let w = random_test_pair(g, 4, 0.2, 1).unwrap();
        for spec in [power(), HamiltonianSpec::congestion(2.0, 0.7)] {
            let shifted_then = apply_operator(&spec, &w.shifted(3, 5)).unwrap();
            let then_shifted = apply_operator(&spec, &w).unwrap().shifted(3, 5);
            // FFT roundoff differs between the two orders only in the last bits
            assert!(shifted_then.sub(&then_shifted).norm_inf() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn gap_nonnegative_for_power(seed in any::<u64>()) {
                let g = make_grid(1, 32).unwrap();
                let opts = ProbeOptions { samples: 2, seed, ..Default::default() };
                let rep = probe_monotonicity(&power(), g, &opts).unwrap();
                prop_assert!(rep.passes(1e-8));
            }

            #[test]
            fn gap_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
                let g = make_grid(1, 16).unwrap();
                let w1 = random_test_pair(g, 4, 0.2, s1).unwrap();
                let w2 = random_test_pair(g, 4, 0.2, s2).unwrap();
                let a = monotonicity_gap(&power(), &w1, &w2).unwrap();
                let b = monotonicity_gap(&power(), &w2, &w1).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
