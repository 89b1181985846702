//! The weighted space `X`, the bilinear form `B`, the discrete operator `L`
//! and its coercive shift, solves of `L v = ζ` by direct factorization and by
//! the Fredholm construction, and randomized checks of the inequalities the
//! existence theory rests on.
//!
//! `B[u, v] = ∫(DvᵀA Du − v c·Du + u b·Dv − a u v)` and `B[w, φ] = ⟨F w, φ⟩`
//! for `F w = −div(A Dw + b w) − a w − c·Dw`. The matrix of `L` is the
//! collocation matrix of `F`, i.e. `L_ij = B[e_j, e_i] / h^d`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::exponents::{conjugate, gate_appendix_qbeta};
use crate::field::{gradient_unchecked, integrate, ScalarField, TorusGrid, TrigPolynomial};
use crate::linearize::EllipticCoeffs;
use crate::serde_ext::ext_f64;

/// Relative slack allowed on every sampled inequality.
pub const INEQUALITY_TOL: f64 = 1e-9;
/// `σ_min(L) / ‖L‖` below this suspects a kernel.
pub const KERNEL_TOL: f64 = 1e-10;

fn check_grid(coeffs: &EllipticCoeffs, f: &ScalarField) -> Result<()> {
    if coeffs.grid() != f.grid() {
        Err(MfgError::GridMismatch)
    } else {
        Ok(())
    }
}

/// `‖v‖²_X = ∫(DvᵀA Dv + κ v²)`.
pub fn norm_x_sq(coeffs: &EllipticCoeffs, v: &ScalarField) -> Result<f64> {
    check_grid(coeffs, v)?;
    let d = coeffs.grid().dim();
    let dv = gradient_unchecked(v);
    let vals = (0..v.grid().len())
        .map(|i| {
            let g = dv.at(i);
            let a = &coeffs.a_mat()[i];
            let mut s = coeffs.kappa()[i] * v.values()[i] * v.values()[i];
            for k in 0..d {
                for l in 0..d {
                    s += g[k] * a[k][l] * g[l];
                }
            }
            s
        })
        .collect();
    Ok(integrate(&ScalarField::from_vec_unchecked(v.grid(), vals)))
}

/// `‖v‖_X`.
pub fn norm_x(coeffs: &EllipticCoeffs, v: &ScalarField) -> Result<f64> {
    Ok(norm_x_sq(coeffs, v)?.max(0.0).sqrt())
}

/// `B[u, v] = ∫(DvᵀA Du − v c·Du + u b·Dv − a u v)`.
pub fn bilinear_b(coeffs: &EllipticCoeffs, u: &ScalarField, v: &ScalarField) -> Result<f64> {
    check_grid(coeffs, u)?;
    check_grid(coeffs, v)?;
    let d = coeffs.grid().dim();
    let du = gradient_unchecked(u);
    let dv = gradient_unchecked(v);
    let vals = (0..u.grid().len())
        .map(|i| {
            let (gu, gv) = (du.at(i), dv.at(i));
            let (ui, vi) = (u.values()[i], v.values()[i]);
            let a = &coeffs.a_mat()[i];
            let (b, c) = (&coeffs.b()[i], &coeffs.c()[i]);
            let mut s = -coeffs.a()[i] * ui * vi;
            for k in 0..d {
                for l in 0..d {
                    s += gv[k] * a[k][l] * gu[l];
                }
                s += -vi * c[k] * gu[k] + ui * b[k] * gv[k];
            }
            s
        })
        .collect();
    Ok(integrate(&ScalarField::from_vec_unchecked(u.grid(), vals)))
}

/// Collocation matrix of `F`: column `j` is `F e_j`.
pub fn assemble_discrete_l(coeffs: &EllipticCoeffs) -> DMatrix<f64> {
    let n = coeffs.grid().len();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            coeffs.apply_raw(&e)
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// `L + υ diag(κ)`.
pub fn shifted_l(l: &DMatrix<f64>, coeffs: &EllipticCoeffs, upsilon: f64) -> DMatrix<f64> {
    let mut out = l.clone();
    for (i, k) in coeffs.kappa().iter().enumerate() {
        out[(i, i)] += upsilon * k;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub sigma_min: f64,
    /// `‖L‖₂ = σ_max`.
    pub norm: f64,
    pub threshold: f64,
    pub pass: bool,
}

const SVD_LIMIT: usize = 512;

fn power_sigma_max(l: &DMatrix<f64>) -> f64 {
    let n = l.ncols();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618).sin());
    let mut s = 0.0;
    for _ in 0..200 {
        let y = l.tr_mul(&(l * &x));
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        let next = ny.sqrt();
        x = y / ny;
        if (next - s).abs() <= 1e-12 * next {
            return next;
        }
        s = next;
    }
    s
}

fn inverse_sigma_min(l: &DMatrix<f64>) -> f64 {
    let n = l.ncols();
    let lu = l.clone().lu();
    let lut = l.transpose().lu();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.377).cos());
    x /= x.norm();
    let mut s = f64::INFINITY;
    for _ in 0..200 {
        // (LᵀL)⁻¹ x
        let Some(y) = lut.solve(&x) else { return 0.0 };
        let Some(z) = lu.solve(&y) else { return 0.0 };
        let nz = z.norm();
        if !nz.is_finite() || nz == 0.0 {
            return 0.0;
        }
        let next = (1.0 / nz).sqrt();
        x = z / nz;
        if (next - s).abs() <= 1e-12 * next {
            return next;
        }
        s = next;
    }
    s
}

/// Smallest singular value of `L`; pass iff above `1e−10 ‖L‖`.
pub fn kernel_check(l: &DMatrix<f64>) -> KernelReport {
    kernel_check_with_tol(l, KERNEL_TOL)
}

pub fn kernel_check_with_tol(l: &DMatrix<f64>, rel_tol: f64) -> KernelReport {
    let (sigma_min, norm) = if l.ncols() <= SVD_LIMIT {
        let sv = l.clone().singular_values();
        (sv.min(), sv.max())
    } else {
        (inverse_sigma_min(l), power_sigma_max(l))
    };
    let threshold = rel_tol * norm;
    KernelReport {
        sigma_min,
        norm,
        threshold,
        pass: sigma_min > threshold,
    }
}

/// Data of one solve of `F v = ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointProblem {
    pub coeffs: EllipticCoeffs,
    pub zeta: ScalarField,
    pub upsilon0: f64,
}

fn validate_shift(coeffs: &EllipticCoeffs, upsilon0: f64) -> Result<()> {
    if !(upsilon0 > 1.5 && upsilon0.is_finite()) {
        return Err(MfgError::InvalidOptions(format!("upsilon0 = {upsilon0} must exceed 3/2")));
    }
    if let Some((index, &k)) = coeffs.kappa().iter().enumerate().find(|(_, &k)| !(k > 0.0)) {
        return Err(MfgError::InvalidOptions(format!(
            "kappa = {k} at grid index {index} must be positive"
        )));
    }
    Ok(())
}

impl AdjointProblem {
    pub fn new(coeffs: EllipticCoeffs, zeta: ScalarField, upsilon0: f64) -> Result<Self> {
        check_grid(&coeffs, &zeta)?;
        validate_shift(&coeffs, upsilon0)?;
        Ok(Self { coeffs, zeta, upsilon0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointReport {
    /// `‖L v − ζ‖_∞`.
    pub residual: f64,
    /// `‖L v − ζ‖_∞ / ‖ζ‖_∞` (the plain residual for `ζ = 0`).
    pub relative_residual: f64,
    pub pass: bool,
    pub norm_x: f64,
    /// `∫ DvᵀA Dv + κ v²`; finite on every grid.
    pub finiteness_diagnostic: f64,
    /// `‖v_direct − v_fredholm‖_∞`.
    pub fredholm_agreement: f64,
    pub fredholm_residual: f64,
    pub kernel: KernelReport,
}

/// Relative residual accepted from the direct solve.
pub const SOLVE_TOL: f64 = 1e-9;

type Lu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

fn lu_solve(lu: &Lu, rhs: &[f64], what: &str) -> Result<Vec<f64>> {
    lu.solve(&DVector::from_column_slice(rhs))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| MfgError::SingularSystem(what.into()))
}

/// Factorizations of `L`, `L_υ = L + υκ` and `I − υ L_υ⁻¹ diag(κ)`, reusable
/// across right-hand sides.
pub struct AdjointSolver {
    coeffs: EllipticCoeffs,
    l: DMatrix<f64>,
    lu: Lu,
    shifted: Lu,
    fredholm: Lu,
    kernel: KernelReport,
}

impl AdjointSolver {
    /// Fails with [`MfgError::KernelSuspected`] when `L` looks singular.
    pub fn new(coeffs: &EllipticCoeffs, upsilon0: f64) -> Result<Self> {
        Self::with_kernel_tol(coeffs, upsilon0, KERNEL_TOL)
    }

    pub fn with_kernel_tol(coeffs: &EllipticCoeffs, upsilon0: f64, kernel_tol: f64) -> Result<Self> {
        validate_shift(coeffs, upsilon0)?;
        let l = assemble_discrete_l(coeffs);
        let kernel = kernel_check_with_tol(&l, kernel_tol);
        if !kernel.pass {
            return Err(MfgError::KernelSuspected {
                sigma_min: kernel.sigma_min,
                threshold: kernel.threshold,
            });
        }
        let n = l.ncols();
        let shifted = shifted_l(&l, coeffs, upsilon0).lu();
        let jk = DMatrix::from_diagonal(&DVector::from_column_slice(coeffs.kappa()));
        let k = shifted
            .solve(&jk)
            .ok_or_else(|| MfgError::SingularSystem("shifted operator".into()))?;
        let fredholm = (DMatrix::identity(n, n) - k * upsilon0).lu();
        Ok(Self {
            coeffs: coeffs.clone(),
            lu: l.clone().lu(),
            l,
            shifted,
            fredholm,
            kernel,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn kernel(&self) -> KernelReport {
        self.kernel
    }

    /// Direct solve of `L v = ζ`, cross-checked by the Fredholm route.
    pub fn solve(&self, zeta: &ScalarField) -> Result<(ScalarField, AdjointReport)> {
        check_grid(&self.coeffs, zeta)?;
        let v = ScalarField::new(zeta.grid(), lu_solve(&self.lu, zeta.values(), "discrete L")?)?;
        let residual = self.residual(v.values(), zeta.values());
        let zn = zeta.norm_inf();
        let relative_residual = if zn > 0.0 { residual / zn } else { residual };
        let g = lu_solve(&self.shifted, zeta.values(), "shifted operator")?;
        let fred = lu_solve(&self.fredholm, &g, "I - upsilon K")?;
        let nx2 = norm_x_sq(&self.coeffs, &v)?;
        Ok((
            v.clone(),
            AdjointReport {
                residual,
                relative_residual,
                pass: residual <= SOLVE_TOL * zn,
                norm_x: nx2.max(0.0).sqrt(),
                finiteness_diagnostic: nx2,
                fredholm_agreement: max_abs_diff(v.values(), &fred),
                fredholm_residual: self.residual(&fred, zeta.values()),
                kernel: self.kernel,
            },
        ))
    }

    fn residual(&self, v: &[f64], zeta: &[f64]) -> f64 {
        let lv = &self.l * DVector::from_column_slice(v);
        max_abs_diff(lv.as_slice(), zeta)
    }
}

/// The Fredholm route: with `L_υ = L + υκ` and `K = L_υ⁻¹ diag(κ)`, solve
/// `(I − υK) v = L_υ⁻¹ ζ`.
pub fn solve_fredholm(l: &DMatrix<f64>, coeffs: &EllipticCoeffs, zeta: &ScalarField, upsilon: f64) -> Result<ScalarField> {
    let n = l.ncols();
    let lu = shifted_l(l, coeffs, upsilon).lu();
    let rhs = lu_solve(&lu, zeta.values(), "shifted operator")?;
    let jk = DMatrix::from_diagonal(&DVector::from_column_slice(coeffs.kappa()));
    let k = lu
        .solve(&jk)
        .ok_or_else(|| MfgError::SingularSystem("shifted operator".into()))?;
    let system = (DMatrix::identity(n, n) - k * upsilon).lu();
    ScalarField::new(zeta.grid(), lu_solve(&system, &rhs, "I - upsilon K")?)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn solve_adjoint(problem: &AdjointProblem) -> Result<(ScalarField, AdjointReport)> {
    AdjointSolver::new(&problem.coeffs, problem.upsilon0)?.solve(&problem.zeta)
}

/// Outcome of one sampled inequality `lhs ≤ rhs`, with `slack = rhs − lhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub samples: usize,
    #[serde(with = "ext_f64")]
    pub min_slack: f64,
    /// Smallest `slack / max(1, |rhs|)`.
    #[serde(with = "ext_f64")]
    pub min_scaled_slack: f64,
    pub pass: bool,
}

impl InequalityReport {
    fn from_pairs(name: &str, pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut samples = 0;
        let (mut min_slack, mut min_scaled) = (f64::INFINITY, f64::INFINITY);
        for (lhs, rhs) in pairs {
            samples += 1;
            let slack = rhs - lhs;
            let scaled = if rhs.is_infinite() { f64::INFINITY } else { slack / rhs.abs().max(1.0) };
            min_slack = min_slack.min(slack);
            min_scaled = min_scaled.min(scaled);
        }
        Self {
            name: name.into(),
            samples,
            min_slack,
            min_scaled_slack: min_scaled,
            pass: !(min_scaled < -INEQUALITY_TOL),
        }
    }

    /// Re-evaluates the verdict against another relative tolerance.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.pass = !(self.min_scaled_slack < -tol);
        self
    }
}

/// Band-limited random fields with frequencies up to `n/4` and a random mean.
pub fn random_fields(grid: TorusGrid, count: usize, seed: u64) -> Vec<ScalarField> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xA5A5_0000 + i as u64));
            let band = ((grid.n() / 4) as u32).clamp(1, 8);
            let mut p = TrigPolynomial::random(grid.dim(), band, &mut rng).normalized();
            p.constant = rng.gen_range(-1.0..=1.0);
            p.sample(grid)
        })
        .collect()
}

/// `B[u,u] ≥ ½‖u‖²_X − (3/2)∫κu²` on every sample.
pub fn verify_coercive_shift(coeffs: &EllipticCoeffs, samples: &[ScalarField]) -> Result<InequalityReport> {
    let mut pairs = Vec::with_capacity(samples.len());
    for u in samples {
        let b = bilinear_b(coeffs, u, u)?;
        let k = integrate(&ScalarField::from_vec_unchecked(
            u.grid(),
            u.values().iter().zip(coeffs.kappa()).map(|(x, k)| k * x * x).collect(),
        ));
        let bound = 0.5 * norm_x_sq(coeffs, u)? - 1.5 * k;
        // written as bound ≤ B[u,u]
        pairs.push((bound, b));
    }
    Ok(InequalityReport::from_pairs("coercive_shift", pairs.into_iter()))
}

/// `|B[u,v]| ≤ (τ+3)‖u‖_X‖v‖_X` on consecutive sample pairs.
pub fn verify_bounded(coeffs: &EllipticCoeffs, samples: &[ScalarField]) -> Result<InequalityReport> {
    let tau = coeffs.tau();
    let mut pairs = Vec::new();
    for (i, u) in samples.iter().enumerate() {
        let v = &samples[(i + 1) % samples.len()];
        let lhs = bilinear_b(coeffs, u, v)?.abs();
        let rhs = (tau + 3.0) * norm_x(coeffs, u)? * norm_x(coeffs, v)?;
        pairs.push((lhs, rhs));
    }
    Ok(InequalityReport::from_pairs("bounded_tau_plus_3", pairs.into_iter()))
}

/// The two Hölder embeddings behind the space `X`:
///
/// ```text
/// ∫|v|^{2q} ≤ (∫σ^{q/(q−1)})^{1−q} (∫σ v²)^q
/// ∫κ v²    ≤ ‖κ‖_β (∫|v|^{2β'})^{1/β'}
/// ```
pub fn verify_embeddings(
    sigma: &ScalarField,
    kappa: &ScalarField,
    q: f64,
    beta: f64,
    samples: &[ScalarField],
) -> Result<(InequalityReport, InequalityReport)> {
    let grid = sigma.grid();
    if kappa.grid() != grid || samples.iter().any(|s| s.grid() != grid) {
        return Err(MfgError::GridMismatch);
    }
    if !gate_appendix_qbeta(q, beta, grid.dim())? {
        return Err(MfgError::InvalidExponent(format!(
            "(q, beta) = ({q}, {beta}) is not admissible in d = {}",
            grid.dim()
        )));
    }
    let e = q / (q - 1.0);
    // σ = 0 somewhere makes the weight integral infinite and the bound vacuous
    let sigma_int = if sigma.min() <= 0.0 {
        f64::INFINITY
    } else {
        integrate(&sigma.map(|s| s.powf(e)))
    };
    let bc = conjugate(beta);
    let kappa_norm = crate::linearize::lp_norm(kappa, beta);
    let mut a2 = Vec::new();
    let mut a3 = Vec::new();
    for v in samples {
        let lhs = integrate(&v.map(|x| x.abs().powf(2.0 * q)));
        let sv = integrate(&(sigma * &(v * v)));
        let rhs = if sigma_int.is_infinite() { f64::INFINITY } else { sigma_int.powf(1.0 - q) * sv.powf(q) };
        a2.push((lhs, rhs));
        let lhs = integrate(&(kappa * &(v * v)));
        let vb = if bc.is_infinite() {
            v.norm_inf().powi(2)
        } else {
            integrate(&v.map(|x| x.abs().powf(2.0 * bc))).powf(1.0 / bc)
        };
        a3.push((lhs, kappa_norm * vb));
    }
    Ok((
        InequalityReport::from_pairs("embedding_sigma", a2.into_iter()),
        InequalityReport::from_pairs("embedding_kappa", a3.into_iter()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub epsilon: f64,
    pub theta: f64,
    /// `max_x ε(cᵀA⁻¹c + bᵀA⁻¹b) + a`.
    pub max_value: f64,
    pub pass: bool,
}

/// Pointwise `ε(cᵀA⁻¹c + bᵀA⁻¹b) + a ≤ −θ`, sufficient for a trivial kernel.
pub fn check_coercivity_sufficient(coeffs: &EllipticCoeffs, epsilon: f64, theta: f64) -> Result<CoercivityReport> {
    if !(epsilon > 0.5) {
        return Err(MfgError::InvalidOptions(format!("epsilon = {epsilon} must exceed 1/2")));
    }
    if !(theta > 0.0) {
        return Err(MfgError::InvalidOptions(format!("theta = {theta} must be positive")));
    }
    // cᵀA⁻¹c + bᵀA⁻¹b = κ − |a|
    let max_value = coeffs
        .kappa()
        .iter()
        .zip(coeffs.a())
        .map(|(k, a)| epsilon * (k - a.abs()) + a)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CoercivityReport {
        epsilon,
        theta,
        max_value,
        pass: max_value <= -theta,
    })
}
