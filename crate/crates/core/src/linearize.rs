//! Coefficients of the linear elliptic equation satisfied by the difference of
//! two solutions, positivity margins of the associated matrices, the exponent
//! witness search and the quadratic form of the uniqueness identity.
//!
//! With `D_pH`, `D_mH`, `D²_{pp}H`, `D²_{pm}H` evaluated at `(x, Du, m)`:
//!
//! ```text
//! A = m D²_{pp}H − m (D_pH ⊗ D²_{pm}H)/D_mH − (D_pH ⊗ D_pH)/D_mH
//! a = 1/D_mH,   b = −D_pH/D_mH,   c = −b + m D²_{pm}H/D_mH
//! κ = cᵀA⁻¹c + bᵀA⁻¹b + |a|
//! ```
//!
//! The elliptic operator is `F v = −div(A Dv + b v) − a v − c·Dv`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::exponents::{conjugate, gate_appendix_qbeta, ExponentProfile};
use crate::field::{
    axis_derivative, divergence_unchecked, gradient_unchecked, integrate, write_columns_csv, ScalarField,
    TorusGrid, VectorField,
};
use crate::hamiltonian::{Family, HamiltonianSpec, PointDerivatives};
use crate::mfg::{pointwise, sample_potential, FieldPair};
use crate::serde_ext::ext_f64;

/// `|D_mH|` below this makes the elliptic reduction unavailable.
pub const DMH_CUTOFF: f64 = 1e-12;
/// Default positivity tolerance for eigenvalue margins.
pub const TOL_POS: f64 = 1e-10;

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn sym_part(a: &Mat2) -> Mat2 {
    let off = 0.5 * (a[0][1] + a[1][0]);
    [[a[0][0], off], [off, a[1][1]]]
}

fn det(a: &Mat2, d: usize) -> f64 {
    if d == 1 {
        a[0][0]
    } else {
        a[0][0] * a[1][1] - a[0][1] * a[1][0]
    }
}

fn inverse(a: &Mat2, d: usize) -> Option<Mat2> {
    let dt = det(a, d);
    let scale = if d == 1 {
        a[0][0].abs()
    } else {
        a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).powi(2)
    };
    if !(dt.abs() > 1e-14 * scale) || !dt.is_finite() {
        return None;
    }
    Some(if d == 1 {
        [[1.0 / a[0][0], 0.0], [0.0, 0.0]]
    } else {
        [[a[1][1] / dt, -a[0][1] / dt], [-a[1][0] / dt, a[0][0] / dt]]
    })
}

fn quad(a: &Mat2, x: &Vec2, y: &Vec2, d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += x[i] * a[i][j] * y[j];
        }
    }
    s
}

/// Smallest eigenvalue of a symmetric 2×2 (or 1×1) block.
fn sym_min_eig2(a: &Mat2, d: usize) -> f64 {
    if d == 1 {
        return a[0][0];
    }
    let mean = 0.5 * (a[0][0] + a[1][1]);
    let half = 0.5 * (a[0][0] - a[1][1]);
    mean - (half * half + a[0][1] * a[0][1]).sqrt()
}

/// Smallest eigenvalue of a small symmetric matrix; exact for diagonal input.
pub(crate) fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || m[(i, j)] == 0.0));
    if diagonal {
        return (0..k).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min);
    }
    if k == 2 {
        let a = [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
        return sym_min_eig2(&a, 2);
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Largest `λ` with `ξᵀ((A⁻¹)_S)⁻¹ξ = λ ξᵀA_Sξ`; `1` when `A` is symmetric.
fn tau_point(a: &Mat2, d: usize) -> f64 {
    if d == 1 || a[0][1] == a[1][0] {
        return 1.0;
    }
    let s = sym_part(a);
    let Some(ainv) = inverse(a, d) else { return f64::INFINITY };
    let Some(m) = inverse(&sym_part(&ainv), d) else { return f64::INFINITY };
    let Some(sinv) = inverse(&s, d) else { return f64::INFINITY };
    // eigenvalues of S⁻¹M
    let p = [
        [
            sinv[0][0] * m[0][0] + sinv[0][1] * m[1][0],
            sinv[0][0] * m[0][1] + sinv[0][1] * m[1][1],
        ],
        [
            sinv[1][0] * m[0][0] + sinv[1][1] * m[1][0],
            sinv[1][0] * m[0][1] + sinv[1][1] * m[1][1],
        ],
    ];
    let tr = p[0][0] + p[1][1];
    let dt = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    0.5 * tr + (0.25 * tr * tr - dt).max(0.0).sqrt()
}

/// Coefficients `(A, a, b, c)` of a linear elliptic operator on the grid, with
/// the derived weight `κ`, the ellipticity field `σ` and the constant `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticCoeffs {
    grid: TorusGrid,
    a_mat: Vec<Mat2>,
    a: Vec<f64>,
    b: Vec<Vec2>,
    c: Vec<Vec2>,
    kappa: Vec<f64>,
    sigma: Vec<f64>,
    tau: f64,
}

impl EllipticCoeffs {
    pub fn new(grid: TorusGrid, a_mat: Vec<Mat2>, a: Vec<f64>, b: Vec<Vec2>, c: Vec<Vec2>) -> Result<Self> {
        let n = grid.len();
        for len in [a_mat.len(), a.len(), b.len(), c.len()] {
            if len != n {
                return Err(MfgError::FieldLength { expected: n, got: len });
            }
        }
        let d = grid.dim();
        let mut kappa = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        let mut tau: f64 = 0.0;
        for i in 0..n {
            let inv = inverse(&a_mat[i], d).ok_or(MfgError::SingularPointMatrix { what: "A", index: i })?;
            kappa.push(quad(&inv, &c[i], &c[i], d) + quad(&inv, &b[i], &b[i], d) + a[i].abs());
            let s = sym_min_eig2(&sym_part(&a_mat[i]), d);
            sigma.push(s);
            tau = tau.max(if s > 0.0 { tau_point(&a_mat[i], d) } else { f64::INFINITY });
        }
        Ok(Self {
            grid,
            a_mat,
            a,
            b,
            c,
            kappa,
            sigma,
            tau,
        })
    }

    /// Spatially constant coefficients.
    pub fn constant(grid: TorusGrid, a_mat: Mat2, a: f64, b: Vec2, c: Vec2) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![a_mat; n], vec![a; n], vec![b; n], vec![c; n])
    }

    /// `A = I`, `b = c = 0`, `a = −1`: the operator `−Δ + 1`.
    pub fn shifted_laplacian(grid: TorusGrid) -> Self {
        Self::constant(grid, [[1.0, 0.0], [0.0, 1.0]], -1.0, [0.0; 2], [0.0; 2]).expect("identity is invertible")
    }

    /// Coefficients `(Aᵀ, −c, −b, a)` of the formal adjoint `F*`.
    pub fn adjoint(&self) -> Self {
        let neg = |v: &Vec2| [-v[0], -v[1]];
        Self {
            grid: self.grid,
            a_mat: self.a_mat.iter().map(transpose).collect(),
            a: self.a.clone(),
            b: self.c.iter().map(neg).collect(),
            c: self.b.iter().map(neg).collect(),
            kappa: self.kappa.clone(),
            sigma: self.sigma.clone(),
            tau: self.tau,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }
    pub fn a_mat(&self) -> &[Mat2] {
        &self.a_mat
    }
    pub fn a(&self) -> &[f64] {
        &self.a
    }
    pub fn b(&self) -> &[Vec2] {
        &self.b
    }
    pub fn c(&self) -> &[Vec2] {
        &self.c
    }
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kappa_field(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid, self.kappa.clone())
    }

    pub fn sigma_field(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid, self.sigma.clone())
    }

    /// Largest `‖A − Aᵀ‖_max` over the grid.
    pub fn asymmetry(&self) -> f64 {
        self.a_mat.iter().fold(0.0f64, |m, a| m.max((a[0][1] - a[1][0]).abs()))
    }

    /// `F v = −div(A Dv + b v) − a v − c·Dv` on raw grid values.
    pub(crate) fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        let grid = self.grid;
        let d = grid.dim();
        let n = grid.len();
        let dv: Vec<Vec<f64>> = (0..d).map(|k| axis_derivative(grid, v, k)).collect();
        let mut flux = vec![vec![0.0; n]; d];
        let mut rest = vec![0.0; n];
        for i in 0..n {
            let mut cdv = 0.0;
            for k in 0..d {
                let mut f = self.b[i][k] * v[i];
                for l in 0..d {
                    f += self.a_mat[i][k][l] * dv[l][i];
                }
                flux[k][i] = f;
                cdv += self.c[i][k] * dv[k][i];
            }
            rest[i] = -self.a[i] * v[i] - cdv;
        }
        let div = divergence_unchecked(&VectorField::from_components_unchecked(
            flux.into_iter().map(|f| ScalarField::from_vec_unchecked(grid, f)).collect(),
        ));
        rest.iter().zip(div.values()).map(|(r, dv)| r - dv).collect()
    }

    pub fn apply(&self, v: &ScalarField) -> Result<ScalarField> {
        if v.grid() != self.grid {
            return Err(MfgError::GridMismatch);
        }
        Ok(ScalarField::from_vec_unchecked(self.grid, self.apply_raw(v.values())))
    }

    /// `η̄ = a v̄ + c·Dv̄`, the density difference recovered from the value-function difference.
    pub fn eliminated_density(&self, v: &ScalarField) -> Result<ScalarField> {
        if v.grid() != self.grid {
            return Err(MfgError::GridMismatch);
        }
        let dv = gradient_unchecked(v);
        let vals = (0..self.grid.len())
            .map(|i| {
                let g = dv.at(i);
                self.a[i] * v.values()[i] + self.c[i][0] * g[0] + self.c[i][1] * g[1]
            })
            .collect();
        Ok(ScalarField::from_vec_unchecked(self.grid, vals))
    }

    fn columns(&self) -> Vec<(String, Vec<f64>)> {
        let d = self.grid.dim();
        let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
        for k in 0..d {
            for l in 0..d {
                cols.push((format!("A{k}{l}"), self.a_mat.iter().map(|a| a[k][l]).collect()));
            }
        }
        cols.push(("a".into(), self.a.clone()));
        for k in 0..d {
            cols.push((format!("b{k}"), self.b.iter().map(|v| v[k]).collect()));
        }
        for k in 0..d {
            cols.push((format!("c{k}"), self.c.iter().map(|v| v[k]).collect()));
        }
        cols.push(("kappa".into(), self.kappa.clone()));
        cols.push(("sigma".into(), self.sigma.clone()));
        cols
    }

    /// Writes every coefficient as one CSV table.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_named_columns(self.grid, &self.columns(), writer)
    }
}

fn write_named_columns<W: Write>(grid: TorusGrid, cols: &[(String, Vec<f64>)], writer: W) -> Result<()> {
    let refs: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    write_columns_csv(grid, &refs, writer)
}

/// Everything assembled from a strong solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationCoeffs {
    pub elliptic: EllipticCoeffs,
    /// Pointwise smallest eigenvalue of the strict-monotonicity block matrix.
    pub lambda_min_a3mon: Vec<f64>,
    /// Pointwise smallest eigenvalue of the (e3) block matrix.
    pub e3_min_eig: Vec<f64>,
    pub dmh: Vec<f64>,
    /// `min g'(m)` over the grid for the power family.
    pub min_coupling_slope: Option<f64>,
}

impl LinearizationCoeffs {
    pub fn grid(&self) -> TorusGrid {
        self.elliptic.grid
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut cols = self.elliptic.columns();
        cols.push(("lambda_a3mon".into(), self.lambda_min_a3mon.clone()));
        cols.push(("e3_min_eig".into(), self.e3_min_eig.clone()));
        cols.push(("dmh".into(), self.dmh.clone()));
        write_named_columns(self.grid(), &cols, writer)
    }
}

fn derivatives(spec: &HamiltonianSpec, w: &FieldPair) -> Result<Vec<PointDerivatives>> {
    let du = gradient_unchecked(&w.u);
    pointwise(spec, &sample_potential(spec, w.grid()), w.m.values(), &du)
}

/// `[[m D²_{pp}H, ½ m D²_{pm}H], [½ m D²_{pm}Hᵀ, −D_mH]]` at one point.
fn a3mon_matrix(p: &PointDerivatives, m: f64, d: usize) -> DMatrix<f64> {
    let mut mat = DMatrix::zeros(d + 1, d + 1);
    for i in 0..d {
        for j in 0..d {
            mat[(i, j)] = m * p.dpp[i][j];
        }
        mat[(i, d)] = 0.5 * m * p.dpm[i];
        mat[(d, i)] = 0.5 * m * p.dpm[i];
    }
    mat[(d, d)] = -p.dm;
    mat
}

fn lambda_field(w: &FieldPair, pd: &[PointDerivatives]) -> Vec<f64> {
    let d = w.grid().dim();
    pd.iter()
        .zip(w.m.values())
        .map(|(p, &m)| sym_min_eig(&a3mon_matrix(p, m, d)))
        .collect()
}

pub fn assemble_coeffs(spec: &HamiltonianSpec, w: &FieldPair) -> Result<LinearizationCoeffs> {
    let grid = w.grid();
    let d = grid.dim();
    let pd = derivatives(spec, w)?;
    let m = w.m.values();
    if let Some((index, p)) = pd.iter().enumerate().find(|(_, p)| !(p.dm.abs() >= DMH_CUTOFF)) {
        return Err(MfgError::VanishingDmH { index, value: p.dm });
    }
    let n = grid.len();
    let mut a_mat = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for (i, p) in pd.iter().enumerate() {
        let mut mat = [[0.0; 2]; 2];
        for k in 0..d {
            for l in 0..d {
                mat[k][l] = m[i] * p.dpp[k][l] - m[i] * p.dp[k] * p.dpm[l] / p.dm - p.dp[k] * p.dp[l] / p.dm;
            }
        }
        a_mat.push(mat);
        a.push(1.0 / p.dm);
        let bi = [-p.dp[0] / p.dm, -p.dp[1] / p.dm];
        c.push([-bi[0] + m[i] * p.dpm[0] / p.dm, -bi[1] + m[i] * p.dpm[1] / p.dm]);
        b.push(bi);
    }
    let elliptic = EllipticCoeffs::new(grid, a_mat, a, b, c)?;
    let e3_min_eig = pd
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = sym_part(&elliptic.a_mat[i]);
            let mut mat = DMatrix::zeros(d + 1, d + 1);
            for k in 0..d {
                for l in 0..d {
                    mat[(k, l)] = s[k][l];
                }
                let off = 0.5 * m[i] * p.dpm[k] / p.dm;
                mat[(k, d)] = off;
                mat[(d, k)] = off;
            }
            mat[(d, d)] = -1.0 / p.dm;
            sym_min_eig(&mat)
        })
        .collect();
    let min_coupling_slope = match spec.family {
        Family::Power => Some(pd.iter().map(|p| -p.dm).fold(f64::INFINITY, f64::min)),
        Family::Congestion => None,
    };
    Ok(LinearizationCoeffs {
        elliptic,
        lambda_min_a3mon: lambda_field(w, &pd),
        e3_min_eig,
        dmh: pd.iter().map(|p| p.dm).collect(),
        min_coupling_slope,
    })
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, x)| if x < bv { (i, x) } else { (bi, bv) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3monReport {
    pub lambda_min: f64,
    pub argmin: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Pointwise smallest eigenvalue of the strict-monotonicity matrix and its grid minimum.
pub fn check_a3mon(spec: &HamiltonianSpec, w: &FieldPair, tol: f64) -> Result<(ScalarField, A3monReport)> {
    let pd = derivatives(spec, w)?;
    let lam = lambda_field(w, &pd);
    let (argmin, lambda_min) = argmin(&lam);
    Ok((
        ScalarField::from_vec_unchecked(w.grid(), lam),
        A3monReport {
            lambda_min,
            argmin,
            tol,
            pass: lambda_min >= tol,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E1E3Report {
    pub sigma_min: f64,
    pub sigma_argmin: usize,
    #[serde(with = "ext_f64")]
    pub tau: f64,
    pub e3_min: f64,
    pub e3_argmin: usize,
    pub pass: bool,
}

/// `σ`, `τ` and the (e3) margin; pass iff `σ` and the (e3) eigenvalue are positive everywhere.
pub fn check_e1_e3(coeffs: &LinearizationCoeffs, tol: f64) -> E1E3Report {
    let (sigma_argmin, sigma_min) = argmin(&coeffs.elliptic.sigma);
    let (e3_argmin, e3_min) = argmin(&coeffs.e3_min_eig);
    let tau = coeffs.elliptic.tau;
    E1E3Report {
        sigma_min,
        sigma_argmin,
        tau,
        e3_min,
        e3_argmin,
        pass: sigma_min > tol && e3_min > tol && tau.is_finite(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentWitness {
    pub q: f64,
    #[serde(with = "ext_f64")]
    pub beta: f64,
    /// `∫ σ^{q/(q−1)}`.
    #[serde(with = "ext_f64")]
    pub sigma_integral: f64,
    /// `‖κ‖_β`.
    #[serde(with = "ext_f64")]
    pub kappa_norm: f64,
}

pub const WITNESS_Q: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const WITNESS_BETA: [f64; 6] = [f64::INFINITY, 8.0, 4.0, 2.0, 1.5, 1.0];

/// Discrete `L^p` norm, `p ∈ [1, ∞]`.
pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    if p.is_infinite() {
        f.norm_inf()
    } else {
        integrate(&f.map(|x| x.abs().powf(p))).powf(1.0 / p)
    }
}

/// Largest `β` first, then smallest `q`, over the fixed search grid.
pub fn search_exponent_witness(coeffs: &EllipticCoeffs, d: usize) -> Result<ExponentWitness> {
    let (idx, smin) = argmin(&coeffs.sigma);
    if !(smin > 0.0) {
        return Err(MfgError::SingularPointMatrix {
            what: "symmetric part of A (sigma <= 0)",
            index: idx,
        });
    }
    for &beta in &WITNESS_BETA {
        for &q in &WITNESS_Q {
            if gate_appendix_qbeta(q, beta, d)? {
                let sigma = coeffs.sigma_field();
                let e = q / (q - 1.0);
                return Ok(ExponentWitness {
                    q,
                    beta,
                    sigma_integral: integrate(&sigma.map(|s| s.powf(e))),
                    kappa_norm: lp_norm(&coeffs.kappa_field(), beta),
                });
            }
        }
    }
    Err(MfgError::InvalidExponent(format!(
        "no admissible (q, beta) on the search grid for d = {d}"
    )))
}

/// `∫(−D_mH η̄² + Dv̄ᵀ m D²_{pp}H Dv̄ + m D²_{pm}H·Dv̄ η̄)` for `dir = (η̄, v̄)`.
pub fn quadratic_form_q(spec: &HamiltonianSpec, w: &FieldPair, dir: &FieldPair) -> Result<f64> {
    if dir.grid() != w.grid() {
        return Err(MfgError::GridMismatch);
    }
    let pd = derivatives(spec, w)?;
    let d = w.grid().dim();
    let dv = gradient_unchecked(&dir.u);
    let m = w.m.values();
    let eta = dir.m.values();
    let vals = (0..w.grid().len())
        .map(|i| {
            let p = &pd[i];
            let g = dv.at(i);
            let mut s = -p.dm * eta[i] * eta[i];
            for k in 0..d {
                for l in 0..d {
                    s += g[k] * m[i] * p.dpp[k][l] * g[l];
                }
                s += m[i] * p.dpm[k] * g[k] * eta[i];
            }
            s
        })
        .collect();
    Ok(integrate(&ScalarField::from_vec_unchecked(w.grid(), vals)))
}

/// The linear system satisfied by `(η̄, v̄) = (m − m̃, u − ũ)`:
///
/// ```text
/// E₁ = −η̄ + div(D_pH η̄ − m D²_{pp}H Dv̄)
/// E₂ = v̄ − D_mH η̄ + D_pH·Dv̄ + m D²_{pm}H·Dv̄
/// ```
///
/// returned as `FieldPair { m: E₂, u: E₁ }`, so that
/// `⟨J z₂, z₁⟩ = ⟨z₂, linearized_operator(z₁)⟩` for the Jacobian `J` of the operator.
pub fn linearized_operator(spec: &HamiltonianSpec, w: &FieldPair, dir: &FieldPair) -> Result<FieldPair> {
    if dir.grid() != w.grid() {
        return Err(MfgError::GridMismatch);
    }
    let grid = w.grid();
    let d = grid.dim();
    let n = grid.len();
    let pd = derivatives(spec, w)?;
    let m = w.m.values();
    let (eta, v) = (dir.m.values(), dir.u.values());
    let dv = gradient_unchecked(&dir.u);
    let mut flux = vec![vec![0.0; n]; d];
    let mut e2 = vec![0.0; n];
    for i in 0..n {
        let p = &pd[i];
        let g = dv.at(i);
        let mut s = v[i] - p.dm * eta[i];
        for k in 0..d {
            let mut f = p.dp[k] * eta[i];
            for l in 0..d {
                f -= m[i] * p.dpp[k][l] * g[l];
            }
            flux[k][i] = f;
            s += (p.dp[k] + m[i] * p.dpm[k]) * g[k];
        }
        e2[i] = s;
    }
    let div = divergence_unchecked(&VectorField::from_components_unchecked(
        flux.into_iter().map(|f| ScalarField::from_vec_unchecked(grid, f)).collect(),
    ));
    let e1 = eta.iter().zip(div.values()).map(|(e, dv)| -e + dv).collect();
    Ok(FieldPair {
        m: ScalarField::from_vec_unchecked(grid, e2),
        u: ScalarField::from_vec_unchecked(grid, e1),
    })
}

/// Discrete norms standing in for the integrability conditions on `A` and `κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityNorms {
    /// `(γ/2)'`.
    #[serde(with = "ext_f64")]
    pub a_exponent: f64,
    /// `‖ |A|_F ‖_{(γ/2)'}`.
    #[serde(with = "ext_f64")]
    pub a_norm: f64,
    /// `(γ*/2)'`.
    #[serde(with = "ext_f64")]
    pub kappa_exponent: f64,
    #[serde(with = "ext_f64")]
    pub kappa_norm: f64,
    pub caveats: Vec<String>,
}

fn conj_or_inf(p: f64, name: &str, caveats: &mut Vec<String>) -> f64 {
    if p > 1.0 {
        conjugate(p)
    } else {
        if p < 1.0 {
            caveats.push(format!("{name} = {p} < 1 has no Hölder conjugate; the sup norm is reported"));
        }
        f64::INFINITY
    }
}

pub fn integrability_norms(coeffs: &EllipticCoeffs, prof: &ExponentProfile) -> IntegrabilityNorms {
    let mut caveats = Vec::new();
    let a_exponent = conj_or_inf(prof.gamma / 2.0, "gamma/2", &mut caveats);
    let kappa_exponent = conj_or_inf(prof.gamma_star() / 2.0, "gamma*/2", &mut caveats);
    let d = coeffs.grid.dim();
    let frob = ScalarField::from_vec_unchecked(
        coeffs.grid,
        coeffs
            .a_mat
            .iter()
            .map(|a| {
                let mut s = 0.0;
                for row in a.iter().take(d) {
                    for x in row.iter().take(d) {
                        s += x * x;
                    }
                }
                s.sqrt()
            })
            .collect(),
    );
    IntegrabilityNorms {
        a_exponent,
        a_norm: lp_norm(&frob, a_exponent),
        kappa_exponent,
        kappa_norm: lp_norm(&coeffs.kappa_field(), kappa_exponent),
        caveats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_grid, TrigPolynomial};
    use crate::hamiltonian::Coupling;
    use crate::mfg::random_test_pair;
    use crate::solver::{jacobian_apply, solve_strong, SolverOptions};
    use nalgebra::{Matrix2, Vector2};

    fn power() -> HamiltonianSpec {
        HamiltonianSpec::power(2.0, Coupling::identity())
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn power_constant_solution() {
        for d in [1, 2] {
            let g = make_grid(d, 16).unwrap();
            let c = assemble_coeffs(&power(), &FieldPair::constant(g, 1.0, 0.5)).unwrap();
            let e = &c.elliptic;
            for i in 0..g.len() {
                for k in 0..d {
                    for l in 0..d {
                        assert_eq!(e.a_mat[i][k][l], if k == l { 1.0 } else { 0.0 });
                    }
                    assert_eq!(e.b[i][k], 0.0);
                    assert_eq!(e.c[i][k], 0.0);
                }
                assert_eq!(e.a[i], -1.0);
                assert_eq!(e.kappa[i], 1.0);
                assert_eq!(c.lambda_min_a3mon[i], 1.0);
                assert_eq!(c.e3_min_eig[i], 1.0);
            }
            assert_eq!(e.tau, 1.0);
            assert_eq!(c.min_coupling_slope, Some(1.0));
        }
    }

    #[test]
    fn congestion_constant_solution() {
        let g = make_grid(1, 16).unwrap();
        let spec = HamiltonianSpec::congestion(2.0, 1.0);
        let c = assemble_coeffs(&spec, &FieldPair::constant(g, 1.0, -0.5)).unwrap();
        assert_eq!(c.elliptic.a_mat[0][0][0], 1.0);
        assert_eq!(c.elliptic.a[0], -2.0);
        assert_eq!(c.elliptic.kappa[0], 2.0);
        let (lam, rep) = check_a3mon(&spec, &FieldPair::constant(g, 1.0, -0.5), TOL_POS).unwrap();
        assert_eq!(rep.lambda_min, 0.5);
        assert!(lam.values().iter().all(|&x| x == 0.5));
        assert!(rep.pass);
    }

    #[test]
    fn flat_coupling_fails_a3mon() {
        // g'(m) = 3m² is below the tolerance at this density
        let g = make_grid(1, 8).unwrap();
        let spec = HamiltonianSpec::power(2.0, Coupling::PowerLaw { c: 1.0, exponent: 3.0 });
        let (_, rep) = check_a3mon(&spec, &FieldPair::constant(g, 1e-9, 0.0), TOL_POS).unwrap();
        assert!(!rep.pass);
    }

    fn solved(spec: &HamiltonianSpec, n: usize) -> FieldPair {
        let g = make_grid(1, n).unwrap();
        solve_strong(spec, g, &SolverOptions::default()).unwrap().0
    }

    #[test]
    fn kappa_reconstruction() {
        let specs = [
            power().with_potential(TrigPolynomial::cosine(0.2, &[1])),
            HamiltonianSpec::congestion(2.0, 0.5).with_potential(TrigPolynomial::cosine(0.2, &[1])),
        ];
        for spec in &specs {
            let w = solved(spec, 32);
            let c = assemble_coeffs(spec, &w).unwrap();
            let e = &c.elliptic;
            assert!(e.asymmetry() == 0.0);
            for i in 0..w.grid().len() {
                // 1×1 systems here, solved through the general LU path
                let a = DMatrix::from_element(1, 1, e.a_mat[i][0][0]);
                let lu = a.lu();
                let sb = lu.solve(&DMatrix::from_element(1, 1, e.b[i][0])).unwrap()[(0, 0)];
                let sc = lu.solve(&DMatrix::from_element(1, 1, e.c[i][0])).unwrap()[(0, 0)];
                let k = e.c[i][0] * sc + e.b[i][0] * sb + e.a[i].abs();
                assert!((k - e.kappa[i]).abs() <= 1e-10 * k.abs());
            }
        }
    }

    #[test]
    fn kappa_reconstruction_2d_nonsymmetric() {
        let g = make_grid(2, 8).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        use rand::Rng;
        let n = g.len();
        let a_mat: Vec<Mat2> = (0..n)
            .map(|_| [[2.0 + rng.gen::<f64>(), rng.gen_range(-0.5..0.5)], [rng.gen_range(-0.5..0.5), 2.0 + rng.gen::<f64>()]])
            .collect();
        let b: Vec<Vec2> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let c: Vec<Vec2> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let a: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.5..2.0)).collect();
        let e = EllipticCoeffs::new(g, a_mat.clone(), a.clone(), b.clone(), c.clone()).unwrap();
        for i in 0..n {
            let m = Matrix2::new(a_mat[i][0][0], a_mat[i][0][1], a_mat[i][1][0], a_mat[i][1][1]);
            let lu = m.lu();
            let (bv, cv) = (Vector2::new(b[i][0], b[i][1]), Vector2::new(c[i][0], c[i][1]));
            let k = cv.dot(&lu.solve(&cv).unwrap()) + bv.dot(&lu.solve(&bv).unwrap()) + a[i].abs();
            assert!((k - e.kappa[i]).abs() <= 1e-10 * k);
            // τ ≥ 1 always, with equality only for symmetric A
            assert!(e.tau >= 1.0);
        }
        assert!(e.tau > 1.0);
    }

    #[test]
    fn tau_generalized_eigenvalue_oracle() {
        let a = [[2.0, 0.7], [-0.3, 1.5]];
        let t = tau_point(&a, 2);
        let m: Matrix2<f64> = Matrix2::new(2.0, 0.7, -0.3, 1.5);
        let s = (m + m.transpose()) * 0.5;
        let inv = m.try_inverse().unwrap();
        let ms = ((inv + inv.transpose()) * 0.5).try_inverse().unwrap();
        let l = s.cholesky().unwrap().l();
        let li = l.try_inverse().unwrap();
        let sym = li * ms * li.transpose();
        let max: f64 = sym.symmetric_eigenvalues().max();
        assert!((t - max).abs() < 1e-12);
    }

    #[test]
    fn congestion_sigma_lower_bound() {
        for alpha in [0.25, 0.5, 1.0] {
            let spec = HamiltonianSpec::congestion(2.0, alpha).with_potential(TrigPolynomial::cosine(0.2, &[1]));
            let w = solved(&spec, 32);
            let c = assemble_coeffs(&spec, &w).unwrap();
            for (s, m) in c.elliptic.sigma.iter().zip(w.m.values()) {
                assert!(*s >= m.powf(1.0 - alpha) - 1e-10);
            }
        }
    }

    #[test]
    fn power_block_structure() {
        let spec = HamiltonianSpec::power(3.0, Coupling::PowerLaw { c: 1.0, exponent: 2.0 });
        let g = make_grid(2, 8).unwrap();
        let w = random_test_pair(g, 2, 0.5, 4).unwrap();
        let c = assemble_coeffs(&spec, &w).unwrap();
        for i in 0..g.len() {
            assert_eq!(c.elliptic.c[i], [-c.elliptic.b[i][0], -c.elliptic.b[i][1]]);
        }
    }

    #[test]
    fn vanishing_dmh_is_reported() {
        let g = make_grid(1, 8).unwrap();
        let spec = HamiltonianSpec::power(2.0, Coupling::PowerLaw { c: 1.0, exponent: 3.0 });
        let mut m = ScalarField::constant(g, 1.0);
        m.values_mut()[5] = 1e-8;
        let err = assemble_coeffs(&spec, &FieldPair::new(m, ScalarField::zeros(g)).unwrap()).unwrap_err();
        assert!(matches!(err, MfgError::VanishingDmH { index: 5, .. }));
    }

    #[test]
    fn witness_search() {
        let g = make_grid(1, 8).unwrap();
        let e = EllipticCoeffs::shifted_laplacian(g);
        let w = search_exponent_witness(&e, 1).unwrap();
        assert_eq!((w.q, w.beta), (0.5, f64::INFINITY));
        assert_close(w.sigma_integral, 1.0, 1e-14);
        assert_close(w.kappa_norm, 1.0, 1e-14);
        let g2 = make_grid(2, 8).unwrap();
        let w = search_exponent_witness(&EllipticCoeffs::shifted_laplacian(g2), 2).unwrap();
        assert_eq!(w.beta, f64::INFINITY);
    }

    #[test]
    fn q_examples() {
        let g = make_grid(1, 32).unwrap();
        let w = FieldPair::constant(g, 1.0, 0.5);
        let q = quadratic_form_q(&power(), &w, &FieldPair::constant(g, 0.0, 3.0)).unwrap();
        assert_eq!(q, 0.0);
        let dir = FieldPair::new(
            ScalarField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).cos()),
            ScalarField::zeros(g),
        )
        .unwrap();
        assert_close(quadratic_form_q(&power(), &w, &dir).unwrap(), 0.5, 1e-14);
    }

    #[test]
    fn q_coercivity_and_jacobian_pairing() {
        let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(TrigPolynomial::cosine(0.2, &[1]));
        let w = solved(&spec, 32);
        let (_, a3) = check_a3mon(&spec, &w, TOL_POS).unwrap();
        for seed in 0..20 {
            let dir = random_test_pair(w.grid(), 8, 0.1, seed).unwrap();
            let q = quadratic_form_q(&spec, &w, &dir).unwrap();
            let dv = gradient_unchecked(&dir.u);
            let energy = integrate(&(&dv.dot(&dv).unwrap() + &(&dir.m * &dir.m)));
            assert!(q >= a3.lambda_min * energy - 1e-9 * energy.max(1.0));
            let jz = jacobian_apply(&spec, &w, &dir, 0.0).unwrap();
            assert!((jz.inner(&dir) - q).abs() < 1e-10 * q.abs().max(1.0));
        }
    }

    #[test]
    fn linearized_operator_is_jacobian_transpose() {
        let specs = [
            HamiltonianSpec::power(3.0, Coupling::PowerLaw { c: 1.0, exponent: 2.0 })
                .with_potential(TrigPolynomial::cosine(0.2, &[1, 0])),
            HamiltonianSpec::congestion(2.5, 0.6),
        ];
        for d in [1, 2] {
            let g = make_grid(d, 16).unwrap();
            for spec in &specs {
                let w = random_test_pair(g, 4, 0.5, 1).unwrap();
                let z1 = random_test_pair(g, 4, 0.1, 2).unwrap();
                let z2 = random_test_pair(g, 4, 0.1, 3).unwrap();
                let lhs = jacobian_apply(spec, &w, &z2, 0.0).unwrap().inner(&z1);
                let rhs = z2.inner(&linearized_operator(spec, &w, &z1).unwrap());
                assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
                assert_eq!(linearized_operator(spec, &w, &FieldPair::zeros(g)).unwrap().norm_inf(), 0.0);
            }
        }
    }

    #[test]
    fn elimination_reproduces_elliptic_equation() {
        let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(TrigPolynomial::cosine(0.2, &[1]));
        let w = solved(&spec, 32);
        let c = assemble_coeffs(&spec, &w).unwrap();
        for seed in 0..5 {
            let vbar = random_test_pair(w.grid(), 8, 0.1, seed).unwrap().u;
            let eta = c.elliptic.eliminated_density(&vbar).unwrap();
            let lin = linearized_operator(&spec, &w, &FieldPair::new(eta, vbar.clone()).unwrap()).unwrap();
            // the second equation is solved exactly by construction
            assert!(lin.m.norm_inf() < 1e-10);
            let f = c.elliptic.apply(&vbar).unwrap();
            assert!((&lin.u - &f).norm_inf() <= 1e-8 * f.norm_inf().max(1.0));
        }
    }

    #[test]
    fn integrability_norm_exponents() {
        let g = make_grid(1, 8).unwrap();
        let e = EllipticCoeffs::shifted_laplacian(g);
        let prof = ExponentProfile::new(4.0, 4.0, 8.0, 8.0, 1).unwrap();
        let r = integrability_norms(&e, &prof);
        assert_eq!(r.a_exponent, 2.0);
        assert_eq!(r.kappa_exponent, 1.0);
        assert_close(r.a_norm, 1.0, 1e-14);
        let prof = ExponentProfile::new(4.0, 1.5, 8.0, 8.0, 1).unwrap();
        let r = integrability_norms(&e, &prof);
        assert_eq!(r.a_exponent, f64::INFINITY);
        assert_eq!(r.caveats.len(), 1);
    }

    #[test]
    fn adjoint_coefficients() {
        let g = make_grid(2, 8).unwrap();
        let e = EllipticCoeffs::constant(g, [[2.0, 0.5], [0.1, 1.0]], -1.0, [0.3, 0.2], [0.1, -0.4]).unwrap();
        let adj = e.adjoint();
        assert_eq!(adj.a_mat[0], [[2.0, 0.1], [0.5, 1.0]]);
        assert_eq!(adj.b[0], [-0.1, 0.4]);
        assert_eq!(adj.c[0], [-0.3, -0.2]);
        assert_eq!(adj.adjoint(), e);
        // κ and the ellipticity data are unchanged by the adjoint map
        let recomputed = EllipticCoeffs::new(g, adj.a_mat.clone(), adj.a.clone(), adj.b.clone(), adj.c.clone()).unwrap();
        for i in 0..g.len() {
            assert!((recomputed.kappa[i] - e.kappa[i]).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn congestion_block_positive(mv in 0.05f64..5.0, p in -3.0f64..3.0, alpha in 0.05f64..1.0) {
                let spec = HamiltonianSpec::congestion(2.0, alpha);
                let pd = spec.derivatives_at(0.0, [p, 0.0], mv, 1).unwrap();
                let lam = sym_min_eig(&a3mon_matrix(&pd, mv, 1));
                prop_assert!(lam > 0.0);
            }

            #[test]
            fn symmetric_tau_is_one(a in 0.5f64..3.0, b in -0.4f64..0.4, c in 0.5f64..3.0) {
                prop_assert_eq!(tau_point(&[[a, b], [b, c]], 2), 1.0);
            }
        }
    }
}
