//! Periodic uniform grids on the unit torus, sampled fields, spectral calculus
//! and rectangle-rule quadrature.
//!
//! Differentiation is Fourier collocation: a line of `n` samples is
//! transformed, multiplied by `2πik` and transformed back. The Nyquist mode is
//! zeroed for first derivatives, which makes the discrete derivative a real
//! skew-symmetric matrix. Discrete integration by parts,
//! `Σ f·(D g) = −Σ (D f)·g`, therefore holds to roundoff for *every* pair of
//! grid functions, not only band-limited ones.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Uniform periodic grid on `T^d = [0,1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    d: usize,
    n: usize,
}

impl TryFrom<RawGrid> for TorusGrid {
    type Error = MfgError;
    fn try_from(raw: RawGrid) -> Result<Self> {
        TorusGrid::new(raw.d, raw.n)
    }
}

impl From<TorusGrid> for RawGrid {
    fn from(g: TorusGrid) -> Self {
        RawGrid { d: g.d, n: g.n }
    }
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(MfgError::UnsupportedDimension(d));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(MfgError::InvalidGridSize(n));
        }
        Ok(Self { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d` of a single point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Coordinates of point `idx`, zero-padded to two entries.
    ///
    /// Row-major: in 2-D the `x` index varies slowest.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.d {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h],
        }
    }

    /// Axis indices of the point with linear index `idx`.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.d {
            1 => [idx, 0],
            _ => [idx / self.n, idx % self.n],
        }
    }

    pub fn linear_index(&self, ix: usize, iy: usize) -> usize {
        match self.d {
            1 => ix % self.n,
            _ => (ix % self.n) * self.n + (iy % self.n),
        }
    }

    /// Signed wavenumber of FFT bin `j`, with the Nyquist bin mapped to 0.
    pub fn wavenumber(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if 2 * j < n {
            j
        } else if 2 * j == n {
            0
        } else {
            j - n
        }
    }
}

/// `make_grid(d, n)`: validated constructor.
pub fn make_grid(d: usize, n: usize) -> Result<TorusGrid> {
    TorusGrid::new(d, n)
}

/// Real values sampled at every grid point, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::FieldLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    /// Wraps values without the finiteness scan. Length is still checked in debug builds.
    pub(crate) fn from_vec_unchecked(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    /// Kronecker delta at grid index `idx`.
    pub fn unit(grid: TorusGrid, idx: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[idx] = 1.0;
        f
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(self.grid, other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `(∫|f|² dx)^{1/2}` with the rectangle rule.
    pub fn norm_l2(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Cyclic shift by whole grid cells along each axis.
    pub fn shifted(&self, sx: usize, sy: usize) -> Self {
        let g = self.grid;
        let mut out = vec![0.0; g.len()];
        for (idx, slot) in out.iter_mut().enumerate() {
            let [ix, iy] = g.multi_index(idx);
            let src = g.linear_index(ix + g.n() - sx % g.n(), iy + g.n() - sy % g.n());
            *slot = self.values[src];
        }
        Self {
            grid: g,
            values: out,
        }
    }

    /// Samples every other point per axis: the restriction to a grid of half the size.
    pub fn restrict_to(&self, coarse: TorusGrid) -> Result<Self> {
        let g = self.grid;
        if coarse.dim() != g.dim() || g.n() % coarse.n() != 0 {
            return Err(MfgError::GridMismatch);
        }
        let stride = g.n() / coarse.n();
        let values = (0..coarse.len())
            .map(|i| {
                let [ix, iy] = coarse.multi_index(i);
                self.values[g.linear_index(ix * stride, iy * stride)]
            })
            .collect();
        Ok(Self {
            grid: coarse,
            values,
        })
    }
}

impl<'a> Add for &'a ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: Self) -> ScalarField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        ScalarField::from_vec_unchecked(
            self.grid,
            self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        )
    }
}

impl<'a> Sub for &'a ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: Self) -> ScalarField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        ScalarField::from_vec_unchecked(
            self.grid,
            self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        )
    }
}

impl<'a> Mul for &'a ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: Self) -> ScalarField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        ScalarField::from_vec_unchecked(
            self.grid,
            self.values.iter().zip(&rhs.values).map(|(a, b)| a * b).collect(),
        )
    }
}

impl<'a> Mul<f64> for &'a ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|v| v * rhs)
    }
}

impl<'a> Neg for &'a ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

/// `d` scalar components sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(MfgError::GridMismatch);
        };
        let grid = first.grid();
        if components.len() != grid.dim() || components.iter().any(|c| c.grid() != grid) {
            return Err(MfgError::GridMismatch);
        }
        Ok(Self { components })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    /// Vector at grid point `idx`, zero-padded.
    pub fn at(&self, idx: usize) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (slot, c) in p.iter_mut().zip(&self.components) {
            *slot = c.values[idx];
        }
        p
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &Self) -> Result<ScalarField> {
        same_grid(self.grid(), other.grid())?;
        let grid = self.grid();
        let mut out = vec![0.0; grid.len()];
        for (a, b) in self.components.iter().zip(&other.components) {
            for ((o, x), y) in out.iter_mut().zip(&a.values).zip(&b.values) {
                *o += x * y;
            }
        }
        Ok(ScalarField::from_vec_unchecked(grid, out))
    }

    pub fn scale_by(&self, f: &ScalarField) -> Result<Self> {
        same_grid(self.grid(), f.grid())?;
        Ok(Self {
            components: self.components.iter().map(|c| c * f).collect(),
        })
    }

    pub fn norm_inf(&self) -> f64 {
        self.components.iter().map(|c| c.norm_inf()).fold(0.0, f64::max)
    }

    pub(crate) fn from_components_unchecked(components: Vec<ScalarField>) -> Self {
        Self { components }
    }
}

fn same_grid(a: TorusGrid, b: TorusGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(MfgError::GridMismatch)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(MfgError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Spectral derivative of raw grid values along `axis`. No finiteness check.
pub(crate) fn axis_derivative(grid: TorusGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n();
    let plans = plans(n);
    let mut out = vec![0.0; values.len()];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch =
        vec![Complex64::new(0.0, 0.0); plans.forward.get_inplace_scratch_len().max(plans.inverse.get_inplace_scratch_len())];
    let scale = TWO_PI / n as f64;
    let lines = grid.len() / n;
    for l in 0..lines {
        let index = |j: usize| -> usize {
            match (grid.dim(), axis) {
                (1, _) => j,
                (_, 0) => j * n + l,
                _ => l * n + j,
            }
        };
        for (j, c) in line.iter_mut().enumerate() {
            *c = Complex64::new(values[index(j)], 0.0);
        }
        plans.forward.process_with_scratch(&mut line, &mut scratch);
        for (j, c) in line.iter_mut().enumerate() {
            let k = grid.wavenumber(j) as f64;
            *c = Complex64::new(-c.im, c.re) * (k * scale);
        }
        plans.inverse.process_with_scratch(&mut line, &mut scratch);
        for (j, c) in line.iter().enumerate() {
            out[index(j)] = c.re;
        }
    }
    out
}

/// In-place multidimensional DFT of grid data (unnormalized in both directions).
pub(crate) fn fft_grid(grid: TorusGrid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n();
    let plans = plans(n);
    let plan = if inverse { &plans.inverse } else { &plans.forward };
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    // rows are contiguous
    for row in data.chunks_mut(n) {
        plan.process_with_scratch(row, &mut scratch);
    }
    if grid.dim() == 2 {
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for col in 0..n {
            for (j, c) in line.iter_mut().enumerate() {
                *c = data[j * n + col];
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            for (j, c) in line.iter().enumerate() {
                data[j * n + col] = *c;
            }
        }
    }
}

/// Spectral gradient.
pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    check_finite(&f.values)?;
    Ok(gradient_unchecked(f))
}

pub(crate) fn gradient_unchecked(f: &ScalarField) -> VectorField {
    let grid = f.grid;
    VectorField::from_components_unchecked(
        (0..grid.dim())
            .map(|axis| ScalarField::from_vec_unchecked(grid, axis_derivative(grid, &f.values, axis)))
            .collect(),
    )
}

/// Spectral divergence, the negative adjoint of [`gradient`].
pub fn divergence(g: &VectorField) -> Result<ScalarField> {
    for c in &g.components {
        check_finite(&c.values)?;
    }
    Ok(divergence_unchecked(g))
}

pub(crate) fn divergence_unchecked(g: &VectorField) -> ScalarField {
    let grid = g.grid();
    let mut out = vec![0.0; grid.len()];
    for (axis, c) in g.components.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(axis_derivative(grid, &c.values, axis)) {
            *o += v;
        }
    }
    ScalarField::from_vec_unchecked(grid, out)
}

/// `div(grad f)`, composed from the first-derivative operators.
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    divergence(&gradient(f)?)
}

/// Rectangle rule `h^d Σ f`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid.cell_volume() * f.values.iter().sum::<f64>()
}

/// `∫(η η̃ + v ṽ) dx`.
pub fn pair_inner(
    p1: (&ScalarField, &ScalarField),
    p2: (&ScalarField, &ScalarField),
) -> Result<f64> {
    let grid = p1.0.grid;
    if [p1.1.grid, p2.0.grid, p2.1.grid].iter().any(|g| *g != grid) {
        return Err(MfgError::GridMismatch);
    }
    let s: f64 = p1
        .0
        .values
        .iter()
        .zip(&p2.0.values)
        .map(|(a, b)| a * b)
        .chain(p1.1.values.iter().zip(&p2.1.values).map(|(a, b)| a * b))
        .sum();
    Ok(grid.cell_volume() * s)
}

/// One term `cos·cos(2πk·x) + sin·sin(2πk·x)` of a trigonometric polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl TrigTerm {
    fn wave(&self) -> [f64; 2] {
        [
            self.k.first().copied().unwrap_or(0) as f64,
            self.k.get(1).copied().unwrap_or(0) as f64,
        ]
    }

    fn phase(&self, x: &[f64]) -> f64 {
        let k = self.wave();
        TWO_PI * (k[0] * x.first().copied().unwrap_or(0.0) + k[1] * x.get(1).copied().unwrap_or(0.0))
    }
}

/// Band-limited real trigonometric polynomial on the torus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPolynomial {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn cosine(amplitude: f64, k: &[i32]) -> Self {
        Self {
            constant: 0.0,
            terms: vec![TrigTerm {
                k: k.to_vec(),
                cos: amplitude,
                sin: 0.0,
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|t| {
                    let (s, c) = t.phase(x).sin_cos();
                    t.cos * c + t.sin * s
                })
                .sum::<f64>()
    }

    /// Analytic gradient, zero-padded to two entries.
    pub fn eval_gradient(&self, x: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for t in &self.terms {
            let (s, c) = t.phase(x).sin_cos();
            let dphase = t.wave().map(|k| TWO_PI * k);
            let amp = -t.cos * s + t.sin * c;
            g[0] += amp * dphase[0];
            g[1] += amp * dphase[1];
        }
        g
    }

    /// Largest `|k_i|` over all terms.
    pub fn max_frequency(&self) -> u32 {
        self.terms
            .iter()
            .flat_map(|t| t.k.iter().map(|k| k.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    /// Upper bound on `sup |p|`.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.terms.iter().map(|t| t.cos.abs() + t.sin.abs()).sum::<f64>()
    }

    pub fn sample(&self, grid: TorusGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.eval(&x[..grid.dim()]))
    }

    /// Random mean-zero polynomial with `|k|_∞ ≤ max_freq`, coefficients
    /// uniform in `[-1, 1]` damped by `1/(1+|k|²)`.
    pub fn random<R: Rng + ?Sized>(d: usize, max_freq: u32, rng: &mut R) -> Self {
        let kmax = max_freq as i32;
        let mut terms = Vec::new();
        let ky_range = if d == 2 { -kmax..=kmax } else { 0..=0 };
        for kx in 0..=kmax {
            for ky in ky_range.clone() {
                // half lattice: one representative of each ±k pair
                if kx == 0 && ky <= 0 {
                    continue;
                }
                let damp = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
                let k = if d == 2 { vec![kx, ky] } else { vec![kx] };
                terms.push(TrigTerm {
                    k,
                    cos: damp * rng.gen_range(-1.0..=1.0),
                    sin: damp * rng.gen_range(-1.0..=1.0),
                });
            }
        }
        Self {
            constant: 0.0,
            terms,
        }
    }

    /// Rescales so that `sup_bound() == 1` (no-op for the zero polynomial).
    pub fn normalized(mut self) -> Self {
        let b = self.sup_bound();
        if b > 0.0 {
            self.constant /= b;
            for t in &mut self.terms {
                t.cos /= b;
                t.sin /= b;
            }
        }
        self
    }
}

/// Field dump: CSV with header `x[,y],value`, one row per grid point, row-major.
pub fn write_field_csv<W: Write>(field: &ScalarField, writer: W) -> Result<()> {
    write_columns_csv(field.grid, &[("value", field.values())], writer)
}

pub fn write_field_csv_file(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_field_csv(field, std::io::BufWriter::new(file))
}

/// Several named per-point columns after the coordinate columns.
pub fn write_columns_csv<W: Write>(
    grid: TorusGrid,
    columns: &[(&str, &[f64])],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = if grid.dim() == 1 { vec!["x"] } else { vec!["x", "y"] };
    header.extend(columns.iter().map(|(name, _)| *name));
    w.write_record(&header)?;
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let mut rec: Vec<String> = x[..grid.dim()].iter().map(|v| v.to_string()).collect();
        rec.extend(columns.iter().map(|(_, col)| col[idx].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field dump written on `grid`. Coordinates must match the grid points.
pub fn read_field_csv<R: Read>(grid: TorusGrid, reader: R) -> Result<ScalarField> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let expected: Vec<&str> = if grid.dim() == 1 {
        vec!["x", "value"]
    } else {
        vec!["x", "y", "value"]
    };
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(MfgError::Format(format!(
            "expected header {:?}, found {:?}",
            expected,
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let h = grid.spacing();
    let mut values = Vec::with_capacity(grid.len());
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        if idx >= grid.len() {
            return Err(MfgError::FieldLength {
                expected: grid.len(),
                got: idx + 1,
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| MfgError::Format(format!("row {idx}: {e}")))
        };
        let x = grid.point(idx);
        for axis in 0..grid.dim() {
            let xv = parse(&rec[axis])?;
            if (xv - x[axis]).abs() > 1e-3 * h {
                return Err(MfgError::Format(format!(
                    "row {idx}: coordinate {xv} does not match grid point {}",
                    x[axis]
                )));
            }
        }
        values.push(parse(&rec[grid.dim()])?);
    }
    ScalarField::new(grid, values)
}

pub fn read_field_csv_file(grid: TorusGrid, path: impl AsRef<Path>) -> Result<ScalarField> {
    read_field_csv(grid, std::fs::File::open(path)?)
}
