//! Periodic fields on the torus `[-π, π)²`.
//!
//! Fourier coefficients use the normalization
//!
//! ```text
//! f̂(k) = (2π)⁻² ∫ f(x) e^{-ik·x} dx  ≈  mean_j f(x_j) e^{-ik·x_j}
//! ```
//!
//! so a field is recovered as `f(x) = Σ_k f̂(k) e^{ik·x}` and the L² norm is
//! `‖f‖_{L²} = 2π (Σ_k |f̂(k)|²)^{1/2}`. The `2π` in that identity is the only
//! place the domain size enters the spectral norms.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;
/// Area of the torus, `(2π)²`.
pub const TORUS_AREA: f64 = TWO_PI * TWO_PI;

/// Square periodic grid with `n` points per axis on `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
    dealias_fraction: f64,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_dealias(n, 2.0 / 3.0)
    }

    pub fn with_dealias(n: usize, dealias_fraction: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "modes per axis must be even and >= 4, got {n}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        Ok(Self { n, dealias_fraction })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.spacing() * self.spacing()
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        -PI + TWO_PI * j as f64 / self.n as f64
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coord(i), self.coord(j)]
    }

    /// Signed wavenumber of FFT index `idx`, in `{-n/2, ..., n/2 - 1}`.
    #[inline]
    pub fn wavenumber(&self, idx: usize) -> i64 {
        if idx < self.n / 2 {
            idx as i64
        } else {
            idx as i64 - self.n as i64
        }
    }

    /// FFT index of wavenumber `k`; `None` when `k` is not representable.
    pub fn index_of(&self, k: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if k < -half || k >= half {
            None
        } else if k >= 0 {
            Some(k as usize)
        } else {
            Some((k + self.n as i64) as usize)
        }
    }

    #[inline]
    pub(crate) fn is_nyquist(&self, idx: usize) -> bool {
        idx == self.n / 2
    }
}

/// Wrap a coordinate into `[-π, π)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TWO_PI) - PI;
    // rem_euclid can round up to exactly 2π
    if y >= PI {
        y - TWO_PI
    } else {
        y
    }
}

#[inline]
pub fn wrap_point(x: [f64; 2]) -> [f64; 2] {
    [wrap(x[0]), wrap(x[1])]
}

/// Minimum-image difference `a - b` on the torus.
#[inline]
pub fn min_image(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [wrap(a[0] - b[0]), wrap(a[1] - b[1])]
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

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

fn fft_rows(data: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let scratch_len = fft.get_inplace_scratch_len();
    data.par_chunks_mut(n).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, row| fft.process_with_scratch(row, scratch),
    );
}

fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let p = plans(n);
    let fft = if inverse { &p.inverse } else { &p.forward };
    fft_rows(data, n, fft);
    transpose(data, n);
    fft_rows(data, n, fft);
    transpose(data, n);
}

/// Fourier coefficients of real grid samples (row-major, first index along x₁).
pub fn forward_transform(grid: &GridSpec, values: &[f64]) -> Vec<Complex64> {
    let n = grid.n();
    assert_eq!(values.len(), n * n, "value array does not match grid");
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut data, n, false);
    // The grid starts at -π, not 0: shift phase by e^{ik·π}.
    let scale = 1.0 / (n * n) as f64;
    for a in 0..n {
        let sa = if grid.wavenumber(a) % 2 == 0 { 1.0 } else { -1.0 };
        for b in 0..n {
            let sb = if grid.wavenumber(b) % 2 == 0 { 1.0 } else { -1.0 };
            data[a * n + b] *= sa * sb * scale;
        }
    }
    data
}

/// Real grid samples of a coefficient table. The imaginary residue of a
/// non-Hermitian table is discarded.
pub fn inverse_transform(grid: &GridSpec, coeffs: &[Complex64]) -> Vec<f64> {
    let n = grid.n();
    assert_eq!(coeffs.len(), n * n, "coefficient array does not match grid");
    let mut data = coeffs.to_vec();
    for a in 0..n {
        let sa = if grid.wavenumber(a) % 2 == 0 { 1.0 } else { -1.0 };
        for b in 0..n {
            let sb = if grid.wavenumber(b) % 2 == 0 { 1.0 } else { -1.0 };
            data[a * n + b] *= sa * sb;
        }
    }
    fft2(&mut data, n, true);
    data.into_iter().map(|c| c.re).collect()
}

/// Real scalar field on the periodic grid, holding both its samples and its
/// Fourier coefficients.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: GridSpec,
    values: Vec<f64>,
    coeffs: Vec<Complex64>,
    zero_mean: bool,
}

impl SpectralField {
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Self {
        let coeffs = forward_transform(&grid, &values);
        Self {
            grid,
            values,
            coeffs,
            zero_mean: false,
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(grid.coord(i), grid.coord(j)));
            }
        }
        Self::from_values(grid, values)
    }

    /// Build from a Hermitian coefficient table.
    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Complex64>) -> Self {
        let values = inverse_transform(&grid, &coeffs);
        Self {
            grid,
            values,
            coeffs,
            zero_mean: false,
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
            zero_mean: true,
        }
    }

    /// Project out the mean and mark the field as zero-mean.
    pub fn into_zero_mean(mut self) -> Self {
        let mean = self.coeffs[0].re;
        if mean != 0.0 || self.coeffs[0].im != 0.0 {
            self.coeffs[0] = Complex64::new(0.0, 0.0);
            self.values.iter_mut().for_each(|v| *v -= mean);
        }
        self.zero_mean = true;
        self
    }

    /// Mark as zero-mean after checking `|f̂(0)| ≤ tol · max|f̂|`; the mean is
    /// then set to exactly zero.
    pub fn assert_zero_mean(self, rel_tol: f64) -> Result<Self> {
        let c0 = self.coeffs[0].norm();
        let scale = self.max_coeff();
        if c0 > rel_tol * scale && c0 > 1e-300 {
            return Err(Error::NotZeroMean(c0));
        }
        Ok(self.into_zero_mean())
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    pub fn is_zero_mean(&self) -> bool {
        self.zero_mean
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n() + j]
    }

    /// Coefficient at wavenumber `(k1, k2)`, zero if not representable.
    pub fn coeff(&self, k1: i64, k2: i64) -> Complex64 {
        match (self.grid.index_of(k1), self.grid.index_of(k2)) {
            (Some(a), Some(b)) => self.coeffs[a * self.grid.n() + b],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// `∫_{T²} f dx` by grid quadrature.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Apply a Fourier multiplier `m(k1, k2)`. The caller is responsible for
    /// `m(-k) = conj(m(k))`; Nyquist rows are passed through `m` unchanged.
    pub fn apply_multiplier(&self, m: impl Fn(i64, i64) -> Complex64 + Sync) -> Self {
        let n = self.grid.n();
        let grid = self.grid;
        let coeffs: Vec<Complex64> = self
            .coeffs
            .par_chunks(n)
            .enumerate()
            .flat_map_iter(|(a, row)| {
                let k1 = grid.wavenumber(a);
                let m = &m;
                row.iter()
                    .enumerate()
                    .map(move |(b, c)| c * m(k1, grid.wavenumber(b)))
            })
            .collect();
        let mut out = Self::from_coeffs(grid, coeffs);
        if self.zero_mean {
            out.coeffs[0] = Complex64::new(0.0, 0.0);
            out.zero_mean = true;
        }
        out
    }

    /// Real multiplier that depends on `|k|²` only.
    pub fn apply_radial(&self, m: impl Fn(f64) -> f64 + Sync) -> Self {
        self.apply_multiplier(|k1, k2| Complex64::new(m((k1 * k1 + k2 * k2) as f64), 0.0))
    }

    fn odd_multiplier(&self, axis: usize) -> Self {
        let n = self.grid.n() as i64;
        self.apply_multiplier(move |k1, k2| {
            let k = if axis == 0 { k1 } else { k2 };
            // derivative of the unpaired Nyquist mode is not real
            if k == -n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k as f64)
            }
        })
    }

    pub fn partial(&self, axis: usize) -> Self {
        let mut d = self.odd_multiplier(axis);
        d.zero_mean = true;
        d.coeffs[0] = Complex64::new(0.0, 0.0);
        d
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_values(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_values(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self::from_values(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Linear combination `a·self + b·other`, done on coefficients so that no
    /// transform is needed.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            zero_mean: self.zero_mean && other.zero_mean,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpby(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpby(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
            zero_mean: self.zero_mean,
        }
    }

    /// Pointwise product on the grid (aliased; see [`dealias`]).
    pub fn mul(&self, other: &Self) -> Self {
        self.zip_values(other, |a, b| a * b)
    }

    /// Evaluate the trigonometric interpolant at an arbitrary point. O(n²).
    pub fn eval_spectral(&self, x: [f64; 2]) -> f64 {
        let n = self.grid.n();
        let mut acc = 0.0;
        for a in 0..n {
            let k1 = self.grid.wavenumber(a);
            for b in 0..n {
                let c = self.coeffs[a * n + b];
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                let k2 = self.grid.wavenumber(b);
                let phase = k1 as f64 * x[0] + k2 as f64 * x[1];
                acc += c.re * phase.cos() - c.im * phase.sin();
            }
        }
        acc
    }

    /// Periodic 4×4 Lagrange-cubic interpolation of the grid samples.
    pub fn eval_cubic(&self, x: [f64; 2]) -> f64 {
        interpolate_cubic(&self.grid, &self.values, x)
    }
}

/// Fractional Bessel potential `(I - Δ)^{s/2} f`: multiplier `(1 + |k|²)^{s/2}`.
pub fn fractional_bessel(field: &SpectralField, s: f64) -> SpectralField {
    if s == 0.0 {
        return field.clone();
    }
    field.apply_radial(|k2| (1.0 + k2).powf(0.5 * s))
}

/// `‖f‖_{H^s_p} = ‖(I - Δ)^{s/2} f‖_{L^p}`.
///
/// For `p = 2` the norm is the spectral sum `2π (Σ (1+|k|²)^s |f̂(k)|²)^{1/2}`;
/// for other `p` the Bessel-transformed field is integrated on the grid.
pub fn sobolev_norm(field: &SpectralField, s: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Sobolev exponent p must be >= 1, got {p}"
        )));
    }
    if p == 2.0 {
        let n = field.grid().n();
        let mut sum = 0.0;
        for a in 0..n {
            let k1 = field.grid().wavenumber(a) as f64;
            for b in 0..n {
                let k2 = field.grid().wavenumber(b) as f64;
                let w = if s == 0.0 {
                    1.0
                } else {
                    (1.0 + k1 * k1 + k2 * k2).powf(s)
                };
                sum += w * field.coeffs()[a * n + b].norm_sqr();
            }
        }
        return Ok(TWO_PI * sum.sqrt());
    }
    let g = fractional_bessel(field, s);
    Ok(lp_norm(&g, p))
}

/// Grid-quadrature L^p norm `((2π)² mean_j |f(x_j)|^p)^{1/p}`.
pub fn lp_norm(field: &SpectralField, p: f64) -> f64 {
    let vals = field.values();
    let mean = vals.iter().map(|v| v.abs().powf(p)).sum::<f64>() / vals.len() as f64;
    (TORUS_AREA * mean).powf(1.0 / p)
}

pub fn laplacian(field: &SpectralField) -> SpectralField {
    field.apply_radial(|k2| -k2)
}

pub fn gradient(field: &SpectralField) -> VectorField {
    VectorField::new(field.partial(0), field.partial(1))
}

pub fn divergence(vf: &VectorField) -> SpectralField {
    vf.u1.partial(0).add(&vf.u2.partial(1))
}

/// Scalar curl `∂₁u₂ - ∂₂u₁`.
pub fn curl(vf: &VectorField) -> SpectralField {
    vf.u2.partial(0).sub(&vf.u1.partial(1))
}

/// Zero every mode with `max(|k₁|, |k₂|) > fraction · n/2`.
pub fn dealias(field: &SpectralField) -> SpectralField {
    let cutoff = field.grid().dealias_fraction() * field.grid().n() as f64 / 2.0;
    field.apply_multiplier(|k1, k2| {
        if (k1.abs().max(k2.abs()) as f64) > cutoff {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0, 0.0)
        }
    })
}

/// Two-component field on the grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub u1: SpectralField,
    pub u2: SpectralField,
}

impl VectorField {
    pub fn new(u1: SpectralField, u2: SpectralField) -> Self {
        assert_eq!(u1.grid(), u2.grid(), "component grids differ");
        Self { u1, u2 }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::new(SpectralField::zeros(grid), SpectralField::zeros(grid))
    }

    pub fn grid(&self) -> &GridSpec {
        self.u1.grid()
    }

    /// `max_k |k·û(k)| ≤ tol · max_k |û(k)|`.
    pub fn is_divergence_free(&self, rel_tol: f64) -> bool {
        let g = *self.grid();
        let n = g.n();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for a in 0..n {
            let k1 = if g.is_nyquist(a) { 0.0 } else { g.wavenumber(a) as f64 };
            for b in 0..n {
                let k2 = if g.is_nyquist(b) { 0.0 } else { g.wavenumber(b) as f64 };
                let c1 = self.u1.coeffs()[a * n + b];
                let c2 = self.u2.coeffs()[a * n + b];
                worst = worst.max((c1 * k1 + c2 * k2).norm());
                scale = scale.max(c1.norm().max(c2.norm()));
            }
        }
        worst <= rel_tol * scale
    }

    /// `max_j |u(x_j)|`.
    pub fn max_magnitude(&self) -> f64 {
        self.u1
            .values()
            .iter()
            .zip(self.u2.values())
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn eval_cubic(&self, x: [f64; 2]) -> [f64; 2] {
        [self.u1.eval_cubic(x), self.u2.eval_cubic(x)]
    }
}

#[inline]
fn lagrange4(t: f64) -> [f64; 4] {
    // nodes at -1, 0, 1, 2
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Periodic bicubic (tensor Lagrange, 4×4 stencil) interpolation.
pub fn interpolate_cubic(grid: &GridSpec, values: &[f64], x: [f64; 2]) -> f64 {
    let n = grid.n();
    let h = grid.spacing();
    let s1 = (x[0] + PI) / h;
    let s2 = (x[1] + PI) / h;
    let f1 = s1.floor();
    let f2 = s2.floor();
    let w1 = lagrange4(s1 - f1);
    let w2 = lagrange4(s2 - f2);
    let i0 = f1 as i64 - 1;
    let j0 = f2 as i64 - 1;
    let ni = n as i64;
    let mut acc = 0.0;
    for (di, wa) in w1.iter().enumerate() {
        let i = (i0 + di as i64).rem_euclid(ni) as usize;
        let row = &values[i * n..(i + 1) * n];
        let mut r = 0.0;
        for (dj, wb) in w2.iter().enumerate() {
            let j = (j0 + dj as i64).rem_euclid(ni) as usize;
            r += wb * row[j];
        }
        acc += wa * r;
    }
    acc
}

/// Periodic bilinear interpolation; bounded by the extreme grid values.
pub fn interpolate_bilinear(grid: &GridSpec, values: &[f64], x: [f64; 2]) -> f64 {
    let n = grid.n();
    let h = grid.spacing();
    let s1 = (x[0] + PI) / h;
    let s2 = (x[1] + PI) / h;
    let f1 = s1.floor();
    let f2 = s2.floor();
    let t1 = s1 - f1;
    let t2 = s2 - f2;
    let ni = n as i64;
    let i0 = (f1 as i64).rem_euclid(ni) as usize;
    let j0 = (f2 as i64).rem_euclid(ni) as usize;
    let i1 = (i0 + 1) % n;
    let j1 = (j0 + 1) % n;
    let v = |i: usize, j: usize| values[i * n + j];
    (1.0 - t1) * ((1.0 - t2) * v(i0, j0) + t2 * v(i0, j1)) + t1 * ((1.0 - t2) * v(i1, j0) + t2 * v(i1, j1))
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"VXF1";

/// Write fields sharing one grid as a binary snapshot.
///
/// Layout (little endian): magic `VXF1`, `u32` grid size, `u32` field count,
/// `f64` time, `f64` domain lower bound, `f64` domain upper bound, then every
/// field as `n×n` row-major `f64` samples.
pub fn write_snapshot<W: Write>(mut w: W, time: f64, fields: &[&SpectralField]) -> Result<()> {
    let grid = match fields.first() {
        Some(f) => *f.grid(),
        None => return Err(Error::Format("snapshot needs at least one field".into())),
    };
    if fields.iter().any(|f| *f.grid() != grid) {
        return Err(Error::Format("snapshot fields must share a grid".into()));
    }
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(grid.n() as u32).to_le_bytes())?;
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    w.write_all(&(-PI).to_le_bytes())?;
    w.write_all(&PI.to_le_bytes())?;
    for f in fields {
        let mut buf = Vec::with_capacity(8 * grid.len());
        for v in f.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`]; returns the time and fields.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<(f64, Vec<SpectralField>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let lo = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let hi = f64::from_le_bytes(b8);
    if (lo + PI).abs() > 1e-12 || (hi - PI).abs() > 1e-12 {
        return Err(Error::Format(format!("unsupported domain [{lo}, {hi}]")));
    }
    let grid = GridSpec::new(n)?;
    let mut fields = Vec::with_capacity(count);
    let mut raw = vec![0u8; 8 * grid.len()];
    for _ in 0..count {
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        fields.push(SpectralField::from_values(grid, values));
    }
    Ok((time, fields))
}

/// Debug dump of coefficient magnitudes: `k1,k2,abs`.
pub fn write_coeff_csv<W: Write>(mut w: W, field: &SpectralField) -> Result<()> {
    writeln!(w, "k1,k2,abs")?;
    let g = field.grid();
    let n = g.n();
    for a in 0..n {
        for b in 0..n {
            writeln!(
                w,
                "{},{},{:e}",
                g.wavenumber(a),
                g.wavenumber(b),
                field.coeffs()[a * n + b].norm()
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng) -> SpectralField {
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpectralField::from_values(grid, values)
    }

    /// Random real trig polynomial with modes in `|k|_∞ ≤ kmax`.
    fn random_trig(grid: GridSpec, kmax: i64, rng: &mut ChaCha8Rng) -> SpectralField {
        let mut terms = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                terms.push((k1 as f64, k2 as f64, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..TWO_PI)));
            }
        }
        SpectralField::from_fn(grid, |x, y| {
            terms.iter().map(|&(a, b, amp, ph)| amp * (a * x + b * y + ph).cos()).sum()
        })
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn grid_rejects_odd_and_small() {
        assert!(GridSpec::new(3).is_err());
        assert!(GridSpec::new(2).is_err());
        assert!(GridSpec::new(10).is_ok());
        assert!(GridSpec::with_dealias(8, 0.0).is_err());
    }

    #[test]
    fn wrap_stays_in_half_open_interval() {
        for &x in &[PI, -PI, 3.0 * PI, -3.0 * PI, 0.5, 7.0, -7.0] {
            let w = wrap(x);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
        }
        assert_eq!(wrap(PI), -PI);
    }

    #[test]
    fn constant_field_has_single_mode() {
        let g = GridSpec::new(16).unwrap();
        let f = SpectralField::from_fn(g, |_, _| 1.0);
        assert!((f.coeff(0, 0).re - 1.0).abs() < 1e-14);
        let rest = f.coeffs().iter().skip(1).fold(0.0f64, |m, c| m.max(c.norm()));
        assert!(rest < 1e-14);
    }

    #[test]
    fn cosine_coefficients() {
        let g = GridSpec::new(16).unwrap();
        let f = SpectralField::from_fn(g, |x, _| x.cos());
        assert!((f.coeff(1, 0) - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((f.coeff(-1, 0) - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        let mut total = 0.0;
        for c in f.coeffs() {
            total += c.norm();
        }
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn forward_matches_brute_force_dft() {
        let g = GridSpec::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_field(g, &mut rng);
        let n = g.n();
        for a in 0..n {
            for b in 0..n {
                let (k1, k2) = (g.wavenumber(a) as f64, g.wavenumber(b) as f64);
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let [x1, x2] = g.point(i, j);
                        acc += Complex64::from_polar(f.value(i, j), -(k1 * x1 + k2 * x2));
                    }
                }
                acc /= (n * n) as f64;
                assert!((acc - f.coeffs()[a * n + b]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_and_reality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &n in &[8usize, 16, 32] {
            let g = GridSpec::new(n).unwrap();
            for _ in 0..100 {
                let f = random_field(g, &mut rng);
                let back = inverse_transform(&g, f.coeffs());
                let scale = f.max_abs();
                assert!(max_diff(&back, f.values()) <= 1e-12 * scale);
                for a in 1..n {
                    for b in 1..n {
                        let c = f.coeffs()[a * n + b];
                        let d = f.coeffs()[(n - a) * n + (n - b)];
                        assert!((c - d.conj()).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn bessel_examples() {
        let g = GridSpec::new(16).unwrap();
        let f = SpectralField::from_fn(g, |x, _| x.cos());
        let b = fractional_bessel(&f, 2.0);
        assert!(max_diff(b.values(), &f.scale(2.0).values().to_vec()) < 1e-13);
        let id = fractional_bessel(&f, 0.0);
        assert_eq!(id.values(), f.values());

        let f = SpectralField::from_fn(g, |x, y| x.cos() + (2.0 * y).cos());
        let b = fractional_bessel(&f, -2.0);
        assert!((b.coeff(1, 0).re - 0.25).abs() < 1e-14);
        assert!((b.coeff(-1, 0).re - 0.25).abs() < 1e-14);
        assert!((b.coeff(0, 2).re - 0.1).abs() < 1e-14);
        assert!((b.coeff(0, -2).re - 0.1).abs() < 1e-14);
    }

    #[test]
    fn bessel_inverse_pair_on_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GridSpec::new(32).unwrap();
        let f = random_field(g, &mut rng).into_zero_mean();
        let back = fractional_bessel(&fractional_bessel(&f, 1.3), -1.3);
        assert!(back.is_zero_mean());
        assert!(max_diff(back.values(), f.values()) < 1e-10);
        assert_eq!(back.coeffs()[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = GridSpec::new(16).unwrap();
        let f = SpectralField::from_fn(g, |x, _| x.cos());
        let n0 = sobolev_norm(&f, 0.0, 2.0).unwrap();
        assert!((n0 - TWO_PI * 0.5f64.sqrt()).abs() < 1e-12);
        assert!((n0 - 4.4429).abs() < 1e-4);
        let n2 = sobolev_norm(&f, 2.0, 2.0).unwrap();
        assert!((n2 - 2.0 * n0).abs() < 1e-12);
        assert!(sobolev_norm(&f, 0.0, 0.5).is_err());
        // quadrature route agrees with the spectral one at p=2
        let q = lp_norm(&f, 2.0);
        assert!((q - n0).abs() < 1e-12);
    }

    #[test]
    fn parseval_on_random_trig_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GridSpec::new(32).unwrap();
        for _ in 0..20 {
            let f = random_trig(g, 4, &mut rng);
            let spectral = TWO_PI * f.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let grid_l2 = lp_norm(&f, 2.0);
            assert!((sobolev_norm(&f, 0.0, 2.0).unwrap() - spectral).abs() <= 1e-12 * spectral);
            assert!((grid_l2 - spectral).abs() <= 1e-12 * spectral);
        }
    }

    #[test]
    fn fractional_lp_norm_matches_refined_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = GridSpec::new(32).unwrap();
        let fine = GridSpec::new(64).unwrap();
        let mut terms = Vec::new();
        for _ in 0..6 {
            terms.push((
                rng.gen_range(-3i64..=3) as f64,
                rng.gen_range(-3i64..=3) as f64,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..TWO_PI),
            ));
        }
        // oracle: apply the multiplier term by term and integrate on the finer grid
        let bessel_term = |a: f64, b: f64| (1.0 + a * a + b * b).powf(0.35);
        let oracle_field = SpectralField::from_fn(fine, |x, y| {
            terms
                .iter()
                .map(|&(a, b, amp, ph)| bessel_term(a, b) * amp * (a * x + b * y + ph).cos())
                .sum()
        });
        let oracle = lp_norm(&oracle_field, 4.0);
        let f = SpectralField::from_fn(g, |x, y| {
            terms.iter().map(|&(a, b, amp, ph)| amp * (a * x + b * y + ph).cos()).sum()
        });
        let got = sobolev_norm(&f, 0.7, 4.0).unwrap();
        assert!((got - oracle).abs() <= 1e-6 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn differential_operators() {
        let g = GridSpec::new(32).unwrap();
        let f = SpectralField::from_fn(g, |x, _| x.cos());
        let grad = gradient(&f);
        let expected = SpectralField::from_fn(g, |x, _| -x.sin());
        assert!(max_diff(grad.u1.values(), expected.values()) < 1e-13);
        assert!(grad.u2.max_abs() < 1e-13);

        let f = SpectralField::from_fn(g, |x, y| (x + y).cos());
        let lap = laplacian(&f);
        let expected = f.scale(-2.0);
        assert!(max_diff(lap.values(), expected.values()) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = dealias(&random_field(g, &mut rng));
        let a = divergence(&gradient(&f));
        let b = laplacian(&f);
        let scale = b.max_abs();
        assert!(max_diff(a.values(), b.values()) <= 1e-12 * scale);
    }

    #[test]
    fn dealias_examples() {
        let g = GridSpec::new(16).unwrap();
        let low = SpectralField::from_fn(g, |x, y| (2.0 * x).cos() + (4.0 * y).sin() + (x - 3.0 * y).cos());
        let d = dealias(&low);
        assert!(max_diff(d.values(), low.values()) < 1e-13);

        let high = SpectralField::from_fn(g, |x, y| (7.0 * x).cos() + y.cos());
        let d = dealias(&high);
        assert!(d.coeff(7, 0).norm() < 1e-15);
        assert!(d.coeff(-7, 0).norm() < 1e-15);
        assert!((d.coeff(0, 1).re - 0.5).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(g, &mut rng);
        let before = sobolev_norm(&f, 0.0, 2.0).unwrap();
        let after = sobolev_norm(&dealias(&f), 0.0, 2.0).unwrap();
        assert!(after <= before);
    }

    #[test]
    fn cubic_interpolation_reproduces_smooth_field() {
        let g = GridSpec::new(64).unwrap();
        let f = SpectralField::from_fn(g, |x, y| x.sin() * (2.0 * y).cos());
        for p in [[0.1f64, 0.2], [-3.1, 3.0], [1.234, -2.5]] {
            let exact = p[0].sin() * (2.0 * p[1]).cos();
            assert!((f.eval_cubic(p) - exact).abs() < 1e-4);
            assert!((f.eval_spectral(p) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let g = GridSpec::new(8).unwrap();
        let f = SpectralField::from_fn(g, |x, y| x.cos() * y.sin());
        let h = f.scale(3.0);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, 0.25, &[&f, &h]).unwrap();
        assert_eq!(&buf[..4], b"VXF1");
        assert_eq!(buf.len(), 4 + 4 + 4 + 24 + 2 * 8 * 64);
        let (t, fields) = read_snapshot(&buf[..]).unwrap();
        assert_eq!(t, 0.25);
        assert_eq!(fields[0].values(), f.values());
        assert_eq!(fields[1].values(), h.values());
        assert!(read_snapshot(&b"NOPE0000"[..]).is_err());
    }

    #[test]
    fn coeff_csv_has_header_and_rows() {
        let g = GridSpec::new(4).unwrap();
        let f = SpectralField::from_fn(g, |x, _| x.cos());
        let mut buf = Vec::new();
        write_coeff_csv(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k1,k2,abs\n"));
        assert_eq!(text.lines().count(), 17);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn operations_preserve_reality(seed in any::<u64>(), s in -2.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = GridSpec::new(16).unwrap();
                let f = random_field(g, &mut rng);
                for out in [fractional_bessel(&f, s), laplacian(&f), dealias(&f), gradient(&f).u1, gradient(&f).u2] {
                    // re-transforming the real samples must give back the stored coefficients
                    let again = forward_transform(&g, out.values());
                    let err = again.iter().zip(out.coeffs()).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
                    prop_assert!(err <= 1e-12 * out.max_coeff().max(1.0));
                }
            }
        }
    }
}
