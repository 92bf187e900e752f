//! Biot–Savart law on the torus: `u = K * ω` with `K = ∇^⊥ Δ^{-1}`.
//!
//! The Fourier multiplier is `û(k) = i (k₂, -k₁) / |k|² · ω̂(k)`, which gives
//! `∂₁u₂ - ∂₂u₁ = ω` and `div u = 0` for zero-mean `ω`. Derivatives treat the
//! unpaired Nyquist wavenumber `-n/2` as zero, so the identities hold for every
//! mode except the three that have no resolvable derivative, `(-n/2, 0)`,
//! `(0, -n/2)` and `(-n/2, -n/2)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mollifier::Mollifier;
use crate::torus::{min_image, GridSpec, SpectralField, VectorField, TORUS_AREA};

/// Relative tolerance on `|ω̂(0)|` accepted as zero mean.
pub const ZERO_MEAN_TOL: f64 = 1e-10;

#[inline]
fn resolved(grid: &GridSpec, idx: usize) -> f64 {
    if idx == grid.n() / 2 {
        0.0
    } else {
        grid.wavenumber(idx) as f64
    }
}

/// Velocity multiplier at FFT indices `(a, b)`.
#[inline]
pub fn velocity_multiplier(grid: &GridSpec, a: usize, b: usize) -> [Complex64; 2] {
    let k1 = resolved(grid, a);
    let k2 = resolved(grid, b);
    let k_sq = k1 * k1 + k2 * k2;
    if k_sq == 0.0 {
        return [Complex64::new(0.0, 0.0); 2];
    }
    [Complex64::new(0.0, k2 / k_sq), Complex64::new(0.0, -k1 / k_sq)]
}

/// Multiply a coefficient table by the velocity multiplier.
pub(crate) fn velocity_coeffs(grid: &GridSpec, omega_hat: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = grid.n();
    let pairs: Vec<(Complex64, Complex64)> = omega_hat
        .par_iter()
        .enumerate()
        .map(|(idx, w)| {
            let m = velocity_multiplier(grid, idx / n, idx % n);
            (m[0] * w, m[1] * w)
        })
        .collect();
    pairs.into_iter().unzip()
}

/// `u = K * ω`. Rejects input whose mean exceeds [`ZERO_MEAN_TOL`].
pub fn velocity_from_vorticity(omega: &SpectralField) -> Result<VectorField> {
    let c0 = omega.coeffs()[0].norm();
    if c0 > ZERO_MEAN_TOL * omega.max_coeff() && c0 > 1e-300 {
        return Err(Error::NotZeroMean(c0));
    }
    Ok(velocity_unchecked(omega))
}

/// `u = K * ω` ignoring the mean of `ω` (the multiplier vanishes at `k = 0`).
pub fn velocity_unchecked(omega: &SpectralField) -> VectorField {
    let grid = *omega.grid();
    let (c1, c2) = velocity_coeffs(&grid, omega.coeffs());
    VectorField::new(
        SpectralField::from_coeffs(grid, c1).into_zero_mean(),
        SpectralField::from_coeffs(grid, c2).into_zero_mean(),
    )
}

/// Fejér-smoothed partial sum of the periodic Green function
/// `G(x) = (2π)⁻¹ Σ_{k≠0} e^{ik·x} / |k|²` over `0 < max(|k₁|,|k₂|) ≤ cutoff`.
pub fn green_function_eval(x: [f64; 2], cutoff: usize) -> Result<f64> {
    let x = min_image(x, [0.0, 0.0]);
    if x[0].hypot(x[1]) < 1e-8 {
        return Err(Error::InvalidArgument(
            "Green function is singular at the lattice origin".into(),
        ));
    }
    if cutoff < 8 {
        return Err(Error::InvalidArgument(format!(
            "Green function cutoff must be >= 8, got {cutoff}"
        )));
    }
    let l = cutoff as i64;
    let denom = (cutoff + 1) as f64;
    // cos(k·x) summed over ±k; restrict to a half lattice and double
    let mut sum = 0.0;
    for k1 in 0..=l {
        let w1 = 1.0 - k1 as f64 / denom;
        let k2_lo = if k1 == 0 { 1 } else { -l };
        for k2 in k2_lo..=l {
            let w2 = 1.0 - k2.abs() as f64 / denom;
            let k_sq = (k1 * k1 + k2 * k2) as f64;
            sum += w1 * w2 * (k1 as f64 * x[0] + k2 as f64 * x[1]).cos() / k_sq;
        }
    }
    Ok(2.0 * sum / (2.0 * PI))
}

/// Grid samples of `V^N * K`, interpolated bicubically.
#[derive(Debug, Clone)]
pub struct PointwiseKernel {
    grid: GridSpec,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl PointwiseKernel {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `(V^N * K)(x)` with `x` taken modulo the torus.
    #[inline]
    pub fn evaluate(&self, x: [f64; 2]) -> [f64; 2] {
        let x = min_image(x, [0.0, 0.0]);
        [
            crate::torus::interpolate_cubic(&self.grid, &self.u1, x),
            crate::torus::interpolate_cubic(&self.grid, &self.u2, x),
        ]
    }

    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.u1, &self.u2)
    }
}

#[derive(Debug, Clone)]
pub struct KernelTable {
    grid: GridSpec,
    u_multiplier: Vec<[Complex64; 2]>,
    pointwise: Option<PointwiseKernel>,
}

impl KernelTable {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n();
        let u_multiplier = (0..grid.len())
            .map(|idx| velocity_multiplier(&grid, idx / n, idx % n))
            .collect();
        Self {
            grid,
            u_multiplier,
            pointwise: None,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn multiplier(&self, k1: i64, k2: i64) -> Option<[Complex64; 2]> {
        let a = self.grid.index_of(k1)?;
        let b = self.grid.index_of(k2)?;
        Some(self.u_multiplier[a * self.grid.n() + b])
    }

    pub fn pointwise(&self) -> Option<&PointwiseKernel> {
        self.pointwise.as_ref()
    }
}

/// Minimum number of grid cells across the mollifier support for kernel tables.
pub const MIN_KERNEL_CELLS: f64 = 4.0;

/// Coefficients of `V^N * K` on `grid`, built from the grid-sampled mollifier.
pub fn mollified_kernel_coeffs(grid: &GridSpec, mollifier: &Mollifier) -> (Vec<Complex64>, Vec<Complex64>) {
    let v = mollifier.sample_on_grid(grid);
    // (V*K)^ = (2π)² V̂ K̂ and K̂ = multiplier / (2π)²
    velocity_coeffs(grid, v.coeffs())
}

/// Kernel table with precomputed pointwise samples of `V^N * K`.
pub fn mollified_kernel_table(grid: GridSpec, mollifier: &Mollifier) -> Result<KernelTable> {
    let cells = mollifier.support_radius() / grid.spacing();
    if cells <= MIN_KERNEL_CELLS {
        return Err(Error::Undersampled(format!(
            "support radius {:.4} spans {cells:.2} cells, need more than {MIN_KERNEL_CELLS}",
            mollifier.support_radius()
        )));
    }
    let (c1, c2) = mollified_kernel_coeffs(&grid, mollifier);
    let u1 = crate::torus::inverse_transform(&grid, &c1);
    let u2 = crate::torus::inverse_transform(&grid, &c2);
    let mut table = KernelTable::new(grid);
    table.pointwise = Some(PointwiseKernel { grid, u1, u2 });
    Ok(table)
}

/// Samples of the bare kernel `K` (`K̂ = multiplier / (2π)²`) on `grid`.
/// Spectrally truncated, so only meaningful a few cells away from the origin.
pub fn kernel_samples(grid: &GridSpec) -> VectorField {
    let delta = vec![Complex64::new(1.0 / TORUS_AREA, 0.0); grid.len()];
    let (c1, c2) = velocity_coeffs(grid, &delta);
    VectorField::new(
        SpectralField::from_coeffs(*grid, c1),
        SpectralField::from_coeffs(*grid, c2),
    )
}

/// `‖K‖_{L¹}` estimated from grid samples of `K` on `grid`.
pub fn kernel_l1_estimate(grid: &GridSpec) -> f64 {
    let k = kernel_samples(grid);
    k.u1
        .values()
        .iter()
        .zip(k.u2.values())
        .map(|(a, b)| a.hypot(*b))
        .sum::<f64>()
        * grid.cell_area()
}
