//! Mollifier `V^N(x) = N^{2β} V(N^β x)`, deposition of weighted particles,
//! and sampling of initial vortex positions from the signed parts of `ω₀`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{interpolate_bilinear, min_image, sobolev_norm, GridSpec, SpectralField, TORUS_AREA, TWO_PI};

/// Radius of the unscaled bump.
pub const BUMP_RADIUS: f64 = PI / 2.0;

fn bump_profile(r_sq: f64) -> f64 {
    let d = PI * PI - 4.0 * r_sq;
    if d <= 0.0 {
        0.0
    } else {
        (-1.0 / d).exp()
    }
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Normalization constant `c` of the bump `V(x) = c·exp(-1/(π² - 4|x|²))`.
pub fn bump_constant() -> f64 {
    use std::sync::OnceLock;
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let mass = adaptive_simpson(|r| TWO_PI * r * bump_profile(r * r), 0.0, BUMP_RADIUS, 1e-13);
        1.0 / mass
    })
}

/// Unscaled bump `V`, supported in `|x| < π/2` and integrating to one.
pub fn bump_eval(x: [f64; 2]) -> f64 {
    let x = min_image(x, [0.0, 0.0]);
    bump_constant() * bump_profile(x[0] * x[0] + x[1] * x[1])
}

/// How grid samples of `V^N` are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DepositNormalization {
    /// Use `V^N(x_j)` as is; the grid mass is only approximately one.
    Exact,
    /// Rescale each stencil so its grid mass is exactly one.
    #[default]
    DiscreteMass,
}

/// The scaled approximation of the identity `V^N`.
#[derive(Debug, Clone, Copy)]
pub struct Mollifier {
    beta: f64,
    n: usize,
    scale: f64,
    normalization: DepositNormalization,
}

impl Mollifier {
    pub fn new(beta: f64, n: usize) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("particle count must be positive".into()));
        }
        Ok(Self {
            beta,
            n,
            scale: (n as f64).powf(beta),
            normalization: DepositNormalization::default(),
        })
    }

    pub fn with_normalization(mut self, normalization: DepositNormalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn particle_count(&self) -> usize {
        self.n
    }

    /// `N^β`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn normalization(&self) -> DepositNormalization {
        self.normalization
    }

    /// `π / (2 N^β)`.
    pub fn support_radius(&self) -> f64 {
        BUMP_RADIUS / self.scale
    }

    pub fn constant(&self) -> f64 {
        bump_constant()
    }

    #[inline]
    fn eval_sq(&self, r_sq: f64) -> f64 {
        self.scale * self.scale * bump_constant() * bump_profile(r_sq * self.scale * self.scale)
    }

    /// `V^N(x)` with `x` taken modulo the torus.
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let x = min_image(x, [0.0, 0.0]);
        self.eval_sq(x[0] * x[0] + x[1] * x[1])
    }

    /// Grid samples of `V^N` centred at the origin, normalized per
    /// [`DepositNormalization`].
    pub fn sample_on_grid(&self, grid: &GridSpec) -> SpectralField {
        let raw = SpectralField::from_fn(*grid, |x, y| self.eval([x, y]));
        match self.normalization {
            DepositNormalization::Exact => raw,
            DepositNormalization::DiscreteMass => {
                let mass = raw.integral();
                raw.scale(1.0 / mass)
            }
        }
    }

    fn check_resolution(&self, grid: &GridSpec) -> Result<()> {
        if self.support_radius() < grid.spacing() {
            return Err(Error::Undersampled(format!(
                "support radius {:.4} is below the grid spacing {:.4}",
                self.support_radius(),
                grid.spacing()
            )));
        }
        Ok(())
    }
}

/// Number of independent accumulation buffers used by [`deposit`]; fixed so
/// the floating-point reduction order does not depend on the thread count.
const DEPOSIT_CHUNKS: usize = 16;

fn deposit_one(m: &Mollifier, grid: &GridSpec, x: [f64; 2], weight: f64, out: &mut [f64], stencil: &mut Vec<(usize, f64)>) {
    let n = grid.n();
    let h = grid.spacing();
    let radius = m.support_radius();
    let r_sq_max = radius * radius;
    let lo1 = ((x[0] - radius + PI) / h).floor() as i64;
    let hi1 = ((x[0] + radius + PI) / h).ceil() as i64;
    let lo2 = ((x[1] - radius + PI) / h).floor() as i64;
    let hi2 = ((x[1] + radius + PI) / h).ceil() as i64;
    stencil.clear();
    let mut mass = 0.0;
    for i in lo1..=hi1 {
        let dx = -PI + i as f64 * h - x[0];
        let dx2 = dx * dx;
        if dx2 >= r_sq_max {
            continue;
        }
        let ii = i.rem_euclid(n as i64) as usize;
        for j in lo2..=hi2 {
            let dy = -PI + j as f64 * h - x[1];
            let r_sq = dx2 + dy * dy;
            if r_sq >= r_sq_max {
                continue;
            }
            let v = m.eval_sq(r_sq);
            if v > 0.0 {
                let jj = j.rem_euclid(n as i64) as usize;
                stencil.push((ii * n + jj, v));
                mass += v;
            }
        }
    }
    let factor = match m.normalization {
        DepositNormalization::Exact => weight,
        DepositNormalization::DiscreteMass => weight / (mass * grid.cell_area()),
    };
    for &(idx, v) in stencil.iter() {
        out[idx] += factor * v;
    }
}

/// `g = V^N * μ` on the grid, where `μ = (gamma / len) Σ_i δ_{X_i}`.
///
/// Positions must already be wrapped into `[-π, π)²`.
pub fn deposit(positions: &[[f64; 2]], gamma: f64, mollifier: &Mollifier, grid: &GridSpec) -> Result<SpectralField> {
    mollifier.check_resolution(grid)?;
    let len = grid.len();
    if positions.is_empty() {
        return Ok(SpectralField::zeros(*grid));
    }
    let weight = gamma / positions.len() as f64;
    let chunk = positions.len().div_ceil(DEPOSIT_CHUNKS);
    let partials: Vec<Vec<f64>> = positions
        .par_chunks(chunk)
        .map(|ps| {
            let mut buf = vec![0.0; len];
            let mut stencil = Vec::new();
            for &x in ps {
                deposit_one(mollifier, grid, x, weight, &mut buf, &mut stencil);
            }
            buf
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(SpectralField::from_values(*grid, total))
}

/// `‖V^N * f - f‖_∞` on the grid, with the convolution done spectrally.
pub fn approx_identity_check(mollifier: &Mollifier, f: &SpectralField) -> f64 {
    let grid = *f.grid();
    let v = mollifier.sample_on_grid(&grid);
    let coeffs = f
        .coeffs()
        .iter()
        .zip(v.coeffs())
        .map(|(a, b)| a * b * TORUS_AREA)
        .collect();
    let conv = SpectralField::from_coeffs(grid, coeffs);
    conv.values()
        .iter()
        .zip(f.values())
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Analytic initial vorticity profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "preset")]
pub enum InitialPreset {
    /// `cos(x₁)`
    Cosine,
    /// `cos(x₁) + cos(2x₂)`
    CosPair,
    /// Opposite-signed Gaussian blobs at `(±d, 0)` with width `s`.
    TwoVortex { separation: f64, width: f64 },
    /// `ω₀ ≡ 0`
    Zero,
}

impl InitialPreset {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match *self {
            InitialPreset::Cosine => x[0].cos(),
            InitialPreset::CosPair => x[0].cos() + (2.0 * x[1]).cos(),
            InitialPreset::TwoVortex { separation, width } => {
                let blob = |c: [f64; 2]| {
                    let d = min_image(x, c);
                    (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp()
                };
                blob([0.5 * separation, 0.0]) - blob([-0.5 * separation, 0.0])
            }
            InitialPreset::Zero => 0.0,
        }
    }

    /// Upper bound of `|ω₀|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            InitialPreset::Cosine => 1.0,
            InitialPreset::CosPair => 2.0,
            InitialPreset::TwoVortex { .. } => 1.0,
            InitialPreset::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Profile {
    Analytic(InitialPreset),
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    Plus,
    Minus,
}

impl Species {
    pub fn sign(self) -> f64 {
        match self {
            Species::Plus => 1.0,
            Species::Minus => -1.0,
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Species::Plus => 0,
            Species::Minus => 1,
        }
    }
}

/// `ω₀` with its positive and negative parts and their masses `Γ±`.
#[derive(Debug, Clone)]
pub struct SignedInitialData {
    profile: Profile,
    pub omega0: SpectralField,
    pub omega0_plus: SpectralField,
    pub omega0_minus: SpectralField,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl SignedInitialData {
    pub fn from_preset(preset: InitialPreset, grid: GridSpec) -> Result<Self> {
        let omega0 = SpectralField::from_fn(grid, |x, y| preset.eval([x, y]));
        Self::build(Profile::Analytic(preset), omega0)
    }

    /// Initial data given as grid samples (e.g. read from a snapshot).
    pub fn from_field(omega0: SpectralField) -> Result<Self> {
        Self::build(Profile::Grid, omega0)
    }

    fn build(profile: Profile, omega0: SpectralField) -> Result<Self> {
        let omega0 = omega0.assert_zero_mean(1e-8)?;
        let omega0_plus = omega0.map_values(|v| v.max(0.0));
        let omega0_minus = omega0.map_values(|v| (-v).max(0.0));
        let gamma_plus = omega0_plus.integral();
        let gamma_minus = omega0_minus.integral();
        Ok(Self {
            profile,
            omega0,
            omega0_plus,
            omega0_minus,
            gamma_plus,
            gamma_minus,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.omega0.grid()
    }

    pub fn gamma(&self, species: Species) -> f64 {
        match species {
            Species::Plus => self.gamma_plus,
            Species::Minus => self.gamma_minus,
        }
    }

    /// `ω₀^±(x)` as seen by the sampler.
    pub fn density(&self, species: Species, x: [f64; 2]) -> f64 {
        match &self.profile {
            Profile::Analytic(p) => (species.sign() * p.eval(x)).max(0.0),
            Profile::Grid => {
                let f = match species {
                    Species::Plus => &self.omega0_plus,
                    Species::Minus => &self.omega0_minus,
                };
                interpolate_bilinear(f.grid(), f.values(), x)
            }
        }
    }

    /// Envelope for rejection sampling: an upper bound of `ω₀^±`.
    pub fn envelope(&self, species: Species) -> f64 {
        match &self.profile {
            Profile::Analytic(p) => p.sup_bound(),
            Profile::Grid => match species {
                Species::Plus => self.omega0_plus.max_abs(),
                Species::Minus => self.omega0_minus.max_abs(),
            },
        }
    }
}

/// Result of rejection sampling one species.
#[derive(Debug, Clone)]
pub struct SampledSpecies {
    pub positions: Vec<[f64; 2]>,
    pub proposals: u64,
}

impl SampledSpecies {
    pub fn acceptance_rate(&self) -> f64 {
        self.positions.len() as f64 / self.proposals as f64
    }
}

/// Draw `n` i.i.d. positions with law `ω₀^±(x)/Γ± dx` by rejection from the
/// uniform distribution. Deterministic in `seed`.
pub fn sample_species(data: &SignedInitialData, species: Species, n: usize, seed: u64) -> Result<SampledSpecies> {
    let envelope = data.envelope(species);
    if !(data.gamma(species) > 0.0 && envelope > 0.0) {
        return Err(Error::EmptySpecies(format!("{species:?} part of the initial vorticity vanishes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(species.index() + 1);
    let mut positions = Vec::with_capacity(n);
    let mut proposals = 0u64;
    while positions.len() < n {
        proposals += 1;
        let x = [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)];
        let u: f64 = rng.gen();
        if u * envelope < data.density(species, x) {
            positions.push(x);
        }
    }
    Ok(SampledSpecies { positions, proposals })
}

/// One row of a [`moment_bound_probe`] table.
#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentProbe {
    pub rows: Vec<MomentRow>,
    /// Least-squares slope of `log mean` against `log N`.
    pub slope: f64,
    /// Set when the slope exceeds [`MOMENT_SLOPE_LIMIT`].
    pub growth_flagged: bool,
    /// Set when `beta` violates `β < 1/(4 + 2α - 4/p)`.
    pub beta_violation: bool,
}

pub const MOMENT_SLOPE_LIMIT: f64 = 0.1;

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[derive(Debug, Clone, Copy)]
pub struct MomentProbeParams {
    pub beta: f64,
    pub q: f64,
    pub alpha: f64,
    pub p: f64,
    pub replicas: usize,
    pub seed: u64,
}

/// Monte-Carlo estimate of `E‖V^N * μ₀^{N,+}‖^q_{H^α_p}` along a ladder of `N`.
pub fn moment_bound_probe(data: &SignedInitialData, ladder: &[usize], params: MomentProbeParams) -> Result<MomentProbe> {
    let MomentProbeParams { beta, q, alpha, p, replicas, seed } = params;
    if !(alpha > 2.0 / p && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (2/p, 1), got alpha={alpha}, p={p}")));
    }
    if !(q > 0.0) || replicas == 0 {
        return Err(Error::InvalidArgument("q must be positive and replicas nonzero".into()));
    }
    let grid = *data.grid();
    let mut rows = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let m = Mollifier::new(beta, n)?;
        let samples: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let s = sample_species(data, Species::Plus, n, seed ^ ((n as u64) << 32) ^ r as u64)?;
                let g = deposit(&s.positions, data.gamma_plus, &m, &grid)?;
                Ok(sobolev_norm(&g, alpha, p)?.powf(q))
            })
            .collect::<Result<_>>()?;
        let mean = samples.iter().sum::<f64>() / replicas as f64;
        let var = if replicas > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (replicas - 1) as f64
        } else {
            0.0
        };
        rows.push(MomentRow {
            n,
            mean,
            std_error: (var / replicas as f64).sqrt(),
        });
    }
    let slope = if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        log_log_slope(&x, &y)
    } else {
        0.0
    };
    Ok(MomentProbe {
        rows,
        slope,
        growth_flagged: slope > MOMENT_SLOPE_LIMIT,
        beta_violation: beta >= 1.0 / (4.0 + 2.0 * alpha - 4.0 / p),
    })
}
