//! Transport noise: a finite family of divergence-free trigonometric fields
//! `σ_k`, their Itô correction fields, and reproducible Wiener increments.
//!
//! Increments are drawn from ChaCha8 keyed on `(master_seed, path_index)`
//! with one stream per entity (stream 0 for the common `W^k`, one stream per
//! particle for `B^{i,±}`) and the word position set from the step index, so
//! every increment is a pure function of its key.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mollifier::Species;
use crate::torus::{GridSpec, SpectralField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Cos,
    Sin,
}

/// `amp · cos(m·x)` or `amp · sin(m·x)`; divergence-free when `amp ⊥ m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub m: [i64; 2],
    pub phase: Phase,
    pub amp: [f64; 2],
}

impl TrigTerm {
    #[inline]
    fn angle(&self, x: [f64; 2]) -> f64 {
        self.m[0] as f64 * x[0] + self.m[1] as f64 * x[1]
    }

    /// Profile and its derivative with respect to the angle.
    #[inline]
    fn profile(&self, x: [f64; 2]) -> (f64, f64) {
        let (s, c) = self.angle(x).sin_cos();
        match self.phase {
            Phase::Cos => (c, -s),
            Phase::Sin => (s, c),
        }
    }

    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let (p, _) = self.profile(x);
        [self.amp[0] * p, self.amp[1] * p]
    }
}

/// One noise field `σ_k`, a finite sum of trig terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    pub terms: Vec<TrigTerm>,
}

impl NoiseField {
    pub fn single(term: TrigTerm) -> Self {
        Self { terms: vec![term] }
    }

    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for t in &self.terms {
            let w = t.value(x);
            v[0] += w[0];
            v[1] += w[1];
        }
        v
    }

    /// `J[a][b] = ∂_b σ^a`.
    pub fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let mut j = [[0.0; 2]; 2];
        for t in &self.terms {
            let (_, dp) = t.profile(x);
            for a in 0..2 {
                for b in 0..2 {
                    j[a][b] += t.amp[a] * dp * t.m[b] as f64;
                }
            }
        }
        j
    }

    /// `(σ·∇σ)^a = σ^b ∂_b σ^a`.
    pub fn self_advection(&self, x: [f64; 2]) -> [f64; 2] {
        let s = self.value(x);
        let j = self.jacobian(x);
        [
            s[0] * j[0][0] + s[1] * j[0][1],
            s[0] * j[1][0] + s[1] * j[1][1],
        ]
    }

    pub fn on_grid(&self, grid: &GridSpec) -> VectorField {
        VectorField::new(
            SpectralField::from_fn(*grid, |x, y| self.value([x, y])[0]),
            SpectralField::from_fn(*grid, |x, y| self.value([x, y])[1]),
        )
    }

    /// `sup_x |σ(x)|²`, i.e. `‖σσᵀ‖_∞`, sampled on a 128² grid.
    pub fn sup_outer_norm(&self) -> f64 {
        let g = GridSpec::new(128).expect("valid grid");
        let mut best: f64 = 0.0;
        for i in 0..g.n() {
            for j in 0..g.n() {
                let v = self.value(g.point(i, j));
                best = best.max(v[0] * v[0] + v[1] * v[1]);
            }
        }
        best
    }
}

/// Entry of a user mode list: `a (m^⊥/|m|) cos(m·x)` or `… sin(m·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub m: [i64; 2],
    pub phase: Phase,
    pub amplitude: f64,
}

/// Named noise families accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "preset")]
pub enum NoisePreset {
    /// `σ ≡ 0`, the deterministic case.
    Off,
    /// `a (0,1) cos(x₁)`: the mode `m = (1,0)` with cosine phase.
    Single { amplitude: f64 },
    /// Every mode with `|m|` rounding to `radius`, both phases, one of each `±m` pair.
    IsotropicShell { radius: f64, amplitude: f64 },
    /// Spatially constant field `σ ≡ c`.
    Constant { c: [f64; 2] },
    /// `a (sin x₂, 0)`.
    Sheared { amplitude: f64 },
    /// `a (sin x₂, sin x₁)`, the sum of two overlapping modes with nonzero `σ·∇σ`.
    Composite { amplitude: f64 },
    /// Explicit list.
    Modes { modes: Vec<ModeSpec> },
}

/// Finite family of noise fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseModel {
    fields: Vec<NoiseField>,
}

/// Build the model `{a (m^⊥/|m|) cos/sin(m·x)}` from a mode list.
pub fn build_noise(modes: &[ModeSpec]) -> Result<NoiseModel> {
    let mut seen = HashSet::new();
    let mut fields = Vec::with_capacity(modes.len());
    for spec in modes {
        if spec.m == [0, 0] {
            return Err(Error::InvalidArgument("noise wavenumber must be nonzero".into()));
        }
        if !(spec.amplitude > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise amplitude must be positive, got {}",
                spec.amplitude
            )));
        }
        if !seen.insert((spec.m, spec.phase)) {
            return Err(Error::DuplicateMode(format!("{:?} {:?}", spec.m, spec.phase)));
        }
        let norm = ((spec.m[0] * spec.m[0] + spec.m[1] * spec.m[1]) as f64).sqrt();
        let perp = [-spec.m[1] as f64 / norm, spec.m[0] as f64 / norm];
        fields.push(NoiseField::single(TrigTerm {
            m: spec.m,
            phase: spec.phase,
            amp: [spec.amplitude * perp[0], spec.amplitude * perp[1]],
        }));
    }
    Ok(NoiseModel { fields })
}

impl NoiseModel {
    pub fn off() -> Self {
        Self { fields: Vec::new() }
    }

    pub fn from_fields(fields: Vec<NoiseField>) -> Self {
        Self { fields }
    }

    pub fn from_preset(preset: &NoisePreset) -> Result<Self> {
        match preset {
            NoisePreset::Off => Ok(Self::off()),
            NoisePreset::Single { amplitude } => build_noise(&[ModeSpec {
                m: [1, 0],
                phase: Phase::Cos,
                amplitude: *amplitude,
            }]),
            NoisePreset::IsotropicShell { radius, amplitude } => {
                let r = radius.ceil() as i64 + 1;
                let mut modes = Vec::new();
                for m1 in -r..=r {
                    for m2 in -r..=r {
                        let len = ((m1 * m1 + m2 * m2) as f64).sqrt();
                        let upper_half = m2 > 0 || (m2 == 0 && m1 > 0);
                        if upper_half && (len - radius).abs() < 0.5 {
                            for phase in [Phase::Cos, Phase::Sin] {
                                modes.push(ModeSpec { m: [m1, m2], phase, amplitude: *amplitude });
                            }
                        }
                    }
                }
                if modes.is_empty() {
                    return Err(Error::InvalidArgument(format!("empty noise shell at radius {radius}")));
                }
                build_noise(&modes)
            }
            NoisePreset::Constant { c } => Ok(Self::from_fields(vec![NoiseField::single(TrigTerm {
                m: [0, 0],
                phase: Phase::Cos,
                amp: *c,
            })])),
            NoisePreset::Sheared { amplitude } => Ok(Self::from_fields(vec![NoiseField::single(TrigTerm {
                m: [0, 1],
                phase: Phase::Sin,
                amp: [*amplitude, 0.0],
            })])),
            NoisePreset::Composite { amplitude } => Ok(Self::from_fields(vec![NoiseField {
                terms: vec![
                    TrigTerm { m: [0, 1], phase: Phase::Sin, amp: [*amplitude, 0.0] },
                    TrigTerm { m: [1, 0], phase: Phase::Sin, amp: [0.0, *amplitude] },
                ],
            }])),
            NoisePreset::Modes { modes } => build_noise(modes),
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[NoiseField] {
        &self.fields
    }

    /// `Σ_k ‖σ_k σ_kᵀ‖_∞`.
    pub fn sum_sigma_sq(&self) -> f64 {
        self.fields.iter().map(NoiseField::sup_outer_norm).sum()
    }

    /// Warning text when the noise budget exceeds `c_nu`.
    pub fn budget_warning(&self, c_nu: f64) -> Option<String> {
        let s = self.sum_sigma_sq();
        (s > c_nu).then(|| format!("noise budget Σ‖σ_kσ_kᵀ‖_∞ = {s:.4} exceeds C_ν = {c_nu}"))
    }

    /// `Σ_k (σ_k·∇σ_k)(x)`.
    pub fn self_advection(&self, x: [f64; 2]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for f in &self.fields {
            let w = f.self_advection(x);
            v[0] += w[0];
            v[1] += w[1];
        }
        v
    }

    /// `Σ_k σ_k(x) ΔW^k`.
    pub fn displacement(&self, x: [f64; 2], dw: &[f64]) -> [f64; 2] {
        debug_assert_eq!(dw.len(), self.fields.len());
        let mut v = [0.0; 2];
        for (f, w) in self.fields.iter().zip(dw) {
            let s = f.value(x);
            v[0] += s[0] * w;
            v[1] += s[1] * w;
        }
        v
    }

    pub fn fields_on_grid(&self, grid: &GridSpec) -> Vec<VectorField> {
        self.fields.iter().map(|f| f.on_grid(grid)).collect()
    }
}

/// Grid fields entering the Itô form of the transport noise.
#[derive(Debug, Clone)]
pub struct ItoCorrection {
    /// `Σ_k σ_k·∇σ_k`, assembled with spectral derivatives.
    pub drift: VectorField,
    /// `Σ_k σ_k σ_kᵀ` as `(a₁₁, a₁₂, a₂₂)`.
    pub tensor: [SpectralField; 3],
}

/// Itô–Stratonovich correction fields of `model` on `grid`.
pub fn ito_stratonovich_drift(model: &NoiseModel, grid: &GridSpec) -> ItoCorrection {
    let zero = || SpectralField::zeros(*grid);
    let mut d1 = zero();
    let mut d2 = zero();
    let mut a11 = zero();
    let mut a12 = zero();
    let mut a22 = zero();
    for s in model.fields_on_grid(grid) {
        let g1 = crate::torus::gradient(&s.u1);
        let g2 = crate::torus::gradient(&s.u2);
        // (σ·∇σ)^a = σ¹ ∂₁σ^a + σ² ∂₂σ^a
        d1 = d1.add(&s.u1.mul(&g1.u1).add(&s.u2.mul(&g1.u2)));
        d2 = d2.add(&s.u1.mul(&g2.u1).add(&s.u2.mul(&g2.u2)));
        a11 = a11.add(&s.u1.mul(&s.u1));
        a12 = a12.add(&s.u1.mul(&s.u2));
        a22 = a22.add(&s.u2.mul(&s.u2));
    }
    ItoCorrection {
        drift: VectorField::new(d1, d2),
        tensor: [a11, a12, a22],
    }
}

const KEY_TAG: &[u8; 16] = b"vortex-noise-v1\0";

fn key(master_seed: u64, path_index: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&master_seed.to_le_bytes());
    k[8..16].copy_from_slice(&path_index.to_le_bytes());
    k[16..].copy_from_slice(KEY_TAG);
    k
}

/// Stream of the common noise.
const COMMON_STREAM: u64 = 0;

fn particle_stream(species: Species, i: usize) -> u64 {
    1 + (species.index() << 40) + i as u64
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fill `out` with standard normals for key `(master, path, stream, counter)`.
/// Each counter value owns `2·⌈len/2⌉` 64-bit words of the stream.
pub fn keyed_normals(master_seed: u64, path_index: u64, stream: u64, counter: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::from_seed(key(master_seed, path_index));
    rng.set_stream(stream);
    let pairs = out.len().div_ceil(2) as u128;
    // four 32-bit words per normal pair
    rng.set_word_pos(counter as u128 * pairs * 4);
    for chunk in out.chunks_mut(2) {
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        chunk[0] = r * c;
        if chunk.len() > 1 {
            chunk[1] = r * s;
        }
    }
}

/// Wiener increments for one path: the common `ΔW^k` are stored, the
/// per-particle `ΔB^{i,±}` are regenerated from their keys on demand.
#[derive(Debug, Clone)]
pub struct NoisePath {
    dt: f64,
    n_steps: usize,
    n_modes: usize,
    n_particles: usize,
    master_seed: u64,
    path_index: u64,
    common: Vec<f64>,
}

impl NoisePath {
    pub fn generate(
        n_modes: usize,
        n_particles: usize,
        dt: f64,
        n_steps: usize,
        master_seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let sd = dt.sqrt();
        let mut common = vec![0.0; n_steps * n_modes];
        if n_modes > 0 {
            for (step, row) in common.chunks_mut(n_modes).enumerate() {
                keyed_normals(master_seed, path_index, COMMON_STREAM, step as u64, row);
                row.iter_mut().for_each(|v| *v *= sd);
            }
        }
        Ok(Self {
            dt,
            n_steps,
            n_modes,
            n_particles,
            master_seed,
            path_index,
            common,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// `ΔW^k` at `step` for all modes.
    pub fn common(&self, step: usize) -> &[f64] {
        &self.common[step * self.n_modes..(step + 1) * self.n_modes]
    }

    pub fn common_all(&self) -> &[f64] {
        &self.common
    }

    /// `ΔB^{i,±}` at `step`.
    pub fn particle_increment(&self, step: usize, species: Species, i: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        keyed_normals(
            self.master_seed,
            self.path_index,
            particle_stream(species, i),
            step as u64,
            &mut out,
        );
        let sd = self.dt.sqrt();
        [out[0] * sd, out[1] * sd]
    }

    pub fn particle_increments(&self, step: usize, species: Species, count: usize) -> Vec<[f64; 2]> {
        use rayon::prelude::*;
        (0..count)
            .into_par_iter()
            .map(|i| self.particle_increment(step, species, i))
            .collect()
    }

    /// Path with every increment halved in resolution: consecutive pairs of
    /// common increments summed, as used for dt-halving studies.
    pub fn coarsened(&self) -> Self {
        let k = self.n_modes;
        let steps = self.n_steps / 2;
        let mut common = vec![0.0; steps * k];
        for s in 0..steps {
            for m in 0..k {
                common[s * k + m] = self.common[2 * s * k + m] + self.common[(2 * s + 1) * k + m];
            }
        }
        Self {
            dt: 2.0 * self.dt,
            n_steps: steps,
            n_modes: k,
            n_particles: self.n_particles,
            master_seed: self.master_seed,
            // coarsened per-particle increments are not derived from this path
            path_index: self.path_index ^ (1 << 63),
            common,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::divergence;

    fn max_abs_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn single_mode_field() {
        let model = NoiseModel::from_preset(&NoisePreset::Single { amplitude: 0.1 }).unwrap();
        assert_eq!(model.len(), 1);
        let x = [0.3, -1.2];
        let v = model.fields()[0].value(x);
        assert!(v[0].abs() < 1e-15);
        assert!((v[1] - 0.1 * 0.3f64.cos()).abs() < 1e-15);
        let g = GridSpec::new(32).unwrap();
        let s = &model.fields_on_grid(&g)[0];
        assert!(divergence(s).max_abs() < 1e-12);
    }

    #[test]
    fn every_preset_is_divergence_free() {
        let g = GridSpec::new(32).unwrap();
        let presets = [
            NoisePreset::Single { amplitude: 0.3 },
            NoisePreset::IsotropicShell { radius: 2.0, amplitude: 0.2 },
            NoisePreset::Constant { c: [0.4, -0.1] },
            NoisePreset::Sheared { amplitude: 0.5 },
            NoisePreset::Composite { amplitude: 0.5 },
        ];
        for p in &presets {
            let model = NoiseModel::from_preset(p).unwrap();
            assert!(!model.is_empty());
            for s in model.fields_on_grid(&g) {
                assert!(divergence(&s).max_abs() < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn duplicate_and_invalid_modes_are_rejected() {
        let m = ModeSpec { m: [1, 2], phase: Phase::Sin, amplitude: 1.0 };
        assert!(matches!(build_noise(&[m.clone(), m.clone()]), Err(Error::DuplicateMode(_))));
        assert!(build_noise(&[ModeSpec { m: [0, 0], ..m.clone() }]).is_err());
        assert!(build_noise(&[ModeSpec { amplitude: 0.0, ..m.clone() }]).is_err());
        assert!(build_noise(&[m.clone(), ModeSpec { phase: Phase::Cos, ..m }]).is_ok());
    }

    /// Centered finite differences of the analytic field, contracted with σ.
    fn fd_self_advection(f: &NoiseField, x: [f64; 2], h: f64) -> [f64; 2] {
        let s = f.value(x);
        let mut out = [0.0; 2];
        for (b, sb) in s.iter().enumerate() {
            let mut xp = x;
            let mut xm = x;
            xp[b] += h;
            xm[b] -= h;
            let vp = f.value(xp);
            let vm = f.value(xm);
            for a in 0..2 {
                out[a] += sb * (vp[a] - vm[a]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn corrections_match_finite_differences() {
        let g = GridSpec::new(64).unwrap();
        let diag = build_noise(&[ModeSpec { m: [1, 1], phase: Phase::Cos, amplitude: 1.0 }]).unwrap();
        let presets = vec![
            diag,
            NoiseModel::from_preset(&NoisePreset::Constant { c: [0.7, 0.2] }).unwrap(),
            NoiseModel::from_preset(&NoisePreset::Sheared { amplitude: 1.0 }).unwrap(),
            NoiseModel::from_preset(&NoisePreset::Composite { amplitude: 1.0 }).unwrap(),
        ];
        for model in &presets {
            let corr = ito_stratonovich_drift(model, &g);
            for i in (0..g.n()).step_by(5) {
                for j in (0..g.n()).step_by(7) {
                    let x = g.point(i, j);
                    let mut fd = [0.0; 2];
                    for f in model.fields() {
                        let v = fd_self_advection(f, x, 1e-4);
                        fd[0] += v[0];
                        fd[1] += v[1];
                    }
                    assert!((corr.drift.u1.value(i, j) - fd[0]).abs() < 1e-6);
                    assert!((corr.drift.u2.value(i, j) - fd[1]).abs() < 1e-6);
                    let analytic = model.self_advection(x);
                    assert!((analytic[0] - fd[0]).abs() < 1e-6);
                    assert!((analytic[1] - fd[1]).abs() < 1e-6);
                }
            }
        }
        // the trig family, the constant and the sheared presets have σ·∇σ ≡ 0
        for model in &presets[..3] {
            let corr = ito_stratonovich_drift(model, &g);
            assert!(corr.drift.max_magnitude() < 1e-12);
        }
        let composite = ito_stratonovich_drift(&presets[3], &g);
        assert!(composite.drift.max_magnitude() > 0.5);
        // sheared: σᵀHωσ = a² sin²(x₂) ∂₁²ω is nonzero
        let sheared = ito_stratonovich_drift(&presets[2], &g);
        assert!(sheared.tensor[0].max_abs() > 0.9);
    }

    #[test]
    fn antiparallel_pair_doubles_correction() {
        let g = GridSpec::new(32).unwrap();
        let base = NoiseModel::from_preset(&NoisePreset::Composite { amplitude: 1.0 }).unwrap();
        let f = base.fields()[0].clone();
        let neg = NoiseField {
            terms: f
                .terms
                .iter()
                .map(|t| TrigTerm { amp: [-t.amp[0], -t.amp[1]], ..t.clone() })
                .collect(),
        };
        let pair = NoiseModel::from_fields(vec![f, neg]);
        let one = ito_stratonovich_drift(&base, &g);
        let two = ito_stratonovich_drift(&pair, &g);
        assert!(max_abs_diff(&two.drift.u1, &one.drift.u1.scale(2.0)) < 1e-12);
        assert!(max_abs_diff(&two.drift.u2, &one.drift.u2.scale(2.0)) < 1e-12);
    }

    #[test]
    fn tensor_of_single_mode() {
        let g = GridSpec::new(32).unwrap();
        let model = NoiseModel::from_preset(&NoisePreset::Single { amplitude: 1.0 }).unwrap();
        let c = ito_stratonovich_drift(&model, &g);
        assert!(c.tensor[0].max_abs() < 1e-15);
        assert!(c.tensor[1].max_abs() < 1e-15);
        let expected = SpectralField::from_fn(g, |x, _| x.cos().powi(2));
        assert!(max_abs_diff(&c.tensor[2], &expected) < 1e-14);
        assert!((c.tensor[2].max_abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sum_sigma_sq_is_additive_and_quadratic() {
        let a = ModeSpec { m: [1, 0], phase: Phase::Cos, amplitude: 0.5 };
        let b = ModeSpec { m: [0, 2], phase: Phase::Sin, amplitude: 0.25 };
        let sa = build_noise(&[a.clone()]).unwrap().sum_sigma_sq();
        let sb = build_noise(&[b.clone()]).unwrap().sum_sigma_sq();
        let sab = build_noise(&[a.clone(), b.clone()]).unwrap().sum_sigma_sq();
        assert!((sab - sa - sb).abs() < 1e-14);
        assert!((sa - 0.25).abs() < 1e-14);
        let scaled = build_noise(&[
            ModeSpec { amplitude: 3.0 * a.amplitude, ..a },
            ModeSpec { amplitude: 3.0 * b.amplitude, ..b },
        ])
        .unwrap()
        .sum_sigma_sq();
        assert!((scaled - 9.0 * sab).abs() < 1e-12);
        let model = build_noise(&[ModeSpec { m: [1, 0], phase: Phase::Cos, amplitude: 2.0 }]).unwrap();
        assert!(model.budget_warning(1.0).is_some());
        assert!(model.budget_warning(10.0).is_none());
    }

    #[test]
    fn increment_statistics() {
        let dt = 0.01;
        let path = NoisePath::generate(1000, 0, dt, 1000, 17, 0).unwrap();
        let xs = path.common_all();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - dt).abs() < 0.01 * dt, "var = {var}");
        assert!(mean.abs() < 4.0 * (dt / n).sqrt());

        let other = NoisePath::generate(1000, 0, dt, 1000, 17, 1).unwrap();
        let ys = other.common_all();
        let cov = xs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / n;
        let corr = cov / dt;
        assert!(corr.abs() <= 3.0 / n.sqrt(), "corr = {corr}");
    }

    #[test]
    fn increments_are_reproducible_and_order_free() {
        let a = NoisePath::generate(3, 10, 0.1, 5, 99, 2).unwrap();
        let b = NoisePath::generate(3, 10, 0.1, 5, 99, 2).unwrap();
        assert_eq!(a.common_all(), b.common_all());
        let forward: Vec<_> = (0..10).map(|i| a.particle_increment(4, Species::Minus, i)).collect();
        let backward: Vec<_> = (0..10).rev().map(|i| b.particle_increment(4, Species::Minus, i)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        assert_eq!(a.particle_increments(4, Species::Minus, 10), forward);
        assert_ne!(a.particle_increment(4, Species::Plus, 0), a.particle_increment(4, Species::Minus, 0));
        assert!(NoisePath::generate(1, 1, 0.0, 1, 0, 0).is_err());
    }

    #[test]
    fn particle_increment_variance() {
        let dt = 0.5;
        let path = NoisePath::generate(0, 0, dt, 50, 5, 0).unwrap();
        let mut sum = 0.0;
        let mut count = 0.0;
        for step in 0..50 {
            for inc in path.particle_increments(step, Species::Plus, 2000) {
                sum += inc[0] * inc[0] + inc[1] * inc[1];
                count += 2.0;
            }
        }
        let var = sum / count;
        assert!((var - dt).abs() < 0.02 * dt, "{var}");
    }

    #[test]
    fn coarsened_path_sums_pairs() {
        let p = NoisePath::generate(2, 0, 0.1, 8, 1, 1).unwrap();
        let c = p.coarsened();
        assert_eq!(c.n_steps(), 4);
        assert!((c.dt() - 0.2).abs() < 1e-15);
        assert!((c.common(1)[1] - p.common(2)[1] - p.common(3)[1]).abs() < 1e-15);
    }
}
