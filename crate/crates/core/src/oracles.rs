//! Named analytic-oracle suites, runnable from the command line.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::biot_savart::velocity_from_vorticity;
use crate::error::{Error, Result};
use crate::mollifier::{InitialPreset, Mollifier, SignedInitialData};
use crate::noise::{NoiseModel, NoisePath, NoisePreset};
use crate::particles::{cross_check, InteractionMode, ParticleDynamics, ParticleEnsemble, Scheme, StepConfig, Truncation};
use crate::spde::{Form, SpdeConfig, SpdeSolver, Variant};
use crate::torus::{curl, divergence, min_image, wrap, GridSpec, SpectralField};

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl OracleOutcome {
    fn below(name: &'static str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }
}

pub const ORACLE_NAMES: &[&str] = &[
    "heat-decay",
    "biot-savart",
    "rigid-transport",
    "diffusion-law",
    "mesh-direct",
    "deposition",
    "weak-form",
];

fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Run one suite by name, or every suite for `"all"`.
pub fn run_oracle(name: &str) -> Result<Vec<OracleOutcome>> {
    let one = |o: OracleOutcome| Ok(vec![o]);
    match name {
        "heat-decay" => one(heat_decay()?),
        "biot-savart" => one(biot_savart_identity()?),
        "rigid-transport" => one(rigid_transport()?),
        "diffusion-law" => one(diffusion_law()?),
        "mesh-direct" => one(mesh_direct()?),
        "deposition" => one(deposition()?),
        "weak-form" => one(weak_form()?),
        "all" => ORACLE_NAMES.iter().map(|n| run_oracle(n).map(|mut v| v.remove(0))).collect(),
        other => Err(Error::InvalidArgument(format!(
            "unknown oracle {other:?}; expected one of {} or all",
            ORACLE_NAMES.join(", ")
        ))),
    }
}

/// `ω₀ = cos(x₁+x₂)`, σ off: `ω(t) = e^{−2νt} cos(x₁+x₂)`.
pub fn heat_decay() -> Result<OracleOutcome> {
    let (nu, dt, steps) = (0.1, 1e-3, 500);
    let g = GridSpec::new(64)?;
    let solver = SpdeSolver::new(SpdeConfig::new(g, nu, dt, Form::Ito, Variant::Single), NoiseModel::off())?;
    let w0 = SpectralField::from_fn(g, |x, y| (x + y).cos());
    let path = NoisePath::generate(0, 0, dt, steps, 0, 0)?;
    let traj = solver.solve(&solver.initial_state(&w0)?, &path, &[steps])?;
    let exact = w0.scale((-2.0 * nu * dt * steps as f64).exp());
    let err = max_diff(&traj.final_state().omega(), &exact);
    Ok(OracleOutcome::below("heat-decay", err, 1e-6, "max-norm error at t = 0.5, G = 64"))
}

/// `curl(K*ω) = ω`, `div(K*ω) = 0` on random zero-mean fields.
pub fn biot_savart_identity() -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in [16usize, 32] {
        let g = GridSpec::new(n)?;
        for _ in 0..50 {
            let values = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nyq = -(n as i64) / 2;
            let w = SpectralField::from_values(g, values)
                .apply_multiplier(|k1, k2| {
                    if k1 == nyq || k2 == nyq {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .into_zero_mean();
            let u = velocity_from_vorticity(&w)?;
            worst = worst.max(max_diff(&curl(&u), &w)).max(divergence(&u).max_abs());
        }
    }
    Ok(OracleOutcome::below("biot-savart", worst, 1e-12, "100 random fields, G in {16, 32}"))
}

/// Constant σ, ν = 0: `ω(t,x) = ω₀(x − cW_t)` for a steady profile.
pub fn rigid_transport() -> Result<OracleOutcome> {
    let c = [0.5, 0.3];
    let noise = NoiseModel::from_preset(&NoisePreset::Constant { c })?;
    let (dt, steps) = (2.5e-4, 1000);
    let g = GridSpec::new(64)?;
    let solver = SpdeSolver::new(SpdeConfig::new(g, 0.0, dt, Form::Stratonovich, Variant::Single), noise)?;
    let profile = |x: f64, y: f64| (x + y).cos() + 0.5 * (x - y).sin();
    let w0 = SpectralField::from_fn(g, profile);
    let path = NoisePath::generate(1, 0, dt, steps, 1, 0)?;
    let traj = solver.solve(&solver.initial_state(&w0)?, &path, &[steps])?;
    let w: f64 = path.common_all().iter().sum();
    let exact = SpectralField::from_fn(g, |x, y| profile(wrap(x - c[0] * w), wrap(y - c[1] * w)));
    let err = max_diff(&traj.final_state().omega(), &exact);
    Ok(OracleOutcome::below("rigid-transport", err, 1e-4, "max-norm error at t = 0.25"))
}

/// Γ = 0, σ off: `E|X_t − X_0|² = 4νt`.
pub fn diffusion_law() -> Result<OracleOutcome> {
    let (nu, dt, steps, n) = (0.01, 0.01, 100, 5000);
    let g = GridSpec::new(64)?;
    let cfg = StepConfig {
        dt,
        scheme: Scheme::EulerMaruyamaIto,
        interaction: InteractionMode::Off,
        nu,
        truncation: Truncation::inactive(),
    };
    let dynamics = ParticleDynamics::new(cfg, Mollifier::new(0.2, n)?, g, NoiseModel::off())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut x0 = || -> Vec<[f64; 2]> { (0..n).map(|_| [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)]).collect() };
    let ens = ParticleEnsemble::new(x0(), x0(), 0.0, 0.0);
    let path = NoisePath::generate(0, n, dt, steps, 3, 0)?;
    let run = dynamics.run(&ens, &path, &[steps])?;
    let fin = &run.final_state;
    let msd = fin
        .plus
        .iter()
        .chain(&fin.minus)
        .zip(ens.plus.iter().chain(&ens.minus))
        .map(|(a, b)| {
            let d = min_image(*a, *b);
            d[0] * d[0] + d[1] * d[1]
        })
        .sum::<f64>()
        / (2 * n) as f64;
    let expected = 4.0 * nu * dt * steps as f64;
    Ok(OracleOutcome::below(
        "diffusion-law",
        (msd / expected - 1.0).abs(),
        0.02,
        format!("relative MSD error over {} particles, t = 1", 2 * n),
    ))
}

/// Direct pairwise and particle-mesh drifts on a random 64-particle state.
pub fn mesh_direct() -> Result<OracleOutcome> {
    let g = GridSpec::new(256)?;
    let m = Mollifier::new(0.2, 64)?;
    let cfg = |interaction| StepConfig {
        dt: 1e-3,
        scheme: Scheme::EulerMaruyamaIto,
        interaction,
        nu: 0.0,
        truncation: Truncation::inactive(),
    };
    let direct = ParticleDynamics::new(cfg(InteractionMode::DirectPairwise), m, g, NoiseModel::off())?;
    let mesh = ParticleDynamics::new(cfg(InteractionMode::ParticleMesh), m, g, NoiseModel::off())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pts = || -> Vec<[f64; 2]> { (0..32).map(|_| [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)]).collect() };
    let ens = ParticleEnsemble::new(pts(), pts(), 1.0, 1.0);
    let med = match cross_check(&direct, &mesh, &ens) {
        Ok(m) | Err(Error::MeshMismatch(m)) => m,
        Err(e) => return Err(e),
    };
    Ok(OracleOutcome::below("mesh-direct", med, 1e-3, "median relative drift difference, G = 256"))
}

/// `∫ g^{N,±} = Γ±` along a short noisy run.
pub fn deposition() -> Result<OracleOutcome> {
    let g = GridSpec::new(128)?;
    let data = SignedInitialData::from_preset(InitialPreset::CosPair, g)?;
    let n = 1024;
    let noise = NoiseModel::from_preset(&NoisePreset::Single { amplitude: 0.1 })?;
    let cfg = StepConfig {
        dt: 1.0 / 128.0,
        scheme: Scheme::EulerMaruyamaIto,
        interaction: InteractionMode::ParticleMesh,
        nu: 0.01,
        truncation: Truncation::default_for(2.0, &g),
    };
    let dynamics = ParticleDynamics::new(cfg, Mollifier::new(0.2, n)?, g, noise)?;
    let ens = ParticleEnsemble::sample(&data, n, 4)?;
    let path = NoisePath::generate(1, n, cfg.dt, 32, 5, 0)?;
    let steps: Vec<usize> = (0..=32).step_by(4).collect();
    let run = dynamics.run(&ens, &path, &steps)?;
    let worst = run
        .observations
        .iter()
        .map(|o| {
            (o.g_plus.integral() / ens.gamma_plus - 1.0)
                .abs()
                .max((o.g_minus.integral() / ens.gamma_minus - 1.0).abs())
        })
        .fold(0.0, f64::max);
    Ok(OracleOutcome::below("deposition", worst, 1e-6, "relative mass error over 9 observations"))
}

/// Weak-form residual of the exact decaying eigenmode.
pub fn weak_form() -> Result<OracleOutcome> {
    let (nu, dt, steps) = (0.01, 1e-4, 5000);
    let g = GridSpec::new(32)?;
    let solver = SpdeSolver::new(SpdeConfig::new(g, nu, dt, Form::Ito, Variant::Single), NoiseModel::off())?;
    let w0 = SpectralField::from_fn(g, |x, y| (x + y).cos());
    let path = NoisePath::generate(0, 0, dt, steps, 0, 0)?;
    let all: Vec<usize> = (0..=steps).collect();
    let traj = solver.solve(&solver.initial_state(&w0)?, &path, &all)?;
    let r = solver.weak_form_residual(&traj, &path, &w0)?;
    let worst = r.into_iter().fold(0.0, f64::max);
    Ok(OracleOutcome::below("weak-form", worst, 1e-6, "max residual over [0, 0.5], dt = 1e-4"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_an_error() {
        assert!(run_oracle("nope").is_err());
    }

    #[test]
    fn quick_suites_pass() {
        for name in ["heat-decay", "biot-savart", "mesh-direct", "deposition"] {
            let out = run_oracle(name).unwrap();
            assert!(out[0].passed, "{:?}", out[0]);
        }
    }
}
