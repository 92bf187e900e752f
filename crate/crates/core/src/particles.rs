//! Signed point-vortex particles with mollified, truncated interaction,
//! common transport noise and independent Brownian motions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biot_savart::{kernel_l1_estimate, mollified_kernel_table, velocity_unchecked, KernelTable};
use crate::error::{Error, Result};
use crate::mollifier::{deposit, sample_species, Mollifier, SignedInitialData, Species};
use crate::noise::{NoiseModel, NoisePath};
use crate::torus::{min_image, wrap_point, GridSpec, SpectralField, VectorField};

/// Particle positions of both species with their total circulations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub plus: Vec<[f64; 2]>,
    pub minus: Vec<[f64; 2]>,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl ParticleEnsemble {
    pub fn new(plus: Vec<[f64; 2]>, minus: Vec<[f64; 2]>, gamma_plus: f64, gamma_minus: f64) -> Self {
        Self {
            plus: plus.into_iter().map(wrap_point).collect(),
            minus: minus.into_iter().map(wrap_point).collect(),
            gamma_plus,
            gamma_minus,
        }
    }

    /// `n` particles per species drawn i.i.d. from `ω₀^± / Γ±`. A species
    /// without mass gets no particles.
    pub fn sample(data: &SignedInitialData, n: usize, seed: u64) -> Result<Self> {
        let draw = |species| -> Result<Vec<[f64; 2]>> {
            if data.gamma(species) > 0.0 {
                Ok(sample_species(data, species, n, seed)?.positions)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Self::new(draw(Species::Plus)?, draw(Species::Minus)?, data.gamma_plus, data.gamma_minus))
    }

    pub fn positions(&self, species: Species) -> &[[f64; 2]] {
        match species {
            Species::Plus => &self.plus,
            Species::Minus => &self.minus,
        }
    }

    pub fn gamma(&self, species: Species) -> f64 {
        match species {
            Species::Plus => self.gamma_plus,
            Species::Minus => self.gamma_minus,
        }
    }

    /// Weight `Γ±/N` of one particle.
    pub fn weight(&self, species: Species) -> f64 {
        let n = self.positions(species).len();
        if n == 0 {
            0.0
        } else {
            self.gamma(species) / n as f64
        }
    }

    pub fn len(&self) -> usize {
        self.plus.len() + self.minus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all_finite(&self) -> bool {
        self.plus.iter().chain(&self.minus).all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

/// Componentwise clamp `F(v) = (v ∧ M) ∨ (−M)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub m: f64,
}

impl Truncation {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("truncation level must be positive, got {m}")));
        }
        Ok(Self { m })
    }

    /// No clamping in practice.
    pub fn inactive() -> Self {
        Self { m: f64::INFINITY }
    }

    /// `M = 2 ‖K‖_{L¹} ‖ω₀‖_∞` with the kernel norm estimated on `grid`.
    pub fn default_for(omega0_sup: f64, grid: &GridSpec) -> Self {
        Self {
            m: 2.0 * kernel_l1_estimate(grid) * omega0_sup,
        }
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [v[0].clamp(-self.m, self.m), v[1].clamp(-self.m, self.m)]
    }
}

/// `F(v)` for cap `M`.
pub fn truncate(m: f64, v: [f64; 2]) -> [f64; 2] {
    Truncation { m }.apply(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyamaIto,
    HeunStratonovich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionMode {
    DirectPairwise,
    ParticleMesh,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub interaction: InteractionMode,
    pub nu: f64,
    pub truncation: Truncation,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.nu >= 0.0) {
            return Err(Error::InvalidArgument(format!("viscosity must be non-negative, got {}", self.nu)));
        }
        Truncation::new(self.truncation.m)?;
        Ok(())
    }
}

/// Interaction drift of both species, one vector per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub plus: Vec<[f64; 2]>,
    pub minus: Vec<[f64; 2]>,
}

/// Allowed median relative drift difference between the two interaction modes.
pub const CROSS_CHECK_TOL: f64 = 1e-3;

/// Particle dynamics for one `(N, β)` pair: interaction, noise and stepping.
#[derive(Debug, Clone)]
pub struct ParticleDynamics {
    config: StepConfig,
    mollifier: Mollifier,
    grid: GridSpec,
    table: Option<KernelTable>,
    noise: NoiseModel,
}

impl ParticleDynamics {
    /// `grid` carries the deposits and, in mesh mode, the velocity solve.
    pub fn new(config: StepConfig, mollifier: Mollifier, grid: GridSpec, noise: NoiseModel) -> Result<Self> {
        config.validate()?;
        let table = match config.interaction {
            InteractionMode::DirectPairwise => Some(mollified_kernel_table(grid, &mollifier)?),
            _ => None,
        };
        Ok(Self {
            config,
            mollifier,
            grid,
            table,
            noise,
        })
    }

    pub fn config(&self) -> &StepConfig {
        &self.config
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// `g^{N,±} = V^N * μ^{N,±}`.
    pub fn deposits(&self, ens: &ParticleEnsemble) -> Result<(SpectralField, SpectralField)> {
        Ok((
            deposit(&ens.plus, ens.gamma_plus, &self.mollifier, &self.grid)?,
            deposit(&ens.minus, ens.gamma_minus, &self.mollifier, &self.grid)?,
        ))
    }

    /// `u^N = K * (V^N * μ^N)` on the grid.
    pub fn mesh_velocity(&self, ens: &ParticleEnsemble) -> Result<VectorField> {
        let (gp, gm) = self.deposits(ens)?;
        Ok(velocity_unchecked(&gp.sub(&gm)))
    }

    /// Drift before truncation.
    pub fn raw_interaction(&self, ens: &ParticleEnsemble) -> Result<Drift> {
        match self.config.interaction {
            InteractionMode::Off => Ok(Drift {
                plus: vec![[0.0; 2]; ens.plus.len()],
                minus: vec![[0.0; 2]; ens.minus.len()],
            }),
            InteractionMode::ParticleMesh => {
                let u = self.mesh_velocity(ens)?;
                let eval = |ps: &[[f64; 2]]| ps.par_iter().map(|&x| u.eval_cubic(x)).collect();
                Ok(Drift {
                    plus: eval(&ens.plus),
                    minus: eval(&ens.minus),
                })
            }
            InteractionMode::DirectPairwise => {
                let kernel = self
                    .table
                    .as_ref()
                    .and_then(KernelTable::pointwise)
                    .expect("direct mode builds a pointwise table");
                let wp = ens.weight(Species::Plus);
                let wm = ens.weight(Species::Minus);
                let sum = |x: [f64; 2], skip: Option<(Species, usize)>| {
                    let mut acc = [0.0; 2];
                    for (species, w, others) in [(Species::Plus, wp, &ens.plus), (Species::Minus, -wm, &ens.minus)] {
                        let mut part = [0.0; 2];
                        for (j, &y) in others.iter().enumerate() {
                            if skip == Some((species, j)) {
                                continue;
                            }
                            let t = kernel.evaluate(min_image(x, y));
                            part[0] += t[0];
                            part[1] += t[1];
                        }
                        acc[0] += w * part[0];
                        acc[1] += w * part[1];
                    }
                    acc
                };
                let per_species = |species: Species| -> Vec<[f64; 2]> {
                    ens.positions(species)
                        .par_iter()
                        .enumerate()
                        .map(|(i, &x)| sum(x, Some((species, i))))
                        .collect()
                };
                Ok(Drift {
                    plus: per_species(Species::Plus),
                    minus: per_species(Species::Minus),
                })
            }
        }
    }

    /// `F(Γ⁺/N Σ_{j≠i} T(Xⁱ − X^{j,+}) − Γ⁻/N Σ_{j≠i} T(Xⁱ − X^{j,−}))` with `T = V^N * K`.
    pub fn interaction_drift(&self, ens: &ParticleEnsemble) -> Result<Drift> {
        let mut d = self.raw_interaction(ens)?;
        let f = self.config.truncation;
        for v in d.plus.iter_mut().chain(d.minus.iter_mut()) {
            *v = f.apply(*v);
        }
        Ok(d)
    }

    /// One step from `ens` using the increments of `step` in `path`.
    pub fn step(&self, ens: &ParticleEnsemble, step: usize, path: &NoisePath) -> Result<ParticleEnsemble> {
        self.check_path(path)?;
        let drift = self.interaction_drift(ens)?;
        self.step_with_drift(ens, &drift, step, path)
    }

    fn check_path(&self, path: &NoisePath) -> Result<()> {
        let dt = self.config.dt;
        if (path.dt() - dt).abs() > 1e-12 * dt {
            return Err(Error::InvalidArgument(format!(
                "noise path dt {} differs from step dt {dt}",
                path.dt()
            )));
        }
        if path.n_modes() != self.noise.len() {
            return Err(Error::InvalidArgument(format!(
                "noise path has {} modes, model has {}",
                path.n_modes(),
                self.noise.len()
            )));
        }
        Ok(())
    }

    /// One step with a precomputed interaction drift.
    pub fn step_with_drift(&self, ens: &ParticleEnsemble, drift: &Drift, step: usize, path: &NoisePath) -> Result<ParticleEnsemble> {
        let dt = self.config.dt;
        let diff = (2.0 * self.config.nu).sqrt();
        let dw = path.common(step);
        let noise = &self.noise;
        let scheme = self.config.scheme;
        let advance = |species: Species, xs: &[[f64; 2]], ds: &[[f64; 2]]| -> Vec<[f64; 2]> {
            xs.par_iter()
                .zip(ds)
                .enumerate()
                .map(|(i, (&x, &d))| {
                    let db = if diff > 0.0 {
                        path.particle_increment(step, species, i)
                    } else {
                        [0.0; 2]
                    };
                    let base = [x[0] + d[0] * dt + diff * db[0], x[1] + d[1] * dt + diff * db[1]];
                    if noise.is_empty() {
                        return wrap_point(base);
                    }
                    let s = noise.displacement(x, dw);
                    match scheme {
                        Scheme::EulerMaruyamaIto => {
                            let c = noise.self_advection(x);
                            wrap_point([
                                base[0] + 0.5 * c[0] * dt + s[0],
                                base[1] + 0.5 * c[1] * dt + s[1],
                            ])
                        }
                        Scheme::HeunStratonovich => {
                            let pred = wrap_point([base[0] + s[0], base[1] + s[1]]);
                            let sp = noise.displacement(pred, dw);
                            wrap_point([
                                base[0] + 0.5 * (s[0] + sp[0]),
                                base[1] + 0.5 * (s[1] + sp[1]),
                            ])
                        }
                    }
                })
                .collect()
        };
        let next = ParticleEnsemble {
            plus: advance(Species::Plus, &ens.plus, &drift.plus),
            minus: advance(Species::Minus, &ens.minus, &drift.minus),
            gamma_plus: ens.gamma_plus,
            gamma_minus: ens.gamma_minus,
        };
        if !next.all_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "particle position is NaN or infinite".into(),
            });
        }
        Ok(next)
    }

    /// Advance to the last observation step, depositing at every observation.
    pub fn run(&self, ens0: &ParticleEnsemble, path: &NoisePath, observation_steps: &[usize]) -> Result<ParticleRun> {
        self.check_path(path)?;
        if observation_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("observation steps must be strictly increasing".into()));
        }
        let last = observation_steps.last().copied().unwrap_or(0);
        if last > path.n_steps() {
            return Err(Error::InvalidArgument(format!(
                "observation step {last} beyond the {} steps of the noise path",
                path.n_steps()
            )));
        }
        let mut observations = Vec::with_capacity(observation_steps.len());
        let mut state = ens0.clone();
        let mut next_obs = observation_steps.iter().peekable();
        for step in 0..=last {
            if next_obs.peek() == Some(&&step) {
                next_obs.next();
                let (g_plus, g_minus) = self.deposits(&state)?;
                observations.push(Observation {
                    step,
                    t: step as f64 * self.config.dt,
                    ensemble: state.clone(),
                    g_plus,
                    g_minus,
                });
            }
            if step < last {
                state = self.step(&state, step, path)?;
            }
        }
        Ok(ParticleRun {
            observations,
            final_state: state,
        })
    }
}

/// Deposited fields at one observation time.
#[derive(Debug, Clone)]
pub struct Observation {
    pub step: usize,
    pub t: f64,
    pub ensemble: ParticleEnsemble,
    pub g_plus: SpectralField,
    pub g_minus: SpectralField,
}

impl Observation {
    /// `g^N = g^{N,+} − g^{N,−}`.
    pub fn g(&self) -> SpectralField {
        self.g_plus.sub(&self.g_minus)
    }
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub observations: Vec<Observation>,
    pub final_state: ParticleEnsemble,
}

/// Median over particles of `|d − m| / |d|`.
pub fn median_relative_difference(direct: &Drift, mesh: &Drift) -> f64 {
    let mut rel: Vec<f64> = direct
        .plus
        .iter()
        .chain(&direct.minus)
        .zip(mesh.plus.iter().chain(&mesh.minus))
        .map(|(d, m)| (d[0] - m[0]).hypot(d[1] - m[1]) / d[0].hypot(d[1]).max(1e-300))
        .collect();
    if rel.is_empty() {
        return 0.0;
    }
    rel.sort_by(f64::total_cmp);
    let n = rel.len();
    if n % 2 == 1 {
        rel[n / 2]
    } else {
        0.5 * (rel[n / 2 - 1] + rel[n / 2])
    }
}

/// Compare the raw direct and mesh drifts on `ens`; errors above [`CROSS_CHECK_TOL`].
pub fn cross_check(direct: &ParticleDynamics, mesh: &ParticleDynamics, ens: &ParticleEnsemble) -> Result<f64> {
    let d = direct.raw_interaction(ens)?;
    let m = mesh.raw_interaction(ens)?;
    let med = median_relative_difference(&d, &m);
    if med > CROSS_CHECK_TOL {
        return Err(Error::MeshMismatch(med));
    }
    Ok(med)
}

/// Rows `t,species,i,x1,x2`.
pub fn write_positions_csv<W: Write>(mut w: W, t: f64, ens: &ParticleEnsemble, header: bool) -> Result<()> {
    if header {
        writeln!(w, "t,species,i,x1,x2")?;
    }
    for (name, xs) in [("plus", &ens.plus), ("minus", &ens.minus)] {
        for (i, x) in xs.iter().enumerate() {
            writeln!(w, "{t},{name},{i},{:.17e},{:.17e}", x[0], x[1])?;
        }
    }
    Ok(())
}
