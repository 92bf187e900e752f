//! Experiment orchestration: configuration, shared-noise particle/SPDE runs,
//! convergence studies over the particle count, and result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mollifier::{DepositNormalization, InitialPreset, Mollifier, SignedInitialData};
use crate::noise::{NoiseModel, NoisePath, NoisePreset};
use crate::particles::{InteractionMode, ParticleDynamics, ParticleEnsemble, Scheme, StepConfig, Truncation};
use crate::spde::{CorrectionForm, Form, SpdeConfig, SpdeSolver, SpdeTrajectory, Variant};
use crate::torus::{sobolev_norm, write_snapshot, GridSpec, SpectralField};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "VORTEX_WORKERS";

/// Default bound on the final median sup-error relative to `‖ω₀‖_∞`.
/// Artifact-defined; no target accuracy exists for this problem.
pub const DEFAULT_ERROR_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    /// Euler–Maruyama on the Itô forms.
    #[default]
    Ito,
    /// Heun on the Stratonovich noise terms.
    Stratonovich,
}

impl SchemeChoice {
    pub fn particle(self) -> Scheme {
        match self {
            SchemeChoice::Ito => Scheme::EulerMaruyamaIto,
            SchemeChoice::Stratonovich => Scheme::HeunStratonovich,
        }
    }

    pub fn spde(self) -> Form {
        match self {
            SchemeChoice::Ito => Form::Ito,
            SchemeChoice::Stratonovich => Form::Stratonovich,
        }
    }
}

fn default_observations() -> usize {
    33
}

fn default_epsilon() -> f64 {
    0.75
}

fn default_threshold() -> f64 {
    DEFAULT_ERROR_THRESHOLD
}

fn default_variant() -> Variant {
    Variant::Coupled
}

fn default_interaction() -> InteractionMode {
    InteractionMode::ParticleMesh
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_paths() -> usize {
    1
}

/// Experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub nu: f64,
    pub t_end: f64,
    pub dt: f64,
    pub grid: usize,
    pub n_ladder: Vec<usize>,
    pub beta: f64,
    pub alpha: f64,
    pub p: f64,
    pub eta: f64,
    /// Truncation level; defaults to `2‖K‖_{L¹}‖ω₀‖_∞`.
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub scheme: SchemeChoice,
    #[serde(default = "default_interaction")]
    pub interaction: InteractionMode,
    #[serde(default)]
    pub deposit: DepositNormalization,
    #[serde(default)]
    pub correction: CorrectionForm,
    #[serde(default = "default_observations")]
    pub observations: usize,
    #[serde(default = "default_threshold")]
    pub error_threshold: f64,
    /// Negative-norm errors are reported in `H^{−1+ε}_2`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Noise budget `C_ν`; exceeding it only warns.
    #[serde(default)]
    pub c_nu: Option<f64>,
    /// Record wall-clock seconds in the CSV (breaks byte reproducibility).
    #[serde(default)]
    pub timing: bool,
    pub initial: InitialPreset,
    pub noise: NoisePreset,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // serde ignores extra keys next to unit variants of tagged enums, so a
        // top-level key written after `[initial]` would silently vanish.
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        check_table_keys(&raw, "initial", &cfg.initial)?;
        check_table_keys(&raw, "noise", &cfg.noise)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn check_table_keys<T: Serialize>(raw: &toml::Table, name: &str, parsed: &T) -> Result<()> {
    let Some(toml::Value::Table(given)) = raw.get(name) else {
        return Ok(());
    };
    let known = toml::Table::try_from(parsed).map_err(|e| Error::Config(e.to_string()))?;
    let extra: Vec<&str> = given.keys().filter(|k| !known.contains_key(*k)).map(String::as_str).collect();
    if extra.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key(s) in [{name}]: {}", extra.join(", "))))
    }
}

/// `1 / (4 + 2α − 4/p)`.
pub fn beta_bound(alpha: f64, p: f64) -> f64 {
    1.0 / (4.0 + 2.0 * alpha - 4.0 / p)
}

/// Config after validation, with derived quantities.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: ExperimentConfig,
    pub beta_bound: f64,
    pub truncation: Truncation,
    pub n_steps: usize,
    pub observation_steps: Vec<usize>,
    pub grid: GridSpec,
    pub noise: NoiseModel,
    pub warnings: Vec<String>,
    pub hash: String,
}

impl ValidatedConfig {
    pub fn observation_times(&self) -> Vec<f64> {
        self.observation_steps.iter().map(|&s| s as f64 * self.config.dt).collect()
    }
}

/// Check every parameter constraint; all violations are reported together.
pub fn validate_config(cfg: &ExperimentConfig) -> std::result::Result<ValidatedConfig, Vec<String>> {
    let mut errors = Vec::new();
    let c = cfg;
    if !(c.p > 2.0) {
        errors.push(format!("p > 2 required, got p = {}", c.p));
    }
    if !(c.eta > 2.0 / c.p) {
        errors.push(format!("η > 2/p = {:.6} required, got η = {}", 2.0 / c.p, c.eta));
    }
    if !(c.eta < c.alpha) {
        errors.push(format!("η < α required, got η = {}, α = {}", c.eta, c.alpha));
    }
    if !(c.alpha < 1.0) {
        errors.push(format!("α < 1 required, got α = {}", c.alpha));
    }
    let bound = beta_bound(c.alpha, c.p);
    if !(c.beta > 0.0 && c.beta < bound) {
        errors.push(format!("0 < β < 1/(4 + 2α − 4/p) = {bound:.6} required, got β = {}", c.beta));
    }
    if !(c.nu >= 0.0) {
        errors.push(format!("ν ≥ 0 required, got {}", c.nu));
    }
    if !(c.epsilon > 0.0 && c.epsilon < 1.0) {
        errors.push(format!("ε in (0, 1) required, got {}", c.epsilon));
    }
    if c.paths == 0 {
        errors.push("paths must be at least 1".into());
    }
    if c.n_ladder.is_empty() || c.n_ladder.contains(&0) {
        errors.push("n_ladder must list positive particle counts".into());
    } else if c.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
        errors.push("n_ladder must be strictly increasing".into());
    }
    if let Some(m) = c.truncation {
        if !(m > 0.0) {
            errors.push(format!("truncation M > 0 required, got {m}"));
        }
    }
    let grid = match GridSpec::new(c.grid) {
        Ok(g) => Some(g),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    let mut n_steps = 0;
    let mut observation_steps = Vec::new();
    if !(c.dt > 0.0 && c.t_end > 0.0) {
        errors.push(format!("dt and t_end must be positive, got dt = {}, t_end = {}", c.dt, c.t_end));
    } else {
        let ratio = c.t_end / c.dt;
        n_steps = ratio.round() as usize;
        if (ratio - n_steps as f64).abs() > 1e-9 * ratio {
            errors.push(format!("t_end / dt = {ratio} is not an integer"));
        } else if c.observations < 2 {
            errors.push("observations must be at least 2".into());
        } else if n_steps % (c.observations - 1) != 0 {
            errors.push(format!(
                "{} observation times do not fall on the {n_steps}-step grid",
                c.observations
            ));
        } else {
            let stride = n_steps / (c.observations - 1);
            observation_steps = (0..c.observations).map(|i| i * stride).collect();
        }
    }
    let noise = match NoiseModel::from_preset(&c.noise) {
        Ok(n) => Some(n),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    if let (Some(g), Some(&n_max)) = (grid, c.n_ladder.last()) {
        if c.beta > 0.0 && n_max > 0 {
            if let Ok(m) = Mollifier::new(c.beta, n_max) {
                if m.support_radius() < g.spacing() {
                    errors.push(format!(
                        "mollifier radius {:.4} at N = {n_max} is below the grid spacing {:.4}; raise the grid size",
                        m.support_radius(),
                        g.spacing()
                    ));
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let grid = grid.expect("checked");
    let noise = noise.expect("checked");
    let mut warnings = Vec::new();
    if let Some(c_nu) = c.c_nu {
        if let Some(w) = noise.budget_warning(c_nu) {
            warnings.push(w);
        }
    }
    let truncation = match c.truncation {
        Some(m) => Truncation { m },
        None => {
            let t = Truncation::default_for(c.initial.sup_bound(), &grid);
            if t.m > 0.0 {
                t
            } else {
                Truncation { m: 1.0 }
            }
        }
    };
    let mut normalized = c.clone();
    normalized.truncation = Some(truncation.m);
    let hash = config_hash(&normalized);
    Ok(ValidatedConfig {
        config: normalized,
        beta_bound: bound,
        truncation,
        n_steps,
        observation_steps,
        grid,
        noise,
        warnings,
        hash,
    })
}

/// SHA-256 of the canonical JSON form, first 16 hex digits. The output
/// directory and the timing switch do not affect results and are excluded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    c.timing = false;
    let json = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the initial particle sample for `(N, path)`.
pub fn sample_seed(master_seed: u64, n: usize, path_index: u64) -> u64 {
    mix(mix(master_seed ^ 0x5eed) ^ mix(path_index) ^ mix(n as u64).rotate_left(17))
}

/// One CSV row: errors of `g^N − ω` at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub run_id: String,
    pub config_hash: String,
    pub n: usize,
    pub path: u64,
    pub t: f64,
    pub err_sup: f64,
    pub err_hetap: f64,
    pub err_hneg: f64,
    pub mass_plus: f64,
    pub mass_minus: f64,
    pub wallclock_s: f64,
    /// `‖g^{N,+} − ω⁺‖_∞` (JSON only).
    #[serde(skip)]
    pub err_sup_plus: f64,
    /// `‖g^{N,−} − ω⁻‖_∞` (JSON only).
    #[serde(skip)]
    pub err_sup_minus: f64,
}

pub const CSV_HEADER: &str = "run_id,config_hash,N,path,t,err_sup,err_Hetap,err_Hneg,mass_plus,mass_minus,wallclock_s";

impl ErrorRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.10},{:.12e},{:.12e},{:.12e},{:.15e},{:.15e},{:.3}",
            self.run_id,
            self.config_hash,
            self.n,
            self.path,
            self.t,
            self.err_sup,
            self.err_hetap,
            self.err_hneg,
            self.mass_plus,
            self.mass_minus,
            self.wallclock_s
        )
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[ErrorRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// SPDE reference for one path together with its noise.
#[derive(Debug, Clone)]
pub struct Reference {
    pub path: NoisePath,
    pub trajectory: SpdeTrajectory,
}

pub fn initial_data(cfg: &ValidatedConfig) -> Result<SignedInitialData> {
    SignedInitialData::from_preset(cfg.config.initial.clone(), cfg.grid)
}

pub fn spde_solver(cfg: &ValidatedConfig) -> Result<SpdeSolver> {
    let c = &cfg.config;
    let mut sc = SpdeConfig::new(cfg.grid, c.nu, c.dt, c.scheme.spde(), c.variant);
    sc.truncation = Some(cfg.truncation);
    sc.correction = c.correction;
    SpdeSolver::new(sc, cfg.noise.clone())
}

pub fn noise_path(cfg: &ValidatedConfig, n_particles: usize, path_index: u64) -> Result<NoisePath> {
    NoisePath::generate(
        cfg.noise.len(),
        n_particles,
        cfg.config.dt,
        cfg.n_steps,
        cfg.config.master_seed,
        path_index,
    )
}

/// Solve the SPDE once for `path_index`.
pub fn reference_solution(cfg: &ValidatedConfig, path_index: u64) -> Result<Reference> {
    let data = initial_data(cfg)?;
    let solver = spde_solver(cfg)?;
    let path = noise_path(cfg, 0, path_index)?;
    let init = solver.initial_state(&data.omega0)?;
    let trajectory = solver.solve(&init, &path, &cfg.observation_steps)?;
    Ok(Reference { path, trajectory })
}

pub fn particle_dynamics(cfg: &ValidatedConfig, n: usize) -> Result<ParticleDynamics> {
    let c = &cfg.config;
    let step = StepConfig {
        dt: c.dt,
        scheme: c.scheme.particle(),
        interaction: c.interaction,
        nu: c.nu,
        truncation: cfg.truncation,
    };
    let mollifier = Mollifier::new(c.beta, n)?.with_normalization(c.deposit);
    ParticleDynamics::new(step, mollifier, cfg.grid, cfg.noise.clone())
}

fn sup_abs(f: &SpectralField) -> f64 {
    f.max_abs()
}

/// Particle run for `(N, path)` against the reference, one row per observation.
pub fn coupled_run_with_reference(cfg: &ValidatedConfig, n: usize, path_index: u64, reference: &Reference) -> Result<Vec<ErrorRow>> {
    let start = Instant::now();
    let c = &cfg.config;
    let data = initial_data(cfg)?;
    let dynamics = particle_dynamics(cfg, n)?;
    let ens = ParticleEnsemble::sample(&data, n, sample_seed(c.master_seed, n, path_index))?;
    let run = dynamics.run(&ens, &reference.path, &cfg.observation_steps)?;
    let elapsed = if c.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let run_id = format!("{}-{}-{}", &cfg.hash[..8], n, path_index);
    let neg = -1.0 + c.epsilon;
    let mut rows = Vec::with_capacity(run.observations.len());
    for (obs, state) in run.observations.iter().zip(&reference.trajectory.states) {
        let err = obs.g().sub(&state.omega());
        let (sp, sm) = if state.is_coupled() {
            (
                sup_abs(&obs.g_plus.sub(&state.components[0])),
                sup_abs(&obs.g_minus.sub(&state.components[1])),
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(ErrorRow {
            run_id: run_id.clone(),
            config_hash: cfg.hash.clone(),
            n,
            path: path_index,
            t: obs.t,
            err_sup: sup_abs(&err),
            err_hetap: sobolev_norm(&err, c.eta, c.p)?,
            err_hneg: sobolev_norm(&err, neg, 2.0)?,
            mass_plus: obs.g_plus.integral(),
            mass_minus: obs.g_minus.integral(),
            wallclock_s: elapsed,
            err_sup_plus: sp,
            err_sup_minus: sm,
        });
    }
    Ok(rows)
}

/// Draw the noise, solve the SPDE and run the particles for `(N, path)`.
pub fn coupled_run(cfg: &ValidatedConfig, n: usize, path_index: u64) -> Result<Vec<ErrorRow>> {
    let reference = reference_solution(cfg, path_index)?;
    coupled_run_with_reference(cfg, n, path_index, &reference)
}

/// Aggregates for one ladder entry.
#[derive(Debug, Clone, Serialize)]
pub struct LadderSummary {
    pub n: usize,
    pub paths_ok: usize,
    pub median_sup: f64,
    pub iqr_sup: [f64; 2],
    pub median_hetap: f64,
    pub iqr_hetap: [f64; 2],
    pub median_hneg: f64,
    pub median_sup_plus: f64,
    pub median_sup_minus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathFailure {
    pub n: usize,
    pub path: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slopes {
    pub sup: f64,
    pub hetap: f64,
    pub hneg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

/// JSON summary of a convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub beta_bound: f64,
    pub truncation: f64,
    pub observation_times: usize,
    pub ladder: Vec<LadderSummary>,
    pub slopes: Slopes,
    pub decreasing_sup: bool,
    pub decreasing_hetap: bool,
    pub decreasing_hneg: bool,
    pub error_threshold: f64,
    pub threshold_note: String,
    pub failures: Vec<PathFailure>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub rows: Vec<ErrorRow>,
    pub summary: StudySummary,
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile; NaN for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0])
}

/// Thread pool honoring [`WORKERS_ENV`].
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Per path: one SPDE solve, then one particle run per ladder entry.
pub fn convergence_study(cfg: &ValidatedConfig) -> Result<StudyReport> {
    let c = &cfg.config;
    if c.n_ladder.len() < 3 {
        return Err(Error::Config("a convergence study needs at least three ladder entries".into()));
    }
    let pool = worker_pool()?;
    type PathResult = Vec<(usize, std::result::Result<Vec<ErrorRow>, String>)>;
    let per_path: Vec<PathResult> = pool.install(|| {
        (0..c.paths as u64)
            .into_par_iter()
            .map(|path| match reference_solution(cfg, path) {
                Ok(reference) => c
                    .n_ladder
                    .iter()
                    .map(|&n| {
                        info!("path {path}: N = {n}");
                        (n, coupled_run_with_reference(cfg, n, path, &reference).map_err(|e| e.to_string()))
                    })
                    .collect(),
                Err(e) => c.n_ladder.iter().map(|&n| (n, Err(format!("SPDE reference: {e}")))).collect(),
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut ladder = Vec::new();
    for (li, &n) in c.n_ladder.iter().enumerate() {
        let mut sup = Vec::new();
        let mut hetap = Vec::new();
        let mut hneg = Vec::new();
        let mut sup_plus = Vec::new();
        let mut sup_minus = Vec::new();
        for (path, results) in per_path.iter().enumerate() {
            match &results[li].1 {
                Ok(r) => {
                    let fold = |f: fn(&ErrorRow) -> f64| r.iter().map(f).fold(0.0, f64::max);
                    sup.push(fold(|e| e.err_sup));
                    hetap.push(fold(|e| e.err_hetap));
                    hneg.push(fold(|e| e.err_hneg));
                    sup_plus.push(fold(|e| e.err_sup_plus));
                    sup_minus.push(fold(|e| e.err_sup_minus));
                    rows.extend(r.iter().cloned());
                }
                Err(e) => {
                    warn!("N = {n}, path {path} failed: {e}");
                    failures.push(PathFailure {
                        n,
                        path: path as u64,
                        error: e.clone(),
                    });
                }
            }
        }
        ladder.push(LadderSummary {
            n,
            paths_ok: sup.len(),
            median_sup: median(&sup),
            iqr_sup: [quantile(&sup, 0.25), quantile(&sup, 0.75)],
            median_hetap: median(&hetap),
            iqr_hetap: [quantile(&hetap, 0.25), quantile(&hetap, 0.75)],
            median_hneg: median(&hneg),
            median_sup_plus: median(&sup_plus),
            median_sup_minus: median(&sup_minus),
        });
    }
    let ns: Vec<f64> = c.n_ladder.iter().map(|&n| n as f64).collect();
    let col = |f: fn(&LadderSummary) -> f64| ladder.iter().map(f).collect::<Vec<f64>>();
    let (m_sup, m_hetap, m_hneg) = (col(|l| l.median_sup), col(|l| l.median_hetap), col(|l| l.median_hneg));
    let slopes = Slopes {
        sup: crate::mollifier::log_log_slope(&ns, &m_sup),
        hetap: crate::mollifier::log_log_slope(&ns, &m_hetap),
        hneg: crate::mollifier::log_log_slope(&ns, &m_hneg),
    };
    let decreasing_sup = strictly_decreasing(&m_sup);
    let scale = c.initial.sup_bound();
    let final_ok = m_sup
        .last()
        .is_some_and(|&e| if scale > 0.0 { e / scale < c.error_threshold } else { e == 0.0 });
    let verdict = if decreasing_sup && final_ok && failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let summary = StudySummary {
        config: c.clone(),
        config_hash: cfg.hash.clone(),
        beta_bound: cfg.beta_bound,
        truncation: cfg.truncation.m,
        observation_times: cfg.observation_steps.len(),
        slopes,
        decreasing_sup,
        decreasing_hetap: strictly_decreasing(&m_hetap),
        decreasing_hneg: strictly_decreasing(&m_hneg),
        ladder,
        error_threshold: c.error_threshold,
        threshold_note: "bound on the final median sup-error divided by ‖ω₀‖_∞; artifact-defined default, the underlying theorem gives no rate or target accuracy".into(),
        failures,
        warnings: cfg.warnings.clone(),
        verdict,
    };
    Ok(StudyReport { rows, summary })
}

/// Write `convergence.csv` and `summary.json` into `dir`.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv = dir.join("convergence.csv");
    let json = dir.join("summary.json");
    let mut buf = Vec::new();
    write_csv(&mut buf, &report.rows)?;
    fs::write(&csv, buf)?;
    let text = serde_json::to_string_pretty(&report.summary).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&json, text + "\n")?;
    Ok((csv, json))
}

/// Write a sequence of snapshots to one file.
pub fn write_snapshots(path: &Path, frames: &[(f64, Vec<&SpectralField>)]) -> Result<()> {
    let mut buf = Vec::new();
    for (t, fields) in frames {
        write_snapshot(&mut buf, *t, fields)?;
    }
    fs::write(path, buf)?;
    Ok(())
}
