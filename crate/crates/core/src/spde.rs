//! Pseudo-spectral solver for the vorticity equation with transport noise,
//!
//! `dω = [νΔω − A(u)·∇ω] dt − Σ_k σ_k·∇ω ∘ dW^k`,  `u = K * ω`,
//!
//! in single, coupled `(ω⁺, ω⁻)` and truncated (`A = F`) variants. Diffusion
//! is integrated exactly with the factor `e^{−ν|k|²dt}`; advection and noise
//! are explicit. Products are formed on the grid and dealiased.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::biot_savart::velocity_unchecked;
use crate::error::{Error, Result};
use crate::noise::{ito_stratonovich_drift, ItoCorrection, NoiseModel, NoisePath};
use crate::particles::Truncation;
use crate::torus::{dealias, gradient, laplacian, GridSpec, SpectralField, VectorField, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    Ito,
    Stratonovich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Single,
    Coupled,
    TruncatedSingle,
    TruncatedCoupled,
}

impl Variant {
    pub fn is_coupled(self) -> bool {
        matches!(self, Variant::Coupled | Variant::TruncatedCoupled)
    }

    pub fn is_truncated(self) -> bool {
        matches!(self, Variant::TruncatedSingle | Variant::TruncatedCoupled)
    }
}

/// Evaluation of the second-order Itô correction `½ Σ_k σ_k·∇(σ_k·∇ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionForm {
    /// `½ ∇·(a ∇ω)` with `a = Σ σ_kσ_kᵀ`.
    #[default]
    Divergence,
    /// `½ (σ·∇σ)·∇ω + ½ σᵀ(Hω)σ`.
    Pointwise,
}

/// Largest admissible advective Courant number `dt·max|u|·G/(2π)`.
pub const MAX_COURANT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeConfig {
    pub nu: f64,
    pub dt: f64,
    pub form: Form,
    pub variant: Variant,
    pub truncation: Option<Truncation>,
    pub grid: GridSpec,
    #[serde(default)]
    pub correction: CorrectionForm,
}

impl SpdeConfig {
    pub fn new(grid: GridSpec, nu: f64, dt: f64, form: Form, variant: Variant) -> Self {
        Self {
            nu,
            dt,
            form,
            variant,
            truncation: None,
            grid,
            correction: CorrectionForm::Divergence,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.nu >= 0.0) {
            return Err(Error::InvalidArgument(format!("viscosity must be non-negative, got {}", self.nu)));
        }
        if self.variant.is_truncated() {
            match self.truncation {
                Some(t) => {
                    Truncation::new(t.m)?;
                }
                None => {
                    return Err(Error::InvalidArgument(
                        "truncated variants need a truncation level M".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// `[ω]` for single variants, `[ω⁺, ω⁻]` for coupled ones.
#[derive(Debug, Clone)]
pub struct SpdeState {
    pub components: Vec<SpectralField>,
}

impl SpdeState {
    pub fn single(omega: SpectralField) -> Self {
        Self { components: vec![omega] }
    }

    pub fn coupled(plus: SpectralField, minus: SpectralField) -> Self {
        Self {
            components: vec![plus, minus],
        }
    }

    pub fn is_coupled(&self) -> bool {
        self.components.len() == 2
    }

    /// `ω`, or `ω⁺ − ω⁻` for coupled states.
    pub fn omega(&self) -> SpectralField {
        match self.components.as_slice() {
            [w] => w.clone(),
            [p, m] => p.sub(m),
            _ => unreachable!("state has one or two components"),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    fn is_finite(&self) -> bool {
        self.components.iter().all(SpectralField::is_finite)
    }

    fn map(&self, f: impl Fn(&SpectralField) -> SpectralField) -> Self {
        Self {
            components: self.components.iter().map(f).collect(),
        }
    }
}

/// Per-step scalar diagnostics of `ω` (the difference for coupled states).
/// For single states `mass_plus = ∫ω` and `mass_minus = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    pub enstrophy: f64,
    pub energy: f64,
    pub mass_plus: f64,
    pub mass_minus: f64,
    pub max_u: f64,
    pub max_omega: f64,
}

/// States at the observation steps, with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct SpdeTrajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<SpdeState>,
    pub diagnostics: Vec<Diagnostics>,
}

impl SpdeTrajectory {
    /// Stored at every step from 0.
    pub fn is_dense(&self) -> bool {
        self.steps.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn final_state(&self) -> &SpdeState {
        self.states.last().expect("trajectory is non-empty")
    }
}

pub fn write_diagnostics_csv<W: Write>(mut w: W, rows: &[Diagnostics]) -> Result<()> {
    writeln!(w, "step,t,enstrophy,energy,mass_plus,mass_minus,max_u,max_omega")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.step, r.t, r.enstrophy, r.energy, r.mass_plus, r.mass_minus, r.max_u, r.max_omega
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SpdeSolver {
    config: SpdeConfig,
    noise: NoiseModel,
    sigma: Vec<VectorField>,
    correction: ItoCorrection,
}

impl SpdeSolver {
    pub fn new(config: SpdeConfig, noise: NoiseModel) -> Result<Self> {
        config.validate()?;
        let sigma = noise.fields_on_grid(&config.grid);
        let correction = ito_stratonovich_drift(&noise, &config.grid);
        Ok(Self {
            config,
            noise,
            sigma,
            correction,
        })
    }

    pub fn config(&self) -> &SpdeConfig {
        &self.config
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Initial state on the solver grid, dealiased.
    pub fn initial_state(&self, omega0: &SpectralField) -> Result<SpdeState> {
        if omega0.grid() != &self.config.grid {
            return Err(Error::InvalidGrid("initial field lives on a different grid".into()));
        }
        if self.config.variant.is_coupled() {
            let plus = omega0.map_values(|v| v.max(0.0));
            let minus = omega0.map_values(|v| (-v).max(0.0));
            Ok(SpdeState::coupled(dealias(&plus), dealias(&minus)))
        } else {
            let w = omega0.clone().assert_zero_mean(1e-8)?;
            Ok(SpdeState::single(dealias(&w).into_zero_mean()))
        }
    }

    /// `A(u)` with `u = K * ω`.
    pub fn advecting_velocity(&self, state: &SpdeState) -> VectorField {
        let u = velocity_unchecked(&state.omega());
        match self.config.truncation.filter(|_| self.config.variant.is_truncated()) {
            Some(f) => VectorField::new(
                u.u1.map_values(|v| v.clamp(-f.m, f.m)),
                u.u2.map_values(|v| v.clamp(-f.m, f.m)),
            ),
            None => u,
        }
    }

    fn advect(u: &VectorField, f: &SpectralField) -> SpectralField {
        let g = gradient(f);
        dealias(&u.u1.mul(&g.u1).add(&u.u2.mul(&g.u2)))
    }

    /// `½ Σ_k σ_k·∇(σ_k·∇f)` in the configured form.
    pub fn ito_correction(&self, f: &SpectralField) -> SpectralField {
        if self.noise.is_empty() {
            return SpectralField::zeros(*f.grid());
        }
        let [a11, a12, a22] = &self.correction.tensor;
        let g = gradient(f);
        let out = match self.config.correction {
            CorrectionForm::Divergence => {
                let q1 = a11.mul(&g.u1).add(&a12.mul(&g.u2));
                let q2 = a12.mul(&g.u1).add(&a22.mul(&g.u2));
                q1.partial(0).add(&q2.partial(1)).scale(0.5)
            }
            CorrectionForm::Pointwise => {
                let d = &self.correction.drift;
                let first = d.u1.mul(&g.u1).add(&d.u2.mul(&g.u2));
                let f11 = g.u1.partial(0);
                let f12 = g.u1.partial(1);
                let f22 = g.u2.partial(1);
                let second = a11
                    .mul(&f11)
                    .add(&a12.mul(&f12).scale(2.0))
                    .add(&a22.mul(&f22));
                first.add(&second).scale(0.5)
            }
        };
        dealias(&out)
    }

    /// `−Σ_k σ_k·∇f ΔW^k`.
    fn noise_term(&self, f: &SpectralField, dw: &[f64]) -> SpectralField {
        let g = gradient(f);
        let mut acc = SpectralField::zeros(*f.grid());
        for (s, w) in self.sigma.iter().zip(dw) {
            acc = acc.axpby(1.0, &s.u1.mul(&g.u1).add(&s.u2.mul(&g.u2)), -w);
        }
        dealias(&acc)
    }

    /// `νΔω − A(u)·∇ω` and, in Itô form, `+ ½Σ σ_k·∇(σ_k·∇ω)`.
    pub fn drift_rhs(&self, state: &SpdeState) -> SpdeState {
        let u = self.advecting_velocity(state);
        let explicit = self.explicit_drift(state, &u, self.config.form);
        let nu = self.config.nu;
        SpdeState {
            components: state
                .components
                .iter()
                .zip(&explicit.components)
                .map(|(f, d)| laplacian(f).axpby(nu, d, 1.0))
                .collect(),
        }
    }

    fn integrating_factor(&self, f: &SpectralField) -> SpectralField {
        let c = self.config.nu * self.config.dt;
        if c == 0.0 {
            return f.clone();
        }
        f.apply_radial(|k2| (-c * k2).exp())
    }

    fn check_cfl(&self, u: &VectorField, step: usize) -> Result<f64> {
        let max_u = u.max_magnitude();
        let courant = self.config.dt * max_u * self.config.grid.n() as f64 / TWO_PI;
        if courant > MAX_COURANT {
            return Err(Error::Cfl { step, courant });
        }
        Ok(max_u)
    }

    fn finish(&self, mut next: SpdeState, step: usize) -> Result<SpdeState> {
        next = next.map(dealias);
        if !next.is_coupled() {
            next.components[0] = next.components[0].clone().into_zero_mean();
        }
        if !next.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "vorticity field is NaN or infinite".into(),
            });
        }
        Ok(next)
    }

    /// Euler–Maruyama on the Itô form:
    /// `ω̂ ← e^{−ν|k|²dt}[ω̂ + dt·N̂ + Σ_k Ĝ_k ΔW^k]`.
    pub fn step_ito(&self, state: &SpdeState, dw: &[f64], step: usize) -> Result<SpdeState> {
        let u = self.advecting_velocity(state);
        self.check_cfl(&u, step)?;
        let dt = self.config.dt;
        let n = self.explicit_drift(state, &u, Form::Ito);
        let next = SpdeState {
            components: state
                .components
                .iter()
                .zip(&n.components)
                .map(|(f, d)| {
                    let mut v = f.axpby(1.0, d, dt);
                    if !dw.is_empty() {
                        v = v.add(&self.noise_term(f, dw));
                    }
                    self.integrating_factor(&v)
                })
                .collect(),
        };
        self.finish(next, step)
    }

    /// Heun on the noise term of the Stratonovich form, Euler on the drift:
    /// `ω* = E(ω + dt N + G(ω)ΔW)`, `ω' = E(ω + dt N + ½G(ω)ΔW) + ½G(ω*)ΔW`.
    pub fn step_stratonovich(&self, state: &SpdeState, dw: &[f64], step: usize) -> Result<SpdeState> {
        let u = self.advecting_velocity(state);
        self.check_cfl(&u, step)?;
        let dt = self.config.dt;
        let n = self.explicit_drift(state, &u, Form::Stratonovich);
        if dw.is_empty() {
            let next = SpdeState {
                components: state
                    .components
                    .iter()
                    .zip(&n.components)
                    .map(|(f, d)| self.integrating_factor(&f.axpby(1.0, d, dt)))
                    .collect(),
            };
            return self.finish(next, step);
        }
        let mut components = Vec::with_capacity(state.components.len());
        for (f, d) in state.components.iter().zip(&n.components) {
            let base = f.axpby(1.0, d, dt);
            let g0 = self.noise_term(f, dw);
            let pred = dealias(&self.integrating_factor(&base.add(&g0)));
            let g1 = self.noise_term(&pred, dw);
            let v = self.integrating_factor(&base.axpby(1.0, &g0, 0.5));
            components.push(v.axpby(1.0, &g1, 0.5));
        }
        self.finish(SpdeState { components }, step)
    }

    /// `−A(u)·∇ω`, plus the Itô correction when `form` is Itô.
    fn explicit_drift(&self, state: &SpdeState, u: &VectorField, form: Form) -> SpdeState {
        state.map(|f| {
            let mut d = Self::advect(u, f).scale(-1.0);
            if form == Form::Ito {
                d = d.add(&self.ito_correction(f));
            }
            d
        })
    }

    /// One step in the configured form.
    pub fn step(&self, state: &SpdeState, dw: &[f64], step: usize) -> Result<SpdeState> {
        match self.config.form {
            Form::Ito => self.step_ito(state, dw, step),
            Form::Stratonovich => self.step_stratonovich(state, dw, step),
        }
    }

    pub fn diagnostics(&self, state: &SpdeState, step: usize) -> Diagnostics {
        let w = state.omega();
        let u = self.advecting_velocity(state);
        let cell = self.config.grid.cell_area();
        let enstrophy = w.values().iter().map(|v| v * v).sum::<f64>() * cell;
        let energy = 0.5
            * u.u1
                .values()
                .iter()
                .zip(u.u2.values())
                .map(|(a, b)| a * a + b * b)
                .sum::<f64>()
            * cell;
        let (mass_plus, mass_minus) = match state.components.as_slice() {
            [p, m] => (p.integral(), m.integral()),
            [w] => (w.integral(), 0.0),
            _ => unreachable!(),
        };
        Diagnostics {
            step,
            t: step as f64 * self.config.dt,
            enstrophy,
            energy,
            mass_plus,
            mass_minus,
            max_u: u.max_magnitude(),
            max_omega: w.max_abs(),
        }
    }

    /// Integrate from `initial` through the last observation step using the
    /// common increments of `path`.
    pub fn solve(&self, initial: &SpdeState, path: &NoisePath, observation_steps: &[usize]) -> Result<SpdeTrajectory> {
        let dt = self.config.dt;
        if (path.dt() - dt).abs() > 1e-12 * dt {
            return Err(Error::InvalidArgument(format!(
                "noise path dt {} differs from solver dt {dt}",
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
        if initial.is_coupled() != self.config.variant.is_coupled() {
            return Err(Error::InvalidArgument("initial state does not match the solver variant".into()));
        }
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
        let mut traj = SpdeTrajectory {
            steps: Vec::with_capacity(observation_steps.len()),
            times: Vec::with_capacity(observation_steps.len()),
            states: Vec::with_capacity(observation_steps.len()),
            diagnostics: Vec::with_capacity(last + 1),
        };
        let mut state = initial.clone();
        let mut obs = observation_steps.iter().peekable();
        for step in 0..=last {
            traj.diagnostics.push(self.diagnostics(&state, step));
            if obs.peek() == Some(&&step) {
                obs.next();
                traj.steps.push(step);
                traj.times.push(step as f64 * dt);
                traj.states.push(state.clone());
            }
            if step < last {
                state = self.step(&state, path.common(step), step)?;
            }
        }
        Ok(traj)
    }

    /// `|LHS − RHS|(t_n)` of the weak formulation tested against `phi`,
    ///
    /// `⟨ω_t, φ⟩ = ⟨ω_0, φ⟩ + ∫⟨ω, A(u)·∇φ + νΔφ + ½Σ∇·(σσᵀ∇φ)⟩ ds + Σ_k ∫⟨ω, σ_k·∇φ⟩ dW^k`,
    ///
    /// with left-point quadrature; the Itô correction is included for
    /// both forms since the quadrature is Itô.
    pub fn weak_form_residual(&self, traj: &SpdeTrajectory, path: &NoisePath, phi: &SpectralField) -> Result<Vec<f64>> {
        if !traj.is_dense() {
            return Err(Error::NotDense(format!(
                "{} stored states for {} steps",
                traj.states.len(),
                traj.steps.last().copied().unwrap_or(0) + 1
            )));
        }
        let dt = self.config.dt;
        let cell = self.config.grid.cell_area();
        let inner = |a: &SpectralField, b: &SpectralField| -> f64 {
            a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() * cell
        };
        let grad_phi = gradient(phi);
        let lap_phi = laplacian(phi);
        let corr_phi = self.ito_correction(phi);
        let sigma_grad_phi: Vec<SpectralField> = self
            .sigma
            .iter()
            .map(|s| s.u1.mul(&grad_phi.u1).add(&s.u2.mul(&grad_phi.u2)))
            .collect();
        let omega0 = traj.states[0].omega();
        let base = inner(&omega0, phi);
        let mut integral = 0.0;
        let mut out = Vec::with_capacity(traj.states.len());
        for (n, state) in traj.states.iter().enumerate() {
            let w = state.omega();
            out.push((inner(&w, phi) - base - integral).abs());
            let u = self.advecting_velocity(state);
            let transport = u.u1.mul(&grad_phi.u1).add(&u.u2.mul(&grad_phi.u2));
            let integrand = inner(&w, &transport) + self.config.nu * inner(&w, &lap_phi) + inner(&w, &corr_phi);
            integral += dt * integrand;
            if n < path.n_steps() && !sigma_grad_phi.is_empty() {
                let dw = path.common(n);
                for (sg, w_k) in sigma_grad_phi.iter().zip(dw) {
                    integral += inner(&w, sg) * w_k;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoisePreset;
    use crate::torus::wrap;

    fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    fn solver(g: usize, nu: f64, dt: f64, form: Form, variant: Variant, noise: NoiseModel) -> SpdeSolver {
        SpdeSolver::new(SpdeConfig::new(GridSpec::new(g).unwrap(), nu, dt, form, variant), noise).unwrap()
    }

    #[test]
    fn single_mode_rhs_is_pure_diffusion() {
        let s = solver(32, 0.1, 1e-3, Form::Ito, Variant::Single, NoiseModel::off());
        let g = s.config().grid;
        let w = SpectralField::from_fn(g, |x, _| x.cos()).into_zero_mean();
        let rhs = s.drift_rhs(&SpdeState::single(w.clone()));
        assert!(max_diff(&rhs.components[0], &w.scale(-0.1)) < 1e-14);
        for m in [[1.0, 0.0], [2.0, 3.0], [-1.0, 4.0]] {
            let w = SpectralField::from_fn(g, |x, y| (m[0] * x + m[1] * y).cos()).into_zero_mean();
            let u = velocity_unchecked(&w);
            assert!(SpdeSolver::advect(&u, &w).max_abs() < 1e-12);
        }
    }

    #[test]
    fn constant_noise_correction_is_directional_second_derivative() {
        let noise = NoiseModel::from_preset(&NoisePreset::Constant { c: [1.0, 0.0] }).unwrap();
        for form in [CorrectionForm::Divergence, CorrectionForm::Pointwise] {
            let mut cfg = SpdeConfig::new(GridSpec::new(32).unwrap(), 0.0, 1e-3, Form::Ito, Variant::Single);
            cfg.correction = form;
            let s = SpdeSolver::new(cfg, noise.clone()).unwrap();
            let w = SpectralField::from_fn(cfg.grid, |x, _| x.cos()).into_zero_mean();
            let rhs = s.drift_rhs(&SpdeState::single(w.clone()));
            assert!(max_diff(&rhs.components[0], &w.scale(-0.5)) < 1e-14);
        }
    }

    /// Fourth-order centered differences of grid values.
    fn fd(values: &[f64], n: usize, h: f64, i: usize, j: usize, axis: usize) -> f64 {
        let at = |o: i64| {
            let (a, b) = if axis == 0 {
                ((i as i64 + o).rem_euclid(n as i64) as usize, j)
            } else {
                (i, (j as i64 + o).rem_euclid(n as i64) as usize)
            };
            values[a * n + b]
        };
        (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h)
    }

    #[test]
    fn drift_matches_finite_differences() {
        let noise = NoiseModel::from_preset(&NoisePreset::Composite { amplitude: 0.3 }).unwrap();
        let nu = 0.05;
        let g = GridSpec::new(128).unwrap();
        let s = SpdeSolver::new(SpdeConfig::new(g, nu, 1e-3, Form::Ito, Variant::Single), noise.clone()).unwrap();
        let w = SpectralField::from_fn(g, |x, y| 0.3 * (x + 2.0 * y).sin() + 0.2 * (2.0 * x).cos() - 0.1 * (x - y).cos())
            .into_zero_mean();
        let rhs = s.drift_rhs(&SpdeState::single(w.clone())).components.remove(0);
        let n = g.n();
        let h = g.spacing();
        let u = velocity_unchecked(&w);
        let d = |v: &[f64], i, j, a| fd(v, n, h, i, j, a);
        let wv = w.values();
        let w1: Vec<f64> = (0..g.len()).map(|idx| d(wv, idx / n, idx % n, 0)).collect();
        let w2: Vec<f64> = (0..g.len()).map(|idx| d(wv, idx / n, idx % n, 1)).collect();
        let field = &noise.fields()[0];
        // σ·∇(σ·∇ω) from nested differences
        let s_grad: Vec<f64> = (0..g.len())
            .map(|idx| {
                let sv = field.value(g.point(idx / n, idx % n));
                sv[0] * w1[idx] + sv[1] * w2[idx]
            })
            .collect();
        let scale = rhs.max_abs();
        let mut worst: f64 = 0.0;
        for i in (0..n).step_by(9) {
            for j in (0..n).step_by(11) {
                let idx = i * n + j;
                let lap = d(&w1, i, j, 0) + d(&w2, i, j, 1);
                let adv = u.u1.values()[idx] * w1[idx] + u.u2.values()[idx] * w2[idx];
                let sv = field.value(g.point(i, j));
                let corr = 0.5 * (sv[0] * d(&s_grad, i, j, 0) + sv[1] * d(&s_grad, i, j, 1));
                let expected = nu * lap - adv + corr;
                worst = worst.max((rhs.value(i, j) - expected).abs() / scale);
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn correction_forms_agree() {
        let noise = NoiseModel::from_preset(&NoisePreset::Composite { amplitude: 0.4 }).unwrap();
        let g = GridSpec::new(64).unwrap();
        let mut cfg = SpdeConfig::new(g, 0.0, 1e-3, Form::Ito, Variant::Single);
        let a = SpdeSolver::new(cfg, noise.clone()).unwrap();
        cfg.correction = CorrectionForm::Pointwise;
        let b = SpdeSolver::new(cfg, noise).unwrap();
        let w = SpectralField::from_fn(g, |x, y| (x + y).sin() + 0.5 * (3.0 * y).cos()).into_zero_mean();
        assert!(max_diff(&a.ito_correction(&w), &b.ito_correction(&w)) < 1e-12);
    }

    #[test]
    fn heat_eigenmode_decays_exactly() {
        let (nu, dt, steps) = (0.1, 1e-3, 500);
        for form in [Form::Ito, Form::Stratonovich] {
            let s = solver(64, nu, dt, form, Variant::Single, NoiseModel::off());
            let g = s.config().grid;
            let w0 = SpectralField::from_fn(g, |x, y| (x + y).cos());
            let init = s.initial_state(&w0).unwrap();
            let path = NoisePath::generate(0, 0, dt, steps, 0, 0).unwrap();
            let traj = s.solve(&init, &path, &[steps]).unwrap();
            let exact = w0.scale((-2.0 * nu * 0.5f64).exp());
            let err = max_diff(&traj.final_state().components[0], &exact);
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn deterministic_self_convergence_is_first_order() {
        let g = GridSpec::new(64).unwrap();
        let w0 = SpectralField::from_fn(g, |x, y| x.cos() + (2.0 * y).cos());
        let t_end = 0.25;
        let run = |steps: usize| {
            let dt = t_end / steps as f64;
            let s = solver(64, 0.01, dt, Form::Ito, Variant::Single, NoiseModel::off());
            let path = NoisePath::generate(0, 0, dt, steps, 0, 0).unwrap();
            let init = s.initial_state(&w0).unwrap();
            s.solve(&init, &path, &[steps]).unwrap().final_state().components[0].clone()
        };
        let (a, b, c) = (run(32), run(64), run(128));
        let e1 = max_diff(&a, &b);
        let e2 = max_diff(&b, &c);
        let slope = (e1 / e2).log2();
        assert!((slope - 1.0).abs() < 0.1, "{slope}");
    }

    #[test]
    fn constant_noise_translates_rigidly() {
        let noise = NoiseModel::from_preset(&NoisePreset::Constant { c: [0.5, 0.3] }).unwrap();
        let (dt, steps) = (2.5e-4, 1000);
        let s = solver(64, 0.0, dt, Form::Stratonovich, Variant::Single, noise);
        let g = s.config().grid;
        let profile = |x: f64, y: f64| (x + y).cos() + 0.5 * (x - y).sin();
        let w0 = SpectralField::from_fn(g, profile);
        let path = NoisePath::generate(1, 0, dt, steps, 21, 0).unwrap();
        let traj = s.solve(&s.initial_state(&w0).unwrap(), &path, &[steps]).unwrap();
        let shift: f64 = path.common_all().iter().sum();
        let exact = SpectralField::from_fn(g, |x, y| profile(wrap(x - 0.5 * shift), wrap(y - 0.3 * shift)));
        let err = max_diff(&traj.final_state().components[0], &exact);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn schemes_coincide_without_noise() {
        let g = GridSpec::new(32).unwrap();
        let w0 = SpectralField::from_fn(g, |x, y| x.cos() + (2.0 * y).cos());
        let path = NoisePath::generate(0, 0, 0.01, 10, 0, 0).unwrap();
        let mut finals = Vec::new();
        for form in [Form::Ito, Form::Stratonovich] {
            let s = solver(32, 0.02, 0.01, form, Variant::Single, NoiseModel::off());
            let traj = s.solve(&s.initial_state(&w0).unwrap(), &path, &[10]).unwrap();
            finals.push(traj.final_state().components[0].clone());
        }
        assert_eq!(finals[0].values(), finals[1].values());
    }

    #[test]
    fn coupled_difference_matches_single() {
        let g = GridSpec::new(64).unwrap();
        let w0 = SpectralField::from_fn(g, |x, y| x.cos() + (2.0 * y).cos());
        let (dt, steps) = (1.0 / 256.0, 64);
        let path = NoisePath::generate(0, 0, dt, steps, 0, 0).unwrap();
        let single = solver(64, 0.01, dt, Form::Ito, Variant::Single, NoiseModel::off());
        let coupled = solver(64, 0.01, dt, Form::Ito, Variant::Coupled, NoiseModel::off());
        let a = single.solve(&single.initial_state(&w0).unwrap(), &path, &[steps]).unwrap();
        let b = coupled.solve(&coupled.initial_state(&w0).unwrap(), &path, &[steps]).unwrap();
        let err = max_diff(&a.final_state().omega(), &b.final_state().omega());
        assert!(err < 1e-6, "{err}");
        let d0 = &b.diagnostics[0];
        for d in &b.diagnostics {
            assert!((d.mass_plus - d0.mass_plus).abs() < 1e-8 * d0.mass_plus);
            assert!((d.mass_minus - d0.mass_minus).abs() < 1e-8 * d0.mass_minus);
        }
        for w in a.diagnostics.windows(2) {
            assert!(w[1].enstrophy <= w[0].enstrophy + 1e-8);
            assert!(w[1].mass_plus.abs() < 1e-12);
        }
    }

    #[test]
    fn inactive_truncation_changes_nothing() {
        let g = GridSpec::new(32).unwrap();
        let w0 = SpectralField::from_fn(g, |x, y| x.cos() + (2.0 * y).cos());
        let path = NoisePath::generate(0, 0, 0.01, 20, 0, 0).unwrap();
        let plain = solver(32, 0.01, 0.01, Form::Ito, Variant::Coupled, NoiseModel::off());
        let mut cfg = *plain.config();
        cfg.variant = Variant::TruncatedCoupled;
        cfg.truncation = Some(Truncation::new(10.0).unwrap());
        let trunc = SpdeSolver::new(cfg, NoiseModel::off()).unwrap();
        let a = plain.solve(&plain.initial_state(&w0).unwrap(), &path, &[20]).unwrap();
        let b = trunc.solve(&trunc.initial_state(&w0).unwrap(), &path, &[20]).unwrap();
        assert_eq!(a.final_state().omega().values(), b.final_state().omega().values());
        cfg.truncation = None;
        assert!(SpdeSolver::new(cfg, NoiseModel::off()).is_err());
    }

    #[test]
    fn cfl_violation_is_reported() {
        let s = solver(64, 0.0, 1.0, Form::Ito, Variant::Single, NoiseModel::off());
        let g = s.config().grid;
        let w0 = SpectralField::from_fn(g, |x, _| x.cos());
        let path = NoisePath::generate(0, 0, 1.0, 2, 0, 0).unwrap();
        let err = s.solve(&s.initial_state(&w0).unwrap(), &path, &[2]).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    #[test]
    fn weak_form_residual_on_exact_solution() {
        let (nu, dt, steps) = (0.01, 1e-4, 5000);
        let s = solver(32, nu, dt, Form::Ito, Variant::Single, NoiseModel::off());
        let g = s.config().grid;
        let w0 = SpectralField::from_fn(g, |x, y| (x + y).cos());
        let path = NoisePath::generate(0, 0, dt, steps, 0, 0).unwrap();
        let all: Vec<usize> = (0..=steps).collect();
        let traj = s.solve(&s.initial_state(&w0).unwrap(), &path, &all).unwrap();
        let r = s.weak_form_residual(&traj, &path, &w0).unwrap();
        assert!(r.iter().cloned().fold(0.0, f64::max) < 1e-6);
        let one = SpectralField::from_fn(g, |_, _| 1.0);
        assert!(s.weak_form_residual(&traj, &path, &one).unwrap().iter().all(|&v| v < 1e-12));
        let sparse = s.solve(&s.initial_state(&w0).unwrap(), &path, &[0, steps]).unwrap();
        assert!(matches!(s.weak_form_residual(&sparse, &path, &w0), Err(Error::NotDense(_))));
    }

    #[test]
    fn diagnostics_csv_has_a_row_per_step() {
        let s = solver(16, 0.1, 0.01, Form::Ito, Variant::Single, NoiseModel::off());
        let w0 = SpectralField::from_fn(s.config().grid, |x, _| x.cos());
        let path = NoisePath::generate(0, 0, 0.01, 3, 0, 0).unwrap();
        let traj = s.solve(&s.initial_state(&w0).unwrap(), &path, &[3]).unwrap();
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &traj.diagnostics).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
