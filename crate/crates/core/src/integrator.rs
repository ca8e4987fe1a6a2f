//! Time stepping of the Galerkin system and its first and second variations.
//!
//! All schemes share the form
//!
//! ```text
//! X_{n+1} = e^{dtA} (X_n + dt·f(X_n)) + ξ_n
//! ```
//!
//! with `f = B_M` (or its tamed version) and `ξ_n` the additive noise term
//! supplied by [`IncrementSampler`]. The tangent `η` and second variation
//! `ζ` are the exact first and second derivatives of this one-step map with
//! respect to the initial value, so finite differences taken along one noise
//! path converge to them at the rate of the difference quotient alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{CovarianceModel, IncrementKind, IncrementSampler, NoiseIncrement, NoiseStream};
use crate::scalar::Real;
use crate::spectral::{eigenvalue, PseudoSpectral, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `X_{n+1} = e^{dtA}(X_n + dt B_M(X_n) + ΔW_n)`.
    ExponentialEuler,
    /// As above with `dt B_M(X_n)` replaced by `dt B_M(X_n) / (1 + dt ‖B_M(X_n)‖)`.
    TamedExponentialEuler,
    /// `X_{n+1} = e^{dtA}(X_n + dt B_M(X_n)) + ∫ e^{(t_{n+1}-s)A} dW(s)` with
    /// the stochastic convolution sampled exactly. Reproduces the
    /// Ornstein–Uhlenbeck law modewise when `B` is switched off.
    AcceleratedExponentialEuler,
}

impl Scheme {
    pub fn increment_kind(self) -> IncrementKind {
        match self {
            Scheme::ExponentialEuler | Scheme::TamedExponentialEuler => IncrementKind::SemigroupBrownian,
            Scheme::AcceleratedExponentialEuler => IncrementKind::ExactConvolution,
        }
    }

    fn tamed(self) -> bool {
        matches!(self, Scheme::TamedExponentialEuler)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig<T: Real> {
    pub dt: T,
    pub scheme: Scheme,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t_end: T,
    /// `false` drops `B_M` (linear stochastic heat equation).
    #[serde(default = "default_true")]
    pub nonlinear: bool,
}

fn default_true() -> bool {
    true
}

impl<T: Real> SchemeConfig<T> {
    pub fn new(m: usize, t_end: T, steps: usize, scheme: Scheme) -> Self {
        Self { dt: t_end / T::from_usize_lossy(steps), scheme, m, t_end, nonlinear: true }
    }

    pub fn linear(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    /// Number of steps; fails unless `dt` divides `T` to 1e-12 relative.
    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        let ratio = (self.t_end / self.dt).to_f64_lossy();
        Ok(ratio.round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("M", "Galerkin dimension must be at least 1"));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::param("dt", "time step must be positive"));
        }
        if !(self.t_end >= T::zero()) || !self.t_end.is_finite() {
            return Err(Error::param("T", "terminal time must be nonnegative"));
        }
        let ratio = (self.t_end / self.dt).to_f64_lossy();
        if (ratio - ratio.round()).abs() > 1e-12 * ratio.max(1.0) {
            return Err(Error::param("dt", format!("dt must divide T (T/dt = {ratio})")));
        }
        Ok(())
    }
}

/// Second variation tracked for the pair `(etas[g], etas[h])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ZetaTrack<T: Real> {
    pub g: usize,
    pub h: usize,
    pub field: SpectralField<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct SolverState<T: Real> {
    pub x: SpectralField<T>,
    pub etas: Vec<SpectralField<T>>,
    pub zetas: Vec<ZetaTrack<T>>,
    pub step: usize,
    pub time: T,
}

impl<T: Real> SolverState<T> {
    /// Starts from `P_M x0` with no variations tracked.
    pub fn new(x0: &SpectralField<T>, m: usize) -> Self {
        Self { x: x0.resized(m), etas: Vec::new(), zetas: Vec::new(), step: 0, time: T::zero() }
    }

    /// Tracks `η^h` with `η(0) = P_M h`; returns its index.
    pub fn track_tangent(&mut self, h: &SpectralField<T>) -> usize {
        self.etas.push(h.resized(self.x.dim()));
        self.etas.len() - 1
    }

    /// Tracks `ζ^{g,h}` for two already-tracked tangents, `ζ(0) = 0`.
    pub fn track_second_variation(&mut self, g: usize, h: usize) -> Result<usize> {
        if g >= self.etas.len() || h >= self.etas.len() {
            return Err(Error::param("zeta", "both directions must be tracked tangents"));
        }
        self.zetas.push(ZetaTrack { g, h, field: SpectralField::zeros(self.x.dim()) });
        Ok(self.zetas.len() - 1)
    }

    fn check_finite(&self) -> Result<()> {
        let bad = |what| Err(Error::BlowUp { step: self.step, time: self.time.to_f64_lossy(), what });
        if !self.x.is_finite() {
            return bad("solution");
        }
        if self.etas.iter().any(|e| !e.is_finite()) {
            return bad("tangent");
        }
        if self.zetas.iter().any(|z| !z.field.is_finite()) {
            return bad("second variation");
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Parts {
    x: bool,
    eta: bool,
    zeta: bool,
}

/// One-step map for a fixed configuration. Holds the semigroup factors and
/// transform workspace; a stepper is used by one trajectory at a time.
#[derive(Clone, Debug)]
pub struct Stepper<T: Real> {
    cfg: SchemeConfig<T>,
    decay: Vec<T>,
    plan: PseudoSpectral<T>,
    gx: Vec<T>,
    gtmp: Vec<T>,
    g_eta: Vec<Vec<T>>,
    bx: Vec<T>,
    b_eta: Vec<Vec<T>>,
    b_zeta: Vec<Vec<T>>,
    b_src: Vec<Vec<T>>,
}

impl<T: Real> Stepper<T> {
    pub fn new(cfg: SchemeConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.m;
        let decay = (1..=m).map(|k| (-eigenvalue::<T>(k) * cfg.dt).exp()).collect();
        let plan = PseudoSpectral::dealiased(m);
        let ng = plan.grid_intervals() - 1;
        Ok(Self {
            cfg,
            decay,
            plan,
            gx: vec![T::zero(); ng],
            gtmp: vec![T::zero(); ng],
            g_eta: Vec::new(),
            bx: vec![T::zero(); m],
            b_eta: Vec::new(),
            b_zeta: Vec::new(),
            b_src: Vec::new(),
        })
    }

    pub fn config(&self) -> &SchemeConfig<T> {
        &self.cfg
    }

    /// `e^{dtA}` factors, one per mode.
    pub fn decay_factors(&self) -> &[T] {
        &self.decay
    }

    /// The additive term `e^{dtA} ΔW` of the Brownian-increment schemes.
    pub fn additive_from_brownian(&self, dw: &SpectralField<T>) -> Vec<T> {
        self.decay.iter().zip(dw.coeffs()).map(|(&d, &w)| d * w).collect()
    }

    fn ensure_buffers(&mut self, n_eta: usize, n_zeta: usize) {
        let ng = self.gx.len();
        let m = self.cfg.m;
        self.g_eta.resize_with(n_eta, || vec![T::zero(); ng]);
        self.b_eta.resize_with(n_eta, || vec![T::zero(); m]);
        self.b_zeta.resize_with(n_zeta, || vec![T::zero(); m]);
        self.b_src.resize_with(n_zeta, || vec![T::zero(); m]);
    }

    fn check_dims(&self, state: &SolverState<T>) -> Result<()> {
        let m = self.cfg.m;
        let bad = |got| Err(Error::DimensionMismatch { expected: m, got });
        if state.x.dim() != m {
            return bad(state.x.dim());
        }
        if let Some(e) = state.etas.iter().find(|e| e.dim() != m) {
            return bad(e.dim());
        }
        if let Some(z) = state.zetas.iter().find(|z| z.field.dim() != m) {
            return bad(z.field.dim());
        }
        Ok(())
    }

    /// Advances `X`, every tangent and every second variation by one step.
    /// `additive` holds the noise term (at least the first M modes are read).
    pub fn advance(&mut self, state: &mut SolverState<T>, additive: &[T]) -> Result<()> {
        self.update(state, Some(additive), Parts { x: true, eta: true, zeta: true })
    }

    /// Advances `X` only, including the step counter and time.
    pub fn step(&mut self, state: &mut SolverState<T>, additive: &[T]) -> Result<()> {
        self.update(state, Some(additive), Parts { x: true, eta: false, zeta: false })
    }

    /// `η_{n+1} = e^{dtA}(η_n + 2 dt B_M[X_n, η_n])` for every tracked
    /// tangent, with `X_n = state.x`. Call before [`step`](Self::step).
    pub fn step_tangent(&mut self, state: &mut SolverState<T>) -> Result<()> {
        if state.etas.is_empty() {
            return Err(Error::param("eta", "no tangent directions are tracked"));
        }
        self.update(state, None, Parts { x: false, eta: true, zeta: false })
    }

    /// `ζ_{n+1} = e^{dtA}(ζ_n + 2 dt B_M[X_n, ζ_n] + 2 dt B_M[η^g_n, η^h_n])`.
    /// Call before [`step_tangent`](Self::step_tangent).
    pub fn step_second_variation(&mut self, state: &mut SolverState<T>) -> Result<()> {
        if state.zetas.is_empty() {
            return Err(Error::param("zeta", "no second variation is tracked"));
        }
        self.update(state, None, Parts { x: false, eta: false, zeta: true })
    }

    fn update(&mut self, state: &mut SolverState<T>, additive: Option<&[T]>, parts: Parts) -> Result<()> {
        self.check_dims(state)?;
        let m = self.cfg.m;
        let dt = self.cfg.dt;
        let two = T::c(2.0);
        let nonlinear = self.cfg.nonlinear;
        let n_eta = state.etas.len();
        let n_zeta = state.zetas.len();
        let need_eta = parts.eta || (parts.zeta && n_zeta > 0);
        self.ensure_buffers(n_eta, n_zeta);

        if nonlinear {
            self.plan.to_grid(state.x.coeffs(), &mut self.gx);
            let tamed = self.cfg.scheme.tamed();
            if parts.x || tamed {
                for (t, &g) in self.gtmp.iter_mut().zip(&self.gx) {
                    *t = g * g;
                }
                self.plan.derivative_of_product(&self.gtmp, &mut self.bx);
            }
            if need_eta {
                for i in 0..n_eta {
                    self.plan.to_grid(state.etas[i].coeffs(), &mut self.g_eta[i]);
                    for ((t, &a), &b) in self.gtmp.iter_mut().zip(&self.gx).zip(&self.g_eta[i]) {
                        *t = a * b;
                    }
                    self.plan.derivative_of_product(&self.gtmp, &mut self.b_eta[i]);
                }
            }
            if parts.zeta {
                for j in 0..n_zeta {
                    let ZetaTrack { g, h, ref field } = state.zetas[j];
                    self.plan.to_grid(field.coeffs(), &mut self.gtmp);
                    for (t, &a) in self.gtmp.iter_mut().zip(&self.gx) {
                        *t = *t * a;
                    }
                    self.plan.derivative_of_product(&self.gtmp, &mut self.b_zeta[j]);
                    for ((t, &a), &b) in self.gtmp.iter_mut().zip(&self.g_eta[g]).zip(&self.g_eta[h]) {
                        *t = a * b;
                    }
                    self.plan.derivative_of_product(&self.gtmp, &mut self.b_src[j]);
                }
            }
            if tamed {
                self.apply_taming(n_eta, n_zeta, &state.zetas, parts);
            }
        }

        // ζ first: it reads η_n
        if parts.zeta {
            for j in 0..n_zeta {
                let z = state.zetas[j].field.coeffs_mut();
                for k in 0..m {
                    let drift = if nonlinear { two * dt * (self.b_zeta[j][k] + self.b_src[j][k]) } else { T::zero() };
                    z[k] = self.decay[k] * (z[k] + drift);
                }
            }
        }
        if parts.eta {
            for i in 0..n_eta {
                let e = state.etas[i].coeffs_mut();
                for k in 0..m {
                    let drift = if nonlinear { two * dt * self.b_eta[i][k] } else { T::zero() };
                    e[k] = self.decay[k] * (e[k] + drift);
                }
            }
        }
        if parts.x {
            let add = additive.expect("noise term required to advance X");
            let x = state.x.coeffs_mut();
            for k in 0..m {
                let drift = if nonlinear { dt * self.bx[k] } else { T::zero() };
                let noise = add.get(k).copied().unwrap_or_else(T::zero);
                x[k] = self.decay[k] * (x[k] + drift) + noise;
            }
            state.step += 1;
            state.time = T::from_usize_lossy(state.step) * dt;
        }
        state.check_finite()
    }

    /// Rewrites the `B`-buffers so that the generic update applies the
    /// exact first and second derivatives of the tamed drift
    /// `F(X) = B(X) / (1 + dt ‖B(X)‖)`.
    fn apply_taming(&mut self, n_eta: usize, n_zeta: usize, zetas: &[ZetaTrack<T>], parts: Parts) {
        let dt = self.cfg.dt;
        let one = T::one();
        let two = T::c(2.0);
        let b = &self.bx;
        let r = b.iter().map(|&v| v * v).sum::<T>().sqrt();
        if r == T::zero() {
            return;
        }
        let dot = |u: &[T], v: &[T]| u.iter().zip(v).map(|(&a, &c)| a * c).sum::<T>();
        let g = one / (one + dt * r);
        let g1 = -dt * g * g;
        let g2 = two * dt * dt * g * g * g;
        // derivative directions of B: b'_u = 2 B[X,u]; buffers hold B[X,u]
        let dr: Vec<T> = (0..n_eta).map(|i| two * dot(b, &self.b_eta[i]) / r).collect();
        if parts.zeta {
            for j in 0..n_zeta {
                let ZetaTrack { g: ig, h: ih, .. } = zetas[j];
                let bz: Vec<T> = self.b_zeta[j].iter().map(|&v| two * v).collect();
                let drz = dot(b, &bz) / r;
                let bu: Vec<T> = self.b_eta[ig].iter().map(|&v| two * v).collect();
                let bv: Vec<T> = self.b_eta[ih].iter().map(|&v| two * v).collect();
                let buv: Vec<T> = self.b_src[j].iter().map(|&v| two * v).collect();
                let d2r = (dot(&bu, &bv) + dot(b, &buv)) / r - dr[ig] * dr[ih] / r;
                // DF·ζ + D²F(u,v), stored halved since the update multiplies by 2 dt
                for k in 0..b.len() {
                    let dfz = bz[k] * g + b[k] * g1 * drz;
                    let d2f = buv[k] * g
                        + bu[k] * g1 * dr[ih]
                        + bv[k] * g1 * dr[ig]
                        + b[k] * (g2 * dr[ig] * dr[ih] + g1 * d2r);
                    self.b_zeta[j][k] = dfz / two;
                    self.b_src[j][k] = d2f / two;
                }
            }
        }
        if parts.eta {
            for i in 0..n_eta {
                for k in 0..b.len() {
                    let bu = two * self.b_eta[i][k];
                    self.b_eta[i][k] = (bu * g + b[k] * g1 * dr[i]) / two;
                }
            }
        }
        for v in self.bx.iter_mut() {
            *v = *v * g;
        }
    }
}

/// What [`evolve`] records along the way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRequest {
    /// Mesh stride in steps; 0 records only the initial and terminal times.
    pub record_every: usize,
    /// Extra exponents α for `‖(-A)^α X‖` on the mesh.
    pub fractional_alphas: Vec<f64>,
    /// Grid estimate of `sup_z |X(t,z)|` on the mesh.
    pub grid_sup: bool,
    /// Keep full snapshots of the state on the mesh.
    pub snapshots: bool,
    /// Accumulate `Σ ⟨X_n, ΔW_n⟩` (requires Brownian increments).
    pub ito_accumulator: bool,
}

impl Default for ObservableRequest {
    fn default() -> Self {
        Self { record_every: 0, fractional_alphas: Vec::new(), grid_sup: false, snapshots: false, ito_accumulator: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshPoint {
    pub step: usize,
    pub time: f64,
    pub l2: f64,
    pub grad: f64,
    pub fractional: Vec<f64>,
    pub grid_sup: Option<f64>,
    /// `∫_0^t ‖∇X‖² ds`, left-endpoint rule.
    pub dissipation: f64,
    /// `Σ_{t_n < t} ⟨X_n, ΔW_n⟩`.
    pub ito: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct TrajectoryRecord<T: Real> {
    pub m: usize,
    pub dt: f64,
    pub initial_norm_sq: f64,
    pub projected_trace: f64,
    pub terminal: SolverState<T>,
    pub mesh: Vec<MeshPoint>,
    pub snapshots: Vec<SolverState<T>>,
    /// `sup_n ‖X_n‖` over every step.
    pub sup_l2: f64,
    pub dissipation: f64,
    pub ito: Option<f64>,
}

impl<T: Real> TrajectoryRecord<T> {
    /// `‖X_N‖² + 2∫‖∇X‖² − ‖P_M x0‖² − 2Σ⟨X_n,ΔW_n⟩ − t_N Tr(P_M Q P_M)`.
    pub fn energy_residual(&self) -> Option<f64> {
        let ito = self.ito?;
        let xn = self.terminal.x.norm_sq().to_f64_lossy();
        let t = self.terminal.time.to_f64_lossy();
        Some(xn + 2.0 * self.dissipation - self.initial_norm_sq - 2.0 * ito - t * self.projected_trace)
    }
}

/// Tangent directions (and second-variation pairs among them) to propagate.
#[derive(Clone, Debug, Default)]
pub struct Tracking<T: Real> {
    pub tangents: Vec<SpectralField<T>>,
    pub pairs: Vec<(usize, usize)>,
}

impl<T: Real> Tracking<T> {
    pub fn none() -> Self {
        Self { tangents: Vec::new(), pairs: Vec::new() }
    }

    pub fn tangents(dirs: Vec<SpectralField<T>>) -> Self {
        Self { tangents: dirs, pairs: Vec::new() }
    }

    /// `η^g`, `η^h` and `ζ^{g,h}`.
    pub fn pair(g: SpectralField<T>, h: SpectralField<T>) -> Self {
        Self { tangents: vec![g, h], pairs: vec![(0, 1)] }
    }
}

fn mesh_point<T: Real>(state: &SolverState<T>, req: &ObservableRequest, dissipation: f64, ito: f64) -> MeshPoint {
    MeshPoint {
        step: state.step,
        time: state.time.to_f64_lossy(),
        l2: state.x.norm().to_f64_lossy(),
        grad: state.x.fractional_norm(T::c(0.5)).to_f64_lossy(),
        fractional: req.fractional_alphas.iter().map(|&a| state.x.fractional_norm(T::c(a)).to_f64_lossy()).collect(),
        grid_sup: req.grid_sup.then(|| state.x.sup_norm_estimate().to_f64_lossy()),
        dissipation,
        ito,
    }
}

/// A trajectory in progress: the solver state plus running observables.
/// Driven one noise increment at a time so several resolutions can share
/// each increment.
#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    stepper: Stepper<T>,
    state: SolverState<T>,
    req: ObservableRequest,
    steps: usize,
    dt: f64,
    lambdas: Vec<T>,
    initial_norm_sq: f64,
    projected_trace: f64,
    dissipation: f64,
    ito: f64,
    sup_l2: f64,
    mesh: Vec<MeshPoint>,
    snapshots: Vec<SolverState<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(
        x0: &SpectralField<T>,
        cfg: &SchemeConfig<T>,
        model: &CovarianceModel,
        tracking: &Tracking<T>,
        req: &ObservableRequest,
    ) -> Result<Self> {
        let steps = cfg.steps()?;
        let m = cfg.m;
        let mut state = SolverState::new(x0, m);
        for h in &tracking.tangents {
            state.track_tangent(h);
        }
        for &(g, h) in &tracking.pairs {
            state.track_second_variation(g, h)?;
        }
        let mesh = vec![mesh_point(&state, req, 0.0, 0.0)];
        let snapshots = if req.snapshots { vec![state.clone()] } else { Vec::new() };
        Ok(Self {
            stepper: Stepper::new(cfg.clone())?,
            req: req.clone(),
            steps,
            dt: cfg.dt.to_f64_lossy(),
            lambdas: (1..=m).map(eigenvalue::<T>).collect(),
            initial_norm_sq: state.x.norm_sq().to_f64_lossy(),
            projected_trace: model.projected_trace(m),
            dissipation: 0.0,
            ito: 0.0,
            sup_l2: state.x.norm().to_f64_lossy(),
            mesh,
            snapshots,
            state,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.steps
    }

    pub fn state(&self) -> &SolverState<T> {
        &self.state
    }

    /// One step driven by `noise` (only its first M modes are read).
    pub fn advance(&mut self, noise: &NoiseIncrement<T>) -> Result<()> {
        let x = self.state.x.coeffs();
        let grad_sq: T = x.iter().zip(&self.lambdas).map(|(&a, &l)| l * a * a).sum();
        self.dissipation += self.dt * grad_sq.to_f64_lossy();
        if self.req.ito_accumulator {
            let dw = noise.brownian.as_ref().ok_or_else(|| {
                Error::param("ito_accumulator", "the noise increment carries no Brownian increment")
            })?;
            self.ito += x.iter().zip(dw).map(|(&a, &w)| a * w).sum::<T>().to_f64_lossy();
        }
        self.stepper.advance(&mut self.state, &noise.additive)?;
        self.sup_l2 = self.sup_l2.max(self.state.x.norm().to_f64_lossy());
        let n = self.state.step;
        let on_mesh = self.req.record_every > 0 && n % self.req.record_every == 0;
        if (on_mesh || n == self.steps) && self.mesh.last().map(|p| p.step) != Some(n) {
            self.mesh.push(mesh_point(&self.state, &self.req, self.dissipation, self.ito));
            if self.req.snapshots {
                self.snapshots.push(self.state.clone());
            }
        }
        Ok(())
    }

    pub fn finish(self) -> TrajectoryRecord<T> {
        TrajectoryRecord {
            m: self.state.x.dim(),
            dt: self.dt,
            initial_norm_sq: self.initial_norm_sq,
            projected_trace: self.projected_trace,
            terminal: self.state,
            mesh: self.mesh,
            snapshots: self.snapshots,
            sup_l2: self.sup_l2,
            dissipation: self.dissipation,
            ito: self.req.ito_accumulator.then_some(self.ito),
        }
    }
}

/// Evolves `P_M x0` to `T` along the noise path of `stream`, propagating
/// the requested variations and recording observables.
pub fn evolve<T: Real>(
    x0: &SpectralField<T>,
    cfg: &SchemeConfig<T>,
    model: &CovarianceModel,
    stream: NoiseStream,
    tracking: &Tracking<T>,
    req: &ObservableRequest,
) -> Result<TrajectoryRecord<T>> {
    let mut traj = Trajectory::new(x0, cfg, model, tracking, req)?;
    let sampler = IncrementSampler::new(model, cfg.dt.to_f64_lossy(), cfg.scheme.increment_kind())?;
    let mut noise = NoiseIncrement::<T>::zeros(model.k_max);
    let (mut xi, mut xi2) = (Vec::new(), Vec::new());
    for n in 0..traj.steps() {
        sampler.fill(stream.at_step(n as u64), req.ito_accumulator, &mut noise, &mut xi, &mut xi2);
        traj.advance(&noise)?;
    }
    Ok(traj.finish())
}
