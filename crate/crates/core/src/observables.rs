//! Test functionals, Monte Carlo estimators of `u_M(t,x) = E φ(X_M^x(t))`
//! and its first two derivatives, and moment statistics of trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{evolve, ObservableRequest, SchemeConfig, TrajectoryRecord, Tracking};
use crate::noise::{CovarianceModel, NoiseStream};
use crate::spectral::SpectralField;
use crate::stats::{spearman, Summary, TrendTest};

type Field = SpectralField<f64>;

/// A bounded `C²` functional on `L²` with closed-form derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctional {
    /// `φ(x) = cos⟨x, v⟩`
    Cosine { v: Vec<f64> },
    /// `φ(x) = exp(−‖x‖²/s²)`
    GaussianExp { s: f64 },
}

impl Default for TestFunctional {
    fn default() -> Self {
        TestFunctional::Cosine { v: vec![1.0] }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TestFunctional {
    pub fn validate(&self) -> Result<()> {
        match self {
            TestFunctional::Cosine { v } if v.is_empty() || v.iter().any(|a| !a.is_finite()) => {
                Err(Error::param("functional.v", "direction must be a nonempty finite coefficient list"))
            }
            TestFunctional::GaussianExp { s } if !(*s > 0.0) || !s.is_finite() => {
                Err(Error::param("functional.s", "length scale must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &Field) -> f64 {
        match self {
            TestFunctional::Cosine { v } => dot(x.coeffs(), v).cos(),
            TestFunctional::GaussianExp { s } => (-x.norm_sq() / (s * s)).exp(),
        }
    }

    /// `Dφ(x)` as a field of the dimension of `x`.
    pub fn grad(&self, x: &Field) -> Field {
        match self {
            TestFunctional::Cosine { v } => {
                let s = -dot(x.coeffs(), v).sin();
                Field::from_fn(x.dim(), |k| s * v.get(k - 1).copied().unwrap_or(0.0)).expect("finite gradient")
            }
            TestFunctional::GaussianExp { s } => x.scaled(-2.0 / (s * s) * self.eval(x)),
        }
    }

    /// `Dφ(x)·h`.
    pub fn directional(&self, x: &Field, h: &Field) -> f64 {
        match self {
            TestFunctional::Cosine { v } => -dot(x.coeffs(), v).sin() * dot(v, h.coeffs()),
            TestFunctional::GaussianExp { s } => -2.0 / (s * s) * self.eval(x) * x.dot(h),
        }
    }

    /// `D²φ(x)·(g, h)`.
    pub fn second(&self, x: &Field, g: &Field, h: &Field) -> f64 {
        match self {
            TestFunctional::Cosine { v } => -dot(x.coeffs(), v).cos() * dot(v, g.coeffs()) * dot(v, h.coeffs()),
            TestFunctional::GaussianExp { s } => {
                let s2 = s * s;
                self.eval(x) * (4.0 / (s2 * s2) * x.dot(g) * x.dot(h) - 2.0 / s2 * g.dot(h))
            }
        }
    }

    /// `D²φ(x)·h` as a field of the dimension of `x`.
    pub fn hess_vec(&self, x: &Field, h: &Field) -> Field {
        match self {
            TestFunctional::Cosine { v } => {
                let c = -dot(x.coeffs(), v).cos() * dot(v, h.coeffs());
                Field::from_fn(x.dim(), |k| c * v.get(k - 1).copied().unwrap_or(0.0)).expect("finite Hessian")
            }
            TestFunctional::GaussianExp { s } => {
                let s2 = s * s;
                let phi = self.eval(x);
                x.scaled(4.0 / (s2 * s2) * phi * x.dot(h)).add_scaled(-2.0 / s2 * phi, &h.resized(x.dim()))
            }
        }
    }
}

/// Auxiliary exponents of the derivative bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundParameters {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for BoundParameters {
    fn default() -> Self {
        Self { alpha: 0.0, beta: 0.0, delta: 0.05, epsilon: 0.01 }
    }
}

impl BoundParameters {
    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| (0.0..1.0).contains(&a);
        if !unit(self.alpha) || !unit(self.beta) {
            return Err(Error::param("alpha/beta", "exponents must lie in [0, 1)"));
        }
        if self.beta > 0.0 && self.alpha + self.beta >= 1.0 {
            return Err(Error::param("alpha/beta", "alpha + beta must be below 1"));
        }
        if !(self.delta > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::param("delta/epsilon", "auxiliary parameters must be positive"));
        }
        Ok(())
    }

    /// `e^{ε‖x‖²} (1 + ‖(−A)^{1/4+δ} x‖^power)`.
    pub fn initial_weight(&self, x0: &Field, power: i32) -> f64 {
        (self.epsilon * x0.norm_sq()).exp() * (1.0 + x0.fractional_norm(0.25 + self.delta).powi(power))
    }
}

/// A Monte Carlo estimate with its CLT interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub name: String,
    /// Samples that entered the estimate.
    pub n: usize,
    pub estimate: f64,
    pub std_err: f64,
    pub half_width: f64,
    pub confidence: f64,
    /// Samples excluded because their trajectory failed.
    pub failures: usize,
    /// Set when the estimate should not be read at face value.
    pub flag: Option<String>,
}

impl MomentReport {
    pub fn from_samples(name: impl Into<String>, xs: &[f64], confidence: f64, failures: usize) -> Self {
        let s = Summary::of(xs, confidence);
        Self {
            name: name.into(),
            n: s.n,
            estimate: s.mean,
            std_err: s.std_err,
            half_width: s.half_width,
            confidence,
            failures,
            flag: None,
        }
    }

    pub fn ci(&self) -> (f64, f64) {
        (self.estimate - self.half_width, self.estimate + self.half_width)
    }
}

/// What every estimator needs besides the functional and directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McInputs {
    pub scheme: SchemeConfig<f64>,
    pub model: CovarianceModel,
    pub seed: u64,
    pub samples: usize,
    pub confidence: f64,
}

impl McInputs {
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.model.validate()?;
        if self.samples == 0 {
            return Err(Error::param("samples", "at least one sample is required"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::param("confidence", "confidence level must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Same inputs with terminal time `t` (the step is kept).
    pub fn at_time(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.scheme.t_end = t;
        out
    }
}

/// Evaluates `f` on every sample in parallel; results come back in sample
/// order with failed samples dropped and counted.
pub fn map_samples<R, F>(seed: u64, samples: usize, f: F) -> (Vec<R>, usize)
where
    R: Send,
    F: Fn(NoiseStream) -> Result<R> + Sync,
{
    let results: Vec<Result<R>> =
        (0..samples as u64).into_par_iter().map(|i| f(NoiseStream::new(seed, i))).collect();
    let mut ok = Vec::with_capacity(samples);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(_) => failures += 1,
        }
    }
    (ok, failures)
}

fn run_one(x0: &Field, inputs: &McInputs, stream: NoiseStream, tracking: &Tracking<f64>) -> Result<TrajectoryRecord<f64>> {
    evolve(x0, &inputs.scheme, &inputs.model, stream, tracking, &ObservableRequest::default())
}

fn report(name: &str, xs: Vec<f64>, failures: usize, inputs: &McInputs) -> Result<MomentReport> {
    if xs.is_empty() {
        return Err(Error::Study(format!("{name}: every sample failed")));
    }
    Ok(MomentReport::from_samples(name, &xs, inputs.confidence, failures))
}

/// Per-sample values `φ(X(T))`.
pub fn weak_samples(f: &TestFunctional, x0: &Field, inputs: &McInputs) -> Result<(Vec<f64>, usize)> {
    inputs.validate()?;
    let none = Tracking::none();
    Ok(map_samples(inputs.seed, inputs.samples, |s| Ok(f.eval(&run_one(x0, inputs, s, &none)?.terminal.x))))
}

/// `E φ(X_M^{x0}(T))`.
pub fn weak_value(f: &TestFunctional, x0: &Field, inputs: &McInputs) -> Result<MomentReport> {
    let (xs, fails) = weak_samples(f, x0, inputs)?;
    report("u", xs, fails, inputs)
}

/// Per-sample values `Dφ(X(T))·η^h(T)`.
pub fn du_samples(f: &TestFunctional, x0: &Field, h: &Field, inputs: &McInputs) -> Result<(Vec<f64>, usize)> {
    inputs.validate()?;
    let tr = Tracking::tangents(vec![h.clone()]);
    Ok(map_samples(inputs.seed, inputs.samples, |s| {
        let st = run_one(x0, inputs, s, &tr)?.terminal;
        Ok(f.directional(&st.x, &st.etas[0]))
    }))
}

/// `Du_M(T, x0)·h = E[Dφ(X(T))·η^h(T)]`.
pub fn du_estimate(f: &TestFunctional, x0: &Field, h: &Field, inputs: &McInputs) -> Result<MomentReport> {
    let (xs, fails) = du_samples(f, x0, h, inputs)?;
    report("Du", xs, fails, inputs)
}

/// Per-sample values `D²φ(X)·(η^g, η^h) + Dφ(X)·ζ^{g,h}` at `T`.
pub fn d2u_samples(
    f: &TestFunctional,
    x0: &Field,
    g: &Field,
    h: &Field,
    inputs: &McInputs,
) -> Result<(Vec<f64>, usize)> {
    inputs.validate()?;
    let tr = Tracking::pair(g.clone(), h.clone());
    Ok(map_samples(inputs.seed, inputs.samples, |s| {
        let st = run_one(x0, inputs, s, &tr)?.terminal;
        Ok(f.second(&st.x, &st.etas[0], &st.etas[1]) + f.directional(&st.x, &st.zetas[0].field))
    }))
}

/// `D²u_M(T, x0)·(g, h)`.
pub fn d2u_estimate(f: &TestFunctional, x0: &Field, g: &Field, h: &Field, inputs: &McInputs) -> Result<MomentReport> {
    let (xs, fails) = d2u_samples(f, x0, g, h, inputs)?;
    report("D2u", xs, fails, inputs)
}

/// A derivative estimate next to its common-random-number finite
/// difference, with the per-sample paired difference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub estimate: MomentReport,
    pub finite_difference: MomentReport,
    pub paired_difference: MomentReport,
    pub eps: f64,
}

impl DerivativeCheck {
    /// `|estimate − finite difference|` within the paired interval plus `slack`.
    pub fn agrees(&self, slack: f64) -> bool {
        (self.estimate.estimate - self.finite_difference.estimate).abs() <= self.paired_difference.half_width + slack
    }
}

fn paired(name: &str, a: &[f64], b: &[f64], inputs: &McInputs) -> MomentReport {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    MomentReport::from_samples(name, &d, inputs.confidence, 0)
}

fn zip_samples(parts: Vec<(Vec<f64>, usize)>, name: &str) -> Result<Vec<Vec<f64>>> {
    let n = parts[0].0.len();
    if parts.iter().any(|(v, f)| *f > 0 || v.len() != n) {
        return Err(Error::Study(format!("{name}: failed samples break the common-random-number pairing")));
    }
    Ok(parts.into_iter().map(|(v, _)| v).collect())
}

/// `Du·h` against `(u(x0+εh) − u(x0−εh))/(2ε)` on common noise.
pub fn du_check(f: &TestFunctional, x0: &Field, h: &Field, eps: f64, inputs: &McInputs) -> Result<DerivativeCheck> {
    let cols = zip_samples(
        vec![
            du_samples(f, x0, h, inputs)?,
            weak_samples(f, &x0.add_scaled(eps, h), inputs)?,
            weak_samples(f, &x0.add_scaled(-eps, h), inputs)?,
        ],
        "Du check",
    )?;
    let fd: Vec<f64> = cols[1].iter().zip(&cols[2]).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    Ok(DerivativeCheck {
        estimate: MomentReport::from_samples("Du", &cols[0], inputs.confidence, 0),
        finite_difference: MomentReport::from_samples("Du finite difference", &fd, inputs.confidence, 0),
        paired_difference: paired("Du minus finite difference", &cols[0], &fd, inputs),
        eps,
    })
}

/// `D²u·(g,h)` against the central second difference
/// `(u(x+εg+εh) − u(x+εg−εh) − u(x−εg+εh) + u(x−εg−εh))/(4ε²)`.
pub fn d2u_check(
    f: &TestFunctional,
    x0: &Field,
    g: &Field,
    h: &Field,
    eps: f64,
    inputs: &McInputs,
) -> Result<DerivativeCheck> {
    let shifted = |a: f64, b: f64| x0.add_scaled(a * eps, g).add_scaled(b * eps, h);
    let cols = zip_samples(
        vec![
            d2u_samples(f, x0, g, h, inputs)?,
            weak_samples(f, &shifted(1.0, 1.0), inputs)?,
            weak_samples(f, &shifted(1.0, -1.0), inputs)?,
            weak_samples(f, &shifted(-1.0, 1.0), inputs)?,
            weak_samples(f, &shifted(-1.0, -1.0), inputs)?,
        ],
        "D2u check",
    )?;
    let fd: Vec<f64> = (0..cols[0].len())
        .map(|i| (cols[1][i] - cols[2][i] - cols[3][i] + cols[4][i]) / (4.0 * eps * eps))
        .collect();
    Ok(DerivativeCheck {
        estimate: MomentReport::from_samples("D2u", &cols[0], inputs.confidence, 0),
        finite_difference: MomentReport::from_samples("D2u finite difference", &fd, inputs.confidence, 0),
        paired_difference: paired("D2u minus finite difference", &cols[0], &fd, inputs),
        eps,
    })
}

/// Grid of the derivative-bound scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanGrid {
    /// Fractions of the terminal time, e.g. `[1, 1/2, 1/4, 1/8]`.
    pub time_fractions: Vec<f64>,
    pub modes: Vec<usize>,
    pub alphas: Vec<f64>,
    /// `(α, β)` pairs for the second-derivative ratios; `g = h = h_k`.
    pub alpha_beta: Vec<(f64, f64)>,
    pub params: BoundParameters,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            time_fractions: vec![1.0, 0.5, 0.25, 0.125],
            modes: vec![1, 2, 4, 8],
            alphas: vec![0.0, 0.5, 0.75],
            alpha_beta: vec![(0.0, 0.0), (0.25, 0.25), (0.45, 0.45)],
            params: BoundParameters::default(),
        }
    }
}

/// One `(t, k, exponent)` cell of the scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t: f64,
    pub k: usize,
    pub alpha: f64,
    /// Zero for first-derivative rows.
    pub beta: f64,
    pub value: MomentReport,
    /// Ratio with the stated polynomial weight in `x0` (power 6 or 16).
    pub ratio: f64,
    pub ratio_half_width: f64,
    /// Same ratio without the polynomial weight.
    pub ratio_power0: f64,
}

/// Trend of the ratios for one exponent (pair).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTrend {
    pub alpha: f64,
    pub beta: f64,
    pub max_ratio: f64,
    pub against_inverse_time: Option<TrendTest>,
    pub against_mode: Option<TrendTest>,
}

impl ScanTrend {
    /// No increasing trend at level `level` in either direction.
    pub fn is_bounded(&self, level: f64) -> bool {
        let ok = |t: &Option<TrendTest>| t.is_none_or(|t| t.p_increasing >= level);
        ok(&self.against_inverse_time) && ok(&self.against_mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundScan {
    pub first: Vec<ScanRow>,
    pub second: Vec<ScanRow>,
    pub first_trends: Vec<ScanTrend>,
    pub second_trends: Vec<ScanTrend>,
    pub failures: usize,
}

fn trend(rows: &[ScanRow], alpha: f64, beta: f64) -> ScanTrend {
    let sel: Vec<&ScanRow> = rows.iter().filter(|r| r.alpha == alpha && r.beta == beta).collect();
    let ratios: Vec<f64> = sel.iter().map(|r| r.ratio).collect();
    let inv_t: Vec<f64> = sel.iter().map(|r| 1.0 / r.t).collect();
    let ks: Vec<f64> = sel.iter().map(|r| r.k as f64).collect();
    ScanTrend {
        alpha,
        beta,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        against_inverse_time: spearman(&inv_t, &ratios),
        against_mode: spearman(&ks, &ratios),
    }
}

/// Normalized derivative ratios over times, directions `h_k` and exponents.
/// All times come from one run per sample to `T`, read off snapshots.
pub fn derivative_bound_scan(f: &TestFunctional, x0: &Field, grid: &ScanGrid, inputs: &McInputs) -> Result<BoundScan> {
    inputs.validate()?;
    grid.params.validate()?;
    let steps = inputs.scheme.steps()?;
    let m = inputs.scheme.m;
    let mut snap_steps = Vec::new();
    for &frac in &grid.time_fractions {
        let s = frac * steps as f64;
        if !(frac > 0.0 && frac <= 1.0) || (s - s.round()).abs() > 1e-9 {
            return Err(Error::param("time_fractions", "each fraction must be in (0, 1] and land on a step"));
        }
        snap_steps.push(s.round() as usize);
    }
    if grid.modes.iter().any(|&k| k == 0 || k > m) {
        return Err(Error::param("modes", format!("directions must be modes 1..={m}")));
    }
    let stride = snap_steps.iter().fold(0, |g, &s| gcd(g, s));
    let dirs: Vec<Field> = grid.modes.iter().map(|&k| Field::basis(k, m)).collect();
    let nk = dirs.len();
    let tracking = Tracking { tangents: dirs.clone(), pairs: (0..nk).map(|i| (i, i)).collect() };
    let req = ObservableRequest { record_every: stride, snapshots: true, ..Default::default() };

    // per sample: [time][k] -> (Du, D2u)
    let (vals, failures) = map_samples(inputs.seed, inputs.samples, |s| {
        let rec = evolve(x0, &inputs.scheme, &inputs.model, s, &tracking, &req)?;
        Ok(snap_steps
            .iter()
            .map(|&n| {
                let st = rec.snapshots.iter().find(|st| st.step == n).expect("snapshot on the scan grid");
                (0..nk)
                    .map(|i| {
                        let du = f.directional(&st.x, &st.etas[i]);
                        let d2 = f.second(&st.x, &st.etas[i], &st.etas[i]) + f.directional(&st.x, &st.zetas[i].field);
                        (du, d2)
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>())
    });
    if vals.is_empty() {
        return Err(Error::Study("derivative scan: every sample failed".into()));
    }

    let w6 = grid.params.initial_weight(x0, 6);
    let w16 = grid.params.initial_weight(x0, 16);
    let w0 = (grid.params.epsilon * x0.norm_sq()).exp();
    let t_end = inputs.scheme.t_end;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (ti, &frac) in grid.time_fractions.iter().enumerate() {
        let t = frac * t_end;
        for (ki, &k) in grid.modes.iter().enumerate() {
            let lam = crate::spectral::eigenvalue::<f64>(k);
            let du: Vec<f64> = vals.iter().map(|v| v[ti][ki].0).collect();
            let d2: Vec<f64> = vals.iter().map(|v| v[ti][ki].1).collect();
            let du_r = MomentReport::from_samples(format!("Du(t={t}, h_{k})"), &du, inputs.confidence, failures);
            let d2_r = MomentReport::from_samples(format!("D2u(t={t}, h_{k}, h_{k})"), &d2, inputs.confidence, failures);
            for &alpha in &grid.alphas {
                // ‖(−A)^{−α} h_k‖ = (πk)^{−2α} = λ_k^{−α}
                let shape = t.powf(-alpha) * lam.powf(-alpha);
                first.push(ScanRow {
                    t,
                    k,
                    alpha,
                    beta: 0.0,
                    ratio: du_r.estimate.abs() / (shape * w6),
                    ratio_half_width: du_r.half_width / (shape * w6),
                    ratio_power0: du_r.estimate.abs() / (shape * w0),
                    value: du_r.clone(),
                });
            }
            for &(alpha, beta) in &grid.alpha_beta {
                let shape = t.powf(-(alpha + beta)) * lam.powf(-alpha) * lam.powf(-beta);
                second.push(ScanRow {
                    t,
                    k,
                    alpha,
                    beta,
                    ratio: d2_r.estimate.abs() / (shape * w16),
                    ratio_half_width: d2_r.half_width / (shape * w16),
                    ratio_power0: d2_r.estimate.abs() / (shape * w0),
                    value: d2_r.clone(),
                });
            }
        }
    }
    let first_trends = grid.alphas.iter().map(|&a| trend(&first, a, 0.0)).collect();
    let second_trends = grid.alpha_beta.iter().map(|&(a, b)| trend(&second, a, b)).collect();
    Ok(BoundScan { first, second, first_trends, second_trends, failures })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Settings of the trajectory moment statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentSettings {
    /// Powers for `E sup_t ‖X‖^p`.
    pub powers: Vec<i32>,
    /// `β` of the exponential moment; `None` uses `0.2 / Tr(Q)`.
    pub beta: Option<f64>,
    /// Power for `E sup_{t,z} |X(t,z)|^p`.
    pub linf_power: i32,
    /// Spatial exponent `λ` and time exponent `γ` of the Hölder quotient.
    pub holder_lambda: f64,
    pub holder_gamma: f64,
    /// Minimum `|t − s|` in steps for the Hölder quotient.
    pub holder_min_steps: usize,
}

impl Default for MomentSettings {
    fn default() -> Self {
        Self {
            powers: vec![4, 8],
            beta: None,
            linf_power: 4,
            holder_lambda: 0.2,
            holder_gamma: 0.2,
            holder_min_steps: 4,
        }
    }
}

impl MomentSettings {
    pub fn beta_for(&self, model: &CovarianceModel) -> f64 {
        self.beta.unwrap_or_else(|| 0.2 / model.trace())
    }
}

/// Per-trajectory quantities behind the moment statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMoments {
    /// `sup_t ‖X(t)‖` over every step.
    pub sup_l2: f64,
    /// `sup_t ‖X‖² + ∫‖∇X‖² ds`.
    pub energy: f64,
    /// `sup |X(t,z)|` over the recorded mesh (grid estimate in z).
    pub sup_grid: f64,
    /// Hölder quotient over recorded snapshots.
    pub holder: f64,
}

impl TrajectoryMoments {
    /// Reads a record; the grid sup and Hölder entries need grid sup norms
    /// and snapshots on the mesh.
    pub fn of(rec: &TrajectoryRecord<f64>, settings: &MomentSettings) -> Self {
        Self {
            sup_l2: rec.sup_l2,
            energy: rec.sup_l2 * rec.sup_l2 + rec.dissipation,
            sup_grid: rec.mesh.iter().filter_map(|pt| pt.grid_sup).fold(0.0, f64::max),
            holder: holder_quotient(rec, settings.holder_lambda, settings.holder_gamma, settings.holder_min_steps),
        }
    }
}

/// `E exp(β (sup_t ‖X‖² + ∫‖∇X‖²))`, flagged when the interval is wider
/// than the estimate.
pub fn exponential_moment(moments: &[TrajectoryMoments], beta: f64, confidence: f64, failures: usize) -> MomentReport {
    let xs: Vec<f64> = moments.iter().map(|r| (beta * r.energy).exp()).collect();
    let mut rep = MomentReport::from_samples(format!("E exp(beta*energy), beta={beta}"), &xs, confidence, failures);
    if rep.half_width > rep.estimate {
        rep.flag = Some("heavy tail: interval wider than the estimate".into());
    }
    rep
}

/// Largest `‖(−A)^λ (X(t) − X(s))‖ / |t − s|^γ` over snapshot pairs at
/// least `min_steps` apart.
pub fn holder_quotient(rec: &TrajectoryRecord<f64>, lambda: f64, gamma: f64, min_steps: usize) -> f64 {
    let snaps = &rec.snapshots;
    let mut best: f64 = 0.0;
    for (i, a) in snaps.iter().enumerate() {
        for b in &snaps[i + 1..] {
            if b.step - a.step < min_steps {
                continue;
            }
            let dt = b.time - a.time;
            best = best.max(b.x.sub(&a.x).fractional_norm(lambda) / dt.powf(gamma));
        }
    }
    best
}

/// Moment statistics over trajectories of one dimension, in the order
/// `E sup‖X‖^p` (each power), exponential moment, `E sup|X|^p`, Hölder.
pub fn moment_statistics(
    moments: &[TrajectoryMoments],
    model: &CovarianceModel,
    settings: &MomentSettings,
    confidence: f64,
    failures: usize,
) -> Vec<MomentReport> {
    let mut out = Vec::new();
    for &p in &settings.powers {
        let xs: Vec<f64> = moments.iter().map(|r| r.sup_l2.powi(p)).collect();
        out.push(MomentReport::from_samples(format!("E sup_t |X|_L2^{p}"), &xs, confidence, failures));
    }
    out.push(exponential_moment(moments, settings.beta_for(model), confidence, failures));
    let p = settings.linf_power;
    let xs: Vec<f64> = moments.iter().map(|r| r.sup_grid.powi(p)).collect();
    out.push(MomentReport::from_samples(format!("E sup_tz |X|^{p}"), &xs, confidence, failures));
    let xs: Vec<f64> = moments.iter().map(|r| r.holder).collect();
    out.push(MomentReport::from_samples(
        format!("E Holder(lambda={}, gamma={})", settings.holder_lambda, settings.holder_gamma),
        &xs,
        confidence,
        failures,
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::Scheme;
    use crate::rng::PhiloxRng;
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_field(rng: &mut PhiloxRng, m: usize) -> Field {
        Field::new((0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn inputs(m: usize, t: f64, steps: usize, samples: usize) -> McInputs {
        McInputs {
            scheme: SchemeConfig::new(m, t, steps, Scheme::AcceleratedExponentialEuler),
            model: CovarianceModel::power_law(2.0, 1.0, m).unwrap(),
            seed: 17,
            samples,
            confidence: 0.95,
        }
    }

    #[test]
    fn cosine_closed_forms() {
        let f = TestFunctional::default();
        let zero = Field::zeros(4);
        assert_eq!(f.eval(&zero), 1.0);
        assert_eq!(f.grad(&zero), Field::zeros(4));
        let x = Field::basis(1, 4).scaled(PI / 2.0);
        let g = f.grad(&x);
        assert!((g.coeffs()[0] + 1.0).abs() < 1e-15 && g.coeffs()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = PhiloxRng::new(5, [0, 0, 0]);
        let fs = [
            TestFunctional::Cosine { v: vec![0.3, -0.7, 0.2, 0.5, 0.1, 0.0] },
            TestFunctional::GaussianExp { s: 1.3 },
        ];
        let eps = 1e-5;
        for f in &fs {
            for _ in 0..20 {
                let x = random_field(&mut rng, 6);
                let g = f.grad(&x);
                let fd = Field::from_fn(6, |k| {
                    let e = Field::basis(k, 6);
                    (f.eval(&x.add_scaled(eps, &e)) - f.eval(&x.add_scaled(-eps, &e))) / (2.0 * eps)
                })
                .unwrap();
                assert!(fd.sub(&g).norm() <= 1e-8 * g.norm().max(1.0), "{f:?}");
                let h = random_field(&mut rng, 6);
                let hv = f.hess_vec(&x, &h);
                let fdh = f.grad(&x.add_scaled(eps, &h)).sub(&f.grad(&x.add_scaled(-eps, &h))).scaled(0.5 / eps);
                assert!(fdh.sub(&hv).norm() <= 1e-7 * hv.norm().max(1.0));
                let k = random_field(&mut rng, 6);
                assert!((f.second(&x, &h, &k) - hv.dot(&k)).abs() < 1e-12);
                assert!((f.directional(&x, &h) - g.dot(&h)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn functionals_are_bounded() {
        let mut rng = PhiloxRng::new(6, [0, 0, 0]);
        let v = vec![0.3, -0.7, 0.2];
        let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cos = TestFunctional::Cosine { v };
        let s = 0.8;
        let gauss = TestFunctional::GaussianExp { s };
        for _ in 0..200 {
            let x = random_field(&mut rng, 3).scaled(4.0);
            assert!(cos.eval(&x).abs() <= 1.0 && cos.grad(&x).norm() <= vn + 1e-15);
            // sup_r 2r/s² e^{−r²/s²} = √2 e^{−1/2}/s
            assert!(gauss.eval(&x) <= 1.0 && gauss.grad(&x).norm() <= 2.0f64.sqrt() * (-0.5f64).exp() / s + 1e-15);
        }
    }

    #[test]
    fn estimators_at_time_zero_are_exact() {
        let f = TestFunctional::Cosine { v: vec![0.4, 0.9] };
        let x0 = Field::new(vec![0.5, 0.25, 0.1]).unwrap();
        let g = Field::basis(1, 3);
        let h = Field::new(vec![0.2, -1.0, 0.3]).unwrap();
        let inp = inputs(3, 0.0, 1, 7);
        let mut inp = inp;
        inp.scheme.dt = 0.01;
        let u = weak_value(&f, &x0, &inp).unwrap();
        assert_eq!((u.estimate, u.half_width), (f.eval(&x0), 0.0));
        let du = du_estimate(&f, &x0, &h, &inp).unwrap();
        assert_eq!((du.estimate, du.half_width), (f.directional(&x0, &h), 0.0));
        let d2 = d2u_estimate(&f, &x0, &g, &h, &inp).unwrap();
        assert_eq!((d2.estimate, d2.half_width), (f.second(&x0, &g, &h), 0.0));
    }

    #[test]
    fn zero_noise_gives_deterministic_value() {
        let f = TestFunctional::default();
        let mut inp = inputs(8, 0.1, 64, 5);
        inp.model = CovarianceModel::power_law(2.0, 0.0, 8).unwrap();
        let u = weak_value(&f, &Field::new(vec![0.5, 0.25]).unwrap(), &inp).unwrap();
        assert_eq!(u.half_width, 0.0);
    }

    #[test]
    fn du_is_linear_and_d2u_symmetric_under_seed_reuse() {
        let f = TestFunctional::default();
        let x0 = Field::new(vec![0.5, 0.25]).unwrap().resized(8);
        let h = Field::new(vec![0.1, 0.3]).unwrap().resized(8);
        let g = Field::basis(1, 8);
        let inp = inputs(8, 0.1, 128, 16);
        let a = du_estimate(&f, &x0, &h, &inp).unwrap();
        let b = du_estimate(&f, &x0, &h.scaled(2.0), &inp).unwrap();
        assert_eq!(2.0 * a.estimate, b.estimate);
        let gh = d2u_estimate(&f, &x0, &g, &h, &inp).unwrap();
        let hg = d2u_estimate(&f, &x0, &h, &g, &inp).unwrap();
        assert!((gh.estimate - hg.estimate).abs() <= 1e-15 * gh.estimate.abs().max(1e-300));
    }

    #[test]
    fn derivative_estimates_match_crn_finite_differences() {
        let f = TestFunctional::default();
        let x0 = Field::new(vec![0.5, 0.25]).unwrap().resized(8);
        let h = Field::new(vec![1.0, 0.5]).unwrap().resized(8);
        let g = Field::basis(1, 8);
        let inp = inputs(8, 0.1, 256, 64);
        let c1 = du_check(&f, &x0, &h, 1e-3, &inp).unwrap();
        assert!(c1.agrees(1e-5), "{c1:?}");
        let c2 = d2u_check(&f, &x0, &g, &h, 1e-3, &inp).unwrap();
        assert!(c2.agrees(1e-4), "{c2:?}");
    }

    #[test]
    fn exponential_moment_is_monotone_in_beta() {
        let inp = inputs(8, 0.1, 64, 40);
        let req = ObservableRequest { record_every: 8, grid_sup: true, snapshots: true, ..Default::default() };
        let x0 = Field::new(vec![0.5, 0.25]).unwrap();
        let (recs, _) = map_samples(1, 40, |s| {
            let r = evolve(&x0, &inp.scheme, &inp.model, s, &Tracking::none(), &req)?;
            Ok(TrajectoryMoments::of(&r, &MomentSettings::default()))
        });
        let mut last = 0.0;
        for beta in [0.0, 0.05, 0.1, 0.3, 1.0] {
            let e = exponential_moment(&recs, beta, 0.95, 0).estimate;
            assert!(e >= last);
            last = e;
        }
        assert_eq!(exponential_moment(&recs, 0.0, 0.95, 0).estimate, 1.0);
    }

    #[test]
    fn statistics_vanish_without_noise_and_data() {
        let mut inp = inputs(8, 0.1, 64, 3);
        inp.model = CovarianceModel::power_law(2.0, 0.0, 8).unwrap();
        let req = ObservableRequest { record_every: 8, grid_sup: true, snapshots: true, ..Default::default() };
        let settings = MomentSettings { beta: Some(0.5), ..Default::default() };
        let (recs, _) = map_samples(1, 3, |s| {
            let r = evolve(&Field::zeros(8), &inp.scheme, &inp.model, s, &Tracking::none(), &req)?;
            Ok(TrajectoryMoments::of(&r, &settings))
        });
        let reps = moment_statistics(&recs, &inp.model, &settings, 0.95, 0);
        for r in &reps {
            let want = if r.name.starts_with("E exp") { 1.0 } else { 0.0 };
            assert_eq!((r.estimate, r.half_width), (want, 0.0), "{}", r.name);
        }
    }

    #[test]
    fn scan_produces_every_cell() {
        let f = TestFunctional::default();
        let x0 = Field::new(vec![0.5, 0.25]).unwrap().resized(8);
        let inp = inputs(8, 0.1, 64, 8);
        let scan = derivative_bound_scan(&f, &x0, &ScanGrid::default(), &inp).unwrap();
        assert_eq!(scan.first.len(), 4 * 4 * 3);
        assert_eq!(scan.second.len(), 4 * 4 * 3);
        assert_eq!(scan.first_trends.len(), 3);
        // α = 0: the denominator is the x0 weight alone
        let w = BoundParameters::default().initial_weight(&x0, 6);
        let r = scan.first.iter().find(|r| r.alpha == 0.0).unwrap();
        assert!((r.ratio - r.value.estimate.abs() / w).abs() <= 1e-15 * r.ratio.max(1e-300));
        // doubling k scales the α-denominator by 2^{−2α}
        let a = scan.first.iter().find(|r| r.alpha == 0.5 && r.k == 1 && r.t == 0.1).unwrap();
        let b = scan.first.iter().find(|r| r.alpha == 0.5 && r.k == 2 && r.t == 0.1).unwrap();
        let da = a.value.estimate.abs() / a.ratio;
        let db = b.value.estimate.abs() / b.ratio;
        assert!((db / da - 0.5).abs() < 1e-12);
    }
}
