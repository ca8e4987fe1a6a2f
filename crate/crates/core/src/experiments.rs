//! Monte Carlo studies of spatial convergence against a fine reference
//! dimension, with every resolution driven by one shared noise path.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{evolve, ObservableRequest, Scheme, SchemeConfig, Trajectory, TrajectoryRecord, Tracking};
use crate::noise::{CovarianceModel, IncrementSampler, NoiseIncrement, NoiseStream, LANE_INITIAL};
use crate::observables::{
    d2u_check, derivative_bound_scan, du_check, moment_statistics, DerivativeCheck, BoundScan, McInputs, MomentReport, MomentSettings,
    ScanGrid, TestFunctional, TrajectoryMoments,
};
use crate::spectral::SpectralField;
use crate::stats::{bootstrap_slope, ols, Summary};

type Field = SpectralField<f64>;

/// Initial data, given on the reference dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialData {
    /// Literal sine coefficients.
    Coefficients { values: Vec<f64> },
    /// `a_k = amplitude · k^{−exponent}` for `k ≤ modes` (all reference
    /// modes when `modes` is absent).
    PowerLaw { amplitude: f64, exponent: f64, modes: Option<usize> },
    /// `a_k = amplitude · k^{−exponent} · ξ_k` with `ξ_k` standard normal,
    /// drawn per sample.
    RandomPowerLaw { amplitude: f64, exponent: f64, modes: Option<usize> },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Coefficients { values: vec![0.5, 0.25] }
    }
}

impl InitialData {
    /// Coefficients `k^{−1.1}`: in `D((−A)^α)` only for `α < 0.3`.
    pub fn low_regularity() -> Self {
        InitialData::PowerLaw { amplitude: 1.0, exponent: 1.1, modes: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialData::Coefficients { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("x0.values", "coefficients must be a nonempty finite list"));
                }
            }
            InitialData::PowerLaw { amplitude, exponent, modes }
            | InitialData::RandomPowerLaw { amplitude, exponent, modes } => {
                if !amplitude.is_finite() || !exponent.is_finite() {
                    return Err(Error::param("x0", "amplitude and exponent must be finite"));
                }
                if *modes == Some(0) {
                    return Err(Error::param("x0.modes", "at least one mode is required"));
                }
            }
        }
        Ok(())
    }

    pub fn is_random(&self) -> bool {
        matches!(self, InitialData::RandomPowerLaw { .. })
    }

    /// The data on `m_ref` modes for the sample addressed by `stream`.
    pub fn realize(&self, m_ref: usize, stream: NoiseStream) -> Field {
        match self {
            InitialData::Coefficients { values } => Field::new(values.clone()).expect("validated").resized(m_ref),
            InitialData::PowerLaw { amplitude, exponent, modes } => {
                let top = modes.unwrap_or(m_ref).min(m_ref);
                Field::from_fn(m_ref, |k| if k <= top { amplitude * (k as f64).powf(-exponent) } else { 0.0 })
                    .expect("finite data")
            }
            InitialData::RandomPowerLaw { amplitude, exponent, modes } => {
                let top = modes.unwrap_or(m_ref).min(m_ref);
                let mut xi = vec![0.0; top];
                stream.at_step(0).fill_normals(LANE_INITIAL, &mut xi);
                Field::from_fn(m_ref, |k| if k <= top { amplitude * (k as f64).powf(-exponent) * xi[k - 1] } else { 0.0 })
                    .expect("finite data")
            }
        }
    }
}

/// Settings of the derivative-bound scan inside a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    #[serde(rename = "M")]
    pub m: usize,
    pub samples: usize,
    pub grid: ScanGrid,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self { m: 32, samples: 1000, grid: ScanGrid::default() }
    }
}

/// Settings of the finite-difference checks of the variation processes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationSettings {
    #[serde(rename = "M")]
    pub m: usize,
    /// Noise paths for the pathwise comparison.
    pub paths: usize,
    /// Monte Carlo samples for the `Du`/`D²u` comparison.
    pub samples: usize,
    pub eps_first: f64,
    pub eps_second: f64,
    /// Directions `g`, `h` as sine coefficients.
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl Default for VariationSettings {
    fn default() -> Self {
        Self {
            m: 16,
            paths: 8,
            samples: 200,
            eps_first: 1e-4,
            eps_second: 1e-3,
            g: vec![1.0],
            h: vec![0.3, -0.2, 0.1, 0.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(rename = "M_grid")]
    pub m_grid: Vec<usize>,
    #[serde(rename = "M_ref")]
    pub m_ref: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    pub covariance: CovarianceModel,
    pub x0: InitialData,
    pub functional: TestFunctional,
    pub scheme: Scheme,
    /// `p` of the strong error `(E‖X_ref − X_M‖^p)^{1/p}`.
    pub strong_power: f64,
    /// `false` switches off the nonlinearity on every level.
    pub nonlinear: bool,
    pub confidence: f64,
    pub bootstrap_resamples: usize,
    pub moments: MomentSettings,
    /// Number of mesh intervals for moment statistics.
    pub mesh_intervals: usize,
    pub scan: ScanSettings,
    pub variations: VariationSettings,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let t_end = 0.5;
        Self {
            m_grid: vec![8, 16, 32, 64],
            m_ref: 256,
            t_end,
            dt: t_end / 16384.0,
            samples: 1000,
            seed: 20240601,
            covariance: CovarianceModel::default(),
            x0: InitialData::default(),
            functional: TestFunctional::default(),
            scheme: Scheme::AcceleratedExponentialEuler,
            strong_power: 2.0,
            nonlinear: true,
            confidence: 0.95,
            bootstrap_resamples: 1000,
            moments: MomentSettings::default(),
            mesh_intervals: 64,
            scan: ScanSettings::default(),
            variations: VariationSettings::default(),
        }
    }
}

/// Prefixes the parameter name of a nested validation error with `section`.
fn located(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::config(format!("{section}.{name}"), reason),
        Error::Config { key, msg } => Error::config(format!("{section}.{key}"), msg),
        other => Error::config(section, other.to_string()),
    }
}

fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

impl StudyConfig {
    /// Checks every invariant, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.m_grid.is_empty() {
            return Err(Error::config("M_grid", "at least one dimension is required"));
        }
        if let Some(&m) = self.m_grid.iter().find(|&&m| !is_power_of_two(m)) {
            return Err(Error::config("M_grid", format!("{m} is not a power of two")));
        }
        if self.m_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("M_grid", "dimensions must be strictly increasing"));
        }
        let top = *self.m_grid.last().expect("nonempty");
        if self.m_ref < 4 * top {
            return Err(Error::config("M_ref", format!("M_ref = {} must be at least 4·max(M_grid) = {}", self.m_ref, 4 * top)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::config("T", "terminal time must be positive"));
        }
        let sc = SchemeConfig { dt: self.dt, scheme: self.scheme, m: self.m_ref, t_end: self.t_end, nonlinear: true };
        sc.validate().map_err(|e| Error::config("dt", e.to_string()))?;
        if self.samples == 0 {
            return Err(Error::config("samples", "N_mc must be at least 1"));
        }
        self.covariance.validate().map_err(|e| located("covariance", e))?;
        self.x0.validate().map_err(|e| located("x0", e))?;
        self.functional.validate().map_err(|e| located("functional", e))?;
        if !(self.strong_power >= 1.0) || !self.strong_power.is_finite() {
            return Err(Error::config("strong_power", "p must be at least 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::config("confidence", "must lie in (0, 1)"));
        }
        if self.mesh_intervals == 0 || sc.steps()? % self.mesh_intervals != 0 {
            return Err(Error::config("mesh_intervals", "must be positive and divide the number of steps"));
        }
        if sc.steps()? / self.mesh_intervals < self.moments.holder_min_steps {
            return Err(Error::config("mesh_intervals", "mesh spacing is below the Hölder minimum separation"));
        }
        if self.scan.m == 0 || self.scan.samples == 0 {
            return Err(Error::config("scan", "scan dimension and samples must be positive"));
        }
        self.scan.grid.params.validate().map_err(|e| located("scan.grid.params", e))?;
        let v = &self.variations;
        if v.m == 0 || v.paths == 0 || v.samples == 0 {
            return Err(Error::config("variations", "dimension, paths and samples must be positive"));
        }
        if !(v.eps_first > 0.0 && v.eps_second > 0.0) {
            return Err(Error::config("variations", "finite-difference steps must be positive"));
        }
        for (key, d) in [("variations.g", &v.g), ("variations.h", &v.h)] {
            if d.is_empty() || d.len() > v.m || d.iter().any(|a| !a.is_finite()) || d.iter().all(|&a| a == 0.0) {
                return Err(Error::config(key, "direction needs 1..=M finite coefficients, not all zero"));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn scheme_for(&self, m: usize) -> SchemeConfig<f64> {
        SchemeConfig { dt: self.dt, scheme: self.scheme, m, t_end: self.t_end, nonlinear: self.nonlinear }
    }

    /// Request used for the grid levels when moments are wanted.
    pub fn moment_request(&self) -> ObservableRequest {
        ObservableRequest {
            record_every: self.steps() / self.mesh_intervals,
            grid_sup: true,
            snapshots: true,
            ..Default::default()
        }
    }
}

/// Evolves every dimension in `levels` in lockstep from the projections of
/// one initial datum, feeding each the projection of one noise increment
/// per step. Records come back in `levels` order.
pub fn run_coupled_sample(
    cfg: &StudyConfig,
    levels: &[usize],
    requests: &[ObservableRequest],
    stream: NoiseStream,
) -> Result<Vec<TrajectoryRecord<f64>>> {
    assert_eq!(levels.len(), requests.len());
    let top = levels.iter().copied().max().unwrap_or(1);
    let model = cfg.covariance.truncated_for(top);
    let sampler = IncrementSampler::new(&model, cfg.dt, cfg.scheme.increment_kind())?;
    let x0 = cfg.x0.realize(cfg.m_ref.max(top), stream);
    let none = Tracking::none();
    let mut trajs = levels
        .iter()
        .zip(requests)
        .map(|(&m, req)| Trajectory::new(&x0, &cfg.scheme_for(m), &model, &none, req))
        .collect::<Result<Vec<_>>>()?;
    let want_brownian = requests.iter().any(|r| r.ito_accumulator);
    let mut noise = NoiseIncrement::<f64>::zeros(model.k_max);
    let (mut xi, mut xi2) = (Vec::new(), Vec::new());
    for n in 0..cfg.steps() {
        sampler.fill(stream.at_step(n as u64), want_brownian, &mut noise, &mut xi, &mut xi2);
        for t in trajs.iter_mut() {
            t.advance(&noise)?;
        }
    }
    Ok(trajs.into_iter().map(Trajectory::finish).collect())
}

/// Per-sample contributions of one rate study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSamples {
    pub m_grid: Vec<usize>,
    /// `strong[i][s] = ‖X_ref − X_{M_i}‖^p` for sample `s`.
    pub strong: Vec<Vec<f64>>,
    /// `weak[i][s] = φ(X_ref) − φ(X_{M_i})`.
    pub weak: Vec<Vec<f64>>,
    /// Moment inputs per grid level, present when requested.
    pub moments: Option<Vec<Vec<TrajectoryMoments>>>,
    /// Indices of the samples that entered.
    pub sample_ids: Vec<u64>,
    pub failed_ids: Vec<u64>,
    pub failures: usize,
    /// First few failure messages.
    pub diagnostics: Vec<String>,
}

impl RateSamples {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Appends the samples of `other`, which must come from the same grid
    /// and later indices. Moment inputs survive only if both sides have them.
    pub fn append(&mut self, other: RateSamples) {
        assert_eq!(self.m_grid, other.m_grid, "samples from different grids");
        for (a, b) in self.strong.iter_mut().zip(other.strong) {
            a.extend(b);
        }
        for (a, b) in self.weak.iter_mut().zip(other.weak) {
            a.extend(b);
        }
        self.moments = match (self.moments.take(), other.moments) {
            (Some(mut a), Some(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.extend(y);
                }
                Some(a)
            }
            _ => None,
        };
        self.sample_ids.extend(other.sample_ids);
        self.failed_ids.extend(other.failed_ids);
        self.failures += other.failures;
        let room = 10usize.saturating_sub(self.diagnostics.len());
        self.diagnostics.extend(other.diagnostics.into_iter().take(room));
    }

    /// The samples with index below `n`, as if the study had run `n`
    /// samples.
    pub fn first(&self, n: u64) -> RateSamples {
        let keep = self.sample_ids.iter().take_while(|&&i| i < n).count();
        let cut = |v: &Vec<Vec<f64>>| v.iter().map(|c| c[..keep].to_vec()).collect();
        let failed_ids: Vec<u64> = self.failed_ids.iter().copied().filter(|&i| i < n).collect();
        RateSamples {
            m_grid: self.m_grid.clone(),
            strong: cut(&self.strong),
            weak: cut(&self.weak),
            moments: self.moments.as_ref().map(|m| m.iter().map(|c| c[..keep].to_vec()).collect()),
            sample_ids: self.sample_ids[..keep].to_vec(),
            failures: failed_ids.len(),
            failed_ids,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

struct SampleOut {
    strong: Vec<f64>,
    weak: Vec<f64>,
    moments: Option<Vec<TrajectoryMoments>>,
}

/// Runs `cfg.samples` coupled samples and keeps the per-sample errors of
/// every grid level against the reference.
pub fn collect_rate_samples(cfg: &StudyConfig, with_moments: bool) -> Result<RateSamples> {
    collect_rate_samples_range(cfg, 0..cfg.samples as u64, with_moments)
}

/// Like [`collect_rate_samples`] for the sample indices in `ids` only, so a
/// large study can be assembled from pieces with [`RateSamples::append`].
pub fn collect_rate_samples_range(cfg: &StudyConfig, ids: Range<u64>, with_moments: bool) -> Result<RateSamples> {
    cfg.validate()?;
    let mut levels = cfg.m_grid.clone();
    levels.push(cfg.m_ref);
    let mut requests = vec![if with_moments { cfg.moment_request() } else { ObservableRequest::default() }; cfg.m_grid.len()];
    requests.push(ObservableRequest::default());
    let p = cfg.strong_power;
    let f = &cfg.functional;
    let settings = &cfg.moments;

    let results: Vec<(u64, Result<SampleOut>)> = {
        use rayon::prelude::*;
        ids.into_par_iter()
            .map(|i| {
                let out = run_coupled_sample(cfg, &levels, &requests, NoiseStream::new(cfg.seed, i)).map(|recs| {
                    let (grid, refr) = recs.split_at(cfg.m_grid.len());
                    let xr = &refr[0].terminal.x;
                    let fr = f.eval(xr);
                    SampleOut {
                        strong: grid.iter().map(|r| xr.sub(&r.terminal.x).norm().powf(p)).collect(),
                        weak: grid.iter().map(|r| fr - f.eval(&r.terminal.x)).collect(),
                        moments: with_moments.then(|| grid.iter().map(|r| TrajectoryMoments::of(r, settings)).collect()),
                    }
                });
                (i, out)
            })
            .collect()
    };

    let nm = cfg.m_grid.len();
    let mut rs = RateSamples {
        m_grid: cfg.m_grid.clone(),
        strong: vec![Vec::new(); nm],
        weak: vec![Vec::new(); nm],
        moments: with_moments.then(|| vec![Vec::new(); nm]),
        sample_ids: Vec::new(),
        failed_ids: Vec::new(),
        failures: 0,
        diagnostics: Vec::new(),
    };
    for (i, r) in results {
        match r {
            Ok(s) => {
                for j in 0..nm {
                    rs.strong[j].push(s.strong[j]);
                    rs.weak[j].push(s.weak[j]);
                }
                if let (Some(dst), Some(src)) = (rs.moments.as_mut(), s.moments) {
                    for (d, m) in dst.iter_mut().zip(src) {
                        d.push(m);
                    }
                }
                rs.sample_ids.push(i);
            }
            Err(e) => {
                rs.failures += 1;
                rs.failed_ids.push(i);
                if rs.diagnostics.len() < 10 {
                    rs.diagnostics.push(format!("sample {i}: {e}"));
                }
            }
        }
    }
    Ok(rs)
}

/// One point of an error curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    #[serde(rename = "M")]
    pub m: usize,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub std_err: f64,
    /// Whether the point entered the fit.
    pub resolved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateStatus {
    Fitted,
    InsufficientResolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub status: RateStatus,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// RMS residual of the log-log fit.
    pub residual: Option<f64>,
    /// Bootstrap interval of the slope over Monte Carlo resampling.
    pub slope_ci: Option<(f64, f64)>,
    pub points: Vec<RatePoint>,
    pub samples: usize,
    pub failures: usize,
    pub warnings: Vec<String>,
}

/// Least squares on `(log M, log error)` over resolved points with
/// positive error. Fewer than `min_points` usable points gives
/// [`RateStatus::InsufficientResolution`] and no slope.
pub fn fit_rate(points: Vec<RatePoint>, min_points: usize) -> RateEstimate {
    let mut warnings = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in &points {
        if !p.resolved {
            continue;
        }
        if !(p.estimate > 0.0) {
            warnings.push(format!("M = {}: non-positive error {} excluded from the fit", p.m, p.estimate));
            continue;
        }
        xs.push((p.m as f64).ln());
        ys.push(p.estimate.ln());
    }
    let fit = if xs.len() >= min_points.max(2) { ols(&xs, &ys) } else { None };
    RateEstimate {
        status: if fit.is_some() { RateStatus::Fitted } else { RateStatus::InsufficientResolution },
        slope: fit.map(|f| f.slope),
        intercept: fit.map(|f| f.intercept),
        residual: fit.map(|f| f.residual),
        slope_ci: None,
        points,
        samples: 0,
        failures: 0,
        warnings,
    }
}

fn check_failure_budget(rs: &RateSamples) -> Result<()> {
    let total = rs.len() + rs.failures;
    if rs.failures * 100 > total {
        return Err(Error::Study(format!(
            "{} of {total} samples failed (more than 1%); first: {}",
            rs.failures,
            rs.diagnostics.first().map(String::as_str).unwrap_or("-")
        )));
    }
    Ok(())
}

/// Strong error curve and rate from collected samples.
pub fn summarize_strong(cfg: &StudyConfig, rs: &RateSamples) -> Result<RateEstimate> {
    check_failure_budget(rs)?;
    if rs.is_empty() {
        return Err(Error::Study("strong study: no samples".into()));
    }
    let p = cfg.strong_power;
    let points: Vec<RatePoint> = rs
        .m_grid
        .iter()
        .zip(&rs.strong)
        .map(|(&m, col)| {
            let s = Summary::of(col, cfg.confidence);
            let root = |v: f64| v.max(0.0).powf(1.0 / p);
            let est = root(s.mean);
            RatePoint {
                m,
                estimate: est,
                ci_lo: root(s.mean - s.half_width),
                ci_hi: root(s.mean + s.half_width),
                // delta method
                std_err: if est > 0.0 { s.std_err / (p * est.powf(p - 1.0)) } else { 0.0 },
                resolved: true,
            }
        })
        .collect();
    let mut rate = fit_rate(points, 2);
    let xs: Vec<f64> = rs.m_grid.iter().map(|&m| (m as f64).ln()).collect();
    if rate.status == RateStatus::Fitted && cfg.bootstrap_resamples > 0 {
        rate.slope_ci = bootstrap_slope(
            &xs,
            &rs.strong,
            |c| crate::stats::mean(c).powf(1.0 / p),
            cfg.bootstrap_resamples,
            cfg.seed,
            cfg.confidence,
        );
    }
    rate.samples = rs.len();
    rate.failures = rs.failures;
    Ok(rate)
}

/// Weak error curve and rate from collected samples. Points enter the fit
/// when `|estimate| > 2·half-width`; at least three must.
pub fn summarize_weak(cfg: &StudyConfig, rs: &RateSamples) -> Result<RateEstimate> {
    if rs.is_empty() {
        return Err(Error::Study("weak study: no samples".into()));
    }
    let points: Vec<RatePoint> = rs
        .m_grid
        .iter()
        .zip(&rs.weak)
        .map(|(&m, col)| {
            let s = Summary::of(col, cfg.confidence);
            RatePoint {
                m,
                estimate: s.mean,
                ci_lo: s.mean - s.half_width,
                ci_hi: s.mean + s.half_width,
                std_err: s.std_err,
                resolved: s.mean.abs() > 2.0 * s.half_width,
            }
        })
        .collect();
    // the fit uses |estimate|
    let abs_points: Vec<RatePoint> = points.iter().map(|p| RatePoint { estimate: p.estimate.abs(), ..p.clone() }).collect();
    let mut rate = fit_rate(abs_points, 3);
    rate.points = points;
    if rate.status == RateStatus::Fitted && cfg.bootstrap_resamples > 0 {
        let (xs, cols): (Vec<f64>, Vec<Vec<f64>>) = rate
            .points
            .iter()
            .zip(&rs.weak)
            .filter(|(p, _)| p.resolved && p.estimate != 0.0)
            .map(|(p, c)| ((p.m as f64).ln(), c.clone()))
            .unzip();
        rate.slope_ci = bootstrap_slope(
            &xs,
            &cols,
            |c| crate::stats::mean(c).abs(),
            cfg.bootstrap_resamples,
            cfg.seed,
            cfg.confidence,
        );
    }
    if rate.status == RateStatus::InsufficientResolution {
        rate.warnings.push("fewer than 3 statistically resolved points".into());
    }
    rate.samples = rs.len();
    rate.failures = rs.failures;
    Ok(rate)
}

pub fn strong_error_study(cfg: &StudyConfig) -> Result<RateEstimate> {
    summarize_strong(cfg, &collect_rate_samples(cfg, false)?)
}

pub fn weak_error_study(cfg: &StudyConfig) -> Result<RateEstimate> {
    summarize_weak(cfg, &collect_rate_samples(cfg, false)?)
}

/// Moment reports of one grid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMoments {
    #[serde(rename = "M")]
    pub m: usize,
    pub reports: Vec<MomentReport>,
}

pub fn summarize_moments(cfg: &StudyConfig, rs: &RateSamples) -> Option<Vec<LevelMoments>> {
    let per_level = rs.moments.as_ref()?;
    Some(
        rs.m_grid
            .iter()
            .zip(per_level)
            .map(|(&m, ms)| LevelMoments {
                m,
                reports: moment_statistics(ms, &cfg.covariance, &cfg.moments, cfg.confidence, rs.failures),
            })
            .collect(),
    )
}

/// Derivative-bound scan at the dimension and sample count of `cfg.scan`.
pub fn run_bound_scan(cfg: &StudyConfig) -> Result<BoundScan> {
    cfg.validate()?;
    let m = cfg.scan.m;
    let inputs = McInputs {
        scheme: cfg.scheme_for(m),
        model: cfg.covariance.truncated_for(m),
        seed: cfg.seed ^ 0x5CA7,
        samples: cfg.scan.samples,
        confidence: cfg.confidence,
    };
    if cfg.x0.is_random() {
        return Err(Error::config("x0", "the derivative scan needs deterministic initial data"));
    }
    let x0 = cfg.x0.realize(m, NoiseStream::new(cfg.seed, 0));
    derivative_bound_scan(&cfg.functional, &x0, &cfg.scan.grid, &inputs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    StrongRate,
    WeakRate,
    Moments,
    DerivativeScan,
}

/// Everything a study run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub kinds: Vec<StudyKind>,
    pub strong: Option<RateEstimate>,
    pub weak: Option<RateEstimate>,
    pub moments: Option<Vec<LevelMoments>>,
    pub scan: Option<BoundScan>,
    pub samples: usize,
    pub failures: usize,
    pub diagnostics: Vec<String>,
}

/// Runs the requested studies. Strong, weak and moment studies share one
/// set of coupled samples. Deterministic given the configuration.
pub fn run_study(cfg: &StudyConfig, kinds: &[StudyKind]) -> Result<StudyOutput> {
    cfg.validate()?;
    let has = |k| kinds.contains(&k);
    let needs_rates = has(StudyKind::StrongRate) || has(StudyKind::WeakRate) || has(StudyKind::Moments);
    let mut out = StudyOutput {
        kinds: kinds.to_vec(),
        strong: None,
        weak: None,
        moments: None,
        scan: None,
        samples: 0,
        failures: 0,
        diagnostics: Vec::new(),
    };
    if needs_rates {
        let rs = collect_rate_samples(cfg, has(StudyKind::Moments))?;
        out.samples = rs.len();
        out.failures = rs.failures;
        out.diagnostics = rs.diagnostics.clone();
        if has(StudyKind::StrongRate) {
            out.strong = Some(summarize_strong(cfg, &rs)?);
        }
        if has(StudyKind::WeakRate) {
            out.weak = Some(summarize_weak(cfg, &rs)?);
        }
        if has(StudyKind::Moments) {
            out.moments = summarize_moments(cfg, &rs);
        }
    }
    if has(StudyKind::DerivativeScan) {
        let scan = run_bound_scan(cfg)?;
        out.failures += scan.failures;
        out.scan = Some(scan);
    }
    Ok(out)
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    Ok(pool.install(f))
}

/// Pathwise comparison of the variation processes with finite differences
/// of the solution map, all runs sharing one noise path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwiseCheck {
    pub sample: u64,
    /// `‖(X^{x+εh} − X^{x−εh})/2ε − η^h‖ / ‖η^h‖` at `T`.
    pub first_rel_err: f64,
    /// Mixed central second difference against `ζ^{g,h}`, relative.
    pub second_rel_err: f64,
}

/// Pathwise variation checks together with the Monte Carlo derivative
/// comparisons and the derivative-bound scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub pathwise: Vec<PathwiseCheck>,
    pub du: DerivativeCheck,
    pub d2u: DerivativeCheck,
    pub scan: Option<BoundScan>,
}

fn variation_directions(cfg: &StudyConfig) -> Result<(Field, Field)> {
    let v = &cfg.variations;
    let g = Field::new(v.g.clone())?.resized(v.m);
    let h = Field::new(v.h.clone())?.resized(v.m);
    Ok((g, h))
}

fn variation_x0(cfg: &StudyConfig) -> Result<Field> {
    if cfg.x0.is_random() {
        return Err(Error::config("x0", "derivative checks need deterministic initial data"));
    }
    Ok(cfg.x0.realize(cfg.m_ref, NoiseStream::new(cfg.seed, 0)).resized(cfg.variations.m))
}

/// Runs the pathwise variation check on `cfg.variations.paths` noise paths.
pub fn pathwise_variation_checks(cfg: &StudyConfig) -> Result<Vec<PathwiseCheck>> {
    use rayon::prelude::*;
    cfg.validate()?;
    let v = &cfg.variations;
    let (g, h) = variation_directions(cfg)?;
    let x0 = variation_x0(cfg)?;
    let sc = cfg.scheme_for(v.m);
    let model = cfg.covariance.truncated_for(v.m);
    let req = ObservableRequest::default();
    let none = Tracking::none();
    (0..v.paths as u64)
        .into_par_iter()
        .map(|i| {
            let stream = NoiseStream::new(cfg.seed ^ 0x7A46, i);
            let run = |x: &Field| evolve(x, &sc, &model, stream, &none, &req).map(|r| r.terminal.x);
            let rec = evolve(&x0, &sc, &model, stream, &Tracking::pair(g.clone(), h.clone()), &req)?;
            let (e1, e2) = (v.eps_first, v.eps_second);
            let fd = run(&x0.add_scaled(e1, &h))?.sub(&run(&x0.add_scaled(-e1, &h))?).scaled(0.5 / e1);
            let eta = &rec.terminal.etas[1];
            let shifted = |a: f64, b: f64| x0.add_scaled(a * e2, &g).add_scaled(b * e2, &h);
            let sd = run(&shifted(1.0, 1.0))?
                .sub(&run(&shifted(1.0, -1.0))?)
                .sub(&run(&shifted(-1.0, 1.0))?)
                .add_scaled(1.0, &run(&shifted(-1.0, -1.0))?)
                .scaled(0.25 / (e2 * e2));
            let zeta = &rec.terminal.zetas[0].field;
            Ok(PathwiseCheck {
                sample: i,
                first_rel_err: fd.sub(eta).norm() / eta.norm(),
                second_rel_err: sd.sub(zeta).norm() / zeta.norm(),
            })
        })
        .collect()
}

/// Everything behind the `derivative-check` command.
pub fn derivative_report(cfg: &StudyConfig, with_scan: bool) -> Result<DerivativeReport> {
    let pathwise = pathwise_variation_checks(cfg)?;
    let v = &cfg.variations;
    let (g, h) = variation_directions(cfg)?;
    let x0 = variation_x0(cfg)?;
    let inputs = McInputs {
        scheme: cfg.scheme_for(v.m),
        model: cfg.covariance.truncated_for(v.m),
        seed: cfg.seed ^ 0xD1FF,
        samples: v.samples,
        confidence: cfg.confidence,
    };
    let du = du_check(&cfg.functional, &x0, &h, v.eps_first, &inputs)?;
    let d2u = d2u_check(&cfg.functional, &x0, &g, &h, v.eps_second, &inputs)?;
    let scan = if with_scan { Some(run_bound_scan(cfg)?) } else { None };
    Ok(DerivativeReport { pathwise, du, d2u, scan })
}
