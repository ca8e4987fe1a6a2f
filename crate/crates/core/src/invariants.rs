//! A battery of identities and inequalities that every build must satisfy,
//! checked on random fields and short simulations. Each check reports the
//! worst normalized defect it saw against its tolerance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiments::StudyConfig;
use crate::integrator::{evolve, ObservableRequest, Scheme, SchemeConfig, Tracking};
use crate::noise::{CovarianceModel, IncrementKind, IncrementSampler, NoiseIncrement, NoiseStream};
use crate::rng::PhiloxRng;
use crate::spectral::{bilinear_conv, bilinear_fast, nonlinearity_conv, nonlinearity_fast, PseudoSpectral, SpectralField};

type Field = SpectralField<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    /// Largest normalized defect over all trials.
    pub worst: f64,
    pub tolerance: f64,
    pub trials: usize,
}

impl InvariantCheck {
    fn at_most(name: &str, worst: f64, tolerance: f64, trials: usize) -> Self {
        Self { name: name.into(), passed: worst <= tolerance, worst, tolerance, trials }
    }

    fn at_least(name: &str, value: f64, bound: f64, trials: usize) -> Self {
        Self { name: name.into(), passed: value >= bound, worst: value, tolerance: bound, trials }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub seed: u64,
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&InvariantCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// A random field of dimension `m` with Gaussian coefficients decaying like
/// `k^{-s}`, `s` drawn uniformly from `[0, 2]`.
pub fn random_field(rng: &mut PhiloxRng, m: usize) -> Field {
    let s: f64 = rng.random_range(0.0..2.0);
    let coeffs = (1..=m)
        .map(|k| {
            let xi: f64 = rng.sample(StandardNormal);
            xi * (k as f64).powf(-s)
        })
        .collect();
    Field::new(coeffs).expect("finite draws")
}

struct Worst(f64);

impl Worst {
    fn see(&mut self, v: f64) {
        // NaN must not hide behind max
        if v.is_nan() || v > self.0 {
            self.0 = if v.is_nan() { f64::INFINITY } else { v };
        }
    }
}

/// Identities of the spectral layer on `trials` random fields with
/// dimensions in `4..=max_dim`.
pub fn algebraic_checks(seed: u64, trials: usize, max_dim: usize) -> Vec<InvariantCheck> {
    let mut rng = PhiloxRng::new(seed, [0x1A7, 0, 0]);
    let mut parseval = Worst(0.0);
    let mut grid_parseval = Worst(0.0);
    let mut skew_fast = Worst(0.0);
    let mut skew_conv = Worst(0.0);
    let mut sym = Worst(0.0);
    let mut fast_conv = Worst(0.0);
    let mut bil_fast_conv = Worst(0.0);
    let mut tail = Worst(f64::NEG_INFINITY);
    let mut inverse = Worst(f64::NEG_INFINITY);
    let mut poincare = Worst(f64::NEG_INFINITY);
    let mut smoothing = Worst(f64::NEG_INFINITY);
    let mut difference = Worst(f64::NEG_INFINITY);
    let mut grid_eval = Worst(0.0);
    for _ in 0..trials {
        let m = rng.random_range(4..=max_dim);
        let x = random_field(&mut rng, m);
        let y = random_field(&mut rng, m);
        let nx = x.norm();
        let ny = y.norm();
        let sum_sq: f64 = x.coeffs().iter().map(|a| a * a).sum();

        parseval.see((x.fractional_norm(0.0).powi(2) - sum_sq).abs() / sum_sq);

        // discrete orthogonality of the sine transform on N ≥ M + 1 intervals
        let mut ps = PseudoSpectral::new(m);
        let mut vals = vec![0.0; ps.grid_intervals() - 1];
        ps.to_grid(x.coeffs(), &mut vals);
        let quad: f64 = vals.iter().map(|v| v * v).sum::<f64>() / ps.grid_intervals() as f64;
        grid_parseval.see((quad - sum_sq).abs() / sum_sq);
        let direct = x.eval_on_grid(ps.grid_intervals());
        let scale = x.coeffs().iter().map(|a| a.abs()).sum::<f64>();
        let dev = vals.iter().zip(&direct[1..]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        grid_eval.see(dev / scale);

        let bf = nonlinearity_fast(&x, m);
        let bc = nonlinearity_conv(&x, m);
        skew_fast.see(bf.dot(&x).abs() / nx.powi(3));
        skew_conv.see(bc.dot(&x).abs() / nx.powi(3));
        fast_conv.see(bf.sub(&bc).norm() / bc.norm().max(f64::MIN_POSITIVE));
        let bxy = bilinear_fast(&x, &y, m);
        bil_fast_conv.see(bxy.sub(&bilinear_conv(&x, &y, m)).norm() / bxy.norm().max(f64::MIN_POSITIVE));
        sym.see((x.dot(&bxy) + 0.5 * y.dot(&bf)).abs() / (nx * nx * ny));

        let n = rng.random_range(1..m);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let tail_field = x.sub(&x.project(n));
        let bound = (std::f64::consts::PI * n as f64).powf(-2.0 * alpha) * nx;
        tail.see(tail_field.fractional_norm(-alpha) / bound - 1.0);

        let beta: f64 = rng.random_range(1e-3..0.5);
        let rhs = (std::f64::consts::PI * m as f64).powf(2.0 * beta) * x.fractional_norm(0.5 - beta);
        inverse.see(x.fractional_norm(0.5) / rhs - 1.0);

        poincare.see(nx / (std::f64::consts::FRAC_1_SQRT_2 * x.fractional_norm(0.5)) - 1.0);

        let t: f64 = 10f64.powf(rng.random_range(-5.0..0.0));
        let a: f64 = rng.random_range(0.0..=1.0);
        let limit = if a == 0.0 { 1.0 } else { (a * (a.ln() - 1.0)).exp() };
        let smoothed = x.semigroup(t).expect("t > 0");
        smoothing.see(t.powf(a) * smoothed.fractional_norm(a) / nx / limit - 1.0);

        let b: f64 = rng.random_range(0.0..=1.0);
        difference.see(smoothed.sub(&x).fractional_norm(-b) / (t.powf(b) * nx) - 1.0);
    }
    let rel = 1e-14;
    vec![
        InvariantCheck::at_most("parseval", parseval.0, 1e-14, trials),
        InvariantCheck::at_most("discrete_parseval", grid_parseval.0, 1e-13, trials),
        InvariantCheck::at_most("grid_transform_vs_direct_sum", grid_eval.0, 1e-12, trials),
        InvariantCheck::at_most("nonlinearity_skew_fast", skew_fast.0, 1e-12, trials),
        InvariantCheck::at_most("nonlinearity_skew_conv", skew_conv.0, 1e-12, trials),
        InvariantCheck::at_most("bilinear_antisymmetry", sym.0, 1e-12, trials),
        InvariantCheck::at_most("nonlinearity_fast_vs_conv", fast_conv.0, 1e-12, trials),
        InvariantCheck::at_most("bilinear_fast_vs_conv", bil_fast_conv.0, 1e-12, trials),
        InvariantCheck::at_most("projection_tail", tail.0, rel, trials),
        InvariantCheck::at_most("inverse_inequality", inverse.0, rel, trials),
        InvariantCheck::at_most("poincare", poincare.0, rel, trials),
        InvariantCheck::at_most("semigroup_smoothing", smoothing.0, rel, trials),
        InvariantCheck::at_most("semigroup_difference", difference.0, rel, trials),
    ]
}

/// Grid-estimated Gagliardo–Nirenberg ratio
/// `‖x‖_{L⁴} / (‖x‖^{3/4} ‖x‖_{W^{1,2}}^{1/4})`.
pub fn gagliardo_nirenberg_ratio(x: &Field) -> f64 {
    let n = 8 * x.dim();
    let vals = x.eval_on_grid(n);
    let l4 = (vals.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64).powf(0.25);
    let nx = x.norm();
    let w12 = (nx * nx + x.fractional_norm(0.5).powi(2)).sqrt();
    l4 / (nx.powf(0.75) * w12.powf(0.25))
}

/// Largest ratio per dimension, and the spread `max/min` across dimensions.
pub fn gagliardo_nirenberg_spread(seed: u64, per_dim: usize, dims: &[usize]) -> (Vec<f64>, f64) {
    let mut rng = PhiloxRng::new(seed, [0x6A9, 0, 0]);
    let consts: Vec<f64> = dims
        .iter()
        .map(|&m| (0..per_dim).map(|_| gagliardo_nirenberg_ratio(&random_field(&mut rng, m))).fold(0.0, f64::max))
        .collect();
    let hi = consts.iter().copied().fold(0.0, f64::max);
    let lo = consts.iter().copied().fold(f64::INFINITY, f64::min);
    (consts, hi / lo)
}

/// The first `m` modes of the noise driving dimension `m` must not depend
/// on how many modes are sampled in total.
pub fn coupling_defect(model: &CovarianceModel, dt: f64, seed: u64, steps: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for kind in [IncrementKind::SemigroupBrownian, IncrementKind::ExactConvolution] {
        let full = IncrementSampler::new(model, dt, kind)?;
        let mut out_full = NoiseIncrement::<f64>::zeros(model.k_max);
        let (mut xi, mut xi2) = (Vec::new(), Vec::new());
        let mut m = 1;
        while m < model.k_max {
            let trunc = model.truncated_for(m);
            let part = IncrementSampler::new(&trunc, dt, kind)?;
            let mut out_part = NoiseIncrement::<f64>::zeros(trunc.k_max);
            for n in 0..steps {
                let stream = NoiseStream::new(seed, m as u64).at_step(n);
                full.fill(stream, true, &mut out_full, &mut xi, &mut xi2);
                part.fill(stream, true, &mut out_part, &mut xi, &mut xi2);
                let a = &out_full.additive[..m];
                let b = &out_part.additive[..m];
                let bw = out_full.brownian.as_ref().expect("requested");
                let pw = out_part.brownian.as_ref().expect("requested");
                for (u, v) in a.iter().zip(b).chain(bw[..m].iter().zip(&pw[..m])) {
                    worst = worst.max((u - v).abs());
                }
            }
            m *= 2;
        }
    }
    Ok(worst)
}

/// RMS of the discrete energy-identity residual over `paths` paths.
pub fn energy_residual_rms(
    x0: &Field,
    m: usize,
    t_end: f64,
    steps: usize,
    scheme: Scheme,
    model: &CovarianceModel,
    seed: u64,
    paths: u64,
) -> Result<f64> {
    use rayon::prelude::*;
    let cfg = SchemeConfig::new(m, t_end, steps, scheme);
    let req = ObservableRequest { ito_accumulator: true, ..Default::default() };
    let model = model.truncated_for(m);
    let sq: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let rec = evolve(x0, &cfg, &model, NoiseStream::new(seed, i), &Tracking::none(), &req)?;
            Ok(rec.energy_residual().expect("accumulator requested").powi(2))
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / paths as f64).sqrt())
}

/// The full battery: algebraic identities on `trials` random fields, the
/// Gagliardo–Nirenberg spread, noise coupling and a short energy check.
pub fn run_battery(cfg: &StudyConfig, trials: usize) -> Result<InvariantReport> {
    let seed = cfg.seed;
    let mut checks = algebraic_checks(seed, trials, 128);

    let (_, spread) = gagliardo_nirenberg_spread(seed, 50, &[8, 16, 32, 64, 128]);
    checks.push(InvariantCheck::at_most("gagliardo_nirenberg_spread", spread, 2.0, 250));

    let model = cfg.covariance.truncated_for(64.max(cfg.m_grid.iter().copied().max().unwrap_or(1)));
    let defect = coupling_defect(&model, cfg.dt, seed, 8)?;
    checks.push(InvariantCheck::at_most("noise_coupling", defect, 0.0, 8));

    let x0 = cfg.x0.realize(cfg.m_ref, NoiseStream::new(seed, 0));
    let coarse = energy_residual_rms(&x0, 16, 0.1, 2048, cfg.scheme, &cfg.covariance, seed, 256)?;
    let fine = energy_residual_rms(&x0, 16, 0.1, 4096, cfg.scheme, &cfg.covariance, seed, 256)?;
    checks.push(InvariantCheck::at_least("energy_residual_halving", coarse / fine, 1.3, 256));

    Ok(InvariantReport { seed, checks })
}
