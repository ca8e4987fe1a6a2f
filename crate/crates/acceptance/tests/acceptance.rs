//! The nine acceptance criteria, each at its stated tolerance. Prints one
//! verdict line per criterion and exits nonzero if any fails.
//!
//! Positional arguments restrict the run to the listed criterion numbers,
//! e.g. `cargo test --test acceptance -- 3 5`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use sburgers::experiments::{
    collect_rate_samples_range, pathwise_variation_checks, run_bound_scan, run_coupled_sample, summarize_moments,
    summarize_strong, summarize_weak, with_threads, RateEstimate, RateSamples, RateStatus, StudyConfig,
};
use sburgers::integrator::{ObservableRequest, Scheme};
use sburgers::invariants::{algebraic_checks, energy_residual_rms};
use sburgers::io::{self, Command, RunManifest};
use sburgers::noise::NoiseStream;
use sburgers_acceptance::{note, Ledger};

type Check = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn curve(est: &RateEstimate) -> String {
    est.points
        .iter()
        .map(|p| format!("M={}: {:.4e} [{:.4e}, {:.4e}]{}", p.m, p.estimate, p.ci_lo, p.ci_hi, if p.resolved { "" } else { " (unresolved)" }))
        .collect::<Vec<_>>()
        .join("; ")
}

// ---------------------------------------------------------------------------
// 1, 2, 7: the default coupled study

/// Strong samples are the first 10³ of the weak study's 10⁴.
const STRONG_SAMPLES: u64 = 1000;
const WEAK_SAMPLES: u64 = 10_000;

fn strong_rate(cfg: &StudyConfig, rs: &RateSamples) -> Check {
    let est = summarize_strong(cfg, rs).map_err(err)?;
    note(format!("strong error (E‖X_ref − X_M‖²)^½: {}", curve(&est)));
    let slope = est.slope.ok_or("no slope fitted")?;
    let ci = est.slope_ci.map(|(a, b)| format!(" bootstrap CI [{a:.3}, {b:.3}]")).unwrap_or_default();
    Ok(((-1.2..=-0.8).contains(&slope), format!("slope {slope:.4}{ci}, N = {}, required in [-1.2, -0.8]", est.samples)))
}

fn weak_rate(cfg: &StudyConfig, rs: &RateSamples) -> Check {
    let est = summarize_weak(cfg, rs).map_err(err)?;
    note(format!("weak error |E φ(X_ref) − E φ(X_M)|: {}", curve(&est)));
    for w in &est.warnings {
        note(format!("warning: {w}"));
    }
    let resolved = est.points.iter().filter(|p| p.resolved).count();
    match (est.status, est.slope) {
        (RateStatus::Fitted, Some(slope)) => Ok((
            slope <= -1.6,
            format!("slope {slope:.4} over {resolved} resolved points, N = {}, required ≤ -1.6", est.samples),
        )),
        _ => Ok((false, format!("only {resolved} resolved points, no slope fitted"))),
    }
}

fn moment_uniformity(cfg: &StudyConfig, rs: &RateSamples) -> Check {
    let levels = summarize_moments(cfg, rs).ok_or("no moment inputs were collected")?;
    let settings = &cfg.moments;
    let p4 = settings.powers.iter().position(|&p| p == 4).ok_or("power 4 not configured")?;
    let exp = settings.powers.len();
    let beta = settings.beta_for(&cfg.covariance);
    let want = 0.2 / cfg.covariance.trace();
    if (beta - want).abs() > 1e-15 * want {
        return Ok((false, format!("exponential moment uses beta = {beta}, expected {want}")));
    }
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for idx in [p4, exp] {
        let name = &levels[0].reports[idx].name;
        let row: Vec<String> = levels
            .iter()
            .map(|l| format!("M={}: {:.6} ± {:.2e}", l.m, l.reports[idx].estimate, l.reports[idx].std_err))
            .collect();
        note(format!("{name}: {}", row.join("; ")));
        for (i, a) in levels.iter().enumerate() {
            for b in &levels[i + 1..] {
                let (ra, rb) = (&a.reports[idx], &b.reports[idx]);
                if ra.flag.is_some() || rb.flag.is_some() {
                    note(format!("flag: {:?} {:?}", ra.flag, rb.flag));
                }
                let se = (ra.std_err.powi(2) + rb.std_err.powi(2)).sqrt();
                let z = (ra.estimate - rb.estimate).abs() / se;
                worst = worst.max(z);
                ok &= z < 3.0 && z.is_finite();
            }
        }
    }
    Ok((ok, format!("largest pairwise difference {worst:.3} combined SE (beta = 0.2/Tr Q = {beta:.5}), required < 3")))
}

// ---------------------------------------------------------------------------
// 3: linear oracle

/// Stationary-approach variance of mode k of the Ornstein–Uhlenbeck process
/// `dY = −(πk)² Y dt + √q dβ` at time `t`.
fn ou_variance(q: f64, k: usize, t: f64) -> f64 {
    let lam = (PI * k as f64).powi(2);
    q * (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam)
}

fn linear_oracle(base: &StudyConfig) -> Check {
    use rayon::prelude::*;
    let cfg = StudyConfig { nonlinear: false, dt: base.t_end / 1024.0, mesh_intervals: 64, ..base.clone() };
    if !cfg.covariance.rotations.is_empty() {
        return Err("the oracle needs e_k = h_k".into());
    }
    let n = 2000u64;
    let mut levels = cfg.m_grid.clone();
    levels.push(cfg.m_ref);
    let reqs = vec![ObservableRequest::default(); levels.len()];
    let terminals: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            run_coupled_sample(&cfg, &levels, &reqs, NoiseStream::new(cfg.seed ^ 0x11AE, i))
                .map(|recs| recs.into_iter().map(|r| r.terminal.x.into_vec()).collect())
        })
        .collect::<sburgers::Result<_>>()
        .map_err(err)?;
    let t = cfg.t_end;
    let q = |k: usize| cfg.covariance.q(k);

    // per-mode variance on the finest grid level
    let top = cfg.m_grid.len() - 1;
    let m_top = cfg.m_grid[top];
    let mut worst_mode = (0, 0.0);
    for k in 1..=m_top {
        let xs: Vec<f64> = terminals.iter().map(|s| s[top][k - 1]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| x - mean).collect();
        let var = dev.iter().map(|d| d * d).sum::<f64>() / (n - 1) as f64;
        let m4 = dev.iter().map(|d| d.powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - var * var).max(0.0) / n as f64).sqrt();
        let z = (var - ou_variance(q(k), k, t)).abs() / se;
        if z > worst_mode.1 {
            worst_mode = (k, z);
        }
    }
    note(format!("per-mode variance at M = {m_top}: worst mode k = {} at {:.2} SE", worst_mode.0, worst_mode.1));

    // E‖X_ref − X_M‖² against the tail sum of the reference modes above M
    let mut worst_curve: f64 = 0.0;
    let mut row = Vec::new();
    for (j, &m) in cfg.m_grid.iter().enumerate() {
        let errs: Vec<f64> = terminals
            .iter()
            .map(|s| {
                let r = &s[levels.len() - 1];
                let x = &s[j];
                r.iter().enumerate().map(|(i, a)| (a - x.get(i).copied().unwrap_or(0.0)).powi(2)).sum()
            })
            .collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact: f64 = (m + 1..=cfg.m_ref).map(|k| ou_variance(q(k), k, t)).sum();
        let z = (mean - exact).abs() / se;
        worst_curve = worst_curve.max(z);
        row.push(format!("M={m}: MC {mean:.5e} vs exact {exact:.5e} ({z:.2} SE)"));
    }
    note(row.join("; "));
    let ok = worst_mode.1 <= 3.0 && worst_curve <= 3.0;
    Ok((ok, format!("worst per-mode deviation {:.2} SE, worst strong-curve deviation {worst_curve:.2} SE, N = {n}, required ≤ 3", worst_mode.1)))
}

// ---------------------------------------------------------------------------
// 4, 5, 6, 8, 9

fn tangent_consistency(cfg: &StudyConfig) -> Check {
    let checks = pathwise_variation_checks(cfg).map_err(err)?;
    let first = checks.iter().map(|c| c.first_rel_err).fold(0.0, f64::max);
    let second = checks.iter().map(|c| c.second_rel_err).fold(0.0, f64::max);
    let v = &cfg.variations;
    Ok((
        first <= 1e-3 && second <= 5e-2,
        format!(
            "M = {}, {} paths: first variation rel. err {first:.3e} (ε = {:e}, ≤ 1e-3), second {second:.3e} (ε = {:e}, ≤ 5e-2)",
            v.m, v.paths, v.eps_first, v.eps_second
        ),
    ))
}

fn algebraic_invariants(cfg: &StudyConfig) -> Check {
    let checks = algebraic_checks(cfg.seed, 1000, 128);
    let wanted = [
        "nonlinearity_skew_fast",
        "nonlinearity_skew_conv",
        "bilinear_antisymmetry",
        "nonlinearity_fast_vs_conv",
        "parseval",
        "projection_tail",
        "inverse_inequality",
    ];
    let mut ok = true;
    for name in wanted {
        let c = checks.iter().find(|c| c.name == name).ok_or(format!("missing check {name}"))?;
        note(format!("{name}: worst {:.3e} (tol {:e})", c.worst, c.tolerance));
        ok &= c.passed;
    }
    Ok((ok, "1000 random fields, M ∈ [4, 128]".into()))
}

fn energy_identity(cfg: &StudyConfig) -> Check {
    let x0 = cfg.x0.realize(cfg.m_ref, NoiseStream::new(cfg.seed, 0));
    let steps = cfg.steps();
    let rms = |scheme: Scheme, steps: usize| {
        energy_residual_rms(&x0, 32, cfg.t_end, steps, scheme, &cfg.covariance, cfg.seed ^ 0xE4E, 100).map_err(err)
    };
    let other = if cfg.scheme == Scheme::ExponentialEuler { Scheme::AcceleratedExponentialEuler } else { Scheme::ExponentialEuler };
    let (c, f) = (rms(other, steps / 2)?, rms(other, steps)?);
    note(format!("{other:?}: residual RMS {c:.4e} → {f:.4e}, factor {:.3}", c / f));
    let (c, f) = (rms(cfg.scheme, steps / 2)?, rms(cfg.scheme, steps)?);
    let factor = c / f;
    Ok((
        factor >= 1.3,
        format!("{:?}, M = 32, 100 paths, dt = T/{} → T/{}: RMS {c:.4e} → {f:.4e}, factor {factor:.3} (≥ 1.3)", cfg.scheme, steps / 2, steps),
    ))
}

fn bound_scan(cfg: &StudyConfig) -> Check {
    let scan = run_bound_scan(cfg).map_err(err)?;
    let mut ok = true;
    let fmt_p = |t: &Option<sburgers::stats::TrendTest>| t.map(|t| format!("rho {:+.2} p {:.3}", t.rho, t.p_increasing)).unwrap_or("-".into());
    for t in &scan.first_trends {
        let bounded = t.is_bounded(0.05);
        ok &= bounded;
        note(format!(
            "Du, alpha = {}: max ratio {:.3e}; vs 1/t {}; vs k {}{}",
            t.alpha,
            t.max_ratio,
            fmt_p(&t.against_inverse_time),
            fmt_p(&t.against_mode),
            if bounded { "" } else { "  <- increasing trend" }
        ));
    }
    for t in &scan.second_trends {
        note(format!(
            "D²u (not graded), alpha = beta = {}: vs 1/t {}; vs k {}",
            t.alpha,
            fmt_p(&t.against_inverse_time),
            fmt_p(&t.against_mode)
        ));
    }
    Ok((ok, format!("M = {}, N = {}, {} failed samples, one-sided Spearman at 5%", cfg.scan.m, cfg.scan.samples, scan.failures)))
}

fn determinism(cfg: &StudyConfig, main: Option<&RateSamples>) -> Check {
    let small = StudyConfig {
        m_grid: vec![4, 8],
        m_ref: 32,
        t_end: 0.1,
        dt: 0.1 / 256.0,
        samples: 24,
        mesh_intervals: 16,
        bootstrap_resamples: 50,
        scan: sburgers::experiments::ScanSettings { m: 8, samples: 12, ..Default::default() },
        variations: sburgers::experiments::VariationSettings { paths: 3, samples: 12, ..Default::default() },
        covariance: sburgers::noise::CovarianceModel { k_max: 32, ..cfg.covariance.clone() },
        ..cfg.clone()
    };
    let commands = [
        Command::Simulate { sample: 3, m: None },
        Command::StrongRate,
        Command::WeakRate,
        Command::DerivativeCheck,
        Command::Invariants { trials: 50 },
    ];
    let mut ok = true;
    for command in commands {
        let a = with_threads(1, || io::execute(command.clone(), &small)).map_err(err)?.map_err(err)?;
        let json = a.to_json().map_err(err)?;
        let manifest: RunManifest = io::ResultBundle::from_json(&json).map_err(err)?.manifest;
        let b = with_threads(4, || io::reproduce(&manifest)).map_err(err)?.map_err(err)?;
        let same = a.same_as(&b);
        note(format!("{command:?}: threads 1 vs 4 from manifest: {}", if same { "identical" } else { "DIFFERENT" }));
        ok &= same;
    }
    if let Some(main) = main {
        let ids = 0..8u64;
        let one = with_threads(1, || collect_rate_samples_range(cfg, ids.clone(), true)).map_err(err)?.map_err(err)?;
        let four = with_threads(4, || collect_rate_samples_range(cfg, ids.clone(), true)).map_err(err)?.map_err(err)?;
        let head = main.first(8);
        let bits = |r: &RateSamples| serde_json::to_string(r).expect("samples serialize");
        let same = bits(&one) == bits(&four) && bits(&one) == bits(&head);
        note(format!("default study, samples 0..8 at 1 and 4 threads against the main run: {}", if same { "identical" } else { "DIFFERENT" }));
        ok &= same;
    }
    Ok((ok, "bit-identical reruns across thread counts".into()))
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let cfg = StudyConfig::default();
    let mut ledger = Ledger::default();

    if want(5) {
        ledger.run(5, "algebraic invariants", || algebraic_invariants(&cfg));
    }
    if want(4) {
        ledger.run(4, "tangent consistency", || tangent_consistency(&cfg));
    }
    if want(3) {
        ledger.run(3, "linear-case oracle", || linear_oracle(&cfg));
    }
    if want(6) {
        ledger.run(6, "energy identity", || energy_identity(&cfg));
    }
    if want(8) {
        ledger.run(8, "derivative-bound scan", || bound_scan(&cfg));
    }

    let mut main_samples = None;
    if want(1) || want(2) || want(7) || want(9) {
        let start = Instant::now();
        let head = collect_rate_samples_range(&cfg, 0..STRONG_SAMPLES, true);
        let head_time = start.elapsed();
        match head {
            Ok(head) => {
                note(format!("collected {STRONG_SAMPLES} coupled samples with moments in {:.1} s", head_time.as_secs_f64()));
                let strong_cfg = StudyConfig { samples: STRONG_SAMPLES as usize, ..cfg.clone() };
                if want(1) {
                    ledger.run(1, "strong rate", || strong_rate(&strong_cfg, &head));
                }
                if want(7) {
                    ledger.run(7, "moment uniformity", || moment_uniformity(&strong_cfg, &head));
                }
                if want(2) {
                    let weak_cfg = StudyConfig { samples: WEAK_SAMPLES as usize, ..cfg.clone() };
                    ledger.run(2, "weak rate", || {
                        let start = Instant::now();
                        let mut all = head.clone();
                        all.append(collect_rate_samples_range(&weak_cfg, STRONG_SAMPLES..WEAK_SAMPLES, false).map_err(err)?);
                        note(format!(
                            "weak study wall time {:.1} min for {WEAK_SAMPLES} samples",
                            (head_time + start.elapsed()).as_secs_f64() / 60.0
                        ));
                        weak_rate(&weak_cfg, &all)
                    });
                }
                main_samples = Some(head);
            }
            Err(e) => {
                for (id, name) in [(1, "strong rate"), (2, "weak rate"), (7, "moment uniformity")] {
                    if want(id) {
                        ledger.run(id, name, || Err(e.to_string()));
                    }
                }
            }
        }
    }
    if want(9) {
        ledger.run(9, "determinism", || determinism(&cfg, main_samples.as_ref()));
    }

    ledger.summary();
    if ledger.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
