//! Sample statistics: CLT intervals, least-squares fits, bootstrap and rank
//! correlation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::rng::PhiloxRng;

/// Two-sided normal quantile for the given confidence level.
pub fn z_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0)
}

/// Mean, standard error and CLT half-width of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
    pub half_width: f64,
}

impl Summary {
    pub fn of(xs: &[f64], level: f64) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std_err: f64::NAN, half_width: f64::NAN };
        }
        if xs.iter().all(|&x| x == xs[0]) {
            return Self { n, mean: xs[0], std_err: 0.0, half_width: 0.0 };
        }
        let mean = mean(xs);
        let std_err = if n > 1 { (variance(xs, mean) / n as f64).sqrt() } else { 0.0 };
        Self { n, mean, std_err, half_width: z_quantile(level) * std_err }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance around `mean`.
pub fn variance(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Ordinary least-squares line through `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

pub fn ols(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Some(LineFit { slope, intercept, residual: (rss / n as f64).sqrt() })
}

/// Percentile bootstrap interval for the log-log slope. `samples[i]` holds
/// the per-sample contributions at abscissa `xs[i]`; samples are resampled
/// jointly by index (all columns share one draw), `reduce` turns a column
/// of contributions into the error value.
pub fn bootstrap_slope<F>(
    xs: &[f64],
    samples: &[Vec<f64>],
    reduce: F,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Option<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples.first()?.len();
    if n == 0 || samples.iter().any(|s| s.len() != n) || resamples == 0 {
        return None;
    }
    let mut rng = PhiloxRng::new(seed, [0xB005_7A9, 0, 0]);
    let mut idx = vec![0usize; n];
    let mut col = vec![0.0; n];
    let mut slopes = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        let ys: Vec<f64> = samples
            .iter()
            .map(|s| {
                for (c, &i) in col.iter_mut().zip(&idx) {
                    *c = s[i];
                }
                reduce(&col).ln()
            })
            .collect();
        if ys.iter().all(|y| y.is_finite()) {
            if let Some(f) = ols(xs, &ys) {
                slopes.push(f.slope);
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    let tail = (1.0 - level) / 2.0;
    Some((q(tail), q(1.0 - tail)))
}

/// Ranks starting at 1, ties receive their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub rho: f64,
    /// One-sided p-value against an increasing trend.
    pub p_increasing: f64,
}

/// Spearman rank correlation with a one-sided test for positive
/// association, using the t approximation with n−2 degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<TrendTest> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Some(TrendTest { rho: 0.0, p_increasing: 0.5 });
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if rho >= 1.0 {
        0.0
    } else if rho <= -1.0 {
        1.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        1.0 - StudentsT::new(0.0, 1.0, df).expect("positive dof").cdf(t)
    };
    Some(TrendTest { rho, p_increasing: p })
}
