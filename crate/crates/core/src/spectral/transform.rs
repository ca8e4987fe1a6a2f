//! Pseudo-spectral evaluation of `∇(x1 x2)` through sine/cosine transforms.
//!
//! Fields of dimension ≤ M are sampled on the interior nodes `z_j = j/N`,
//! multiplied pointwise, and the product is expanded in cosines by a
//! type-I DCT. The product of two degree-M sine series is a cosine series
//! of degree 2M. A full plan uses `N ≥ 2M + 2`, so no mode aliases and every
//! output mode agrees with [`bilinear_conv`](super::bilinear_conv) up to
//! rounding. A dealiased plan uses `N > 3M/2`: cosine modes above `N` fold
//! back onto modes above `M`, so the first M output modes are still exact.
//!
//! Both transforms run as real FFTs of length N with the usual pre- and
//! post-processing for odd and even symmetric data.

use std::fmt;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};

use super::SpectralField;
use crate::scalar::Real;

/// Smallest even `N = 2^a 3^b` with `N ≥ need`.
fn smooth_even_at_least(need: usize) -> usize {
    let mut best = usize::MAX;
    let mut p3 = 1usize;
    while p3 < 2 * need.max(2) {
        let mut n = 2 * p3;
        while n < need {
            n *= 2;
        }
        best = best.min(n);
        p3 *= 3;
    }
    best
}

/// Grid intervals of a full plan: smallest even `2^a 3^b ≥ 2m + 2`.
pub fn grid_size_for(m: usize) -> usize {
    smooth_even_at_least(2 * m + 2)
}

/// Grid intervals of a dealiased plan: smallest even `2^a 3^b > 3m/2`.
pub fn dealiased_grid_size_for(m: usize) -> usize {
    smooth_even_at_least(3 * m / 2 + 1)
}

#[derive(Clone)]
pub struct PseudoSpectral<T: Real> {
    m: usize,
    n: usize,
    /// output modes above this are zeroed
    exact_out: usize,
    fft: Arc<dyn RealToComplex<T>>,
    real_buf: Vec<T>,
    spec_buf: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    /// `sin(πj/N)` and `cos(πj/N)`, j = 0..N
    sin_tab: Vec<T>,
    cos_tab: Vec<T>,
    grid_a: Vec<T>,
    grid_b: Vec<T>,
}

impl<T: Real> fmt::Debug for PseudoSpectral<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PseudoSpectral").field("m", &self.m).field("n", &self.n).finish()
    }
}

impl<T: Real> PseudoSpectral<T> {
    /// Plan for inputs of dimension at most `m`; output modes up to `2m`
    /// are exact.
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "dimension must be at least 1");
        Self::with_grid(m, grid_size_for(m), 2 * m)
    }

    /// Plan for inputs of dimension at most `m` whose output modes are
    /// exact up to `m` only; modes above `m` are returned as zero.
    pub fn dealiased(m: usize) -> Self {
        assert!(m >= 1, "dimension must be at least 1");
        Self::with_grid(m, dealiased_grid_size_for(m), m)
    }

    fn with_grid(m: usize, n: usize, exact_out: usize) -> Self {
        let fft = RealFftPlanner::<T>::new().plan_fft_forward(n);
        let real_buf = fft.make_input_vec();
        let spec_buf = fft.make_output_vec();
        let scratch = fft.make_scratch_vec();
        let angle = |j: usize| T::PI() * T::from_usize_lossy(j) / T::from_usize_lossy(n);
        Self {
            m,
            n,
            exact_out,
            fft,
            real_buf,
            spec_buf,
            scratch,
            sin_tab: (0..=n).map(|j| angle(j).sin()).collect(),
            cos_tab: (0..=n).map(|j| angle(j).cos()).collect(),
            grid_a: vec![T::zero(); n - 1],
            grid_b: vec![T::zero(); n - 1],
        }
    }

    pub fn max_dim(&self) -> usize {
        self.m
    }

    /// Number of grid intervals `N`; there are `N - 1` interior nodes.
    pub fn grid_intervals(&self) -> usize {
        self.n
    }

    fn run_fft(&mut self) {
        self.fft
            .process_with_scratch(&mut self.real_buf, &mut self.spec_buf, &mut self.scratch)
            .expect("buffer sizes come from the plan");
    }

    /// Values of `Σ a_k h_k` at the interior nodes (type-I DST).
    pub fn to_grid(&mut self, coeffs: &[T], out: &mut [T]) {
        assert!(coeffs.len() <= self.m, "input dimension exceeds plan");
        assert_eq!(out.len(), self.n - 1);
        let n = self.n;
        let half = T::c(0.5);
        let a = |k: usize| if k >= 1 && k <= coeffs.len() { coeffs[k - 1] } else { T::zero() };
        self.real_buf[0] = T::zero();
        for j in 1..n {
            let (p, q) = (a(j), a(n - j));
            self.real_buf[j] = self.sin_tab[j] * (p + q) + half * (p - q);
        }
        self.run_fft();
        // S_j = Σ a_k sin(πjk/N): S_{2k} = I_k, S_{2k+1} = S_{2k-1} + R_k,
        // with R_k - i I_k the forward transform; x(z_j) = √2 S_j
        let r2 = T::SQRT_2();
        let mut odd = half * self.spec_buf[0].re;
        out[0] = r2 * odd;
        for k in 1..n / 2 {
            out[2 * k - 1] = -r2 * self.spec_buf[k].im;
            odd = odd + self.spec_buf[k].re;
            out[2 * k] = r2 * odd;
        }
    }

    /// `P_{m_out} ∇y` from the interior samples of `y`, where `y` is a
    /// product of two fields of dimension ≤ M (type-I DCT, then exact
    /// differentiation of the cosine series).
    pub fn derivative_of_product(&mut self, values: &[T], out: &mut [T]) {
        assert_eq!(values.len(), self.n - 1);
        let n = self.n;
        let half = T::c(0.5);
        let y = |j: usize| if j >= 1 && j < n { values[j - 1] } else { T::zero() };
        let mut c1 = T::zero();
        self.real_buf[0] = T::zero();
        for j in 1..n {
            let (p, q) = (y(j), y(n - j));
            self.real_buf[j] = half * (p + q) - self.sin_tab[j] * (p - q);
            c1 = c1 + p * self.cos_tab[j];
        }
        self.run_fft();
        // C_m = Σ y_j cos(πjm/N): C_{2k} = R_k, C_{2k+1} = C_{2k-1} + I_k;
        // y = (2/N) Σ' C_m cos(mπz) and ∇ cos(mπz) = -(mπ/√2) h_m
        let scale = -T::SQRT_2() * T::PI() / T::from_usize_lossy(n);
        let top = out.len().min(self.exact_out).min(n - 1);
        let mut odd = c1;
        for m in 1..=top {
            let c = if m % 2 == 0 {
                self.spec_buf[m / 2].re
            } else {
                if m > 1 {
                    odd = odd - self.spec_buf[m / 2].im;
                }
                odd
            };
            out[m - 1] = scale * T::from_usize_lossy(m) * c;
        }
        for o in out.iter_mut().skip(top) {
            *o = T::zero();
        }
    }

    /// `P_{m_out} ∇(x²)`.
    pub fn nonlinearity(&mut self, x: &SpectralField<T>, m_out: usize) -> SpectralField<T> {
        let mut grid = std::mem::take(&mut self.grid_a);
        self.to_grid(x.coeffs(), &mut grid);
        grid.iter_mut().for_each(|v| *v = *v * *v);
        let mut out = vec![T::zero(); m_out];
        self.derivative_of_product(&grid, &mut out);
        self.grid_a = grid;
        SpectralField::from_vec_unchecked(out)
    }

    /// `P_{m_out} ∇(x1 x2)`.
    pub fn bilinear(&mut self, x1: &SpectralField<T>, x2: &SpectralField<T>, m_out: usize) -> SpectralField<T> {
        let mut ga = std::mem::take(&mut self.grid_a);
        let mut gb = std::mem::take(&mut self.grid_b);
        self.to_grid(x1.coeffs(), &mut ga);
        self.to_grid(x2.coeffs(), &mut gb);
        for (a, &b) in ga.iter_mut().zip(&gb) {
            *a = *a * b;
        }
        let mut out = vec![T::zero(); m_out];
        self.derivative_of_product(&ga, &mut out);
        self.grid_a = ga;
        self.grid_b = gb;
        SpectralField::from_vec_unchecked(out)
    }
}

/// One-shot transform-path `P_{m_out} ∇(x²)`. Plans are not cached; hot
/// loops should hold a [`PseudoSpectral`].
pub fn nonlinearity_fast<T: Real>(x: &SpectralField<T>, m_out: usize) -> SpectralField<T> {
    PseudoSpectral::new(x.dim()).nonlinearity(x, m_out)
}

pub fn bilinear_fast<T: Real>(x1: &SpectralField<T>, x2: &SpectralField<T>, m_out: usize) -> SpectralField<T> {
    PseudoSpectral::new(x1.dim().max(x2.dim())).bilinear(x1, x2, m_out)
}

#[cfg(test)]
mod tests {
    use super::super::{bilinear_conv, nonlinearity_conv};
    use super::*;

    type F = SpectralField<f64>;

    fn max_abs_diff(a: &F, b: &F) -> f64 {
        a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn grid_sizes_are_smooth_and_large_enough() {
        for m in 1..300 {
            let n = grid_size_for(m);
            assert!(n >= 2 * m + 2);
            let mut r = n;
            while r % 2 == 0 {
                r /= 2;
            }
            while r % 3 == 0 {
                r /= 3;
            }
            assert_eq!(r, 1);
        }
        assert_eq!(grid_size_for(256), 576);
        for m in 1..300 {
            let n = dealiased_grid_size_for(m);
            assert!(n % 2 == 0 && 2 * n > 3 * m);
        }
        assert_eq!(dealiased_grid_size_for(256), 432);
    }

    #[test]
    fn to_grid_matches_pointwise_evaluation() {
        let x = F::new(vec![0.3, -1.0, 0.25, 0.5, -0.125]).unwrap();
        let mut plan = PseudoSpectral::new(5);
        let n = plan.grid_intervals();
        let mut g = vec![0.0; n - 1];
        plan.to_grid(x.coeffs(), &mut g);
        for (j, v) in g.iter().enumerate() {
            let z = (j + 1) as f64 / n as f64;
            assert!((v - x.eval(z)).abs() < 1e-13);
        }
    }

    #[test]
    fn h1_matches_conv() {
        let h1 = F::basis(1, 1);
        for m_out in [1, 2, 4, 7] {
            assert!(max_abs_diff(&nonlinearity_fast(&h1, m_out), &nonlinearity_conv(&h1, m_out)) < 1e-12);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(nonlinearity_fast(&F::zeros(8), 8), F::zeros(8));
    }

    #[test]
    fn output_beyond_product_bandwidth_is_zero() {
        let x = F::new(vec![0.3, -0.4, 0.9]).unwrap();
        let b = nonlinearity_fast(&x, 20);
        assert!(b.coeffs()[6..].iter().all(|&v| v == 0.0));
        assert!(max_abs_diff(&b, &nonlinearity_conv(&x, 20)) < 1e-12);
    }

    #[test]
    fn bilinear_matches_conv_for_mixed_dims() {
        let x1 = F::new(vec![0.3, -0.4, 0.9, 0.1]).unwrap();
        let x2 = F::new(vec![-1.0, 0.5]).unwrap();
        let fast = bilinear_fast(&x1, &x2, 6);
        assert!(max_abs_diff(&fast, &bilinear_conv(&x1, &x2, 6)) < 1e-12);
    }

    #[test]
    fn dealiased_plan_matches_conv_on_low_modes() {
        for m in [1usize, 2, 3, 7, 16, 33, 64] {
            let x1 = F::from_fn(m, |k| (0.7 * k as f64).sin() / k as f64).unwrap();
            let x2 = F::from_fn(m, |k| (1.3 * k as f64).cos() / (k * k) as f64).unwrap();
            let mut plan = PseudoSpectral::dealiased(m);
            assert!(plan.grid_intervals() > 3 * m / 2);
            let fast = plan.bilinear(&x1, &x2, m + 3);
            let exact = bilinear_conv(&x1, &x2, m);
            assert!(max_abs_diff(&fast.resized(m), &exact) < 1e-12, "m = {m}");
            assert!(fast.coeffs()[m..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bilinear_is_exactly_symmetric() {
        let x1 = F::new(vec![0.3, -0.4, 0.9, 0.1]).unwrap();
        let x2 = F::new(vec![-1.0, 0.5, 0.25, 2.0]).unwrap();
        let mut plan = PseudoSpectral::new(4);
        assert_eq!(plan.bilinear(&x1, &x2, 4), plan.bilinear(&x2, &x1, 4));
    }

    #[test]
    fn f32_transform_runs() {
        let x = SpectralField::<f32>::new(vec![1.0, 0.5]).unwrap();
        let b = nonlinearity_fast(&x, 4);
        let r = nonlinearity_conv(&x, 4);
        for (a, c) in b.coeffs().iter().zip(r.coeffs()) {
            assert!((a - c).abs() < 1e-4);
        }
    }
}
