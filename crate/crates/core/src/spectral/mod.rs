//! Sine eigenbasis of the Dirichlet Laplacian on (0,1).
//!
//! A [`SpectralField`] of dimension `M` stores the coefficients of
//! `x = Σ_{k=1}^{M} a_k h_k` with `h_k(z) = √2 sin(kπz)`. The basis is
//! orthonormal in L², so every L²-type quantity is computed on the
//! coefficient vector directly and `A h_k = -(πk)² h_k`.

mod nonlinear;
mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use nonlinear::{bilinear_conv, nonlinearity_conv};
pub use transform::{bilinear_fast, dealiased_grid_size_for, grid_size_for, nonlinearity_fast, PseudoSpectral};

/// `(πk)²`, the k-th eigenvalue of `-A`.
#[inline]
pub fn eigenvalue<T: Real>(k: usize) -> T {
    let pk = T::PI() * T::from_usize_lossy(k);
    pk * pk
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct SpectralField<T: Real> {
    coeffs: Vec<T>,
}

impl<T: Real> TryFrom<Vec<T>> for SpectralField<T> {
    type Error = Error;

    fn try_from(coeffs: Vec<T>) -> Result<Self> {
        Self::new(coeffs)
    }
}

impl<T: Real> From<SpectralField<T>> for Vec<T> {
    fn from(f: SpectralField<T>) -> Vec<T> {
        f.coeffs
    }
}

impl<T: Real> SpectralField<T> {
    pub fn new(coeffs: Vec<T>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidField("dimension must be at least 1".into()));
        }
        if let Some(k) = coeffs.iter().position(|a| !a.is_finite()) {
            return Err(Error::InvalidField(format!("coefficient {} is not finite", k + 1)));
        }
        Ok(Self { coeffs })
    }

    /// Skips validation; callers guarantee finiteness and `len >= 1`.
    pub(crate) fn from_vec_unchecked(coeffs: Vec<T>) -> Self {
        debug_assert!(!coeffs.is_empty());
        Self { coeffs }
    }

    pub fn zeros(m: usize) -> Self {
        assert!(m >= 1, "dimension must be at least 1");
        Self { coeffs: vec![T::zero(); m] }
    }

    /// The basis function `h_k` embedded in `H_m`. Zero if `k > m`.
    pub fn basis(k: usize, m: usize) -> Self {
        assert!(k >= 1, "modes are numbered from 1");
        let mut f = Self::zeros(m);
        if k <= m {
            f.coeffs[k - 1] = T::one();
        }
        f
    }

    /// Builds a field from a coefficient formula `k ↦ a_k`, `k = 1..=m`.
    pub fn from_fn(m: usize, f: impl Fn(usize) -> T) -> Result<Self> {
        Self::new((1..=m).map(f).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    #[inline]
    pub(crate) fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<T> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|a| a.is_finite())
    }

    /// L² inner product. Fields of different dimension are compared on
    /// their common modes, which is exact for an orthonormal basis.
    pub fn dot(&self, other: &Self) -> T {
        self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.coeffs.iter().map(|&a| a * a).sum()
    }

    /// L² norm (Parseval).
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// `(-A)^α x`: mode k is multiplied by `(πk)^{2α}`.
    pub fn fractional_power(&self, alpha: T) -> Self {
        let two = T::c(2.0);
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| (T::PI() * T::from_usize_lossy(i + 1)).powf(two * alpha) * a)
            .collect();
        Self { coeffs }
    }

    /// `‖(-A)^α x‖_{L²}`; `alpha = 1/2` is the gradient norm on `H_M`.
    pub fn fractional_norm(&self, alpha: T) -> T {
        let four = T::c(4.0);
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| (T::PI() * T::from_usize_lossy(i + 1)).powf(four * alpha) * a * a)
            .sum::<T>()
            .sqrt()
    }

    /// `e^{tA} x`.
    pub fn semigroup(&self, t: T) -> Result<Self> {
        if !(t >= T::zero()) {
            return Err(Error::param("t", "semigroup time must be nonnegative"));
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| (-eigenvalue::<T>(i + 1) * t).exp() * a)
            .collect();
        Ok(Self { coeffs })
    }

    /// `P_n x`, keeping the dimension of `self`.
    pub fn project(&self, n: usize) -> Self {
        let mut out = self.clone();
        for a in out.coeffs.iter_mut().skip(n) {
            *a = T::zero();
        }
        out
    }

    /// Truncates or zero-pads to dimension `m`. Truncation is `P_m`.
    pub fn resized(&self, m: usize) -> Self {
        assert!(m >= 1, "dimension must be at least 1");
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(m, T::zero());
        Self { coeffs }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { coeffs: self.coeffs.iter().map(|&a| a * s).collect() }
    }

    /// `self + s·other`; the result has the larger of the two dimensions.
    pub fn add_scaled(&self, s: T, other: &Self) -> Self {
        let m = self.dim().max(other.dim());
        let mut out = self.resized(m);
        for (a, &b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a = *a + s * b;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add_scaled(-T::one(), other)
    }

    /// Point value `x(z) = Σ a_k √2 sin(kπz)`.
    pub fn eval(&self, z: T) -> T {
        let s2 = T::SQRT_2();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| a * s2 * (T::PI() * T::from_usize_lossy(i + 1) * z).sin())
            .sum()
    }

    /// Values at the uniform nodes `z_j = j/n`, `j = 0..=n`. Endpoints are
    /// exactly zero.
    pub fn eval_on_grid(&self, n: usize) -> Vec<T> {
        assert!(n >= 2, "grid needs at least 2 intervals");
        let nn = T::from_usize_lossy(n);
        let s2 = T::SQRT_2();
        let mut out = Vec::with_capacity(n + 1);
        out.push(T::zero());
        for j in 1..n {
            // sin(kθ) by rotation; the drift is O(M ε) per node
            let theta = T::PI() * T::from_usize_lossy(j) / nn;
            let (s1, c1) = theta.sin_cos();
            let (mut s, mut c) = (s1, c1);
            let mut acc = T::zero();
            for &a in &self.coeffs {
                acc = acc + a * s;
                let sn = s * c1 + c * s1;
                c = c * c1 - s * s1;
                s = sn;
            }
            out.push(s2 * acc);
        }
        out.push(T::zero());
        out
    }

    /// Grid estimate of `‖x‖_{L^∞}` on `8M` intervals.
    pub fn sup_norm_estimate(&self) -> T {
        self.eval_on_grid(8 * self.dim())
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
