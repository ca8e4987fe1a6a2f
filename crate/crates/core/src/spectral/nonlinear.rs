//! Exact mode-space evaluation of `B[x1,x2] = ∇(x1 x2)`.
//!
//! With `h_k = √2 sin(kπ·)` the product identity
//! `2 sin(a) sin(b) = cos(a-b) - cos(a+b)` gives
//!
//! ```text
//! x1 x2 = Σ_{k,l} a_k b_l [cos((k-l)π·) - cos((k+l)π·)]
//! ```
//!
//! and differentiating each cosine back into sines yields, on `h_m`,
//!
//! ```text
//! (mπ/√2) [ Σ_{k+l=m} a_k b_l - Σ_{|k-l|=m} a_k b_l ].
//! ```
//!
//! Cost is `O(M1·M2)`. This is the reference the transform path is tested
//! against.

use super::SpectralField;
use crate::scalar::Real;

/// `P_{m_out} ∇(x1 x2)`.
pub fn bilinear_conv<T: Real>(x1: &SpectralField<T>, x2: &SpectralField<T>, m_out: usize) -> SpectralField<T> {
    assert!(m_out >= 1, "output dimension must be at least 1");
    let a = x1.coeffs();
    let b = x2.coeffs();
    // sums[m] accumulates Σ_{k+l=m} - Σ_{|k-l|=m}, index m in 1..=m_out
    let mut sums = vec![T::zero(); m_out + 1];
    for (i, &ak) in a.iter().enumerate() {
        if ak == T::zero() {
            continue;
        }
        let k = i + 1;
        for (j, &bl) in b.iter().enumerate() {
            let l = j + 1;
            let p = ak * bl;
            let s = k + l;
            if s <= m_out {
                sums[s] = sums[s] + p;
            }
            let d = k.abs_diff(l);
            if d >= 1 && d <= m_out {
                sums[d] = sums[d] - p;
            }
        }
    }
    let scale = T::PI() / T::SQRT_2();
    let coeffs = (1..=m_out).map(|m| scale * T::from_usize_lossy(m) * sums[m]).collect();
    SpectralField::from_vec_unchecked(coeffs)
}

/// `P_{m_out} B(x) = P_{m_out} ∇(x²)`.
pub fn nonlinearity_conv<T: Real>(x: &SpectralField<T>, m_out: usize) -> SpectralField<T> {
    bilinear_conv(x, x, m_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    type F = SpectralField<f64>;

    /// Composite Gauss–Legendre (5-point) quadrature of
    /// `∫₀¹ ∇(x1 x2)(z) h_m(z) dz`, with the derivative taken analytically
    /// from the sine series. Independent of the convolution formula.
    fn quad_coeff(x1: &F, x2: &F, m: usize) -> f64 {
        let nodes = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        let weights = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let val = |f: &F, z: f64| f.eval(z);
        let der = |f: &F, z: f64| {
            f.coeffs()
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let k = (i + 1) as f64;
                    a * 2f64.sqrt() * k * PI * (k * PI * z).cos()
                })
                .sum::<f64>()
        };
        let panels = 400;
        let h = 1.0 / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (t, w) in nodes.iter().zip(weights) {
                let z = mid + 0.5 * h * t;
                let g = val(x1, z) * der(x2, z) + val(x2, z) * der(x1, z);
                acc += 0.5 * h * w * g * 2f64.sqrt() * (m as f64 * PI * z).sin();
            }
        }
        acc
    }

    #[test]
    fn h1_squared_lives_on_mode_two() {
        let h1 = F::basis(1, 1);
        let b = nonlinearity_conv(&h1, 4);
        let expect = [0.0, 2f64.sqrt() * PI, 0.0, 0.0];
        for m in 1..=4 {
            assert_relative_eq!(quad_coeff(&h1, &h1, m), expect[m - 1], epsilon = 1e-10);
            assert_relative_eq!(b.coeffs()[m - 1], expect[m - 1], epsilon = 1e-13);
        }
        assert_relative_eq!(b.coeffs()[1], 4.44288, epsilon = 1e-5);
        assert_eq!(nonlinearity_conv(&h1, 1), F::zeros(1));
    }

    #[test]
    fn h1_h2_product() {
        let h1 = F::basis(1, 2);
        let h2 = F::basis(2, 2);
        let b = bilinear_conv(&h1, &h2, 4);
        let expect = [-PI / 2f64.sqrt(), 0.0, 3.0 * PI / 2f64.sqrt(), 0.0];
        for m in 1..=4 {
            assert_relative_eq!(quad_coeff(&h1, &h2, m), expect[m - 1], epsilon = 1e-10);
            assert_relative_eq!(b.coeffs()[m - 1], expect[m - 1], epsilon = 1e-13);
        }
        assert_relative_eq!(b.coeffs()[0], -2.22144, epsilon = 1e-5);
        assert_relative_eq!(b.coeffs()[2], 6.66432, epsilon = 1e-5);
    }

    #[test]
    fn matches_quadrature_on_generic_fields() {
        let x1 = F::new(vec![0.4, -0.3, 0.8, 0.1, -0.2]).unwrap();
        let x2 = F::new(vec![-0.5, 0.25, 0.0, 0.6]).unwrap();
        let b = bilinear_conv(&x1, &x2, 10);
        for m in 1..=10 {
            assert_relative_eq!(b.coeffs()[m - 1], quad_coeff(&x1, &x2, m), epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_and_symmetry() {
        let x1 = F::new(vec![0.4, -0.3, 0.8]).unwrap();
        let x2 = F::new(vec![1.5, 0.2, -0.7]).unwrap();
        assert_eq!(bilinear_conv(&x1, &F::zeros(3), 3), F::zeros(3));
        let (b12, b21) = (bilinear_conv(&x1, &x2, 6), bilinear_conv(&x2, &x1, 6));
        for (a, b) in b12.coeffs().iter().zip(b21.coeffs()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert_eq!(bilinear_conv(&x1, &x1, 6), nonlinearity_conv(&x1, 6));
    }
}
