//! Q-Wiener increments with trace-class covariance.
//!
//! `Q e_k = q_k e_k` with `q_k = c·k^{-ρ}` for `k ≤ K` and eigenvectors
//! `e_k = R h_k`, where `R` is a product of plane rotations of the sine
//! basis (identity when no rotations are configured, in which case `A` and
//! `Q` commute).
//!
//! All Gaussian draws are addressed by `(seed, sample, step, lane)` through
//! [`NoiseStream`], and increments are always generated on all K modes
//! before projection, so the increment seen by a level `M` is exactly the
//! projection of the increment seen by any finer level.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PhiloxRng;
use crate::scalar::Real;
use crate::spectral::{eigenvalue, SpectralField};

/// Lane for the primary normals of each step.
pub const LANE_PRIMARY: u32 = 0;
/// Lane for the Brownian part that is conditionally independent of the
/// stochastic convolution (exact-increment scheme only).
pub const LANE_BROWNIAN: u32 = 1;
/// Lane reserved for randomized initial data.
pub const LANE_INITIAL: u32 = 2;

/// Plane rotation by `angle` (radians) mixing sine modes `i` and `j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(pub usize, pub usize, pub f64);

impl Rotation {
    #[inline]
    fn apply(&self, v: &mut [f64]) {
        let Rotation(i, j, angle) = *self;
        let (s, c) = angle.sin_cos();
        let (a, b) = (v[i - 1], v[j - 1]);
        v[i - 1] = c * a - s * b;
        v[j - 1] = s * a + c * b;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceModel {
    pub rho: f64,
    pub c: f64,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub rotations: Vec<Rotation>,
}

impl CovarianceModel {
    /// `q_k = k^{-2}` on `k_max` modes, eigenvectors `h_k`.
    pub fn power_law(rho: f64, c: f64, k_max: usize) -> Result<Self> {
        let m = Self { rho, c, k_max, rotations: Vec::new() };
        m.validate()?;
        Ok(m)
    }

    pub fn with_rotations(mut self, rotations: Vec<Rotation>) -> Result<Self> {
        self.rotations = rotations;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return Err(Error::param(
                "rho",
                format!("decay exponent {} must exceed 1 so that Σ q_k < ∞ (trace class)", self.rho),
            ));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::param("c", "scale must be finite and nonnegative"));
        }
        if self.k_max == 0 {
            return Err(Error::param("K", "truncation must be at least 1"));
        }
        for &Rotation(i, j, angle) in &self.rotations {
            if i == 0 || j == 0 || i == j || i > self.k_max || j > self.k_max {
                return Err(Error::param("rotations", format!("invalid mode pair ({i}, {j}) for K = {}", self.k_max)));
            }
            if !angle.is_finite() {
                return Err(Error::param("rotations", "angle must be finite"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn q(&self, k: usize) -> f64 {
        if k == 0 || k > self.k_max {
            0.0
        } else {
            self.c * (k as f64).powf(-self.rho)
        }
    }

    /// `Tr Q = Σ_{k ≤ K} q_k`.
    pub fn trace(&self) -> f64 {
        (1..=self.k_max).map(|k| self.q(k)).sum()
    }

    /// `‖Q‖_{L(L²)} = max_k q_k`.
    pub fn operator_norm(&self) -> f64 {
        (1..=self.k_max).map(|k| self.q(k)).fold(0.0, f64::max)
    }

    pub fn commutes_with_laplacian(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Applies `R` to a vector of K sine coordinates.
    pub fn apply_eigenvector_map(&self, v: &mut [f64]) {
        for r in &self.rotations {
            r.apply(v);
        }
    }

    /// `e_k` in sine coordinates (length K).
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.k_max];
        v[k - 1] = 1.0;
        self.apply_eigenvector_map(&mut v);
        v
    }

    fn touched_modes(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.rotations.iter().flat_map(|r| [r.0, r.1]).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// `max |RᵀR - I|` over the modes the rotations touch.
    pub fn orthogonality_defect(&self) -> f64 {
        let touched = self.touched_modes();
        let cols: Vec<Vec<f64>> = touched.iter().map(|&k| self.eigenvector(k)).collect();
        let mut worst: f64 = 0.0;
        for (a, ca) in cols.iter().enumerate() {
            for (b, cb) in cols.iter().enumerate() {
                let d: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }

    /// `(R Q Rᵀ)_{ij}`, the covariance of sine coordinates i and j.
    pub fn sine_covariance(&self, i: usize, j: usize) -> f64 {
        if self.rotations.is_empty() {
            return if i == j { self.q(i) } else { 0.0 };
        }
        let touched = self.touched_modes();
        let ti = touched.binary_search(&i).is_ok();
        let tj = touched.binary_search(&j).is_ok();
        if !ti || !tj {
            return if i == j { self.q(i) } else { 0.0 };
        }
        touched
            .iter()
            .map(|&k| {
                let e = self.eigenvector(k);
                self.q(k) * e[i - 1] * e[j - 1]
            })
            .sum()
    }

    /// A model with `K = m` whose draws for modes `1..=m` are the same as
    /// this model's, so `P_m W` is unchanged. Returns a clone when a rotation
    /// couples a mode above `m` to one at or below it.
    pub fn truncated_for(&self, m: usize) -> CovarianceModel {
        if m >= self.k_max || self.rotations.iter().any(|r| r.0.max(r.1) > m) {
            return self.clone();
        }
        CovarianceModel { k_max: m, ..self.clone() }
    }

    /// `Tr(P_M Q P_M) = Σ_k q_k ‖P_M e_k‖²`.
    pub fn projected_trace(&self, m: usize) -> f64 {
        (1..=m.min(self.k_max)).map(|i| self.sine_covariance(i, i)).sum()
    }

    /// Connected components of the rotation graph, sorted by mode.
    pub(crate) fn rotation_blocks(&self) -> Vec<Vec<usize>> {
        let touched = self.touched_modes();
        let mut parent: Vec<usize> = (0..touched.len()).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        for r in &self.rotations {
            let a = touched.binary_search(&r.0).unwrap();
            let b = touched.binary_search(&r.1).unwrap();
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut root_of: Vec<Option<usize>> = vec![None; touched.len()];
        for idx in 0..touched.len() {
            let r = find(&mut parent, idx);
            match root_of[r] {
                Some(b) => blocks[b].push(touched[idx]),
                None => {
                    root_of[r] = Some(blocks.len());
                    blocks.push(vec![touched[idx]]);
                }
            }
        }
        blocks
    }
}

impl Default for CovarianceModel {
    fn default() -> Self {
        Self { rho: 2.0, c: 1.0, k_max: 256, rotations: Vec::new() }
    }
}

/// Counter address of the normals used by one sample at one time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub sample: u64,
    pub step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, sample: u64) -> Self {
        Self { seed, sample, step: 0 }
    }

    pub fn at_step(self, step: u64) -> Self {
        Self { step, ..self }
    }

    pub fn rng(&self, lane: u32) -> PhiloxRng {
        assert!(self.sample <= u64::from(u32::MAX), "sample index exceeds 32 bits");
        assert!(self.step <= u64::from(u32::MAX), "step index exceeds 32 bits");
        PhiloxRng::new(self.seed, [lane, self.step as u32, self.sample as u32])
    }

    pub fn fill_normals(&self, lane: u32, out: &mut [f64]) {
        let mut rng = self.rng(lane);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
}

/// `ΔW = Σ_k √(q_k dt) ξ_k e_k` in sine coordinates (length K) from given normals.
pub fn brownian_from_normals(model: &CovarianceModel, dt: f64, xi: &[f64]) -> Vec<f64> {
    assert_eq!(xi.len(), model.k_max);
    let mut v: Vec<f64> = xi.iter().enumerate().map(|(i, &x)| (model.q(i + 1) * dt).sqrt() * x).collect();
    model.apply_eigenvector_map(&mut v);
    v
}

/// `P_M ΔW` for the step addressed by `stream`.
pub fn sample_increment<T: Real>(
    model: &CovarianceModel,
    dt: f64,
    stream: NoiseStream,
    m: usize,
) -> Result<SpectralField<T>> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "time step must be positive"));
    }
    let mut xi = vec![0.0; model.k_max];
    stream.fill_normals(LANE_PRIMARY, &mut xi);
    let dw = brownian_from_normals(model, dt, &xi);
    let mut coeffs: Vec<T> = dw.iter().take(m).map(|&v| T::c(v)).collect();
    coeffs.resize(m, T::zero());
    Ok(SpectralField::from_vec_unchecked(coeffs))
}

/// How the additive noise term of one step is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementKind {
    /// `e^{dtA} ΔW_n` (left-point exponential Euler).
    SemigroupBrownian,
    /// `∫_{t_n}^{t_{n+1}} e^{(t_{n+1}-s)A} dW(s)`, sampled exactly.
    ExactConvolution,
}

/// Per-step noise: the term added after the semigroup, and optionally the
/// Brownian increment `ΔW_n` (needed for the Itô-integral accumulator).
#[derive(Clone, Debug)]
pub struct NoiseIncrement<T> {
    pub additive: Vec<T>,
    pub brownian: Option<Vec<T>>,
}

impl<T: Real> NoiseIncrement<T> {
    pub fn zeros(k: usize) -> Self {
        Self { additive: vec![T::zero(); k], brownian: None }
    }
}

#[derive(Clone, Debug)]
struct SingleMode {
    /// std of the convolution increment
    sigma: f64,
    /// ΔW = gain·ξ + cond·ξ'
    gain: f64,
    cond: f64,
}

#[derive(Clone, Debug)]
struct RotatedBlock {
    modes: Vec<usize>,
    /// lower Cholesky factor of the joint (O, ΔW) covariance, row-major 2s×2s
    chol: Vec<f64>,
}

/// Precomputed per-(model, dt) factors that turn normals into increments.
#[derive(Clone, Debug)]
pub struct IncrementSampler {
    model: CovarianceModel,
    dt: f64,
    kind: IncrementKind,
    singles: Vec<Option<SingleMode>>,
    blocks: Vec<RotatedBlock>,
    /// `√(q_k dt)` and `e^{-λ_k dt}`
    scale: Vec<f64>,
    semigroup: Vec<f64>,
}

fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = if s > 0.0 { s.sqrt() } else { 0.0 };
            } else {
                let d = l[j * n + j];
                l[i * n + j] = if d > 0.0 { s / d } else { 0.0 };
            }
        }
    }
    l
}

impl IncrementSampler {
    pub fn new(model: &CovarianceModel, dt: f64, kind: IncrementKind) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", "time step must be positive"));
        }
        let blocks_modes = model.rotation_blocks();
        let mut in_block = vec![false; model.k_max];
        for b in &blocks_modes {
            for &k in b {
                in_block[k - 1] = true;
            }
        }
        let singles = (1..=model.k_max)
            .map(|k| {
                if in_block[k - 1] {
                    return None;
                }
                let q = model.q(k);
                let lam: f64 = eigenvalue(k);
                let var_o = q * (-(-2.0 * lam * dt).exp_m1()) / (2.0 * lam);
                let cov = q * (-(-lam * dt).exp_m1()) / lam;
                let sigma = var_o.sqrt();
                let (gain, cond) = if sigma > 0.0 {
                    let g = cov / sigma;
                    (g, (q * dt - g * g).max(0.0).sqrt())
                } else {
                    (0.0, (q * dt).sqrt())
                };
                Some(SingleMode { sigma, gain, cond })
            })
            .collect();
        let blocks = blocks_modes
            .into_iter()
            .map(|modes| {
                let s = modes.len();
                let n = 2 * s;
                let mut cov = vec![0.0; n * n];
                let sc: Vec<Vec<f64>> =
                    modes.iter().map(|&i| modes.iter().map(|&j| model.sine_covariance(i, j)).collect()).collect();
                for (a, &i) in modes.iter().enumerate() {
                    let li: f64 = eigenvalue(i);
                    for (b, &j) in modes.iter().enumerate() {
                        let lj: f64 = eigenvalue(j);
                        let c = sc[a][b];
                        cov[a * n + b] = c * (-(-(li + lj) * dt).exp_m1()) / (li + lj);
                        cov[a * n + s + b] = c * (-(-li * dt).exp_m1()) / li;
                        cov[(s + b) * n + a] = cov[a * n + s + b];
                        cov[(s + a) * n + s + b] = c * dt;
                    }
                }
                RotatedBlock { modes, chol: cholesky(&cov, n) }
            })
            .collect();
        let scale = (1..=model.k_max).map(|k| (model.q(k) * dt).sqrt()).collect();
        let semigroup = (1..=model.k_max).map(|k| (-eigenvalue::<f64>(k) * dt).exp()).collect();
        Ok(Self { model: model.clone(), dt, kind, singles, blocks, scale, semigroup })
    }

    pub fn dim(&self) -> usize {
        self.model.k_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn kind(&self) -> IncrementKind {
        self.kind
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    /// Fills `out` (vectors of length K) for the step addressed by `stream`.
    /// `xi`/`xi2` are scratch buffers of length K.
    pub fn fill<T: Real>(
        &self,
        stream: NoiseStream,
        want_brownian: bool,
        out: &mut NoiseIncrement<T>,
        xi: &mut Vec<f64>,
        xi2: &mut Vec<f64>,
    ) {
        let k = self.model.k_max;
        xi.resize(k, 0.0);
        stream.fill_normals(LANE_PRIMARY, xi);
        self.fill_from_normals(xi, stream, want_brownian, out, xi2);
    }

    /// Same as [`fill`](Self::fill) with injected primary normals.
    pub fn fill_from_normals<T: Real>(
        &self,
        xi: &[f64],
        stream: NoiseStream,
        want_brownian: bool,
        out: &mut NoiseIncrement<T>,
        xi2: &mut Vec<f64>,
    ) {
        let k = self.model.k_max;
        out.additive.resize(k, T::zero());
        match self.kind {
            IncrementKind::SemigroupBrownian => {
                xi2.clear();
                xi2.extend(xi.iter().zip(&self.scale).map(|(&x, &s)| s * x));
                self.model.apply_eigenvector_map(xi2);
                for ((a, &w), &d) in out.additive.iter_mut().zip(xi2.iter()).zip(&self.semigroup) {
                    *a = T::c(d * w);
                }
                if want_brownian {
                    let b = out.brownian.get_or_insert_with(Vec::new);
                    b.clear();
                    b.extend(xi2.iter().map(|&w| T::c(w)));
                } else {
                    out.brownian = None;
                }
            }
            IncrementKind::ExactConvolution => {
                if want_brownian {
                    xi2.resize(k, 0.0);
                    stream.fill_normals(LANE_BROWNIAN, xi2);
                }
                let mut bw = if want_brownian {
                    let mut b = out.brownian.take().unwrap_or_default();
                    b.resize(k, T::zero());
                    Some(b)
                } else {
                    None
                };
                for (i, s) in self.singles.iter().enumerate() {
                    if let Some(s) = s {
                        out.additive[i] = T::c(s.sigma * xi[i]);
                        if let Some(b) = bw.as_mut() {
                            b[i] = T::c(s.gain * xi[i] + s.cond * xi2[i]);
                        }
                    }
                }
                for blk in &self.blocks {
                    let s = blk.modes.len();
                    let n = 2 * s;
                    let z: Vec<f64> = blk
                        .modes
                        .iter()
                        .map(|&m| xi[m - 1])
                        .chain(blk.modes.iter().map(|&m| if want_brownian { xi2[m - 1] } else { 0.0 }))
                        .collect();
                    for r in 0..s {
                        let v: f64 = (0..=r).map(|c| blk.chol[r * n + c] * z[c]).sum();
                        out.additive[blk.modes[r] - 1] = T::c(v);
                    }
                    if let Some(b) = bw.as_mut() {
                        for r in s..n {
                            let v: f64 = (0..=r).map(|c| blk.chol[r * n + c] * z[c]).sum();
                            b[blk.modes[r - s] - 1] = T::c(v);
                        }
                    }
                }
                out.brownian = bw;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_model(k: usize) -> CovarianceModel {
        CovarianceModel::power_law(2.0, 1.0, k).unwrap()
    }

    #[test]
    fn truncation_keeps_projected_draws() {
        let full = default_model(64);
        let small = full.truncated_for(8);
        assert_eq!(small.k_max, 8);
        for kind in [IncrementKind::SemigroupBrownian, IncrementKind::ExactConvolution] {
            let a = IncrementSampler::new(&full, 1e-3, kind).unwrap();
            let b = IncrementSampler::new(&small, 1e-3, kind).unwrap();
            let (mut na, mut nb) = (NoiseIncrement::<f64>::zeros(64), NoiseIncrement::<f64>::zeros(8));
            let (mut x1, mut x2) = (Vec::new(), Vec::new());
            a.fill(NoiseStream::new(4, 2).at_step(9), true, &mut na, &mut x1, &mut x2);
            b.fill(NoiseStream::new(4, 2).at_step(9), true, &mut nb, &mut x1, &mut x2);
            assert_eq!(&na.additive[..8], &nb.additive[..]);
            assert_eq!(&na.brownian.unwrap()[..8], &nb.brownian.unwrap()[..]);
        }
        let rotated = full.with_rotations(vec![Rotation(3, 20, 0.4)]).unwrap();
        assert_eq!(rotated.truncated_for(8).k_max, 64);
    }

    #[test]
    fn trace_examples() {
        assert_eq!(default_model(1).trace(), 1.0);
        assert_relative_eq!(default_model(4).trace(), 1.0 + 0.25 + 1.0 / 9.0 + 0.0625, max_relative = 1e-15);
        assert_relative_eq!(default_model(4).trace(), 1.42361, epsilon = 1e-5);
        assert_eq!(CovarianceModel::power_law(2.0, 0.0, 8).unwrap().trace(), 0.0);
    }

    #[test]
    fn projected_trace_examples() {
        let m = default_model(4);
        assert_eq!(m.projected_trace(4), m.trace());
        assert_eq!(m.projected_trace(10), m.trace());
        assert_relative_eq!(m.projected_trace(2), 1.25, max_relative = 1e-15);
        let r = default_model(6).with_rotations(vec![Rotation(1, 2, 0.5236), Rotation(3, 5, 0.5236)]).unwrap();
        for mm in 1..=6 {
            let p = r.projected_trace(mm);
            assert!(p >= 0.0 && p <= r.trace() + 1e-15);
        }
        assert_relative_eq!(r.projected_trace(6), r.trace(), max_relative = 1e-14);
        assert!((r.projected_trace(1) - r.q(1)).abs() > 1e-3);
    }

    #[test]
    fn rejects_non_trace_class() {
        let err = CovarianceModel::power_law(0.9, 1.0, 8).unwrap_err().to_string();
        assert!(err.contains("Σ q_k < ∞"), "{err}");
        assert!(default_model(4).with_rotations(vec![Rotation(1, 9, 0.1)]).is_err());
    }

    #[test]
    fn rotations_are_orthogonal() {
        let r = default_model(8)
            .with_rotations(vec![Rotation(1, 2, 0.5236), Rotation(3, 5, 0.5236), Rotation(2, 3, 1.1)])
            .unwrap();
        assert!(r.orthogonality_defect() < 1e-12);
        assert_eq!(r.rotation_blocks(), vec![vec![1, 2, 3, 5]]);
    }

    #[test]
    fn injected_normals_give_unit_over_k() {
        let m = default_model(6);
        let dw = brownian_from_normals(&m, 1.0, &[1.0; 6]);
        for (i, v) in dw.iter().enumerate() {
            assert_relative_eq!(*v, 1.0 / (i + 1) as f64, max_relative = 1e-15);
        }
    }

    #[test]
    fn increments_couple_across_resolutions() {
        let m = default_model(64);
        let s = NoiseStream::new(11, 3).at_step(17);
        let fine: SpectralField<f64> = sample_increment(&m, 0.01, s, 64).unwrap();
        let coarse: SpectralField<f64> = sample_increment(&m, 0.01, s, 16).unwrap();
        assert_eq!(fine.resized(16), coarse);
        assert!(sample_increment::<f64>(&m, 0.0, s, 16).is_err());
    }

    #[test]
    fn same_address_same_draws() {
        let s = NoiseStream::new(5, 9).at_step(2);
        let mut a = vec![0.0; 32];
        let mut b = vec![0.0; 32];
        s.fill_normals(0, &mut a);
        s.fill_normals(0, &mut b);
        assert_eq!(a, b);
        s.at_step(3).fill_normals(0, &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn exact_increment_blocks_reduce_to_singles_without_rotation() {
        // a rotation by zero angle forces the block path; it must agree with the scalar path
        let plain = default_model(6);
        let trivial = default_model(6).with_rotations(vec![Rotation(2, 4, 0.0)]).unwrap();
        let dt = 1e-3;
        let sp = IncrementSampler::new(&plain, dt, IncrementKind::ExactConvolution).unwrap();
        let st = IncrementSampler::new(&trivial, dt, IncrementKind::ExactConvolution).unwrap();
        let mut a = NoiseIncrement::<f64>::zeros(6);
        let mut b = NoiseIncrement::<f64>::zeros(6);
        let (mut x1, mut x2) = (Vec::new(), Vec::new());
        let s = NoiseStream::new(1, 2).at_step(3);
        sp.fill(s, true, &mut a, &mut x1, &mut x2);
        st.fill(s, true, &mut b, &mut x1, &mut x2);
        for i in 0..6 {
            assert_relative_eq!(a.additive[i], b.additive[i], max_relative = 1e-12);
            assert_relative_eq!(a.brownian.as_ref().unwrap()[i], b.brownian.as_ref().unwrap()[i], max_relative = 1e-12);
        }
    }
}
