//! Quantum baker's map `B = F_N⁻¹ · diag(F_{N/2}, F_{N/2})`, torus coherent
//! states, autocorrelation series and a decay-class comparison.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::asympt::{envelope, linear_fit};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Index offset 0.
    Integer,
    /// Index offset ½ (parity-symmetric quantization).
    #[default]
    HalfInteger,
}

impl Convention {
    pub fn offset(self) -> f64 {
        match self {
            Convention::Integer => 0.0,
            Convention::HalfInteger => 0.5,
        }
    }
}

/// `(F_M)_{jk} = M^{−1/2} e^{−2πi(j+κ)(k+κ)/M}`.
pub fn fourier_matrix(m: usize, convention: Convention) -> DMatrix<Complex64> {
    let k = convention.offset();
    let s = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, m, |i, j| {
        Complex64::from_polar(s, -2.0 * PI * (i as f64 + k) * (j as f64 + k) / m as f64)
    })
}

/// Fourier transform of one block with offset twiddles around a plain FFT.
struct OffsetFft {
    fft: Arc<dyn Fft<f64>>,
    pre: Vec<Complex64>,
    post: Vec<Complex64>,
}

impl OffsetFft {
    fn new(planner: &mut FftPlanner<f64>, m: usize, kappa: f64, inverse: bool) -> Self {
        let sign = if inverse { 1.0 } else { -1.0 };
        let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
        let mf = m as f64;
        let pre = (0..m).map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * kappa * k as f64 / mf)).collect();
        let global = Complex64::from_polar(1.0 / mf.sqrt(), sign * 2.0 * PI * kappa * kappa / mf);
        let post = (0..m)
            .map(|j| global * Complex64::from_polar(1.0, sign * 2.0 * PI * kappa * j as f64 / mf))
            .collect();
        Self { fft, pre, post }
    }

    fn apply(&self, x: &mut [Complex64]) {
        for (v, p) in x.iter_mut().zip(&self.pre) {
            *v *= p;
        }
        self.fft.process(x);
        for (v, p) in x.iter_mut().zip(&self.post) {
            *v *= p;
        }
    }
}

pub struct BakerMap {
    pub n: usize,
    pub convention: Convention,
    half: OffsetFft,
    full_inverse: OffsetFft,
}

impl std::fmt::Debug for BakerMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BakerMap").field("n", &self.n).field("convention", &self.convention).finish()
    }
}

impl BakerMap {
    pub fn new(n: usize, convention: Convention) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!("baker dimension must be even and >= 2, got {n}")));
        }
        let mut planner = FftPlanner::new();
        let k = convention.offset();
        Ok(Self {
            n,
            convention,
            half: OffsetFft::new(&mut planner, n / 2, k, false),
            full_inverse: OffsetFft::new(&mut planner, n, k, true),
        })
    }

    /// In-place `ψ ← Bψ` in `O(N log N)`.
    pub fn apply(&self, psi: &mut [Complex64]) {
        let h = self.n / 2;
        let (lo, hi) = psi.split_at_mut(h);
        self.half.apply(lo);
        self.half.apply(hi);
        self.full_inverse.apply(psi);
    }

    /// Dense `F_N^† · diag(F_{N/2}, F_{N/2})` built from explicit Fourier matrices.
    pub fn dense_matrix(&self) -> DMatrix<Complex64> {
        let h = self.n / 2;
        let fh = fourier_matrix(h, self.convention);
        let mut block = DMatrix::<Complex64>::zeros(self.n, self.n);
        block.view_mut((0, 0), (h, h)).copy_from(&fh);
        block.view_mut((h, h), (h, h)).copy_from(&fh);
        fourier_matrix(self.n, self.convention).adjoint() * block
    }
}

/// `max |B†B − I|`.
pub fn unitarity_defect(b: &DMatrix<Complex64>) -> f64 {
    let n = b.nrows();
    let g = b.adjoint() * b;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Winding truncation `|w| ≤ 3` of the periodized Gaussian.
const WINDINGS: i32 = 3;

/// Wrapped-Gaussian coherent state centred at `(q, p)` on the torus.
pub fn coherent_state(n: usize, q: f64, p: f64, convention: Convention) -> Vec<Complex64> {
    let nf = n as f64;
    let k = convention.offset();
    let mut psi: Vec<Complex64> = (0..n)
        .map(|j| {
            let x = (j as f64 + k) / nf;
            (-WINDINGS..=WINDINGS)
                .map(|w| {
                    let y = x + w as f64;
                    Complex64::from_polar((-PI * nf * (y - q).powi(2)).exp(), 2.0 * PI * nf * p * y)
                })
                .sum()
        })
        .collect();
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in psi.iter_mut() {
        *z /= norm;
    }
    psi
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `ln|F|` against `t`.
    pub decay_rate: f64,
    pub window: [f64; 2],
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrSeries {
    pub n: usize,
    pub convention: Convention,
    pub t_values: Vec<usize>,
    pub f: Vec<Complex64>,
    pub fit: Option<DecayFit>,
}

/// Modulus below which samples are treated as rounding noise.
const NOISE_FLOOR: f64 = 10.0 * f64::EPSILON;

/// `F(t) = ⟨ψ|Bᵗψ⟩` for `t = 0..=T` by repeated application.
pub fn autocorrelation(b: &BakerMap, psi: &[Complex64], t_max: usize) -> Result<AutocorrSeries> {
    if psi.len() != b.n {
        return Err(Error::DimensionMismatch { expected: b.n, got: psi.len() });
    }
    let mut phi = psi.to_vec();
    let mut f = Vec::with_capacity(t_max + 1);
    f.push(inner(psi, &phi));
    for _ in 0..t_max {
        b.apply(&mut phi);
        f.push(inner(psi, &phi));
    }
    let t_values: Vec<usize> = (0..=t_max).collect();
    let fit = fit_log_slope(&t_values, &f, [1.0, t_max as f64]);
    Ok(AutocorrSeries { n: b.n, convention: b.convention, t_values, f, fit })
}

/// Slope of `ln|F|` against `t` over `window`, skipping samples at the noise floor.
pub fn fit_log_slope(ts: &[usize], f: &[Complex64], window: [f64; 2]) -> Option<DecayFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(f)
        .filter(|(t, z)| (**t as f64) >= window[0] && (**t as f64) <= window[1] && z.norm() > NOISE_FLOOR)
        .map(|(t, z)| (*t as f64, z.norm().ln()))
        .unzip();
    if x.len() < 3 {
        return None;
    }
    let (slope, _, _, rms) = linear_fit(&x, &y);
    Some(DecayFit { decay_rate: slope, window, residual: rms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayClass {
    Exponential,
    PowerLaw,
}

/// A sampled series to be classified; samples with modulus at or below
/// `floor` carry no decay information and are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub label: String,
    pub t: Vec<f64>,
    pub values: Vec<Complex64>,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub class: DecayClass,
    /// Slope of `ln|y|` against `t`.
    pub rate: f64,
    /// Minus the slope of `ln|y|` against `ln t`.
    pub alpha: f64,
    pub residual_exponential: f64,
    pub residual_power: f64,
    pub window: [f64; 2],
    pub envelope: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub series: Vec<Classification>,
}

/// Envelope-based model selection between exponential and power-law decay.
pub fn classify_decay(series: &DecaySeries) -> Result<Classification> {
    if series.t.is_empty() || series.t.len() != series.values.len() {
        return Err(Error::InvalidInput(format!("series '{}' is empty or ragged", series.label)));
    }
    let kept: Vec<(f64, f64)> = series
        .t
        .iter()
        .zip(&series.values)
        .filter(|(t, z)| **t > 0.0 && z.norm() > series.floor.max(NOISE_FLOOR))
        .map(|(t, z)| (*t, z.norm()))
        .collect();
    if kept.len() < 3 {
        return Err(Error::Numeric(format!("series '{}' has fewer than 3 points above its floor", series.label)));
    }
    let window = [kept[0].0, kept[kept.len() - 1].0];
    let ts: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let mags: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let mut env = envelope(&ts, &mags, window, crate::asympt::ENVELOPE_BINS);
    if env.len() < 3 {
        env = kept.iter().map(|&(t, m)| [t, m]).collect();
    }
    let lt: Vec<f64> = env.iter().map(|p| p[0]).collect();
    let llt: Vec<f64> = env.iter().map(|p| p[0].ln()).collect();
    let ly: Vec<f64> = env.iter().map(|p| p[1].ln()).collect();
    let (rate, _, _, res_exp) = linear_fit(&lt, &ly);
    let (slope, _, _, res_pow) = linear_fit(&llt, &ly);
    let class = if res_exp < res_pow { DecayClass::Exponential } else { DecayClass::PowerLaw };
    Ok(Classification {
        label: series.label.clone(),
        class,
        rate,
        alpha: -slope,
        residual_exponential: res_exp,
        residual_power: res_pow,
        window,
        envelope: env,
    })
}

pub fn compare_decay(a: &DecaySeries, b: &DecaySeries) -> Result<ComparisonReport> {
    Ok(ComparisonReport { series: vec![classify_decay(a)?, classify_decay(b)?] })
}

/// Typical overlap of a state with an unrelated one in dimension `N`, doubled.
pub fn baker_floor(n: usize) -> f64 {
    2.0 / (n as f64).sqrt()
}

impl AutocorrSeries {
    pub fn as_decay_series(&self, label: &str) -> DecaySeries {
        DecaySeries {
            label: label.to_string(),
            t: self.t_values.iter().map(|&t| t as f64).collect(),
            values: self.f.clone(),
            floor: baker_floor(self.n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn n2_integer_is_inverse_dft() {
        let b = BakerMap::new(2, Convention::Integer).unwrap();
        let inv = fourier_matrix(2, Convention::Integer).adjoint();
        assert!((b.dense_matrix() - inv).norm() < 1e-15);
        assert!(BakerMap::new(3, Convention::Integer).is_err());
    }

    #[test]
    fn unitarity() {
        for conv in [Convention::Integer, Convention::HalfInteger] {
            for n in [2, 8, 64] {
                let b = BakerMap::new(n, conv).unwrap();
                assert!(unitarity_defect(&b.dense_matrix()) < 1e-12);
            }
        }
    }

    #[test]
    fn fft_and_dense_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for conv in [Convention::Integer, Convention::HalfInteger] {
            let b = BakerMap::new(64, conv).unwrap();
            let v: Vec<Complex64> = (0..64).map(|_| Complex64::new(rng.random(), rng.random())).collect();
            let dense = b.dense_matrix() * nalgebra::DVector::from_vec(v.clone());
            let mut fast = v;
            b.apply(&mut fast);
            let diff = fast.iter().zip(dense.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{conv:?}: {diff}");
        }
    }

    #[test]
    fn coherent_states() {
        let psi = coherent_state(64, 0.3, 0.4, Convention::HalfInteger);
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-14);
        assert!((inner(&psi, &psi).norm() - 1.0).abs() < 1e-14);
        // Translation by one site is a shift up to a global phase.
        let n = 64;
        let a = coherent_state(n, 0.3, 0.0, Convention::Integer);
        let b = coherent_state(n, 0.3 + 1.0 / n as f64, 0.0, Convention::Integer);
        let shifted: Vec<Complex64> = (0..n).map(|j| a[(j + n - 1) % n]).collect();
        assert!((inner(&shifted, &b).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn distant_states_overlap() {
        // (0, 0) and (½, 0) are half a period apart in both winding directions,
        // so two equal Gaussian overlaps add up.
        for n in [16usize, 32, 64] {
            for conv in [Convention::Integer, Convention::HalfInteger] {
                let o = inner(&coherent_state(n, 0.0, 0.0, conv), &coherent_state(n, 0.5, 0.0, conv)).norm();
                let single = (-PI * n as f64 / 8.0).exp();
                assert!((o / single - 2.0).abs() < 1e-6, "N={n}: {o:e}");
            }
        }
    }

    #[test]
    fn periodic_orbit_decays_by_stretching() {
        // (1/3, 2/3) lies on a period-2 orbit. After k periods the state is the
        // coherent state squeezed by s = 4^k, with overlap √(2s/(1+s²)).
        let n = 1024;
        let b = BakerMap::new(n, Convention::HalfInteger).unwrap();
        let s = autocorrelation(&b, &coherent_state(n, 1.0 / 3.0, 2.0 / 3.0, Convention::HalfInteger), 6).unwrap();
        for k in 1..=3 {
            let sq = 4f64.powi(k);
            let expect = (2.0 * sq / (1.0 + sq * sq)).sqrt();
            let got = s.f[2 * k as usize].norm();
            assert!((got / expect - 1.0).abs() < 0.05, "t={}: {got} vs {expect}", 2 * k);
        }
    }

    #[test]
    fn autocorrelation_is_bounded() {
        let b = BakerMap::new(128, Convention::HalfInteger).unwrap();
        let psi = coherent_state(128, 0.3, 0.4, Convention::HalfInteger);
        let s = autocorrelation(&b, &psi, 100).unwrap();
        assert!((s.f[0] - 1.0).norm() < 1e-14);
        assert!(s.f.iter().all(|z| z.norm() <= 1.0 + 1e-12));
        let mut phi = psi.clone();
        for _ in 0..100 {
            b.apply(&mut phi);
        }
        assert!((inner(&phi, &phi).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn parity_symmetry() {
        let b = BakerMap::new(64, Convention::HalfInteger).unwrap();
        let s1 = autocorrelation(&b, &coherent_state(64, 0.3, 0.4, Convention::HalfInteger), 30).unwrap();
        let s2 = autocorrelation(&b, &coherent_state(64, 0.7, 0.6, Convention::HalfInteger), 30).unwrap();
        for (a, c) in s1.f.iter().zip(&s2.f) {
            assert!((a.norm() - c.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_classification() {
        let t: Vec<f64> = (1..=400).map(|j| j as f64 * 0.5).collect();
        let pow = DecaySeries {
            label: "pow".into(),
            t: t.clone(),
            values: t.iter().map(|t| Complex64::from_polar(t.powf(-1.5), *t)).collect(),
            floor: 0.0,
        };
        let exp = DecaySeries {
            label: "exp".into(),
            t: t.clone(),
            values: t.iter().map(|t| Complex64::new((-0.1 * t).exp(), 0.0)).collect(),
            floor: 0.0,
        };
        let r = compare_decay(&pow, &exp).unwrap();
        assert_eq!(r.series[0].class, DecayClass::PowerLaw);
        assert!((r.series[0].alpha - 1.5).abs() < 0.05);
        assert_eq!(r.series[1].class, DecayClass::Exponential);
        assert!((r.series[1].rate + 0.1).abs() < 1e-9);
        assert_eq!(compare_decay(&pow, &pow).unwrap().series[1].class, DecayClass::PowerLaw);
    }
}
