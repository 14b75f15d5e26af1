//! Critical points of dispersion laws, leading stationary-phase terms of
//! `C(t)` and `F(σ)`, and envelope power-law fits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{DispersionLaw, ModelSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub k0: Vec<f64>,
    pub grad_norm: f64,
    /// Row-major `d × d`.
    pub hessian: Vec<f64>,
    /// Positive minus negative eigenvalue count.
    pub signature: i32,
    pub degenerate: bool,
    pub det: f64,
}

fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn classify(disp: &DispersionLaw, k: Vec<f64>) -> CriticalPoint {
    let d = k.len();
    let h = disp.hessian(&k);
    let eig = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(d, d, &h)).eigenvalues;
    let scale = eig.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    let degenerate = eig.iter().any(|e| e.abs() < 1e-8 * scale);
    let signature = eig.iter().map(|&e| if e > 0.0 { 1 } else if e < 0.0 { -1 } else { 0 }).sum();
    let grad_norm = grad_norm(&disp.gradient(&k));
    CriticalPoint { k0: k, grad_norm, hessian: h, signature, degenerate, det: eig.iter().product() }
}

/// Damped Newton on `∇ω` from a grid of seeds over `[−half_width, half_width]^d`.
pub fn find_critical_points(disp: &DispersionLaw, d: usize, half_width: f64, grid_n: usize) -> Result<Vec<CriticalPoint>> {
    if d == 0 || grid_n == 0 || !(half_width > 0.0) {
        return Err(Error::InvalidInput("find_critical_points needs d >= 1, grid_n >= 1, half_width > 0".into()));
    }
    // Keep the seed count bounded in higher dimensions.
    let per_axis = grid_n.min((100_000f64.powf(1.0 / d as f64)) as usize).max(1);
    let total = per_axis.pow(d as u32);
    let axis = |i: usize| {
        if per_axis == 1 {
            0.0
        } else {
            -half_width + 2.0 * half_width * i as f64 / (per_axis - 1) as f64
        }
    };
    let tol = 1e-10 * disp.radial_d2(0.0).abs().max(1.0);
    let mut found: Vec<CriticalPoint> = Vec::new();
    let mut seed = vec![0.0; d];
    for s in 0..total {
        let mut idx = s;
        for x in seed.iter_mut() {
            *x = axis(idx % per_axis);
            idx /= per_axis;
        }
        let Some(k) = newton(disp, seed.clone(), tol) else { continue };
        if k.iter().any(|x| x.abs() > half_width * (1.0 + 1e-9)) {
            continue;
        }
        let dup = found
            .iter()
            .any(|c| c.k0.iter().zip(&k).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < 1e-8);
        if !dup {
            found.push(classify(disp, k));
        }
    }
    Ok(found)
}

fn newton(disp: &DispersionLaw, mut k: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let d = k.len();
    let mut g = disp.gradient(&k);
    for _ in 0..100 {
        let gn = grad_norm(&g);
        if gn <= tol {
            // Snap exact zeros produced by symmetric seeds.
            for x in k.iter_mut() {
                if x.abs() < 1e-14 {
                    *x = 0.0;
                }
            }
            return Some(k);
        }
        let h = DMatrix::from_row_slice(d, d, &disp.hessian(&k));
        let step = h.lu().solve(&DVector::from_column_slice(&g)).unwrap_or_else(|| DVector::from_column_slice(&g));
        let mut damping = 1.0;
        loop {
            let trial: Vec<f64> = k.iter().zip(step.iter()).map(|(x, s)| x - damping * s).collect();
            let gt = disp.gradient(&trial);
            if grad_norm(&gt) < gn || damping < 1e-6 {
                k = trial;
                g = gt;
                break;
            }
            damping *= 0.5;
        }
        if k.iter().any(|x| !x.is_finite()) {
            return None;
        }
    }
    (grad_norm(&g) <= tol).then_some(k)
}

fn unique_critical_point(spec: &ModelSpec) -> Result<CriticalPoint> {
    let box_half = spec.form_factor.cutoff(1e-8).max(1.0);
    let points = find_critical_points(&spec.dispersion, spec.d, box_half, 9)?;
    match points.as_slice() {
        [] => Err(Error::Numeric("no critical point found".into())),
        [p] if p.degenerate => Err(Error::Numeric("critical point is degenerate".into())),
        [p] => Ok(p.clone()),
        _ => Err(Error::Numeric(format!("{} critical points; a single nondegenerate one is required", points.len()))),
    }
}

/// Leading term `λ²(2π/t)^{d/2} |det H|^{−1/2} e^{−iπ·sig/4} |v(k₀)|²/ω(k₀)² e^{−iω(k₀)t}`.
pub fn stationary_phase_c(spec: &ModelSpec, t: f64) -> Result<Complex64> {
    if spec.n != 1 {
        return Err(Error::Unsupported("stationary_phase_c expects a single-leg model".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidInput("t must be > 0".into()));
    }
    let cp = unique_critical_point(spec)?;
    let d = spec.d as f64;
    let w0 = spec.dispersion.eval(&cp.k0);
    let v = spec.form_factor.eval_flat(&cp.k0, spec.d);
    let modulus = spec.lambda.powi(2) * (2.0 * PI / t).powf(d / 2.0) / cp.det.abs().sqrt() * v * v / (w0 * w0);
    Ok(Complex64::from_polar(modulus, -PI * cp.signature as f64 / 4.0 - w0 * t))
}

/// Leading term `(2π/σ)^{dn/2} e^{−iπdn/4} e^{inσω₀} |v(0)|²` for the shifted quadratic law.
pub fn stationary_phase_f(spec: &ModelSpec, sigma: f64) -> Result<Complex64> {
    let DispersionLaw::NonRelShifted { omega0 } = spec.dispersion else {
        return Err(Error::Unsupported("stationary_phase_f expects a non_rel_shifted dispersion".into()));
    };
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("sigma must be > 0".into()));
    }
    let dn = spec.dims() as f64;
    let v0 = spec.form_factor_flat(&vec![0.0; spec.dims()]);
    let modulus = (2.0 * PI / sigma).powf(dn / 2.0) * v0 * v0;
    Ok(Complex64::from_polar(modulus, -PI * dn / 4.0 + spec.n as f64 * sigma * omega0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub alpha_stderr: f64,
    pub f_bound: f64,
    pub residual: f64,
    pub window: [f64; 2],
    pub envelope: Vec<[f64; 2]>,
}

/// Number of logarithmic bins used for the envelope.
pub const ENVELOPE_BINS: usize = 24;

/// Block maxima of `|C|` over log-spaced bins of the window.
pub fn envelope(ts: &[f64], mags: &[f64], window: [f64; 2], bins: usize) -> Vec<[f64; 2]> {
    let (l0, l1) = (window[0].ln(), window[1].ln());
    let mut best: Vec<Option<[f64; 2]>> = vec![None; bins];
    for (&t, &m) in ts.iter().zip(mags) {
        if t < window[0] || t > window[1] || !(m > 0.0) {
            continue;
        }
        let b = (((t.ln() - l0) / (l1 - l0) * bins as f64) as usize).min(bins - 1);
        if best[b].is_none_or(|p| m > p[1]) {
            best[b] = Some([t, m]);
        }
    }
    best.into_iter().flatten().collect()
}

/// Least-squares slope of `log y` against `x`, with standard error and RMS residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let rms = (ss / n).sqrt();
    let stderr = if n > 2.0 { (ss / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    (slope, intercept, stderr, rms)
}

/// `C(t) ≈ f(t)/t^α` fitted on envelope maxima inside `window`.
pub fn fit_power_law(ts: &[f64], c: &[Complex64], window: [f64; 2]) -> Result<PowerLawFit> {
    if ts.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: ts.len(), got: c.len() });
    }
    if !(window[0] > 0.0 && window[1] > window[0]) {
        return Err(Error::InvalidInput("window must satisfy 0 < t0 < t1".into()));
    }
    let mags: Vec<f64> = c.iter().map(|z| z.norm()).collect();
    let env = envelope(ts, &mags, window, ENVELOPE_BINS);
    if env.len() < 10 {
        return Err(Error::Numeric(format!("only {} envelope points in window (need 10)", env.len())));
    }
    let x: Vec<f64> = env.iter().map(|p| p[0].ln()).collect();
    let y: Vec<f64> = env.iter().map(|p| p[1].ln()).collect();
    let (slope, _, stderr, rms) = linear_fit(&x, &y);
    let alpha = -slope;
    let f_bound = ts
        .iter()
        .zip(&mags)
        .filter(|(t, _)| **t >= window[0] && **t <= window[1])
        .map(|(t, m)| m * t.powf(alpha))
        .fold(0.0, f64::max);
    Ok(PowerLawFit { alpha, alpha_stderr: stderr, f_bound, residual: rms, window, envelope: env })
}
