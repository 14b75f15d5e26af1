//! Independent references: the second-order Dyson term, the closed-form
//! solvable linear model and its truncated-Fock counterpart.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::expm;
use crate::model::{validate_model, DispersionLaw, Family, FormFactor, ModelSpec};
use crate::quad::{
    autocorrelation_f, composite_rule, sphere_area, uniform_sigma_grid, MomentumNodes, QuadratureSettings,
    SigmaAutocorrelation, PANEL_ORDER,
};
use crate::{Error, Result};

/// `∫₀ᵗ dt₁ ∫₀^{t₁} dt₂ e^{−i(t₁−t₂)E} = −it/E + 1/E² − e^{−itE}/E²`.
pub fn exp1(e: f64, t: f64) -> Complex64 {
    let x = e * t;
    if x.abs() < 0.05 {
        // −Σ_{k≥2} (−iE)^k t^k / k! / E², summed as a power series in x.
        let mut term = Complex64::new(0.5 * t * t, 0.0);
        let mut acc = term;
        for k in 3..20 {
            term *= Complex64::new(0.0, -x) / k as f64;
            acc += term;
            if term.norm() < 1e-18 * acc.norm() {
                break;
            }
        }
        return acc;
    }
    (Complex64::new(1.0, -x) - Complex64::from_polar(1.0, -x)) / (e * e)
}

fn require_pair_like(spec: &ModelSpec) -> Result<()> {
    match spec.family {
        Family::PairCreation | Family::LinearSolvable => Ok(()),
        Family::TranslationInvariantTrilinear => {
            Err(Error::Unsupported("the vacuum oracles cover pair_creation and linear_solvable only".into()))
        }
    }
}

/// Second-order Dyson term `(−iλ)² ∫|v|² ∫₀ᵗ∫₀^{t₁} e^{i(t₂−t₁)E}` on fixed momentum nodes.
pub struct DysonOracle<'a> {
    nodes: &'a MomentumNodes,
    lambda: f64,
}

impl<'a> DysonOracle<'a> {
    pub fn new(spec: &ModelSpec, nodes: &'a MomentumNodes) -> Result<Self> {
        require_pair_like(spec)?;
        if !validate_model(spec).decay_flag && nodes.min_abs_energy() < 1e-12 {
            return Err(Error::Numeric("node with |E| < 1e-12 in a no-decay model".into()));
        }
        Ok(Self { nodes, lambda: spec.lambda })
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let l2 = self.lambda * self.lambda;
        -l2 * self.nodes.integrate(|e, v2| v2 * exp1(e, t)).value
    }
}

/// `𝓔⁽²⁾(t)` with freshly built nodes.
pub fn dyson_second_order(spec: &ModelSpec, t: f64, settings: &QuadratureSettings) -> Result<Complex64> {
    let nodes = MomentumNodes::build(spec, settings, t.abs())?;
    Ok(DysonOracle::new(spec, &nodes)?.eval(t))
}

fn require_solvable(spec: &ModelSpec) -> Result<()> {
    if spec.family != Family::LinearSolvable {
        return Err(Error::Unsupported(format!("expected linear_solvable, got {:?}", spec.family)));
    }
    spec.check()
}

/// Exact vacuum amplitude of the linear model on a time grid,
/// `exp(iλ²t∫|v|²/ω − λ²∫|v|²/ω² + λ²∫|v|²/ω² e^{−iωt})`.
pub fn solvable_model_series(spec: &ModelSpec, ts: &[f64], settings: &QuadratureSettings) -> Result<Vec<Complex64>> {
    require_solvable(spec)?;
    let report = validate_model(spec);
    if report.decay_flag {
        return Err(Error::DecayModel { inf_energy: report.inf_energy, hint: "use solvable_model_decay" });
    }
    let t_max = ts.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let nodes = MomentumNodes::build(spec, settings, t_max)?;
    let l2 = spec.lambda * spec.lambda;
    let a = Complex64::i() * l2 * nodes.integrate(|e, v2| Complex64::new(v2 / e, 0.0)).value;
    let b = -l2 * nodes.integrate(|e, v2| Complex64::new(v2 / (e * e), 0.0)).value;
    Ok(ts
        .par_iter()
        .map(|&t| {
            let c = l2 * nodes.integrate(|e, v2| Complex64::from_polar(v2 / (e * e), -t * e)).value;
            (a * t + b + c).exp()
        })
        .collect())
}

pub fn solvable_model_exact(spec: &ModelSpec, t: f64, settings: &QuadratureSettings) -> Result<Complex64> {
    Ok(solvable_model_series(spec, &[t], settings)?[0])
}

/// Sigma autocorrelation on a grid reaching `max(t_max, 200)`.
pub fn decay_autocorrelation(spec: &ModelSpec, t_max: f64, settings: &QuadratureSettings) -> Result<SigmaAutocorrelation> {
    let grid = uniform_sigma_grid(t_max.max(200.0), 0.02);
    autocorrelation_f(spec, &grid, settings)
}

/// `exp(λ² t A₂(t) + λ² B₂(t))` for the decaying linear model.
pub fn solvable_model_decay_series(spec: &ModelSpec, ts: &[f64], settings: &QuadratureSettings) -> Result<Vec<Complex64>> {
    require_solvable(spec)?;
    if !matches!(spec.dispersion, DispersionLaw::NonRelShifted { .. }) {
        return Err(Error::Unsupported("solvable_model_decay expects a non_rel_shifted dispersion".into()));
    }
    let t_max = ts.iter().fold(0.0f64, |m, t| m.max(*t));
    let f = decay_autocorrelation(spec, t_max, settings)?;
    solvable_decay_from_f(spec.lambda, &f, ts)
}

pub fn solvable_decay_from_f(lambda: f64, f: &SigmaAutocorrelation, ts: &[f64]) -> Result<Vec<Complex64>> {
    let l2 = lambda * lambda;
    ts.iter()
        .map(|&t| {
            let m = f.time_moment_integrals(t)?;
            Ok((l2 * (t * m.a2 + m.b2)).exp())
        })
        .collect()
}

pub fn solvable_model_decay(spec: &ModelSpec, t: f64, settings: &QuadratureSettings) -> Result<Complex64> {
    Ok(solvable_model_decay_series(spec, &[t], settings)?[0])
}

/// Discrete modes `kⱼ` with weights `wⱼ` standing in for `∫d^dk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockDiscretization {
    pub mode_momenta: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub per_mode_truncation: usize,
}

impl FockDiscretization {
    /// Radial modes `(ρⱼ, 0, …)` with weight `S_{d−1} ρⱼ^{d−1} wⱼ` on
    /// `panels` Gauss panels of `[0, Λ]`; valid for isotropic form factors.
    pub fn radial(spec: &ModelSpec, cutoff: f64, panels: usize, n_occ: usize) -> Result<Self> {
        if matches!(spec.form_factor, FormFactor::ShiftedGaussian { .. }) {
            return Err(Error::Unsupported("radial modes need an isotropic form factor".into()));
        }
        let (rho, w) = composite_rule(0.0, cutoff, panels);
        let area = sphere_area(spec.d);
        let mut mode_momenta = Vec::with_capacity(rho.len());
        let mut weights = Vec::with_capacity(rho.len());
        for (r, wi) in rho.into_iter().zip(w) {
            let mut k = vec![0.0; spec.d];
            k[0] = r;
            mode_momenta.push(k);
            weights.push(area * r.powi(spec.d as i32 - 1) * wi);
        }
        let disc = Self { mode_momenta, weights, per_mode_truncation: n_occ };
        disc.check()?;
        Ok(disc)
    }

    /// Radial modes sized like the momentum nodes for times up to `t_max`.
    pub fn radial_for(spec: &ModelSpec, settings: &QuadratureSettings, t_max: f64, n_occ: usize) -> Result<Self> {
        let cut = settings.cutoff_for(&spec.form_factor);
        let slope = (0..=256)
            .map(|i| spec.dispersion.radial_d1(cut * i as f64 / 256.0).abs())
            .fold(0.0, f64::max);
        let panels = settings
            .points_per_axis
            .div_ceil(PANEL_ORDER)
            .max((t_max * slope * cut / 6.0).ceil() as usize);
        Self::radial(spec, cut, panels, n_occ)
    }

    pub fn check(&self) -> Result<()> {
        if self.per_mode_truncation < 4 {
            return Err(Error::InvalidInput("per_mode_truncation must be >= 4".into()));
        }
        if self.mode_momenta.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.mode_momenta.len(), got: self.weights.len() });
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("mode weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `⟨0|e^{−itH}|0⟩` for `H = ω a*a + g(a + a*)` truncated to `n_occ` levels.
pub fn single_mode_amplitude(omega: f64, g: Complex64, t: f64, n_occ: usize) -> Result<Complex64> {
    let mut h = DMatrix::<Complex64>::zeros(n_occ, n_occ);
    for k in 0..n_occ {
        h[(k, k)] = Complex64::new(omega * k as f64, 0.0);
        if k + 1 < n_occ {
            let s = ((k + 1) as f64).sqrt();
            h[(k + 1, k)] = g * s;
            h[(k, k + 1)] = g.conj() * s;
        }
    }
    let u = expm(&(h * Complex64::new(0.0, -t)))?;
    let top = u[(n_occ - 1, 0)].norm();
    if top >= 1e-10 {
        return Err(Error::Truncation { mode: 0, amplitude: top });
    }
    Ok(u[(0, 0)])
}

/// Truncated-Fock vacuum amplitude, a product over independent modes in index order.
pub fn fock_evolve(disc: &FockDiscretization, spec: &ModelSpec, t: f64, lambda: f64) -> Result<Complex64> {
    require_solvable(spec)?;
    disc.check()?;
    let amps: Vec<Result<Complex64>> = disc
        .mode_momenta
        .par_iter()
        .zip(&disc.weights)
        .enumerate()
        .map(|(j, (k, &w))| {
            let v = spec.form_factor.eval_flat(k, spec.d);
            let g = Complex64::new(lambda * w.sqrt() * v, 0.0);
            if g.norm() == 0.0 {
                return Ok(Complex64::new(1.0, 0.0));
            }
            single_mode_amplitude(spec.dispersion.eval(k), g, t, disc.per_mode_truncation).map_err(|e| match e {
                Error::Truncation { amplitude, .. } => Error::Truncation { mode: j, amplitude },
                other => other,
            })
        })
        .collect();
    let mut prod = Complex64::new(1.0, 0.0);
    for a in amps {
        prod *= a?;
    }
    Ok(prod)
}

/// Continuous logarithm along a sampled series.
pub fn unwrapped_log(series: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(series.len());
    let mut prev: Option<f64> = None;
    for (j, z) in series.iter().enumerate() {
        let r = z.norm();
        if !(r >= 1e-14) {
            return Err(Error::Unwrap(format!("sample {j} has modulus {r:e}")));
        }
        let mut phase = z.arg();
        if let Some(p) = prev {
            phase += 2.0 * PI * ((p - phase) / (2.0 * PI)).round();
            if (phase - p).abs() > PI / 2.0 {
                return Err(Error::Unwrap(format!("phase jump {:.3} at sample {j}", phase - p)));
            }
        }
        prev = Some(phase);
        out.push(Complex64::new(r.ln(), phase));
    }
    Ok(out)
}

/// `C(tⱼ) = log⟨U(tⱼ)⟩ − A tⱼ − B` with a continuous logarithm.
pub fn abc_residual(series: &[Complex64], ts: &[f64], a: Complex64, b: Complex64) -> Result<Vec<Complex64>> {
    if series.len() != ts.len() {
        return Err(Error::DimensionMismatch { expected: ts.len(), got: series.len() });
    }
    let logs = unwrapped_log(series)?;
    Ok(logs.iter().zip(ts).map(|(l, &t)| l - a * t - b).collect())
}

/// Direct second-order Dyson term of `⟨p|U(t)|p⟩` for the trilinear family:
/// `(−iλ)²∫₀ᵗ∫₀^{t₁}⟨p|V(t₁)V(t₂)|p⟩` reduces to
/// `−2λ² ∫dq |v̂(q, p−q)|² exp1(D(q), t)` with `D = ω(q) + ω(p−q) − ω(p)`;
/// the 2 counts the two ways of annihilating the emitted pair.
pub struct OneParticleDyson {
    lambda: f64,
    /// `(w·|v̂|², D)` per node.
    nodes: Vec<(f64, f64)>,
}

impl OneParticleDyson {
    pub fn new(spec: &ModelSpec, p: &[f64], t_max: f64, settings: &QuadratureSettings) -> Result<Self> {
        spec.check()?;
        if spec.family != Family::TranslationInvariantTrilinear {
            return Err(Error::Unsupported("one-particle Dyson oracle needs the trilinear family".into()));
        }
        let d = spec.d;
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        if d > 3 {
            return Err(Error::TensorCap { dims: d, cap: 3 });
        }
        let half = settings.cutoff_for(&spec.form_factor) + 0.5 * p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let slope = 2.0 * (0..=100).map(|i| spec.dispersion.radial_d1(2.0 * half * i as f64 / 100.0).abs()).fold(0.0, f64::max);
        let panels = (settings.points_per_axis / PANEL_ORDER).max((slope * t_max * half / 2.0).ceil() as usize).max(2);
        let (x, w) = composite_rule(-half, half, panels);
        let omega_p = spec.dispersion.eval(p);
        let mut nodes = Vec::with_capacity(x.len().pow(d as u32));
        let mut q = vec![0.0; d];
        let mut legs = vec![0.0; 2 * d];
        for idx in 0..x.len().pow(d as u32) {
            let mut rest = idx;
            let mut weight = 1.0;
            for (k, qk) in q.iter_mut().enumerate() {
                let i = rest % x.len();
                rest /= x.len();
                *qk = 0.5 * p[k] + x[i];
                weight *= w[i];
            }
            for k in 0..d {
                legs[k] = q[k];
                legs[d + k] = p[k] - q[k];
            }
            let v = spec.form_factor_flat(&legs);
            let e = spec.dispersion.eval(&legs[..d]) + spec.dispersion.eval(&legs[d..]) - omega_p;
            if e <= 0.0 {
                return Err(Error::DecayModel { inf_energy: e, hint: "ω(q) + ω(p−q) − ω(p) must stay positive" });
            }
            nodes.push((weight * v * v, e));
        }
        Ok(Self { lambda: spec.lambda, nodes })
    }

    /// `𝓔⁽²⁾(p, t)`, the `λ²` part of `⟨p|U(t)|p⟩`.
    pub fn eval(&self, t: f64) -> Complex64 {
        let l2 = self.lambda * self.lambda;
        -2.0 * l2 * self.nodes.iter().map(|&(wv, e)| wv * exp1(e, t)).sum::<Complex64>()
    }
}
