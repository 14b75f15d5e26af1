//! Second-order `A`, `B`, `C(t)`: the stable regime on shared momentum
//! nodes, the decaying regime through `F(σ)`, the `iε` route and the
//! stochastic-limit deviation profile.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{validate_model, DispersionLaw, Family, ModelSpec};
use crate::oracle::{self, DysonOracle};
use crate::quad::{MomentumNodes, QuadratureSettings, SigmaAutocorrelation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcErrors {
    pub a: f64,
    pub b: f64,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ABCDecomposition {
    pub a: Complex64,
    pub b: Complex64,
    pub t_grid: Vec<f64>,
    pub c: Vec<Complex64>,
    pub order: u32,
    pub err: AbcErrors,
}

impl ABCDecomposition {
    /// `exp(A t + B + C(t))` on the grid.
    pub fn amplitude(&self) -> Vec<Complex64> {
        self.t_grid.iter().zip(&self.c).map(|(&t, c)| (self.a * t + self.b + c).exp()).collect()
    }
}

fn require_vacuum_family(spec: &ModelSpec) -> Result<()> {
    match spec.family {
        Family::PairCreation | Family::LinearSolvable => Ok(()),
        Family::TranslationInvariantTrilinear => Err(Error::Unsupported(
            "vacuum ABC coefficients need pair_creation or linear_solvable; use diagrams::one_particle_u".into(),
        )),
    }
}

fn require_no_decay(spec: &ModelSpec) -> Result<()> {
    let report = validate_model(spec);
    if report.decay_flag {
        return Err(Error::DecayModel { inf_energy: report.inf_energy, hint: "use abc_second_order_decay" });
    }
    Ok(())
}

fn max_abs(ts: &[f64]) -> f64 {
    ts.iter().fold(0.0f64, |m, t| m.max(t.abs()))
}

/// Stable-regime coefficients with nodes sized for the whole grid.
pub fn abc_second_order(spec: &ModelSpec, t_grid: &[f64], settings: &QuadratureSettings) -> Result<ABCDecomposition> {
    require_vacuum_family(spec)?;
    require_no_decay(spec)?;
    let nodes = MomentumNodes::build(spec, settings, max_abs(t_grid))?;
    abc_second_order_on(spec, &nodes, t_grid)
}

/// `A = λ² i∫|v|²/E`, `B = −λ²∫|v|²/E²`, `C(t) = λ²∫|v|²/E² e^{−itE}` on given nodes.
pub fn abc_second_order_on(spec: &ModelSpec, nodes: &MomentumNodes, t_grid: &[f64]) -> Result<ABCDecomposition> {
    require_vacuum_family(spec)?;
    require_no_decay(spec)?;
    if nodes.min_abs_energy() < 1e-12 {
        return Err(Error::Numeric("node with |E| < 1e-12 in a no-decay model".into()));
    }
    let l2 = spec.lambda * spec.lambda;
    let a = nodes.integrate(|e, v2| Complex64::new(0.0, v2 / e));
    let b = nodes.integrate(|e, v2| Complex64::new(-v2 / (e * e), 0.0));
    let c: Vec<_> = t_grid
        .par_iter()
        .map(|&t| nodes.integrate(|e, v2| Complex64::from_polar(v2 / (e * e), -t * e)))
        .collect();
    Ok(ABCDecomposition {
        a: l2 * a.value,
        b: l2 * b.value,
        t_grid: t_grid.to_vec(),
        c: c.iter().map(|i| l2 * i.value).collect(),
        order: 2,
        err: AbcErrors { a: l2 * a.err, b: l2 * b.err, c: c.iter().map(|i| l2 * i.err).collect() },
    })
}

/// `sup_t |𝓔⁽²⁾(t) − (A t + B + C(t))|` with Dyson and ABC on the same nodes.
pub fn theorem_one_defect(spec: &ModelSpec, t_grid: &[f64], settings: &QuadratureSettings) -> Result<f64> {
    let nodes = MomentumNodes::build(spec, settings, max_abs(t_grid))?;
    let abc = abc_second_order_on(spec, &nodes, t_grid)?;
    let dyson = DysonOracle::new(spec, &nodes)?;
    Ok(t_grid
        .iter()
        .zip(&abc.c)
        .map(|(&t, c)| (dyson.eval(t) - (abc.a * t + abc.b + c)).norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCoefficients {
    pub t_list: Vec<f64>,
    /// `A₂(t) = −∫₀ᵗ F`, without the `λ²` factor.
    pub a2_t: Vec<Complex64>,
    /// `B₂(t) = ∫₀ᵗ σF`, without the `λ²` factor.
    pub b2_t: Vec<Complex64>,
    pub a2_limit: Option<Complex64>,
    pub b2_limit: Option<Complex64>,
    /// `|A₂(t) − A₂|` per entry when the limit exists.
    pub a2_residual: Vec<f64>,
    pub warnings: Vec<String>,
    pub sigma: SigmaAutocorrelation,
}

/// Decay-regime `A₂(t)`, `B₂(t)` and their limits via `F(σ)`.
pub fn abc_second_order_decay(spec: &ModelSpec, t_list: &[f64], settings: &QuadratureSettings) -> Result<DecayCoefficients> {
    require_vacuum_family(spec)?;
    let report = validate_model(spec);
    if !report.decay_flag {
        return Err(Error::NoDecay("model does not decay; use abc_second_order"));
    }
    let t_max = t_list.iter().fold(0.0f64, |m, t| m.max(*t));
    let sigma = oracle::decay_autocorrelation(spec, t_max, settings)?;
    decay_from_f(spec, sigma, t_list, report.warnings)
}

pub fn decay_from_f(
    spec: &ModelSpec,
    sigma: SigmaAutocorrelation,
    t_list: &[f64],
    mut warnings: Vec<String>,
) -> Result<DecayCoefficients> {
    let dn = spec.dims();
    let mut a2_t = Vec::with_capacity(t_list.len());
    let mut b2_t = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let m = sigma.time_moment_integrals(t)?;
        a2_t.push(m.a2);
        b2_t.push(m.b2);
    }
    let (mut a2_limit, mut b2_limit) = sigma.limits();
    if dn < 3 {
        warnings.push(format!("d·n = {dn} < 3: limits reported as unavailable"));
        a2_limit = None;
        b2_limit = None;
    } else if dn < 5 {
        warnings.push(format!("d·n = {dn}: B2 limit computed in an unproven regime"));
    }
    let a2_residual = match a2_limit {
        Some(a) => a2_t.iter().map(|x| (x - a).norm()).collect(),
        None => Vec::new(),
    };
    Ok(DecayCoefficients { t_list: t_list.to_vec(), a2_t, b2_t, a2_limit, b2_limit, a2_residual, warnings, sigma })
}

/// Default schedule `0.1 · 2^{−k}`, `k = 0..5`.
pub fn default_eps_schedule() -> Vec<f64> {
    (0..6).map(|k| 0.1 * 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub eps: Vec<f64>,
    pub a2_raw: Vec<Complex64>,
    pub b2_raw: Vec<Complex64>,
    pub a2_err: f64,
    pub b2_err: f64,
    /// Largest quadrature error over the schedule.
    pub quad_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IepsResult {
    pub a2: Complex64,
    pub b2: Option<Complex64>,
    pub report: ExtrapolationReport,
}

/// Polynomial extrapolation to `ε → 0` (Neville); error from the last two diagonal entries.
pub fn richardson_to_zero(eps: &[f64], values: &[Complex64]) -> (Complex64, f64) {
    let m = values.len();
    let mut table: Vec<Complex64> = values.to_vec();
    let mut diag = vec![values[0]];
    for k in 1..m {
        for i in (k..m).rev() {
            table[i] = (eps[i - k] * table[i] - eps[i] * table[i - 1]) / (eps[i - k] - eps[i]);
        }
        diag.push(table[k]);
    }
    let best = table[m - 1];
    let err = if m >= 2 { (diag[m - 1] - diag[m - 2]).norm() } else { f64::INFINITY };
    (best, err)
}

/// `A₂ = i∫|v|²/(E−iε)` and `B₂ = −∫|v|²/(E−iε)²` extrapolated to `ε → 0`.
pub fn a2_b2_ieps(spec: &ModelSpec, eps_schedule: &[f64], want_b2: bool, settings: &QuadratureSettings) -> Result<IepsResult> {
    require_vacuum_family(spec)?;
    let dn = spec.dims();
    let decay = validate_model(spec).decay_flag;
    if decay && dn < 3 {
        return Err(Error::Threshold(format!("A2 via iε needs d·n >= 3, got {dn}")));
    }
    if decay && want_b2 && dn < 5 {
        return Err(Error::Threshold(format!("B2 via iε needs d·n >= 5, got {dn}")));
    }
    if !decay {
        let nodes = MomentumNodes::build(spec, settings, 0.0)?;
        let a = nodes.integrate(|e, v2| Complex64::new(0.0, v2 / e));
        let b = nodes.integrate(|e, v2| Complex64::new(-v2 / (e * e), 0.0));
        return Ok(IepsResult {
            a2: a.value,
            b2: want_b2.then_some(b.value),
            report: ExtrapolationReport {
                eps: vec![0.0],
                a2_raw: vec![a.value],
                b2_raw: vec![b.value],
                a2_err: 0.0,
                b2_err: 0.0,
                quad_err: a.err.max(b.err),
            },
        });
    }
    if eps_schedule.len() < 2 || eps_schedule.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("eps schedule needs >= 2 positive entries".into()));
    }
    let eps_min = eps_schedule.iter().copied().fold(f64::INFINITY, f64::min);
    // A Lorentzian of width ε needs panels about ε wide in E.
    let nodes = MomentumNodes::build(spec, settings, 4.0 / eps_min)?;
    let mut a2_raw = Vec::new();
    let mut b2_raw = Vec::new();
    let mut quad_err = 0.0f64;
    for &eps in eps_schedule {
        let a = nodes.integrate(|e, v2| Complex64::i() * v2 / Complex64::new(e, -eps));
        let b = nodes.integrate(|e, v2| {
            let z = Complex64::new(e, -eps);
            -v2 / (z * z)
        });
        quad_err = quad_err.max(a.err).max(if want_b2 { b.err } else { 0.0 });
        a2_raw.push(a.value);
        b2_raw.push(b.value);
    }
    let (a2, a2_err) = richardson_to_zero(eps_schedule, &a2_raw);
    let (b2, b2_err) = richardson_to_zero(eps_schedule, &b2_raw);
    Ok(IepsResult {
        a2,
        b2: want_b2.then_some(b2),
        report: ExtrapolationReport { eps: eps_schedule.to_vec(), a2_raw, b2_raw, a2_err, b2_err, quad_err },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticRow {
    pub lambda: f64,
    /// `D(λ) = sup_t |log⟨U(t/λ²)⟩ − A₂ t|`.
    pub deviation: f64,
    pub deviation_over_lambda2: f64,
}

/// Deviation from the van Hove limit `e^{A₂t}` along `t/λ²` for each λ.
pub fn stochastic_limit_profile(
    spec: &ModelSpec,
    lambda_list: &[f64],
    t_grid: &[f64],
    settings: &QuadratureSettings,
) -> Result<Vec<StochasticRow>> {
    require_vacuum_family(spec)?;
    let decay = validate_model(spec).decay_flag;
    let mut rows = Vec::with_capacity(lambda_list.len());
    for &lambda in lambda_list {
        if lambda == 0.0 {
            rows.push(StochasticRow { lambda, deviation: 0.0, deviation_over_lambda2: 0.0 });
            continue;
        }
        let l2 = lambda * lambda;
        let taus: Vec<f64> = t_grid.iter().map(|t| t / l2).collect();
        let mut s = spec.clone();
        s.lambda = lambda;
        let (a2, series) = stochastic_series(&s, decay, &taus, settings)?;
        let mut dev = 0.0f64;
        for (&t, u) in t_grid.iter().zip(&series) {
            let free = (a2 * t).exp();
            let rel = u / free;
            if rel.norm() < 1e-14 || rel.arg().abs() > std::f64::consts::FRAC_PI_2 {
                return Err(Error::Unwrap(format!("log branch ambiguous at t = {t}, λ = {lambda}")));
            }
            dev = dev.max(rel.ln().norm());
        }
        rows.push(StochasticRow { lambda, deviation: dev, deviation_over_lambda2: dev / l2 });
    }
    Ok(rows)
}

/// Rate `A₂` (no `λ²`) and the oracle amplitude at times `τ`.
fn stochastic_series(
    spec: &ModelSpec,
    decay: bool,
    taus: &[f64],
    settings: &QuadratureSettings,
) -> Result<(Complex64, Vec<Complex64>)> {
    match (spec.family, decay) {
        (Family::LinearSolvable, false) => {
            let nodes = MomentumNodes::build(spec, settings, 0.0)?;
            let a2 = nodes.integrate(|e, v2| Complex64::new(0.0, v2 / e)).value;
            Ok((a2, oracle::solvable_model_series(spec, taus, settings)?))
        }
        (Family::LinearSolvable, true) => {
            if !matches!(spec.dispersion, DispersionLaw::NonRelShifted { .. }) {
                return Err(Error::Unsupported("decaying oracle needs non_rel_shifted".into()));
            }
            let t_max = taus.iter().fold(0.0f64, |m, t| m.max(*t));
            let f = oracle::decay_autocorrelation(spec, t_max, settings)?;
            let a2 = f.limits().0.ok_or_else(|| Error::Numeric("A2 limit unavailable".into()))?;
            Ok((a2, oracle::solvable_decay_from_f(spec.lambda, &f, taus)?))
        }
        (Family::PairCreation, false) => {
            let t_max = taus.iter().fold(0.0f64, |m, t| m.max(*t));
            let nodes = MomentumNodes::build(spec, settings, t_max)?;
            let a2 = nodes.integrate(|e, v2| Complex64::new(0.0, v2 / e)).value;
            let dyson = DysonOracle::new(spec, &nodes)?;
            Ok((a2, taus.par_iter().map(|&t| dyson.eval(t).exp()).collect()))
        }
        _ => Err(Error::Unsupported("no oracle available for this family and regime".into())),
    }
}
