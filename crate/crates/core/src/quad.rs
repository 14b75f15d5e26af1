//! Momentum-space quadrature, the sigma-autocorrelation `F(σ)` and its
//! time-moment integrals.
//!
//! All oscillatory time integrals go through `F(σ) = ∫|v|² e^{−iσE} dp`,
//! which confines the oscillation to one dimension. Beyond the sampled
//! grid a fitted stationary-phase tail `a σ^{−dn/2} e^{i(Ωσ + φ)}` is
//! integrated in closed form.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::model::{DispersionLaw, FormFactor, ModelSpec};
use crate::{Error, Result};

/// Nodes per Gauss-Legendre panel; `points_per_axis` is rounded up to a multiple.
pub const PANEL_ORDER: usize = 16;
/// Hard cap on tensor-product dimension.
pub const TENSOR_CAP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadMode {
    TensorGauss,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSettings {
    pub mode: QuadMode,
    pub points_per_axis: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Explicit cutoff `Λ`; when absent it is derived from the form factor and `rel_tol`.
    pub momentum_cutoff: Option<f64>,
    pub rel_tol: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            mode: QuadMode::TensorGauss,
            points_per_axis: 64,
            mc_samples: 100_000,
            seed: 0,
            momentum_cutoff: None,
            rel_tol: 1e-13,
        }
    }
}

impl QuadratureSettings {
    /// TensorGauss up to four momentum dimensions, MonteCarlo above.
    pub fn for_dims(nd: usize) -> Self {
        let mode = if nd <= 4 { QuadMode::TensorGauss } else { QuadMode::MonteCarlo };
        Self { mode, ..Self::default() }
    }

    pub fn check(&self) -> Result<()> {
        if self.points_per_axis < PANEL_ORDER {
            return Err(Error::InvalidInput(format!("points_per_axis must be >= {PANEL_ORDER}")));
        }
        if self.mc_samples < 100_000 {
            return Err(Error::InvalidInput("mc_samples must be >= 1e5".into()));
        }
        if let Some(c) = self.momentum_cutoff {
            if !(c > 0.0) {
                return Err(Error::InvalidInput("momentum_cutoff must be > 0".into()));
            }
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidInput("rel_tol must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Cutoff radius per leg such that the `|v|²` mass outside is below `rel_tol`.
    pub fn cutoff_for(&self, ff: &FormFactor) -> f64 {
        self.momentum_cutoff.unwrap_or_else(|| ff.cutoff(self.rel_tol.sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: Complex64,
    pub err: f64,
}

// ---------------------------------------------------------------------------
// Gauss-Legendre rules
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

/// Composite Gauss-Legendre rule with `panels` equal panels on `[a, b]`.
pub fn composite_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = panel_rule();
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * x.len());
    let mut weights = Vec::with_capacity(panels * x.len());
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(w) {
            nodes.push(lo + 0.5 * h * (xi + 1.0));
            weights.push(0.5 * h * wi);
        }
    }
    (nodes, weights)
}

/// Surface area of the unit sphere in `R^d` (2 for d = 1).
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / ln_gamma(h).exp()
}

// ---------------------------------------------------------------------------
// Node sets for integrals of the form ∫ g(E, |v|²) dp
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct NodeSet {
    weight: Vec<f64>,
    energy: Vec<f64>,
    v2: Vec<f64>,
}

impl NodeSet {
    fn sum<F: Fn(f64, f64) -> Complex64>(&self, f: &F) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.weight.len() {
            acc += self.weight[i] * f(self.energy[i], self.v2[i]);
        }
        acc
    }
}

#[derive(Debug, Clone)]
enum ErrorModel {
    /// Same rule with half the panels.
    Coarse(NodeSet),
    /// One sample per stratum; variance from adjacent stratum pairs.
    Stratified,
}

/// Reusable quadrature nodes carrying `E(p)` and `|v(p)|²`.
///
/// Every `A`, `B`, `C(t)` integral of one computation shares one instance, so
/// identities such as `C(0) = −B` hold to rounding.
#[derive(Debug, Clone)]
pub struct MomentumNodes {
    fine: NodeSet,
    error: ErrorModel,
    kind: &'static str,
}

impl MomentumNodes {
    /// Builds nodes able to resolve `e^{−i r E}` for `|r| ≤ max_rate`.
    pub fn build(spec: &ModelSpec, settings: &QuadratureSettings, max_rate: f64) -> Result<Self> {
        settings.check()?;
        spec.check()?;
        match settings.mode {
            QuadMode::MonteCarlo => Ok(Self::monte_carlo(spec, settings)),
            QuadMode::TensorGauss => {
                if radial_separable(spec) {
                    Ok(Self::radial_product(spec, settings, max_rate))
                } else {
                    Self::tensor(spec, settings, max_rate)
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.fine.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.weight.is_empty()
    }

    /// Which construction was used: `radial`, `tensor` or `monte_carlo`.
    pub fn kind(&self) -> &'static str {
        self.kind
    }

    /// Smallest |E| over the nodes.
    pub fn min_abs_energy(&self) -> f64 {
        self.fine.energy.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()))
    }

    pub fn integrate<F: Fn(f64, f64) -> Complex64>(&self, f: F) -> Integral {
        let value = self.fine.sum(&f);
        let err = match &self.error {
            ErrorModel::Coarse(c) => (value - c.sum(&f)).norm(),
            ErrorModel::Stratified => {
                let n = self.fine.weight.len();
                let mut var = 0.0;
                for pair in (0..n - n % 2).step_by(2) {
                    let a = self.fine.weight[pair] * f(self.fine.energy[pair], self.fine.v2[pair]);
                    let b = self.fine.weight[pair + 1] * f(self.fine.energy[pair + 1], self.fine.v2[pair + 1]);
                    var += (a - b).norm_sqr();
                }
                var.sqrt()
            }
        };
        Integral { value, err }
    }

    fn radial_product(spec: &ModelSpec, settings: &QuadratureSettings, max_rate: f64) -> Self {
        let cut = settings.cutoff_for(&spec.form_factor);
        let base = settings.points_per_axis.div_ceil(PANEL_ORDER);
        let panels = base.max(oscillation_panels(&spec.dispersion, cut, max_rate));
        let fine = radial_product_set(spec, cut, panels);
        let coarse = radial_product_set(spec, cut, (panels / 2).max(1));
        Self { fine, error: ErrorModel::Coarse(coarse), kind: "radial" }
    }

    fn tensor(spec: &ModelSpec, settings: &QuadratureSettings, max_rate: f64) -> Result<Self> {
        let nd = spec.dims();
        if nd > TENSOR_CAP {
            return Err(Error::TensorCap { dims: nd, cap: TENSOR_CAP });
        }
        let cut = settings.cutoff_for(&spec.form_factor);
        let base = settings.points_per_axis.div_ceil(PANEL_ORDER);
        let panels = base.max(oscillation_panels(&spec.dispersion, cut, max_rate));
        let set = |panels: usize| {
            let grid = TensorGrid::new(spec, cut, panels);
            let mut out = NodeSet::default();
            let mut p = vec![0.0; nd];
            for i in 0..grid.len() {
                let w = grid.point(i, &mut p);
                let v = spec.form_factor_flat(&p);
                if v == 0.0 {
                    continue;
                }
                out.weight.push(w);
                out.energy.push(spec.energy_flat(&p));
                out.v2.push(v * v);
            }
            out
        };
        Ok(Self { fine: set(panels), error: ErrorModel::Coarse(set((panels / 2).max(1))), kind: "tensor" })
    }

    fn monte_carlo(spec: &ModelSpec, settings: &QuadratureSettings) -> Self {
        let sampler = GaussianSampler::new(spec, settings);
        let mut fine = NodeSet::default();
        let mut p = vec![0.0; spec.dims()];
        let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
        let radii = sampler.stratified_radii(settings.mc_samples, &mut rng);
        for r in radii {
            let w = sampler.sample(r, &mut rng, &mut p);
            let v = spec.form_factor_flat(&p);
            fine.weight.push(w / settings.mc_samples as f64);
            fine.energy.push(spec.energy_flat(&p));
            fine.v2.push(v * v);
        }
        Self { fine, error: ErrorModel::Stratified, kind: "monte_carlo" }
    }
}

/// Form factors whose `|v|²` is a product of radial per-leg factors.
fn radial_separable(spec: &ModelSpec) -> bool {
    match spec.form_factor {
        FormFactor::IsotropicGaussian { .. } => true,
        FormFactor::CompactBump { .. } => spec.n == 1,
        FormFactor::ShiftedGaussian { .. } => false,
    }
}

/// Panels per axis so that a phase `rate·ω` turns by at most ~6 rad per panel.
fn oscillation_panels(disp: &DispersionLaw, cut: f64, rate: f64) -> usize {
    if rate <= 0.0 {
        return 1;
    }
    let slope = (0..=256)
        .map(|i| disp.radial_d1(cut * i as f64 / 256.0).abs())
        .fold(0.0, f64::max);
    (rate * slope * cut / 6.0).ceil() as usize
}

fn radial_product_set(spec: &ModelSpec, cut: f64, panels: usize) -> NodeSet {
    let d = spec.d;
    let n = spec.n;
    let (rho, w) = composite_rule(0.0, cut, panels);
    let area = sphere_area(d);
    let a = spec.form_factor.amplitude();
    // Per-leg factors of the product measure.
    let leg: Vec<(f64, f64, f64)> = rho
        .iter()
        .zip(&w)
        .map(|(&r, &wi)| {
            let v2 = match spec.form_factor {
                FormFactor::CompactBump { .. } => {
                    let v = spec.form_factor.eval_flat(&radial_point(r, d), d);
                    v * v / (a * a)
                }
                _ => spec.form_factor.leg_mod_sq_radial(r).unwrap_or(0.0),
            };
            (area * r.powi(d as i32 - 1) * wi, spec.dispersion.radial(r), v2)
        })
        .collect();
    let m = leg.len();
    let total = m.pow(n as u32);
    let mut out = NodeSet {
        weight: Vec::with_capacity(total),
        energy: Vec::with_capacity(total),
        v2: Vec::with_capacity(total),
    };
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let (mut wt, mut e, mut v2) = (1.0, 0.0, a * a);
        for &i in &idx {
            wt *= leg[i].0;
            e += leg[i].1;
            v2 *= leg[i].2;
        }
        if v2 > 0.0 {
            out.weight.push(wt);
            out.energy.push(e);
            out.v2.push(v2);
        }
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < m {
                break;
            }
            *slot = 0;
        }
    }
    out
}

fn radial_point(r: f64, d: usize) -> Vec<f64> {
    let mut p = vec![0.0; d];
    p[0] = r;
    p
}

/// Tensor-product composite Gauss grid over `[c − Λ, c + Λ]` per coordinate.
struct TensorGrid {
    axis_nodes: Vec<Vec<f64>>,
    axis_weights: Vec<Vec<f64>>,
}

impl TensorGrid {
    fn new(spec: &ModelSpec, cut: f64, panels: usize) -> Self {
        let center = spec.form_factor.center(spec.d);
        let mut axis_nodes = Vec::new();
        let mut axis_weights = Vec::new();
        for _leg in 0..spec.n {
            for c in &center {
                let (x, w) = composite_rule(c - cut, c + cut, panels);
                axis_nodes.push(x);
                axis_weights.push(w);
            }
        }
        Self { axis_nodes, axis_weights }
    }

    fn len(&self) -> usize {
        self.axis_nodes.iter().map(Vec::len).product()
    }

    fn point(&self, mut i: usize, p: &mut [f64]) -> f64 {
        let mut w = 1.0;
        for (k, (xs, ws)) in self.axis_nodes.iter().zip(&self.axis_weights).enumerate() {
            let j = i % xs.len();
            i /= xs.len();
            p[k] = xs[j];
            w *= ws[j];
        }
        w
    }
}

/// Gaussian importance sampler matched to the form-factor width, with the
/// radial coordinate stratified over the chi quantiles.
struct GaussianSampler {
    dims: usize,
    scale: f64,
    center: Vec<f64>,
    log_norm: f64,
}

impl GaussianSampler {
    fn new(spec: &ModelSpec, _settings: &QuadratureSettings) -> Self {
        let scale = match &spec.form_factor {
            FormFactor::IsotropicGaussian { w, .. } | FormFactor::ShiftedGaussian { w, .. } => w / 2f64.sqrt(),
            FormFactor::CompactBump { r, .. } => r / 3.0,
        };
        let leg_center = spec.form_factor.center(spec.d);
        let center: Vec<f64> = (0..spec.n).flat_map(|_| leg_center.clone()).collect();
        let dims = spec.dims();
        let log_norm = -0.5 * dims as f64 * (2.0 * PI * scale * scale).ln();
        Self { dims, scale, center, log_norm }
    }

    /// One radius per stratum `[(i)/N, (i+1)/N)` of the chi distribution.
    fn stratified_radii(&self, count: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
        let a = self.dims as f64 / 2.0;
        let cdf = |r: f64| gamma_lr(a, 0.5 * r * r);
        let log_pdf_norm = -(a - 1.0) * 2f64.ln() - ln_gamma(a);
        let pdf = |r: f64| {
            if r <= 0.0 {
                return 0.0;
            }
            (log_pdf_norm + (self.dims as f64 - 1.0) * r.ln() - 0.5 * r * r).exp()
        };
        let mut out = Vec::with_capacity(count);
        let mut prev = 0.0f64;
        for i in 0..count {
            let u = (i as f64 + rng.random::<f64>()) / count as f64;
            let target = u.min(1.0 - 1e-16);
            // Bracket [lo, hi] then safeguarded Newton.
            let mut lo = prev;
            let mut hi = if prev > 0.0 { prev * 1.01 + 1e-3 } else { 1e-3 };
            while cdf(hi) < target {
                lo = hi;
                hi *= 2.0;
            }
            let mut r = if prev > 0.0 {
                prev
            } else {
                (2.0 * (target * (ln_gamma(a + 1.0)).exp()).powf(1.0 / a)).sqrt().clamp(lo, hi)
            };
            for _ in 0..60 {
                let g = cdf(r) - target;
                if g > 0.0 {
                    hi = r;
                } else {
                    lo = r;
                }
                let dp = pdf(r);
                let mut next = if dp > 0.0 { r - g / dp } else { 0.5 * (lo + hi) };
                if !(next > lo && next < hi) {
                    next = 0.5 * (lo + hi);
                }
                if (next - r).abs() <= 1e-14 * r.max(1e-300) {
                    r = next;
                    break;
                }
                r = next;
            }
            prev = r;
            out.push(r);
        }
        out
    }

    /// Writes a point at chi-radius `r` along a random direction; returns `1/(N q(p))` up to `1/N`.
    fn sample(&self, r: f64, rng: &mut ChaCha20Rng, p: &mut [f64]) -> f64 {
        let mut norm = 0.0;
        for x in p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = z;
            norm += z * z;
        }
        let norm = norm.sqrt();
        for (x, c) in p.iter_mut().zip(&self.center) {
            *x = c + self.scale * r * *x / norm;
        }
        let log_q = self.log_norm - 0.5 * r * r;
        (-log_q).exp()
    }
}

/// Integrates an arbitrary integrand of the `n·d` momentum coordinates.
pub fn integrate_momentum<F>(integrand: F, spec: &ModelSpec, settings: &QuadratureSettings) -> Result<Integral>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    settings.check()?;
    spec.check()?;
    let nd = spec.dims();
    match settings.mode {
        QuadMode::TensorGauss => {
            if nd > TENSOR_CAP {
                return Err(Error::TensorCap { dims: nd, cap: TENSOR_CAP });
            }
            let cut = settings.cutoff_for(&spec.form_factor);
            let panels = settings.points_per_axis.div_ceil(PANEL_ORDER);
            let fine = tensor_sum(&integrand, spec, cut, panels)?;
            let coarse = tensor_sum(&integrand, spec, cut, (panels / 2).max(1))?;
            let err = if panels >= 2 { (fine - coarse).norm() } else { 0.0 };
            Ok(Integral { value: fine, err })
        }
        QuadMode::MonteCarlo => {
            let sampler = GaussianSampler::new(spec, settings);
            let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
            let radii = sampler.stratified_radii(settings.mc_samples, &mut rng);
            let mut p = vec![0.0; nd];
            let mut vals = Vec::with_capacity(radii.len());
            for r in radii {
                let w = sampler.sample(r, &mut rng, &mut p);
                let f = integrand(&p);
                if !(f.re.is_finite() && f.im.is_finite()) {
                    return Err(Error::NonFinite { point: p });
                }
                vals.push(w * f / settings.mc_samples as f64);
            }
            let value: Complex64 = vals.iter().sum();
            let var: f64 = vals.chunks_exact(2).map(|c| (c[0] - c[1]).norm_sqr()).sum();
            Ok(Integral { value, err: var.sqrt() })
        }
    }
}

fn tensor_sum<F>(integrand: &F, spec: &ModelSpec, cut: f64, panels: usize) -> Result<Complex64>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let grid = TensorGrid::new(spec, cut, panels);
    let nd = spec.dims();
    let chunk = 4096;
    let len = grid.len();
    let partials: Vec<Result<Complex64>> = (0..len.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut p = vec![0.0; nd];
            let mut acc = Complex64::new(0.0, 0.0);
            for i in c * chunk..((c + 1) * chunk).min(len) {
                let w = grid.point(i, &mut p);
                let f = integrand(&p);
                if !(f.re.is_finite() && f.im.is_finite()) {
                    return Err(Error::NonFinite { point: p });
                }
                acc += w * f;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Complex64::new(0.0, 0.0);
    for p in partials {
        total += p?;
    }
    Ok(total)
}

/// `S_{d−1} ∫₀^Λ ρ^{d−1} f(ρ) dρ` with a half-panel error estimate.
pub fn integrate_radial<F: Fn(f64) -> Complex64>(f: F, d: usize, cut: f64, panels: usize) -> Integral {
    let area = sphere_area(d);
    let run = |panels: usize| {
        let (x, w) = composite_rule(0.0, cut, panels);
        x.iter().zip(&w).map(|(&r, &wi)| wi * r.powi(d as i32 - 1) * f(r)).sum::<Complex64>() * area
    };
    let value = run(panels);
    let err = (value - run((panels / 2).max(1))).norm();
    Integral { value, err }
}

// ---------------------------------------------------------------------------
// Sigma autocorrelation
// ---------------------------------------------------------------------------

/// Stationary-phase tail `σ^{−exponent} e^{iΩσ} (c₀ + c₁/σ + c₂/σ² + …)` with
/// `c₀ = amplitude·e^{i·phase}` and `cₖ = corrections[k−1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub amplitude: f64,
    pub phase: f64,
    pub exponent: f64,
    pub frequency: f64,
    pub corrections: Vec<Complex64>,
}

impl TailModel {
    fn coefficients(&self) -> impl Iterator<Item = Complex64> + '_ {
        std::iter::once(Complex64::from_polar(self.amplitude, self.phase)).chain(self.corrections.iter().copied())
    }

    pub fn eval(&self, sigma: f64) -> Complex64 {
        let series: Complex64 = self.coefficients().enumerate().map(|(k, c)| c * sigma.powi(-(k as i32))).sum();
        series * Complex64::from_polar(sigma.powf(-self.exponent), self.frequency * sigma)
    }

    /// `∫_T^∞ σ^power · tail(σ) dσ`, two terms of repeated integration by parts per power.
    pub fn integral_from(&self, t: f64, power: i32) -> Option<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in self.coefficients().enumerate() {
            acc += c * power_tail_integral(t, self.exponent + k as f64 - power as f64, self.frequency)?;
        }
        Some(acc)
    }
}

/// `∫_T^∞ σ^{−q} e^{iΩσ} dσ`.
fn power_tail_integral(t: f64, q: f64, omega: f64) -> Option<Complex64> {
    if omega.abs() < 1e-12 {
        return (q > 1.0).then(|| Complex64::new(t.powf(1.0 - q) / (q - 1.0), 0.0));
    }
    if q <= 0.0 {
        return None;
    }
    let iw = Complex64::new(0.0, omega);
    let lead = Complex64::from_polar(t.powf(-q), omega * t);
    Some(-lead * (1.0 / iw + q / (iw * iw * t)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaAutocorrelation {
    pub sigma_grid: Vec<f64>,
    pub values: Vec<Complex64>,
    pub errors: Vec<f64>,
    pub tail: Option<TailModel>,
    #[serde(skip)]
    cum_f: Vec<Complex64>,
    #[serde(skip)]
    cum_sf: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentIntegrals {
    /// `−∫₀ᵗ F(σ) dσ`.
    pub a2: Complex64,
    /// `∫₀ᵗ σ F(σ) dσ`.
    pub b2: Complex64,
}

/// Uniform grid `0, h, 2h, …, σ_max`.
pub fn uniform_sigma_grid(sigma_max: f64, step: f64) -> Vec<f64> {
    let m = (sigma_max / step).round() as usize;
    (0..=m).map(|j| j as f64 * step).collect()
}

impl SigmaAutocorrelation {
    /// Builds from samples on a uniform grid starting at 0 and fits the tail.
    pub fn from_samples(
        sigma_grid: Vec<f64>,
        values: Vec<Complex64>,
        errors: Vec<f64>,
        tail_shape: Option<(f64, f64)>,
    ) -> Result<Self> {
        if sigma_grid.len() != values.len() || values.len() != errors.len() {
            return Err(Error::InvalidInput("sigma grid and values differ in length".into()));
        }
        if sigma_grid.len() < 2 || sigma_grid[0] != 0.0 {
            return Err(Error::InvalidInput("sigma grid must start at 0 with >= 2 points".into()));
        }
        let h = sigma_grid[1] - sigma_grid[0];
        let uniform = sigma_grid
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1.0) && w[1] > w[0]);
        if !uniform {
            return Err(Error::InvalidInput("sigma grid must be uniform and increasing".into()));
        }
        let tail = tail_shape.and_then(|(exponent, frequency)| fit_tail(&sigma_grid, &values, exponent, frequency));
        let sf: Vec<Complex64> = sigma_grid.iter().zip(&values).map(|(s, f)| s * f).collect();
        let cum_f = cumulative(&values, h);
        let cum_sf = cumulative(&sf, h);
        Ok(Self { sigma_grid, values, errors, tail, cum_f, cum_sf })
    }

    fn step(&self) -> f64 {
        self.sigma_grid[1] - self.sigma_grid[0]
    }

    pub fn sigma_max(&self) -> f64 {
        *self.sigma_grid.last().unwrap()
    }

    /// `A₂(t)` and `B₂(t)`; beyond the grid the fitted tail is used.
    pub fn time_moment_integrals(&self, t: f64) -> Result<MomentIntegrals> {
        if t < 0.0 {
            return Err(Error::InvalidInput("t must be >= 0".into()));
        }
        let smax = self.sigma_max();
        if t <= smax {
            let (f, sf) = self.partial(t);
            return Ok(MomentIntegrals { a2: -f, b2: sf });
        }
        let tail = self.tail.as_ref().ok_or_else(|| Error::InvalidInput(format!("t = {t} beyond sigma grid end {smax} and no tail")))?;
        let no_tail = || Error::Numeric("tail integral does not converge".into());
        let f = self.cum_f.last().unwrap() + tail.integral_from(smax, 0).ok_or_else(no_tail)?
            - tail.integral_from(t, 0).ok_or_else(no_tail)?;
        let sf = self.cum_sf.last().unwrap() + tail.integral_from(smax, 1).ok_or_else(no_tail)?
            - tail.integral_from(t, 1).ok_or_else(no_tail)?;
        Ok(MomentIntegrals { a2: -f, b2: sf })
    }

    /// `(−∫₀^∞ F, ∫₀^∞ σF)`, each `None` when the tail integral diverges.
    pub fn limits(&self) -> (Option<Complex64>, Option<Complex64>) {
        let Some(tail) = &self.tail else { return (None, None) };
        let smax = self.sigma_max();
        let a = tail.integral_from(smax, 0).map(|t| -(self.cum_f.last().unwrap() + t));
        let b = tail.integral_from(smax, 1).map(|t| self.cum_sf.last().unwrap() + t);
        (a, b)
    }

    fn partial(&self, t: f64) -> (Complex64, Complex64) {
        let h = self.step();
        let m = self.sigma_grid.len();
        let j = ((t / h).floor() as usize).min(m - 1);
        let frac = t / h - j as f64;
        if j == m - 1 || frac <= 1e-13 {
            return (self.cum_f[j], self.cum_sf[j]);
        }
        let sf: Vec<Complex64> = self.sigma_grid.iter().zip(&self.values).map(|(s, f)| s * f).collect();
        (
            self.cum_f[j] + partial_interval(&self.values, j, frac, h),
            self.cum_sf[j] + partial_interval(&sf, j, frac, h),
        )
    }
}

/// Number of `1/σ` powers in the tail series.
const TAIL_TERMS: usize = 3;

/// Least-squares fit of the tail series on the final decade, in the
/// relative sense `Σ |F/g − (c₀ + c₁/σ + c₂/σ²)|²` with `g = σ^{−q}e^{iΩσ}`.
fn fit_tail(grid: &[f64], values: &[Complex64], exponent: f64, frequency: f64) -> Option<TailModel> {
    let smax = *grid.last()?;
    let lo = smax / 10.0;
    let mut normal = nalgebra::SMatrix::<f64, TAIL_TERMS, TAIL_TERMS>::zeros();
    let mut rhs_re = nalgebra::SVector::<f64, TAIL_TERMS>::zeros();
    let mut rhs_im = nalgebra::SVector::<f64, TAIL_TERMS>::zeros();
    let mut count = 0;
    for (&s, &f) in grid.iter().zip(values) {
        if s >= lo && s > 0.0 {
            let y = f / Complex64::from_polar(s.powf(-exponent), frequency * s);
            let basis: [f64; TAIL_TERMS] = std::array::from_fn(|k| (smax / s).powi(k as i32));
            for a in 0..TAIL_TERMS {
                for b in 0..TAIL_TERMS {
                    normal[(a, b)] += basis[a] * basis[b];
                }
                rhs_re[a] += basis[a] * y.re;
                rhs_im[a] += basis[a] * y.im;
            }
            count += 1;
        }
    }
    if count < 4 * TAIL_TERMS {
        return None;
    }
    let lu = normal.lu();
    let re = lu.solve(&rhs_re)?;
    let im = lu.solve(&rhs_im)?;
    // Basis was scaled by σ_max^k for conditioning.
    let c: Vec<Complex64> = (0..TAIL_TERMS).map(|k| Complex64::new(re[k], im[k]) * smax.powi(k as i32)).collect();
    if c.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return None;
    }
    Some(TailModel {
        amplitude: c[0].norm(),
        phase: c[0].arg(),
        exponent,
        frequency,
        corrections: c[1..].to_vec(),
    })
}

/// Running integral with 4th-order (cubic) interval rules.
fn cumulative(f: &[Complex64], h: f64) -> Vec<Complex64> {
    let m = f.len();
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m - 1 {
        let piece = if m < 4 {
            0.5 * h * (f[j] + f[j + 1])
        } else if j == 0 {
            h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if j == m - 2 {
            h / 24.0 * (f[j - 2] - 5.0 * f[j - 1] + 19.0 * f[j] + 9.0 * f[j + 1])
        } else {
            h / 24.0 * (-f[j - 1] + 13.0 * f[j] + 13.0 * f[j + 1] - f[j + 2])
        };
        out[j + 1] = out[j] + piece;
    }
    out
}

/// `∫_{σ_j}^{σ_j + frac·h}` of the cubic through four neighbouring samples.
fn partial_interval(f: &[Complex64], j: usize, frac: f64, h: f64) -> Complex64 {
    let m = f.len();
    if m < 4 {
        let fa = f[j];
        let fb = f[j + 1];
        return h * frac * (fa + 0.5 * frac * (fb - fa));
    }
    let start = j.saturating_sub(1).min(m - 4);
    let xs: Vec<f64> = (0..4).map(|k| (start + k) as f64 - j as f64).collect();
    let (gx, gw) = gauss_legendre(3);
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, w) in gx.iter().zip(&gw) {
        let s = 0.5 * frac * (x + 1.0);
        let mut val = Complex64::new(0.0, 0.0);
        for a in 0..4 {
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    l *= (s - xs[b]) / (xs[a] - xs[b]);
                }
            }
            val += l * f[start + a];
        }
        acc += 0.5 * frac * w * val;
    }
    acc * h
}

/// Leading tail shape `(dn/2, −n ω(0))` for dispersions with a smooth
/// minimum at the origin; `(0, −n ω₀)` for a flat law.
pub fn tail_shape(spec: &ModelSpec) -> Option<(f64, f64)> {
    let n = spec.n as f64;
    match spec.dispersion {
        DispersionLaw::Relativistic { .. } | DispersionLaw::NonRelShifted { .. } => {
            Some((spec.dims() as f64 / 2.0, -n * spec.dispersion.radial(0.0)))
        }
        DispersionLaw::Constant { omega0 } => Some((0.0, -n * omega0)),
        _ => None,
    }
}

/// `F(σ) = ∫|v|² e^{−iσE} dp` on the given grid.
pub fn autocorrelation_f(
    spec: &ModelSpec,
    sigma_grid: &[f64],
    settings: &QuadratureSettings,
) -> Result<SigmaAutocorrelation> {
    settings.check()?;
    spec.check()?;
    let cut = settings.cutoff_for(&spec.form_factor);
    let base = settings.points_per_axis.div_ceil(PANEL_ORDER);
    let separable = settings.mode == QuadMode::TensorGauss && radial_separable(spec);
    let points: Vec<Result<Integral>> = sigma_grid
        .par_iter()
        .map(|&sigma| {
            if separable {
                let panels = base.max(oscillation_panels(&spec.dispersion, cut, sigma.abs()));
                Ok(separable_f(spec, sigma, cut, panels))
            } else {
                integrate_momentum(
                    |p| {
                        let v = spec.form_factor_flat(p);
                        Complex64::from_polar(v * v, -sigma * spec.energy_flat(p))
                    },
                    spec,
                    settings,
                )
            }
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut errors = Vec::with_capacity(points.len());
    for p in points {
        let p = p?;
        values.push(p.value);
        errors.push(p.err);
    }
    SigmaAutocorrelation::from_samples(sigma_grid.to_vec(), values, errors, tail_shape(spec))
}

/// `a² f₁(σ)ⁿ` for separable isotropic Gaussians, one radial integral otherwise.
fn separable_f(spec: &ModelSpec, sigma: f64, cut: f64, panels: usize) -> Integral {
    let a = spec.form_factor.amplitude();
    let disp = &spec.dispersion;
    let leg = |r: f64| {
        let v2 = match spec.form_factor {
            FormFactor::CompactBump { .. } => {
                let v = spec.form_factor.eval_flat(&radial_point(r, spec.d), spec.d) / a;
                v * v
            }
            _ => spec.form_factor.leg_mod_sq_radial(r).unwrap_or(0.0),
        };
        Complex64::from_polar(v2, -sigma * disp.radial(r))
    };
    let f1 = integrate_radial(leg, spec.d, cut, panels);
    let n = spec.n as i32;
    let value = a * a * f1.value.powi(n);
    let err = a * a * n as f64 * f1.value.norm().powi(n - 1) * f1.err;
    Integral { value, err }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;
    use approx::assert_relative_eq;

    fn gaussian_spec(d: usize, n: usize, disp: DispersionLaw) -> ModelSpec {
        ModelSpec {
            family: Family::PairCreation,
            d,
            n,
            dispersion: disp,
            form_factor: FormFactor::IsotropicGaussian { a: 1.0, w: 1.0 },
            lambda: 1.0,
        }
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let m30: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert_relative_eq!(m30, 2.0 / 31.0, epsilon = 1e-14);
        let (x5, w5) = gauss_legendre(5);
        let m8: f64 = x5.iter().zip(&w5).map(|(x, w)| w * x.powi(8)).sum();
        assert_relative_eq!(m8, 2.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(1), 2.0, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(2), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_mass_is_sqrt_pi() {
        let spec = gaussian_spec(1, 1, DispersionLaw::Relativistic { m: 1.0 });
        let s = QuadratureSettings::default();
        let r = integrate_momentum(
            |p| {
                let v = spec.form_factor_flat(p);
                Complex64::new(v * v, 0.0)
            },
            &spec,
            &s,
        )
        .unwrap();
        assert_relative_eq!(r.value.re, PI.sqrt(), epsilon = 1e-12);
        assert!(r.err < 1e-10);
    }

    #[test]
    fn zero_integrand() {
        let spec = gaussian_spec(2, 2, DispersionLaw::Relativistic { m: 1.0 });
        let s = QuadratureSettings { points_per_axis: 16, ..Default::default() };
        let r = integrate_momentum(|_| Complex64::new(0.0, 0.0), &spec, &s).unwrap();
        assert_eq!(r.value, Complex64::new(0.0, 0.0));
        assert_eq!(r.err, 0.0);
    }

    #[test]
    fn tensor_cap_and_non_finite() {
        let spec = gaussian_spec(7, 1, DispersionLaw::Relativistic { m: 1.0 });
        let s = QuadratureSettings { points_per_axis: 16, ..Default::default() };
        assert!(matches!(
            integrate_momentum(|_| Complex64::new(1.0, 0.0), &spec, &s),
            Err(Error::TensorCap { dims: 7, cap: 6 })
        ));
        let spec = gaussian_spec(1, 1, DispersionLaw::Relativistic { m: 1.0 });
        let r = integrate_momentum(|p| Complex64::new(1.0 / p[0].abs().min(0.0), 0.0), &spec, &s);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn monte_carlo_is_deterministic_and_accurate_on_radial_integrands() {
        let spec = gaussian_spec(3, 2, DispersionLaw::Relativistic { m: 1.0 });
        let s = QuadratureSettings { mode: QuadMode::MonteCarlo, seed: 7, ..Default::default() };
        let f = |p: &[f64]| {
            let v = spec.form_factor_flat(p);
            Complex64::new(v * v, 0.0)
        };
        let a = integrate_momentum(f, &spec, &s).unwrap();
        let b = integrate_momentum(f, &spec, &s).unwrap();
        assert_eq!(a.value, b.value);
        assert_relative_eq!(a.value.re, PI.powi(3), max_relative = 1e-6);
    }

    #[test]
    fn tail_integral_matches_dense_quadrature() {
        let tail = TailModel { amplitude: 2.0, phase: 0.3, exponent: 1.5, frequency: 1.0, corrections: vec![Complex64::new(0.5, -1.0)] };
        let t0 = 200.0;
        // Reference: long composite Gauss plus the (tiny) analytic remainder.
        let (x, w) = composite_rule(t0, 20_000.0, 40_000);
        for power in [0, 1] {
            let dense: Complex64 = x.iter().zip(&w).map(|(&s, &wi)| wi * s.powi(power) * tail.eval(s)).sum();
            let reference = dense + tail.integral_from(20_000.0, power).unwrap();
            let approx = tail.integral_from(t0, power).unwrap();
            let rel = (approx - reference).norm() / reference.norm();
            assert!(rel < 1e-4, "power {power}: rel {rel}");
        }
    }

    #[test]
    fn cumulative_rule_integrates_cubics_exactly() {
        let h = 0.1;
        let f: Vec<Complex64> = (0..20).map(|j| Complex64::new((j as f64 * h).powi(3), 0.0)).collect();
        let c = cumulative(&f, h);
        let t = 19.0 * h;
        assert_relative_eq!(c[19].re, t.powi(4) / 4.0, epsilon = 1e-12);
        let p = partial_interval(&f, 5, 0.37, h);
        let a = 5.0 * h;
        let b = a + 0.37 * h;
        assert_relative_eq!(p.re, (b.powi(4) - a.powi(4)) / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_dispersion_moments() {
        // F(σ) = e^{−2iσ} with ‖v‖² = 1: A₂(t) = (e^{−2it} − 1)/(2i).
        let grid = uniform_sigma_grid(10.0, 0.01);
        let vals: Vec<Complex64> = grid.iter().map(|&s| Complex64::from_polar(1.0, -2.0 * s)).collect();
        let errs = vec![0.0; grid.len()];
        let f = SigmaAutocorrelation::from_samples(grid, vals, errs, None).unwrap();
        let m0 = f.time_moment_integrals(0.0).unwrap();
        assert_eq!(m0.a2, Complex64::new(0.0, 0.0));
        assert_eq!(m0.b2, Complex64::new(0.0, 0.0));
        for t in [0.5, 3.3337, 7.0] {
            let m = f.time_moment_integrals(t).unwrap();
            let i = Complex64::i();
            let expect = ((-2.0 * i * t).exp() - 1.0) / (2.0 * i);
            assert!((m.a2 - expect).norm() < 1e-8, "t = {t}: {} vs {expect}", m.a2);
        }
        assert!(f.time_moment_integrals(11.0).is_err());
    }
}
