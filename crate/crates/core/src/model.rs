//! Hamiltonian instances: dispersion laws, form factors, total free energy
//! and the decay/no-decay classification.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Single-particle energy `ω(k)` as a function of `|k|`.
///
/// Every supported law is radial, which the quadrature and the stationary
/// phase code rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionLaw {
    /// `sqrt(k² + m²)`.
    Relativistic { m: f64 },
    /// `k²/2 − ω₀`; negative near the origin, hence decay.
    NonRelShifted { omega0: f64 },
    /// `sqrt(b k⁴ + v k²)` with a constant `v`.
    Bogoliubov { b: f64, v: f64 },
    /// `|k²/(2m) − μ|`.
    FermiQuasi { m: f64, mu: f64 },
    /// `ω₀` everywhere.
    Constant { omega0: f64 },
}

impl DispersionLaw {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("dispersion: {what}")));
        match *self {
            Self::Relativistic { m } if !(m > 0.0) => bad("relativistic mass must be > 0"),
            Self::NonRelShifted { omega0 } if !(omega0 >= 0.0) => bad("omega0 must be >= 0"),
            Self::Bogoliubov { b, v } if !(b > 0.0 && v >= 0.0) => bad("bogoliubov needs b > 0, v >= 0"),
            Self::FermiQuasi { m, mu } if !(m > 0.0 && mu > 0.0) => bad("fermi quasiparticle needs m > 0, mu > 0"),
            Self::Constant { omega0 } if !(omega0 > 0.0) => bad("constant omega0 must be > 0"),
            _ => Ok(()),
        }
    }

    /// `ω` at radius `rho = |k|`.
    pub fn radial(&self, rho: f64) -> f64 {
        match *self {
            Self::Relativistic { m } => rho.hypot(m),
            Self::NonRelShifted { omega0 } => 0.5 * rho * rho - omega0,
            Self::Bogoliubov { b, v } => (b * rho.powi(4) + v * rho * rho).sqrt(),
            Self::FermiQuasi { m, mu } => (rho * rho / (2.0 * m) - mu).abs(),
            Self::Constant { omega0 } => omega0,
        }
    }

    /// First radial derivative `dω/dρ`.
    pub fn radial_d1(&self, rho: f64) -> f64 {
        match *self {
            Self::Relativistic { m } => rho / rho.hypot(m),
            Self::NonRelShifted { .. } => rho,
            Self::Bogoliubov { b, v } => {
                let w = self.radial(rho);
                if w < 1e-300 {
                    v.sqrt()
                } else {
                    (2.0 * b * rho.powi(3) + v * rho) / w
                }
            }
            Self::FermiQuasi { m, mu } => (rho * rho / (2.0 * m) - mu).signum() * rho / m,
            Self::Constant { .. } => 0.0,
        }
    }

    /// Second radial derivative `d²ω/dρ²`.
    pub fn radial_d2(&self, rho: f64) -> f64 {
        match *self {
            Self::Relativistic { m } => m * m / rho.hypot(m).powi(3),
            Self::NonRelShifted { .. } => 1.0,
            Self::Bogoliubov { b, v } => {
                let w = self.radial(rho);
                if w < 1e-300 {
                    0.0
                } else {
                    let d1 = self.radial_d1(rho);
                    (6.0 * b * rho * rho + v - d1 * d1) / w
                }
            }
            Self::FermiQuasi { m, mu } => (rho * rho / (2.0 * m) - mu).signum() / m,
            Self::Constant { .. } => 0.0,
        }
    }

    /// Whether `ω` is smooth at the origin (no cusp), so `∇ω(0) = 0`.
    pub fn smooth_at_origin(&self) -> bool {
        match *self {
            Self::Bogoliubov { v, .. } => v == 0.0,
            _ => true,
        }
    }

    pub fn eval(&self, k: &[f64]) -> f64 {
        self.radial(norm(k))
    }

    pub fn gradient(&self, k: &[f64]) -> Vec<f64> {
        let rho = norm(k);
        if rho == 0.0 {
            let mut g = vec![0.0; k.len()];
            if !self.smooth_at_origin() && !g.is_empty() {
                g[0] = self.radial_d1(0.0);
            }
            return g;
        }
        let s = self.radial_d1(rho) / rho;
        k.iter().map(|x| s * x).collect()
    }

    /// Hessian `d2 k̂k̂ᵀ + (d1/ρ)(I − k̂k̂ᵀ)`, row-major `d × d`.
    pub fn hessian(&self, k: &[f64]) -> Vec<f64> {
        let d = k.len();
        let rho = norm(k);
        let mut h = vec![0.0; d * d];
        if rho < 1e-12 {
            let c = self.radial_d2(0.0);
            for i in 0..d {
                h[i * d + i] = c;
            }
            return h;
        }
        let d1 = self.radial_d1(rho) / rho;
        let d2 = self.radial_d2(rho);
        for i in 0..d {
            for j in 0..d {
                let kk = k[i] * k[j] / (rho * rho);
                let id = if i == j { 1.0 } else { 0.0 };
                h[i * d + j] = d2 * kk + d1 * (id - kk);
            }
        }
        h
    }

    /// `inf ω(ρ)` over `0 ≤ ρ ≤ radius`, by the closed form for each kind.
    pub fn inf_on_ball(&self, radius: f64) -> f64 {
        match *self {
            Self::Relativistic { m } => m,
            Self::NonRelShifted { omega0 } => -omega0,
            Self::Bogoliubov { .. } => 0.0,
            Self::FermiQuasi { m, mu } => {
                let rho_f = (2.0 * m * mu).sqrt();
                if rho_f <= radius {
                    0.0
                } else {
                    self.radial(radius)
                }
            }
            Self::Constant { omega0 } => omega0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormFactor {
    /// `a · exp(−Σ|pᵢ|²/(2w²))`.
    IsotropicGaussian { a: f64, w: f64 },
    /// `a · exp(−Σ|pᵢ − c|²/(2w²))`, the same center `c ∈ R^d` for every leg.
    ShiftedGaussian { a: f64, w: f64, c: Vec<f64> },
    /// `a · exp(1 − 1/(1 − s))` for `s = Σ|pᵢ|²/r² < 1`, zero outside.
    CompactBump { a: f64, r: f64 },
}

impl FormFactor {
    pub fn check(&self, d: usize) -> Result<()> {
        match self {
            Self::IsotropicGaussian { w, .. } if !(*w > 0.0) => {
                Err(Error::InvalidInput("form factor width must be > 0".into()))
            }
            Self::ShiftedGaussian { w, c, .. } => {
                if !(*w > 0.0) {
                    Err(Error::InvalidInput("form factor width must be > 0".into()))
                } else if c.len() != d {
                    Err(Error::DimensionMismatch { expected: d, got: c.len() })
                } else {
                    Ok(())
                }
            }
            Self::CompactBump { r, .. } if !(*r > 0.0) => {
                Err(Error::InvalidInput("bump radius must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::IsotropicGaussian { a, .. } | Self::ShiftedGaussian { a, .. } | Self::CompactBump { a, .. } => a,
        }
    }

    /// Evaluates on a flat slice of `n·d` coordinates (legs laid out consecutively).
    pub fn eval_flat(&self, p: &[f64], d: usize) -> f64 {
        match self {
            Self::IsotropicGaussian { a, w } => a * (-sum_sq(p) / (2.0 * w * w)).exp(),
            Self::ShiftedGaussian { a, w, c } => {
                let s: f64 = p
                    .chunks(d)
                    .map(|leg| leg.iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
                    .sum();
                a * (-s / (2.0 * w * w)).exp()
            }
            Self::CompactBump { a, r } => {
                let s = sum_sq(p) / (r * r);
                if s < 1.0 {
                    a * (1.0 - 1.0 / (1.0 - s)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `|v|²` as a function of the radius of a single leg, for isotropic kinds
    /// with one leg (or the per-leg factor of a separable Gaussian).
    pub(crate) fn leg_mod_sq_radial(&self, rho: f64) -> Option<f64> {
        match *self {
            Self::IsotropicGaussian { w, .. } => Some((-rho * rho / (w * w)).exp()),
            _ => None,
        }
    }

    /// Radius beyond which `|v|` (per leg, or jointly for the bump) is below `tol`
    /// relative to its peak: `w·sqrt(2 ln(1/tol))` for Gaussians.
    pub fn cutoff(&self, tol: f64) -> f64 {
        let tol = tol.clamp(1e-300, 0.5);
        match self {
            Self::IsotropicGaussian { w, .. } => w * (2.0 * (1.0 / tol).ln()).sqrt(),
            Self::ShiftedGaussian { w, c, .. } => w * (2.0 * (1.0 / tol).ln()).sqrt() + norm(c),
            Self::CompactBump { r, .. } => *r,
        }
    }

    /// Center of the form factor mass per coordinate of one leg.
    pub(crate) fn center(&self, d: usize) -> Vec<f64> {
        match self {
            Self::ShiftedGaussian { c, .. } => c.clone(),
            _ => vec![0.0; d],
        }
    }

    pub(crate) fn is_bounded_support(&self) -> bool {
        matches!(self, Self::CompactBump { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `∫(v a*(p₁)…a*(pₙ) + h.c.)`.
    PairCreation,
    /// `∫(v̄ a + v a*)`, the explicitly solvable model.
    LinearSolvable,
    /// `∫ v̂(p|q₁,q₂) δ(p − q₁ − q₂) a*(p) a(q₁) a(q₂) + h.c.`
    TranslationInvariantTrilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    pub dispersion: DispersionLaw,
    pub form_factor: FormFactor,
    pub lambda: f64,
}

impl ModelSpec {
    pub fn check(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::InvalidInput("d and n must be positive".into()));
        }
        match self.family {
            Family::LinearSolvable if self.n != 1 => {
                return Err(Error::InvalidInput("linear_solvable requires n = 1".into()))
            }
            Family::TranslationInvariantTrilinear if self.n != 2 => {
                return Err(Error::InvalidInput(
                    "translation_invariant_trilinear kernel takes the two annihilated momenta (n = 2)".into(),
                ))
            }
            _ => {}
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidInput("lambda must be finite".into()));
        }
        self.dispersion.check()?;
        self.form_factor.check(self.d)
    }

    pub fn dims(&self) -> usize {
        self.n * self.d
    }

    /// `E(p₁,…,pₙ) = Σ ω(pᵢ)` on a flat coordinate slice.
    pub fn energy_flat(&self, p: &[f64]) -> f64 {
        p.chunks(self.d).map(|leg| self.dispersion.eval(leg)).sum()
    }

    pub fn energy_total(&self, momenta: &[Vec<f64>]) -> Result<f64> {
        self.check_momenta(momenta)?;
        Ok(momenta.iter().map(|k| self.dispersion.eval(k)).sum())
    }

    pub fn eval_form_factor(&self, momenta: &[Vec<f64>]) -> Result<Complex64> {
        self.check_momenta(momenta)?;
        let flat: Vec<f64> = momenta.iter().flatten().copied().collect();
        Ok(Complex64::new(self.form_factor.eval_flat(&flat, self.d), 0.0))
    }

    pub fn form_factor_flat(&self, p: &[f64]) -> f64 {
        self.form_factor.eval_flat(p, self.d)
    }

    fn check_momenta(&self, momenta: &[Vec<f64>]) -> Result<()> {
        if momenta.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: momenta.len() });
        }
        if let Some(bad) = momenta.iter().find(|k| k.len() != self.d) {
            return Err(Error::DimensionMismatch { expected: self.d, got: bad.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub decay_flag: bool,
    pub inf_energy: f64,
    pub dn_product: usize,
    pub warnings: Vec<String>,
}

/// Classifies the model as decaying when the infimum of `E` over the form
/// factor support is `≤ 0`.
pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut warnings = Vec::new();
    if let Err(e) = spec.check() {
        warnings.push(format!("model check failed: {e}"));
    }
    let inf_energy = if spec.form_factor.is_bounded_support() {
        let r = spec.form_factor.cutoff(1e-12);
        constrained_min(&spec.dispersion, spec.n, r)
    } else {
        spec.n as f64 * spec.dispersion.inf_on_ball(f64::INFINITY)
    };
    let decay_flag = inf_energy <= 1e-10;
    let dn_product = spec.d * spec.n;
    if decay_flag && dn_product < 3 {
        warnings.push(format!(
            "decay with d·n = {dn_product} < 3: the large-time limits of A2(t), B2(t) are not guaranteed"
        ));
    }
    ValidationReport { decay_flag, inf_energy, dn_product, warnings }
}

/// Minimizes `Σ ω(ρᵢ)` subject to `Σ ρᵢ² ≤ r²` by a seed grid followed by
/// coordinate-wise golden-section descent.
fn constrained_min(disp: &DispersionLaw, n: usize, r: f64) -> f64 {
    let grid: usize = match n {
        1 => 257,
        2 => 65,
        3 => 17,
        _ => 7,
    };
    let n_grid = n.min(4);
    let mut best = vec![0.0; n];
    let mut best_e = n as f64 * disp.radial(0.0);
    let mut idx = vec![0usize; n_grid];
    let total = grid.pow(n_grid as u32);
    for _ in 0..total {
        let mut rhos: Vec<f64> = idx.iter().map(|&i| r * i as f64 / (grid - 1) as f64).collect();
        rhos.resize(n, 0.0);
        if rhos.iter().map(|x| x * x).sum::<f64>() <= r * r {
            let e: f64 = rhos.iter().map(|&x| disp.radial(x)).sum();
            if e < best_e {
                best_e = e;
                best = rhos;
            }
        }
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < grid {
                break;
            }
            *slot = 0;
        }
    }
    for _sweep in 0..20 {
        for i in 0..n {
            let others: f64 = best.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x * x).sum();
            let hi = (r * r - others).max(0.0).sqrt();
            let f = |x: f64| disp.radial(x);
            let x = golden_min(f, 0.0, hi);
            if f(x) < disp.radial(best[i]) {
                best[i] = x;
            }
        }
    }
    best.iter().map(|&x| disp.radial(x)).sum::<f64>().min(best_e)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const G: f64 = 0.618_033_988_749_894_8;
    let mut c = b - G * (b - a);
    let mut d = a + G * (b - a);
    for _ in 0..100 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - G * (b - a);
        d = a + G * (b - a);
    }
    0.5 * (a + b)
}

pub(crate) fn norm(k: &[f64]) -> f64 {
    sum_sq(k).sqrt()
}

fn sum_sq(k: &[f64]) -> f64 {
    k.iter().map(|x| x * x).sum()
}
