//! Job dispatch. Each job computes all of its artifacts in memory; they are
//! written together with the manifest once the computation has succeeded.

use std::path::{Path, PathBuf};

use abc_core::abc2::{self, abc_second_order, abc_second_order_decay, a2_b2_ieps, stochastic_limit_profile};
use abc_core::asympt::{find_critical_points, fit_power_law, stationary_phase_c};
use abc_core::baker::{
    autocorrelation, baker_floor, coherent_state, compare_decay, fit_log_slope, unitarity_defect, BakerMap, DecaySeries,
};
use abc_core::diagrams::{recursion_residual, solve_recursion, OneParticle};
use abc_core::export::{abc_table, autocorr_table, complex_table, sigma_table, to_json, Table};
use abc_core::model::validate_model;
use abc_core::oracle::{self, abc_residual, fock_evolve, solvable_model_series, FockDiscretization};
use abc_core::{Complex64, Error};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{JobConfig, JobKind, DEFAULT_N_OCC};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest baker dimension for which the dense unitarity check is run.
const DENSE_UNITARITY_MAX: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("job {job}: {source}")]
    Numeric { job: JobKind, source: Error },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("writing {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl JobError {
    /// 2 for bad inputs, 3 for numeric failures, 1 for filesystem trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            JobError::Numeric { source: Error::Io(_), .. } | JobError::Io { .. } => 1,
            JobError::Numeric { .. } => 3,
            JobError::Input { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

struct Out {
    job: JobKind,
    files: Vec<Artifact>,
}

impl Out {
    fn new(job: JobKind) -> Self {
        Self { job, files: Vec::new() }
    }

    fn fail(&self, source: Error) -> JobError {
        JobError::Numeric { job: self.job, source }
    }

    fn text(&mut self, name: impl Into<String>, contents: String) {
        self.files.push(Artifact { name: name.into(), contents });
    }

    fn csv(&mut self, name: &str, table: &Table) -> Result<(), JobError> {
        let s = table.to_csv().map_err(|e| self.fail(e))?;
        self.text(name, s);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), JobError> {
        let s = to_json(value).map_err(|e| self.fail(e))?;
        self.text(name, s);
        Ok(())
    }
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// Runs a validated job; relative input paths resolve against `base_dir`.
pub fn run_job(cfg: &JobConfig, base_dir: &Path) -> Result<Vec<Artifact>, JobError> {
    let mut out = Out::new(cfg.job);
    let r = &mut out;
    match cfg.job {
        JobKind::Abc2 => abc2_job(cfg, r)?,
        JobKind::Abc2Decay => decay_job(cfg, r)?,
        JobKind::Ieps => ieps_job(cfg, r)?,
        JobKind::Stochastic => stochastic_job(cfg, r)?,
        JobKind::Solvable => solvable_job(cfg, r)?,
        JobKind::FockOracle => fock_job(cfg, r)?,
        JobKind::Asymptotics => asymptotics_job(cfg, r)?,
        JobKind::Recursion => recursion_job(cfg, r)?,
        JobKind::OneParticle => one_particle_job(cfg, r)?,
        JobKind::Baker => baker_job(cfg, r)?,
        JobKind::Compare => compare_job(cfg, base_dir, r)?,
    }
    let names: Vec<&str> = out.files.iter().map(|a| a.name.as_str()).collect();
    let manifest = json!({
        "tool": TOOL,
        "version": VERSION,
        "job": cfg.job,
        "seed": cfg.seed(),
        "artifacts": names,
        "config": cfg,
    });
    out.json("manifest.json", &manifest)?;
    Ok(out.files)
}

/// Writes every artifact into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, files: &[Artifact]) -> Result<(), JobError> {
    std::fs::create_dir_all(dir).map_err(|source| JobError::Io { path: dir.to_path_buf(), source })?;
    for a in files {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).map_err(|source| JobError::Io { path, source })?;
    }
    Ok(())
}

fn abc2_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let abc = abc_second_order(cfg.model(), &cfg.times(), &cfg.quadrature()).map_err(|e| out.fail(e))?;
    let alpha_fit = match cfg.fit_window {
        Some(w) => Some(fit_power_law(&abc.t_grid, &abc.c, w).map_err(|e| out.fail(e))?.alpha),
        None => None,
    };
    out.csv("abc.csv", &abc_table(&abc))?;
    let c_err = abc.err.c.iter().copied().fold(0.0, f64::max);
    let summary = json!({
        "A": pair(abc.a),
        "B": pair(abc.b),
        "alpha_fit": alpha_fit,
        "err": {"A": abc.err.a, "B": abc.err.b, "C_max": c_err},
    });
    out.json("summary.json", &summary)
}

fn decay_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let dc = abc_second_order_decay(cfg.model(), &cfg.times(), &cfg.quadrature()).map_err(|e| out.fail(e))?;
    let mut moments = Table::new(&["t", "re_A2", "im_A2", "re_B2", "im_B2"]);
    for ((&t, a), b) in dc.t_list.iter().zip(&dc.a2_t).zip(&dc.b2_t) {
        moments.push(vec![t, a.re, a.im, b.re, b.im]);
    }
    out.csv("moments.csv", &moments)?;
    out.csv("sigma.csv", &sigma_table(&dc.sigma))?;
    let summary = json!({
        "A2_limit": dc.a2_limit.map(pair),
        "B2_limit": dc.b2_limit.map(pair),
        "A2_residual_last": dc.a2_residual.last(),
        "tail": dc.sigma.tail,
        "warnings": dc.warnings,
    });
    out.json("summary.json", &summary)
}

fn ieps_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let eps = cfg.eps_schedule.clone().unwrap_or_else(abc2::default_eps_schedule);
    let want_b2 = cfg.want_b2.unwrap_or(false);
    let res = a2_b2_ieps(cfg.model(), &eps, want_b2, &cfg.quadrature()).map_err(|e| out.fail(e))?;
    let report = json!({
        "A2": pair(res.a2),
        "B2": res.b2.map(pair),
        "decay": validate_model(cfg.model()).decay_flag,
        "extrapolation": res.report,
    });
    out.json("ieps.json", &report)
}

fn stochastic_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let lambdas = cfg.lambdas.as_deref().unwrap_or_default();
    let rows = stochastic_limit_profile(cfg.model(), lambdas, &cfg.times(), &cfg.quadrature()).map_err(|e| out.fail(e))?;
    let mut table = Table::new(&["lambda", "deviation", "deviation_over_lambda2"]);
    for r in rows {
        table.push(vec![r.lambda, r.deviation, r.deviation_over_lambda2]);
    }
    out.csv("stochastic.csv", &table)
}

fn solvable_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let spec = cfg.model();
    let ts = cfg.times();
    let settings = cfg.quadrature();
    let report = validate_model(spec);
    let (series, a, b) = if report.decay_flag {
        let t_max = ts.iter().fold(0.0f64, |m, t| m.max(*t));
        let f = oracle::decay_autocorrelation(spec, t_max, &settings).map_err(|e| out.fail(e))?;
        let series = oracle::solvable_decay_from_f(spec.lambda, &f, &ts).map_err(|e| out.fail(e))?;
        let dc = abc2::decay_from_f(spec, f, &ts, report.warnings).map_err(|e| out.fail(e))?;
        let (Some(a2), Some(b2)) = (dc.a2_limit, dc.b2_limit) else {
            return Err(out.fail(Error::Numeric("A2, B2 limits unavailable".into())));
        };
        let l2 = spec.lambda * spec.lambda;
        (series, l2 * a2, l2 * b2)
    } else {
        let series = solvable_model_series(spec, &ts, &settings).map_err(|e| out.fail(e))?;
        let abc = abc_second_order(spec, &[0.0], &settings).map_err(|e| out.fail(e))?;
        (series, abc.a, abc.b)
    };
    let c = abc_residual(&series, &ts, a, b).map_err(|e| out.fail(e))?;
    out.csv("solvable.csv", &complex_table(&ts, &series, "U"))?;
    let mut table = Table::new(&["t", "re_C", "im_C"]);
    for (&t, z) in ts.iter().zip(&c) {
        table.push(vec![t, z.re, z.im]);
    }
    out.csv("c.csv", &table)
}

fn fock_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let spec = cfg.model();
    let ts = cfg.times();
    let settings = cfg.quadrature();
    let n_occ = cfg.n_occ.unwrap_or(DEFAULT_N_OCC);
    let t_max = ts.iter().fold(0.0f64, |m, t| m.max(*t));
    let disc = FockDiscretization::radial_for(spec, &settings, t_max, n_occ).map_err(|e| out.fail(e))?;
    let fock: Vec<Complex64> =
        ts.iter().map(|&t| fock_evolve(&disc, spec, t, spec.lambda)).collect::<Result<_, _>>().map_err(|e| out.fail(e))?;
    let exact = solvable_model_series(spec, &ts, &settings).map_err(|e| out.fail(e))?;
    let max_dev = fock.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    out.csv("fock.csv", &complex_table(&ts, &fock, "U"))?;
    let summary = json!({
        "modes": disc.mode_momenta.len(),
        "n_occ": n_occ,
        "max_abs_deviation_from_closed_form": max_dev,
    });
    out.json("summary.json", &summary)
}

fn asymptotics_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let spec = cfg.model();
    let settings = cfg.quadrature();
    let abc = abc_second_order(spec, &cfg.times(), &settings).map_err(|e| out.fail(e))?;
    let window = cfg.fit_window.expect("asymptotics requires fit_window");
    let fit = fit_power_law(&abc.t_grid, &abc.c, window).map_err(|e| out.fail(e))?;
    let mut table = Table::new(&["t", "re_C", "im_C", "re_C_sp", "im_C_sp"]);
    for (&t, c) in abc.t_grid.iter().zip(&abc.c) {
        let sp = stationary_phase_c(spec, t).map_err(|e| out.fail(e))?;
        table.push(vec![t, c.re, c.im, sp.re, sp.im]);
    }
    out.csv("asymptotics.csv", &table)?;
    let report = json!({
        "alpha": fit.alpha,
        "alpha_stderr": fit.alpha_stderr,
        "f_bound": fit.f_bound,
        "window": fit.window,
        "residual": fit.residual,
    });
    out.json("fit.json", &report)?;
    let half_width = settings.cutoff_for(&spec.form_factor);
    let points = find_critical_points(&spec.dispersion, spec.d, half_width, 9).map_err(|e| out.fail(e))?;
    out.json("critical_points.json", &points)
}

fn recursion_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let max_order = cfg.max_order.expect("recursion requires max_order");
    let rec = solve_recursion(max_order).map_err(|e| out.fail(e))?;
    for k in 1..=max_order {
        out.text(format!("q{k}.txt"), rec.q[k].serialize());
        out.text(format!("m{k}.txt"), rec.m[k].serialize());
    }
    let residuals = recursion_residual(&rec).map_err(|e| out.fail(e))?;
    let rows: Vec<Value> = residuals
        .iter()
        .map(|r| {
            json!({
                "order": r.order,
                "intertwining_terms": r.intertwining.len(),
                "energy_shift_terms": r.energy_shift.len(),
            })
        })
        .collect();
    let report = json!({
        "empty": residuals.iter().all(|r| r.is_empty()),
        "orders": rows,
    });
    out.json("residual.json", &report)
}

fn one_particle_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let spec = cfg.model();
    let p = cfg.p.as_deref().unwrap_or_default();
    let ts = cfg.times();
    let t_max = ts.iter().fold(0.0f64, |m, t| m.max(*t));
    let one = OneParticle::new(spec, p, t_max, &cfg.quadrature()).map_err(|e| out.fail(e))?;
    let u: Vec<Complex64> = ts.iter().map(|&t| one.amplitude(t)).collect();
    let c: Vec<Complex64> = ts.iter().map(|&t| one.c2(t)).collect();
    let mut table = Table::new(&["t", "re_U", "im_U", "abs_U", "re_C", "im_C"]);
    for ((&t, u), c) in ts.iter().zip(&u).zip(&c) {
        table.push(vec![t, u.re, u.im, u.norm(), c.re, c.im]);
    }
    out.csv("one_particle.csv", &table)?;
    let alpha_fit = match cfg.fit_window {
        Some(w) => Some(fit_power_law(&ts, &c, w).map_err(|e| out.fail(e))?.alpha),
        None => None,
    };
    let summary = json!({
        "p": one.p,
        "m2": pair(one.m2.value),
        "m2_err": one.m2.err,
        "B2": one.b2,
        "Z2": one.z2(),
        "alpha_fit": alpha_fit,
    });
    out.json("summary.json", &summary)
}

fn baker_job(cfg: &JobConfig, out: &mut Out) -> Result<(), JobError> {
    let b = cfg.baker.expect("baker job requires baker parameters");
    let map = BakerMap::new(b.n, b.convention).map_err(|e| out.fail(e))?;
    let psi = coherent_state(b.n, b.q, b.p, b.convention);
    let mut series = autocorrelation(&map, &psi, b.t_max).map_err(|e| out.fail(e))?;
    if let Some(w) = cfg.fit_window {
        series.fit = fit_log_slope(&series.t_values, &series.f, w);
    }
    let defect = (b.n <= DENSE_UNITARITY_MAX).then(|| unitarity_defect(&map.dense_matrix()));
    out.csv("autocorr.csv", &autocorr_table(&series))?;
    let summary = json!({
        "N": b.n,
        "convention": b.convention,
        "q": b.q,
        "p": b.p,
        "T": b.t_max,
        "floor": baker_floor(b.n),
        "fit": series.fit,
        "unitarity_defect": defect,
    });
    out.json("summary.json", &summary)
}

fn load_series(base_dir: &Path, index: usize, cfg: &JobConfig) -> Result<DecaySeries, JobError> {
    let s = &cfg.series.as_ref().expect("compare requires series")[index];
    let path = base_dir.join(&s.path);
    let input = |message: String| JobError::Input { path: format!("series[{index}].path ({})", path.display()), message };
    let text = std::fs::read_to_string(&path).map_err(|e| input(e.to_string()))?;
    let table = Table::parse(&text).map_err(|e| input(e.to_string()))?;
    let (t, values) = table.complex_series().map_err(|e| input(e.to_string()))?;
    Ok(DecaySeries { label: s.label.clone(), t, values, floor: s.floor })
}

fn compare_job(cfg: &JobConfig, base_dir: &Path, out: &mut Out) -> Result<(), JobError> {
    let a = load_series(base_dir, 0, cfg)?;
    let b = load_series(base_dir, 1, cfg)?;
    let report = compare_decay(&a, &b).map_err(|e| out.fail(e))?;
    out.json("comparison.json", &report)
}
