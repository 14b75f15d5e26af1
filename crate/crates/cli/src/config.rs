//! Job configuration: strict parsing, cross-field checks and the canonical echo.

use std::fmt;
use std::path::PathBuf;

use abc_core::baker::Convention;
use abc_core::diagrams::MAX_RECURSION_ORDER;
use abc_core::model::validate_model;
use abc_core::{Family, FormFactor, ModelSpec, QuadratureSettings};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Abc2,
    Abc2Decay,
    Ieps,
    Stochastic,
    Solvable,
    FockOracle,
    Asymptotics,
    Recursion,
    OneParticle,
    Baker,
    Compare,
}

/// Stand-in key meaning "exactly one of `time_grid` or `t_list`".
const TIME: &str = "time_grid|t_list";

impl JobKind {
    pub const ALL: [JobKind; 11] = [
        JobKind::Abc2,
        JobKind::Abc2Decay,
        JobKind::Ieps,
        JobKind::Stochastic,
        JobKind::Solvable,
        JobKind::FockOracle,
        JobKind::Asymptotics,
        JobKind::Recursion,
        JobKind::OneParticle,
        JobKind::Baker,
        JobKind::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JobKind::Abc2 => "abc2",
            JobKind::Abc2Decay => "abc2_decay",
            JobKind::Ieps => "ieps",
            JobKind::Stochastic => "stochastic",
            JobKind::Solvable => "solvable",
            JobKind::FockOracle => "fock_oracle",
            JobKind::Asymptotics => "asymptotics",
            JobKind::Recursion => "recursion",
            JobKind::OneParticle => "one_particle",
            JobKind::Baker => "baker",
            JobKind::Compare => "compare",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            JobKind::Abc2 | JobKind::Abc2Decay | JobKind::Solvable | JobKind::FockOracle => &["model", TIME],
            JobKind::Ieps => &["model"],
            JobKind::Stochastic => &["model", "lambdas", TIME],
            JobKind::Asymptotics => &["model", TIME, "fit_window"],
            JobKind::Recursion => &["max_order"],
            JobKind::OneParticle => &["model", "p", TIME],
            JobKind::Baker => &["baker"],
            JobKind::Compare => &["series"],
        }
    }

    fn optional(self) -> &'static [&'static str] {
        match self {
            JobKind::Abc2 | JobKind::OneParticle => &["quadrature", "output_dir", "fit_window"],
            JobKind::Ieps => &["quadrature", "output_dir", "eps_schedule", "want_b2"],
            JobKind::FockOracle => &["quadrature", "output_dir", "n_occ"],
            JobKind::Abc2Decay | JobKind::Stochastic | JobKind::Solvable | JobKind::Asymptotics => {
                &["quadrature", "output_dir"]
            }
            JobKind::Baker => &["output_dir", "fit_window"],
            JobKind::Recursion | JobKind::Compare => &["output_dir"],
        }
    }

    fn allows(self, key: &str) -> bool {
        let hit = |list: &[&str]| list.iter().any(|k| *k == key || (*k == TIME && (key == "time_grid" || key == "t_list")));
        key == "job" || hit(self.required()) || hit(self.optional())
    }

    pub fn uses_quadrature(self) -> bool {
        self.optional().contains(&"quadrature")
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const ALL_KEYS: [&str; 15] = [
    "job",
    "model",
    "quadrature",
    "time_grid",
    "t_list",
    "output_dir",
    "eps_schedule",
    "want_b2",
    "lambdas",
    "n_occ",
    "fit_window",
    "max_order",
    "p",
    "baker",
    "series",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// `steps + 1` equally spaced points including both ends.
    pub fn points(&self) -> Vec<f64> {
        let h = (self.t1 - self.t0) / self.steps as f64;
        (0..=self.steps).map(|i| if i == self.steps { self.t1 } else { self.t0 + h * i as f64 }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BakerParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub q: f64,
    pub p: f64,
    #[serde(rename = "T")]
    pub t_max: usize,
    #[serde(default)]
    pub convention: Convention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesInput {
    pub path: PathBuf,
    pub label: String,
    #[serde(default)]
    pub floor: f64,
}

/// A validated job. Optional inputs with defaults are filled in, so the
/// serialized form is the canonical echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub job: JobKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub want_b2: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_occ: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baker: Option<BakerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<SeriesInput>>,
}

pub const DEFAULT_N_OCC: usize = 12;

impl JobConfig {
    pub fn times(&self) -> Vec<f64> {
        match (&self.time_grid, &self.t_list) {
            (Some(g), _) => g.points(),
            (None, Some(l)) => l.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn model(&self) -> &ModelSpec {
        self.model.as_ref().expect("validated config carries a model")
    }

    pub fn quadrature(&self) -> QuadratureSettings {
        self.quadrature.clone().unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.quadrature.as_ref().map_or(0, |q| q.seed)
    }

    /// Replaces the quadrature seed; jobs without quadrature ignore it.
    pub fn set_seed(&mut self, seed: u64) {
        if let Some(q) = self.quadrature.as_mut() {
            q.seed = seed;
        }
    }

    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} configuration error(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

#[derive(Default)]
struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue { path: path.into(), message: message.into() });
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Closest candidate by edit distance, if it is plausibly a typo.
pub fn suggest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(key, c), c))
        .filter(|&(d, c)| d <= 2.max(c.len() / 3) && d < c.len())
        .min_by_key(|&(d, _)| d)
        .map(|(_, c)| c)
}

fn unknown_key(issues: &mut Issues, path: &str, key: &str, allowed: &[&str]) {
    let mut msg = format!("unknown key `{key}`");
    if let Some(s) = suggest(key, allowed.iter().copied()) {
        msg.push_str(&format!("; did you mean `{s}`?"));
    }
    issues.push(join(path, key), msg);
}

/// Reports keys outside `allowed`; returns whether the object was clean.
fn check_keys(issues: &mut Issues, path: &str, obj: &Map<String, Value>, allowed: &[&str]) -> bool {
    let mut clean = true;
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            unknown_key(issues, path, key, allowed);
            clean = false;
        }
    }
    clean
}

fn typed<T: DeserializeOwned>(issues: &mut Issues, path: &str, value: &Value) -> Option<T> {
    match serde_json::from_value(value.clone()) {
        Ok(v) => Some(v),
        Err(e) => {
            issues.push(path, e.to_string());
            None
        }
    }
}

/// Checks the `{kind, params}` object of a tagged enum; returns whether it
/// is worth handing to serde.
fn check_tagged(issues: &mut Issues, path: &str, value: &Value, kinds: &[(&str, &[&str])]) -> bool {
    let Some(obj) = value.as_object() else {
        issues.push(path, "expected an object {kind, params}");
        return false;
    };
    let mut clean = check_keys(issues, path, obj, &["kind", "params"]);
    let Some(kind) = obj.get("kind") else {
        issues.push(join(path, "kind"), "missing required key");
        return false;
    };
    let Some(kind) = kind.as_str() else {
        issues.push(join(path, "kind"), "expected a string");
        return false;
    };
    let Some((_, params)) = kinds.iter().find(|(k, _)| *k == kind) else {
        let mut msg = format!("unknown kind `{kind}`");
        if let Some(s) = suggest(kind, kinds.iter().map(|k| k.0)) {
            msg.push_str(&format!("; did you mean `{s}`?"));
        }
        issues.push(join(path, "kind"), msg);
        return false;
    };
    let ppath = join(path, "params");
    match obj.get("params").map(Value::as_object) {
        None => {
            issues.push(ppath, "missing required key");
            clean = false;
        }
        Some(None) => {
            issues.push(ppath, "expected an object");
            clean = false;
        }
        Some(Some(p)) => {
            clean &= check_keys(issues, &ppath, p, params);
            for key in params.iter() {
                if !p.contains_key(*key) {
                    issues.push(join(&ppath, key), "missing required key");
                    clean = false;
                }
            }
        }
    }
    clean
}

const DISPERSIONS: [(&str, &[&str]); 5] = [
    ("relativistic", &["m"]),
    ("non_rel_shifted", &["omega0"]),
    ("bogoliubov", &["b", "v"]),
    ("fermi_quasi", &["m", "mu"]),
    ("constant", &["omega0"]),
];

const FORM_FACTORS: [(&str, &[&str]); 3] =
    [("isotropic_gaussian", &["a", "w"]), ("shifted_gaussian", &["a", "w", "c"]), ("compact_bump", &["a", "r"])];

const MODEL_KEYS: [&str; 6] = ["family", "d", "n", "dispersion", "form_factor", "lambda"];
const QUADRATURE_KEYS: [&str; 6] = ["mode", "points_per_axis", "mc_samples", "seed", "momentum_cutoff", "rel_tol"];

fn parse_model(issues: &mut Issues, value: &Value) -> Option<ModelSpec> {
    let Some(obj) = value.as_object() else {
        issues.push("model", "expected an object");
        return None;
    };
    let mut clean = check_keys(issues, "model", obj, &MODEL_KEYS);
    for key in MODEL_KEYS {
        if !obj.contains_key(key) {
            issues.push(join("model", key), "missing required key");
            clean = false;
        }
    }
    if let Some(d) = obj.get("dispersion") {
        clean &= check_tagged(issues, "model.dispersion", d, &DISPERSIONS);
    }
    if let Some(f) = obj.get("form_factor") {
        clean &= check_tagged(issues, "model.form_factor", f, &FORM_FACTORS);
    }
    if !clean {
        return None;
    }
    let spec: ModelSpec = typed(issues, "model", value)?;
    if let Err(e) = spec.check() {
        issues.push("model", e.to_string());
        return None;
    }
    Some(spec)
}

fn parse_object<T: DeserializeOwned>(issues: &mut Issues, path: &str, value: &Value, allowed: &[&str]) -> Option<T> {
    let Some(obj) = value.as_object() else {
        issues.push(path, "expected an object");
        return None;
    };
    if !check_keys(issues, path, obj, allowed) {
        return None;
    }
    typed(issues, path, value)
}

fn check_finite(issues: &mut Issues, path: &str, xs: &[f64]) -> bool {
    let ok = xs.iter().all(|x| x.is_finite());
    if !ok {
        issues.push(path, "entries must be finite");
    }
    ok
}

fn check_times(issues: &mut Issues, path: &str, ts: &[f64], strictly_positive: bool) {
    if ts.is_empty() {
        issues.push(path, "needs at least one time");
        return;
    }
    if !check_finite(issues, path, ts) {
        return;
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        issues.push(path, "times must be strictly increasing");
    }
    if strictly_positive && ts[0] <= 0.0 {
        issues.push(path, "times must be > 0 for this job");
    } else if ts[0] < 0.0 {
        issues.push(path, "times must be >= 0");
    }
}

fn require_family(issues: &mut Issues, spec: &ModelSpec, job: JobKind, allowed: &[Family]) {
    if !allowed.contains(&spec.family) {
        let names: Vec<String> = allowed.iter().map(|f| family_name(*f)).collect();
        issues.push("model.family", format!("job {job} needs family {}, got {}", names.join(" or "), family_name(spec.family)));
    }
}

fn family_name(f: Family) -> String {
    serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

const VACUUM: [Family; 2] = [Family::PairCreation, Family::LinearSolvable];

fn model_checks(issues: &mut Issues, cfg: &JobConfig, spec: &ModelSpec) {
    let report = validate_model(spec);
    let dn = report.dn_product;
    let no_decay = |issues: &mut Issues, alternative: &str| {
        if report.decay_flag {
            issues.push(
                "model.dispersion",
                format!("model decays (inf E = {:.3e}); {alternative}", report.inf_energy),
            );
        }
    };
    match cfg.job {
        JobKind::Abc2 => {
            require_family(issues, spec, cfg.job, &VACUUM);
            no_decay(issues, "use job abc2_decay");
        }
        JobKind::Abc2Decay => {
            require_family(issues, spec, cfg.job, &VACUUM);
            if !report.decay_flag {
                issues.push("model.dispersion", "model does not decay; use job abc2");
            }
        }
        JobKind::Ieps => {
            require_family(issues, spec, cfg.job, &VACUUM);
            if report.decay_flag && dn < 3 {
                issues.push("model", format!("A2 via the iε route requires d·n >= 3, got d·n = {dn}"));
            }
            if report.decay_flag && cfg.want_b2 == Some(true) && dn < 5 {
                issues.push("want_b2", format!("B2 via the iε route requires d·n >= 5, got d·n = {dn}"));
            }
        }
        JobKind::Stochastic => require_family(issues, spec, cfg.job, &VACUUM),
        JobKind::Solvable => {
            require_family(issues, spec, cfg.job, &[Family::LinearSolvable]);
            if report.decay_flag && !matches!(spec.dispersion, abc_core::DispersionLaw::NonRelShifted { .. }) {
                issues.push("model.dispersion", "decaying solvable model needs non_rel_shifted");
            }
            if report.decay_flag && dn < 3 {
                issues.push("model.d", format!("decaying solvable model needs d·n >= 3 for its A, B limits, got {dn}"));
            }
        }
        JobKind::FockOracle => {
            require_family(issues, spec, cfg.job, &[Family::LinearSolvable]);
            no_decay(issues, "the Fock oracle compares against the stable closed form");
            if matches!(spec.form_factor, FormFactor::ShiftedGaussian { .. }) {
                issues.push("model.form_factor", "radial Fock modes need an isotropic form factor");
            }
        }
        JobKind::Asymptotics => {
            require_family(issues, spec, cfg.job, &VACUUM);
            no_decay(issues, "stationary-phase C(t) is for the stable regime");
            if spec.n != 1 {
                issues.push("model.n", "stationary-phase C(t) expects n = 1");
            }
        }
        JobKind::OneParticle => {
            require_family(issues, spec, cfg.job, &[Family::TranslationInvariantTrilinear]);
            if let Some(p) = &cfg.p {
                if p.len() != spec.d {
                    issues.push("p", format!("expected {} components (d), got {}", spec.d, p.len()));
                }
            }
        }
        _ => {}
    }
}

fn job_checks(issues: &mut Issues, cfg: &JobConfig) {
    let t_path = if cfg.time_grid.is_some() { "time_grid" } else { "t_list" };
    if let Some(g) = &cfg.time_grid {
        if !(g.t0.is_finite() && g.t1.is_finite() && g.t1 > g.t0) {
            issues.push("time_grid", "needs finite t0 < t1");
        } else if g.steps == 0 {
            issues.push("time_grid.steps", "must be >= 1");
        }
    }
    let grid_ok = cfg.time_grid.is_none_or(|g| g.steps > 0 && g.t1 > g.t0);
    if (cfg.time_grid.is_some() || cfg.t_list.is_some()) && grid_ok {
        check_times(issues, t_path, &cfg.times(), cfg.job == JobKind::Asymptotics);
    }
    if let Some(w) = cfg.fit_window {
        if !(w[0].is_finite() && w[1].is_finite() && 0.0 < w[0] && w[0] < w[1]) {
            issues.push("fit_window", "needs 0 < t0 < t1");
        }
    }
    if let Some(e) = &cfg.eps_schedule {
        if e.len() < 2 || e.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            issues.push("eps_schedule", "needs >= 2 positive finite entries");
        } else if e.windows(2).any(|w| w[1] >= w[0]) {
            issues.push("eps_schedule", "entries must be strictly decreasing");
        }
    }
    if let Some(l) = &cfg.lambdas {
        if l.is_empty() {
            issues.push("lambdas", "needs at least one coupling");
        }
        check_finite(issues, "lambdas", l);
    }
    if let Some(n) = cfg.n_occ {
        if n < 4 {
            issues.push("n_occ", "must be >= 4");
        }
    }
    if let Some(k) = cfg.max_order {
        if k == 0 || k > MAX_RECURSION_ORDER {
            issues.push("max_order", format!("must lie in 1..={MAX_RECURSION_ORDER}"));
        }
    }
    if let Some(p) = &cfg.p {
        check_finite(issues, "p", p);
    }
    if let Some(b) = &cfg.baker {
        if b.n < 2 || b.n % 2 != 0 {
            issues.push("baker.N", format!("must be even and >= 2, got {}", b.n));
        }
        if b.t_max == 0 {
            issues.push("baker.T", "must be >= 1");
        }
        for (key, x) in [("q", b.q), ("p", b.p)] {
            if !(0.0..1.0).contains(&x) {
                issues.push(join("baker", key), "must lie in [0, 1)");
            }
        }
    }
    if let Some(series) = &cfg.series {
        if series.len() != 2 {
            issues.push("series", format!("compare takes exactly 2 series, got {}", series.len()));
        }
        for (i, s) in series.iter().enumerate() {
            let path = format!("series[{i}]");
            if s.label.is_empty() {
                issues.push(join(&path, "label"), "must not be empty");
            }
            if s.path.as_os_str().is_empty() {
                issues.push(join(&path, "path"), "must not be empty");
            }
            if !(s.floor.is_finite() && s.floor >= 0.0) {
                issues.push(join(&path, "floor"), "must be finite and >= 0");
            }
        }
        if series.len() == 2 && series[0].label == series[1].label {
            issues.push("series[1].label", "labels must differ");
        }
    }
    if let Some(q) = &cfg.quadrature {
        if let Err(e) = q.check() {
            issues.push("quadrature", e.to_string());
        }
    }
}

/// Parses and checks a configuration, collecting every problem found.
pub fn validate_config(text: &str) -> Result<JobConfig, ConfigErrors> {
    let mut issues = Issues::default();
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Err(ConfigErrors(vec![ConfigIssue { path: "$".into(), message: format!("invalid JSON: {e}") }])),
    };
    let Some(obj) = root.as_object() else {
        return Err(ConfigErrors(vec![ConfigIssue { path: "$".into(), message: "expected a JSON object".into() }]));
    };
    let job = match obj.get("job") {
        None => {
            issues.push("job", "missing required key");
            None
        }
        Some(Value::String(s)) => {
            let kind = JobKind::from_name(s);
            if kind.is_none() {
                let mut msg = format!("unknown job `{s}`");
                if let Some(hint) = suggest(s, JobKind::ALL.iter().map(|k| k.name())) {
                    msg.push_str(&format!("; did you mean `{hint}`?"));
                }
                issues.push("job", msg);
            }
            kind
        }
        Some(_) => {
            issues.push("job", "expected a string");
            None
        }
    };
    let Some(job) = job else {
        for key in obj.keys() {
            if !ALL_KEYS.contains(&key.as_str()) {
                unknown_key(&mut issues, "", key, &ALL_KEYS);
            }
        }
        return Err(ConfigErrors(issues.0));
    };

    let allowed: Vec<&str> = ALL_KEYS.iter().copied().filter(|k| job.allows(k)).collect();
    for key in obj.keys() {
        if job.allows(key) {
            continue;
        }
        if ALL_KEYS.contains(&key.as_str()) {
            issues.push(key.clone(), format!("not an input of job {job}"));
        } else {
            unknown_key(&mut issues, "", key, &allowed);
        }
    }
    for key in job.required() {
        if *key == TIME {
            match (obj.contains_key("time_grid"), obj.contains_key("t_list")) {
                (false, false) => issues.push("time_grid", "missing required key (or t_list)"),
                (true, true) => issues.push("t_list", "give either time_grid or t_list, not both"),
                _ => {}
            }
        } else if !obj.contains_key(*key) {
            issues.push(*key, "missing required key");
        }
    }

    let mut cfg = JobConfig {
        job,
        model: None,
        quadrature: None,
        time_grid: None,
        t_list: None,
        output_dir: None,
        eps_schedule: None,
        want_b2: None,
        lambdas: None,
        n_occ: None,
        fit_window: None,
        max_order: None,
        p: None,
        baker: None,
        series: None,
    };
    for (key, value) in obj {
        if !job.allows(key) {
            continue;
        }
        match key.as_str() {
            "model" => cfg.model = parse_model(&mut issues, value),
            "quadrature" => cfg.quadrature = parse_object(&mut issues, key, value, &QUADRATURE_KEYS),
            "time_grid" => cfg.time_grid = parse_object(&mut issues, key, value, &["t0", "t1", "steps"]),
            "baker" => cfg.baker = parse_object(&mut issues, key, value, &["N", "q", "p", "T", "convention"]),
            "series" => cfg.series = parse_series(&mut issues, value),
            "t_list" => cfg.t_list = typed(&mut issues, key, value),
            "output_dir" => cfg.output_dir = typed(&mut issues, key, value),
            "eps_schedule" => cfg.eps_schedule = typed(&mut issues, key, value),
            "want_b2" => cfg.want_b2 = typed(&mut issues, key, value),
            "lambdas" => cfg.lambdas = typed(&mut issues, key, value),
            "n_occ" => cfg.n_occ = typed(&mut issues, key, value),
            "fit_window" => cfg.fit_window = typed(&mut issues, key, value),
            "max_order" => cfg.max_order = typed(&mut issues, key, value),
            "p" => cfg.p = typed(&mut issues, key, value),
            _ => {}
        }
    }

    job_checks(&mut issues, &cfg);
    if let Some(spec) = cfg.model.clone() {
        model_checks(&mut issues, &cfg, &spec);
    }

    if job.uses_quadrature() && cfg.quadrature.is_none() {
        cfg.quadrature = Some(QuadratureSettings::default());
    }
    if job == JobKind::Ieps {
        cfg.eps_schedule.get_or_insert_with(abc_core::abc2::default_eps_schedule);
        cfg.want_b2.get_or_insert(false);
    }
    if job == JobKind::FockOracle {
        cfg.n_occ.get_or_insert(DEFAULT_N_OCC);
    }

    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(issues.0))
    }
}

fn parse_series(issues: &mut Issues, value: &Value) -> Option<Vec<SeriesInput>> {
    let Some(items) = value.as_array() else {
        issues.push("series", "expected an array");
        return None;
    };
    let mut out = Vec::new();
    let mut ok = true;
    for (i, item) in items.iter().enumerate() {
        let path = format!("series[{i}]");
        match parse_object::<SeriesInput>(issues, &path, item, &["path", "label", "floor"]) {
            Some(s) => out.push(s),
            None => ok = false,
        }
    }
    ok.then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ABC2: &str = r#"{
        "job": "abc2",
        "model": {
            "family": "pair_creation", "d": 1, "n": 2, "lambda": 0.1,
            "dispersion": {"kind": "relativistic", "params": {"m": 1.0}},
            "form_factor": {"kind": "isotropic_gaussian", "params": {"a": 1.0, "w": 1.0}}
        },
        "time_grid": {"t0": 0.0, "t1": 10.0, "steps": 10}
    }"#;

    fn messages(text: &str) -> Vec<ConfigIssue> {
        validate_config(text).unwrap_err().0
    }

    #[test]
    fn minimal_abc2_echo_round_trips() {
        let cfg = validate_config(ABC2).unwrap();
        let echo = cfg.canonical_json();
        let again = validate_config(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical_json(), echo);
        assert_eq!(cfg.quadrature, Some(QuadratureSettings::default()));
        assert_eq!(cfg.times().len(), 11);
    }

    #[test]
    fn misspelled_key_gets_suggestion() {
        let text = ABC2.replace("\"lambda\"", "\"lamda\"");
        let issues = messages(&text);
        assert!(issues.iter().any(|i| i.path == "model.lamda" && i.message.contains("did you mean `lambda`")), "{issues:?}");
        assert!(issues.iter().any(|i| i.path == "model.lambda" && i.message.contains("missing")));
    }

    #[test]
    fn b2_via_ieps_needs_dn_at_least_five() {
        let text = r#"{
            "job": "ieps", "want_b2": true,
            "model": {
                "family": "pair_creation", "d": 1, "n": 1, "lambda": 1.0,
                "dispersion": {"kind": "non_rel_shifted", "params": {"omega0": 1.0}},
                "form_factor": {"kind": "isotropic_gaussian", "params": {"a": 1.0, "w": 1.0}}
            }
        }"#;
        let issues = messages(text);
        assert!(issues.iter().any(|i| i.message.contains("d·n >= 5")), "{issues:?}");
        assert!(issues.iter().any(|i| i.message.contains("d·n >= 3")), "{issues:?}");
    }

    #[test]
    fn errors_are_collected_not_first_failure() {
        let text = r#"{"job": "baker", "baker": {"N": 7, "q": 1.5, "p": 0.1, "T": 0}, "colour": 1, "model": {}}"#;
        let issues = messages(text);
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        for want in ["colour", "model", "baker.N", "baker.T", "baker.q"] {
            assert!(paths.contains(&want), "missing {want} in {paths:?}");
        }
    }

    #[test]
    fn unknown_job_suggests_nearest() {
        let issues = messages(r#"{"job": "abc_2"}"#);
        assert!(issues[0].message.contains("did you mean `abc2`"), "{issues:?}");
    }

    #[test]
    fn unknown_dispersion_param_is_reported_with_path() {
        let text = ABC2.replace("\"m\": 1.0", "\"mass\": 1.0");
        let issues = messages(&text);
        assert!(issues.iter().any(|i| i.path == "model.dispersion.params.mass"), "{issues:?}");
        assert!(issues.iter().any(|i| i.path == "model.dispersion.params.m"), "{issues:?}");
    }

    #[test]
    fn decaying_model_rejected_for_stable_job() {
        let text = ABC2.replace(r#"{"kind": "relativistic", "params": {"m": 1.0}}"#, r#"{"kind": "non_rel_shifted", "params": {"omega0": 1.0}}"#);
        let issues = messages(&text);
        assert!(issues.iter().any(|i| i.message.contains("abc2_decay")), "{issues:?}");
    }

    #[test]
    fn time_grid_and_list_are_exclusive() {
        let text = ABC2.replace("\"time_grid\"", "\"t_list\": [1.0], \"time_grid\"");
        assert!(messages(&text).iter().any(|i| i.message.contains("not both")));
    }

    #[test]
    fn grid_points_hit_both_ends() {
        let g = TimeGrid { t0: 0.0, t1: 3.0, steps: 3 };
        assert_eq!(g.points(), vec![0.0, 1.0, 2.0, 3.0]);
        let g = TimeGrid { t0: 0.0, t1: 0.3, steps: 7 };
        assert_eq!(*g.points().last().unwrap(), 0.3);
    }

    #[test]
    fn suggestion_ignores_distant_names() {
        assert_eq!(suggest("lamda", ["lambda", "d"]), Some("lambda"));
        assert_eq!(suggest("xyzzy", ["lambda", "d", "n"]), None);
    }
}
