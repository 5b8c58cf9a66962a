//! Scenario files, verification suites and machine-readable reports.
//!
//! A [`Scenario`] names a catalog item, the suites to run, tolerance
//! overrides and output paths.  [`run_scenario`] executes the suites and
//! returns a [`Report`]; its `deterministic` section is hashed with SHA-256,
//! while timings and environment data sit outside the hash.
//!
//! ```
//! use conflat::runner::{run_scenario, Scenario};
//!
//! let sc = Scenario::from_json(r#"{"schema": 1, "item": "flat_inclusion", "suite": "extrinsic", "samples": 5}"#).unwrap();
//! let run = run_scenario(&sc).unwrap();
//! assert_eq!(run.report.exit_code(), 0);
//! assert!(run.report.verify_hash());
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::catalog::{self, CatalogItem, Expected};
use crate::conformal::{conformal_change, conformal_flatness_test, q_tensor_checks, transported_principal_normals};
use crate::curvature::{riemann_from_metric, CurvaturePack, Riemann};
use crate::error::Error;
use crate::extrinsic::{fundamental_forms, intrinsic_curvatures, normal_curvature, AmbientSpace, ExtrinsicData};
use crate::gridfile::{write_grid, GridHeader};
use crate::jet::{dot, Jet};
use crate::lightcone::{
    build_cone_model, check_projection, flat_lift, lift_correspondence_check, lift_second_fundamental_form,
    project_from_cone, psi_sff_residual, POLE_REL_EPS,
};
use crate::linalg::{jet_sdot, max_abs, orthonormal_frame, random_orthonormal};
use crate::map::{evaluate, evaluate_jets, seed, ChartDomain, FnMap, MapRef};
use crate::principal::{
    holonomicity_check, nullity, nullity_and_leaf_invariants, principal_decomposition, properness_and_census,
    quasiumbilical_frame, separation_check, span_structure, NullityBranch, PrincipalDecomposition, PrincipalOptions,
};
use crate::ribaucour::{conformally_flat_family, FamilyOptions, FamilyReport};

/// Version of the scenario and report formats.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Extrinsic,
    Principal,
    Conformal,
    Lightcone,
    Ribaucour,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::Extrinsic, Suite::Principal, Suite::Conformal, Suite::Lightcone, Suite::Ribaucour];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Extrinsic => "extrinsic",
            Suite::Principal => "principal",
            Suite::Conformal => "conformal",
            Suite::Lightcone => "lightcone",
            Suite::Ribaucour => "ribaucour",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// `"all"`, a single suite name, or a list of names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SuiteSelection {
    One(String),
    Many(Vec<String>),
}

impl Default for SuiteSelection {
    fn default() -> Self {
        SuiteSelection::One("all".into())
    }
}

impl SuiteSelection {
    pub fn resolve(&self) -> Result<Vec<Suite>, ConfigError> {
        let names: Vec<&str> = match self {
            SuiteSelection::One(s) => vec![s.as_str()],
            SuiteSelection::Many(v) => v.iter().map(String::as_str).collect(),
        };
        let mut out = Vec::new();
        for n in names {
            if n == "all" {
                out.extend(Suite::ALL);
            } else {
                out.push(Suite::parse(n).ok_or_else(|| {
                    ConfigError::field("suite", format!("unknown suite {n:?}; expected all, extrinsic, principal, conformal, lightcone or ribaucour"))
                })?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(ConfigError::field("suite", "no suite selected"));
        }
        Ok(out)
    }
}

/// Settings of the family pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Reflection members; zero stops after the null-space report.
    pub count: usize,
    pub grid_candidates: usize,
    /// Half-width of the grid box around the chart center.
    pub half_width: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let d = FamilyOptions::default();
        PipelineConfig { count: d.count, grid_candidates: d.grid_candidates, half_width: d.half_width }
    }
}

/// Where results are written; relative paths resolve against the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub family_dir: Option<PathBuf>,
}

impl OutputPaths {
    /// `report.json`, `report.csv` and `family/` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            report: Some(dir.join("report.json")),
            csv: Some(dir.join("report.csv")),
            family_dir: Some(dir.join("family")),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.report.is_none() && self.csv.is_none() && self.family_dir.is_none()
    }
}

fn default_samples() -> usize {
    100
}

fn default_tol_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub item: String,
    /// Builder parameters; `null` selects the defaults.
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub suite: SuiteSelection,
    /// Points per axis of the Ribaucour grid.
    #[serde(default)]
    pub grid: Option<usize>,
    /// Multiplies every upper-bound tolerance.
    #[serde(default = "default_tol_scale")]
    pub tol_scale: f64,
    /// Per-check overrides keyed by `suite.check`, applied after scaling.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

impl Scenario {
    /// A scenario for `item` with every default.
    pub fn new(item: &str) -> Self {
        Scenario {
            schema: SCHEMA_VERSION,
            item: item.into(),
            params: Value::Null,
            suite: SuiteSelection::default(),
            grid: None,
            tol_scale: 1.0,
            tolerances: BTreeMap::new(),
            seed: 0,
            samples: default_samples(),
            pipeline: PipelineConfig::default(),
            output: OutputPaths::default(),
        }
    }

    pub fn with_suites(mut self, suites: &[Suite]) -> Self {
        self.suite = SuiteSelection::Many(suites.iter().map(|s| s.name().to_string()).collect());
        self
    }

    pub fn from_json(text: &str) -> Result<Scenario, ConfigError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| ConfigError {
            line: Some(e.line()),
            column: Some(e.column()),
            field: None,
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario, RunError> {
        let text = fs::read_to_string(path).map_err(|source| RunError::Io { path: path.to_path_buf(), source })?;
        Ok(Scenario::from_json(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::field(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        if !catalog::NAMES.contains(&self.item.as_str()) {
            return Err(ConfigError::field("item", format!("unknown catalog item {:?}", self.item)));
        }
        self.suite.resolve()?;
        if !(self.tol_scale.is_finite() && self.tol_scale > 0.0) {
            return Err(ConfigError::field("tol_scale", format!("must be positive, got {}", self.tol_scale)));
        }
        for (k, v) in &self.tolerances {
            if !(v.is_finite() && *v > 0.0) {
                return Err(ConfigError::field(&format!("tolerances.{k}"), format!("must be positive, got {v}")));
            }
        }
        if self.samples == 0 {
            return Err(ConfigError::field("samples", "must be at least 1"));
        }
        if let Some(g) = self.grid {
            if g < 5 {
                return Err(ConfigError::field(
                    "grid",
                    format!("{g} points per axis is too coarse; second-order stencils with interior equations need at least 5"),
                ));
            }
        }
        let hw = self.pipeline.half_width;
        if !(hw.is_finite() && hw > 0.0) {
            return Err(ConfigError::field("pipeline.half_width", format!("must be positive, got {hw}")));
        }
        Ok(())
    }

    fn family_options(&self) -> FamilyOptions {
        let mut fo = FamilyOptions {
            count: self.pipeline.count,
            grid_candidates: self.pipeline.grid_candidates,
            half_width: self.pipeline.half_width,
            seed: self.seed,
            ..FamilyOptions::default()
        };
        if let Some(g) = self.grid {
            fo.grid = g;
        }
        fo
    }
}

/// Malformed or invalid scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn field(name: &str, message: impl Into<String>) -> Self {
        ConfigError { line: None, column: None, field: Some(name.into()), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.column, &self.field) {
            (Some(l), Some(c), _) => write!(f, "scenario line {l}, column {c}: {}", self.message),
            (_, _, Some(name)) => write!(f, "scenario field `{name}`: {}", self.message),
            _ => write!(f, "scenario: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Passes when `residual ≤ tolerance`.
    AtMost,
    /// Passes when `residual ≥ tolerance`.
    AtLeast,
    /// A yes/no property; residual is 0 when it holds and 1 otherwise.
    Holds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Error,
}

/// One report line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// `suite.check`, with a `[member]` suffix for per-member checks.
    pub name: String,
    /// Concept the check verifies.
    pub anchor: String,
    pub residual: Option<f64>,
    pub tolerance: Option<f64>,
    pub bound: Bound,
    pub status: Status,
    /// False only for failed or errored checks.
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// The error was a numerical degeneracy rather than a violated property.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub not_applicable: usize,
    pub pass: bool,
}

impl Summary {
    fn of(checks: &[Check]) -> Self {
        let count = |s: Status| checks.iter().filter(|c| c.status == s).count();
        let s = Summary {
            total: checks.len(),
            passed: count(Status::Pass),
            failed: count(Status::Fail),
            errors: count(Status::Error),
            not_applicable: count(Status::NotApplicable),
            pass: false,
        };
        Summary { pass: s.failed == 0 && s.errors == 0, ..s }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub name: String,
    pub n: usize,
    pub ambient: String,
    pub ambient_dim: usize,
    pub has_conformal_factor: bool,
    pub expected: Expected,
}

impl ItemSummary {
    fn of(item: &CatalogItem) -> Self {
        ItemSummary {
            name: item.name.clone(),
            n: item.dim(),
            ambient: format!("{:?}", item.ambient),
            ambient_dim: item.ambient.realization_dim(),
            has_conformal_factor: item.conformal.is_some(),
            expected: item.expected.clone(),
        }
    }
}

/// The hash-relevant part of a report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Deterministic {
    /// The scenario as run, with output paths cleared.
    pub scenario: Scenario,
    pub item: ItemSummary,
    pub suites: Vec<Suite>,
    pub checks: Vec<Check>,
    pub summary: Summary,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyReport>,
}

impl Deterministic {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report sections serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub optimized: bool,
}

impl Environment {
    fn current() -> Self {
        Environment {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            optimized: !cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub deterministic: Deterministic,
    /// SHA-256 of the serialized `deterministic` section.
    pub hash: String,
    pub environment: Environment,
    /// Wall-clock seconds per suite.
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    /// 0 when every check passes or is not applicable, 1 on a failed check,
    /// 3 when the only problems are numerical degeneracies.
    pub fn exit_code(&self) -> i32 {
        self.deterministic.exit_code
    }

    pub fn verify_hash(&self) -> bool {
        self.deterministic.digest() == self.hash
    }

    pub fn checks(&self) -> &[Check] {
        &self.deterministic.checks
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.deterministic.checks.iter().find(|c| c.name == name)
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> {
        self.deterministic.checks.iter().filter(|c| !c.pass)
    }

    pub fn load(path: &Path) -> Result<Report, RunError> {
        let text = fs::read_to_string(path).map_err(|source| RunError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| {
            RunError::Config(ConfigError {
                line: Some(e.line()),
                column: Some(e.column()),
                field: None,
                message: format!("{}: {e}", path.display()),
            })
        })
    }

    /// CSV residual table, one row per check.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            name: &'a str,
            anchor: &'a str,
            residual: Option<f64>,
            tolerance: Option<f64>,
            bound: Bound,
            status: Status,
            note: &'a str,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in self.checks() {
            w.serialize(Row {
                name: &c.name,
                anchor: &c.anchor,
                residual: c.residual,
                tolerance: c.tolerance,
                bound: c.bound,
                status: c.status,
                note: c.note.as_deref().unwrap_or(""),
            })
            .expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }
}

fn exit_code_of(checks: &[Check]) -> i32 {
    let failed = checks.iter().any(|c| c.status == Status::Fail || (c.status == Status::Error && !c.degenerate));
    if failed {
        1
    } else if checks.iter().any(|c| c.status == Status::Error) {
        3
    } else {
        0
    }
}

/// A finished run: the report and, when the Ribaucour suite ran, the family.
#[derive(Clone, Debug)]
pub struct Run {
    pub report: Report,
    pub family: Option<FamilyReport>,
}

struct Recorder<'a> {
    suite: Suite,
    sc: &'a Scenario,
    checks: Vec<Check>,
}

/// Errors that mean the property itself is violated, not that the check broke.
fn is_violation(e: &Error) -> bool {
    matches!(
        e,
        Error::NonProper { .. }
            | Error::Quasiumbilicity { .. }
            | Error::Net { .. }
            | Error::NotFlatNormalBundle { .. }
            | Error::ConformalStructure { .. }
    )
}

impl<'a> Recorder<'a> {
    fn new(suite: Suite, sc: &'a Scenario) -> Self {
        Recorder { suite, sc, checks: Vec::new() }
    }

    fn key(&self, name: &str) -> String {
        format!("{}.{name}", self.suite.name())
    }

    fn tol(&self, name: &str, base: f64, bound: Bound) -> f64 {
        match self.sc.tolerances.get(&self.key(name)) {
            Some(t) => *t,
            None if bound == Bound::AtMost => base * self.sc.tol_scale,
            None => base,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        name: &str,
        label: Option<&str>,
        anchor: &str,
        residual: Option<f64>,
        tolerance: Option<f64>,
        bound: Bound,
        status: Status,
        note: Option<String>,
        degenerate: bool,
    ) {
        let mut full = self.key(name);
        if let Some(l) = label {
            full = format!("{full}[{l}]");
        }
        let pass = matches!(status, Status::Pass | Status::NotApplicable);
        self.checks.push(Check {
            name: full,
            anchor: anchor.into(),
            residual,
            tolerance,
            bound,
            status,
            pass,
            note,
            degenerate,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn bounded(
        &mut self,
        name: &str,
        label: Option<&str>,
        anchor: &str,
        residual: f64,
        base: f64,
        bound: Bound,
        note: Option<String>,
    ) {
        let tol = self.tol(name, base, bound);
        let ok = match bound {
            Bound::AtMost => residual <= tol,
            _ => residual >= tol,
        };
        let status = if ok { Status::Pass } else { Status::Fail };
        self.push(name, label, anchor, Some(residual), Some(tol), bound, status, note, false);
    }

    fn at_most(&mut self, name: &str, anchor: &str, residual: f64, base: f64) {
        self.bounded(name, None, anchor, residual, base, Bound::AtMost, None);
    }

    fn at_most_note(&mut self, name: &str, anchor: &str, residual: f64, base: f64, note: String) {
        self.bounded(name, None, anchor, residual, base, Bound::AtMost, Some(note));
    }

    fn at_least(&mut self, name: &str, anchor: &str, residual: f64, base: f64, note: Option<String>) {
        self.bounded(name, None, anchor, residual, base, Bound::AtLeast, note);
    }

    fn holds(&mut self, name: &str, anchor: &str, ok: bool, note: String) {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.push(name, None, anchor, Some(if ok { 0.0 } else { 1.0 }), None, Bound::Holds, status, Some(note), false);
    }

    fn na(&mut self, name: &str, anchor: &str, why: impl Into<String>) {
        self.push(name, None, anchor, None, None, Bound::AtMost, Status::NotApplicable, Some(why.into()), false);
    }

    fn error(&mut self, name: &str, label: Option<&str>, anchor: &str, e: &Error) {
        match e {
            Error::NotApplicable(why) => self.push(
                name,
                label,
                anchor,
                None,
                None,
                Bound::AtMost,
                Status::NotApplicable,
                Some(why.clone()),
                false,
            ),
            e if is_violation(e) => {
                self.push(name, label, anchor, None, None, Bound::AtMost, Status::Fail, Some(e.to_string()), false)
            }
            e => self.push(
                name,
                label,
                anchor,
                None,
                None,
                Bound::AtMost,
                Status::Error,
                Some(e.to_string()),
                e.is_degeneracy(),
            ),
        }
    }
}

/// Per-sample data shared by the pointwise suites.
struct Prepared {
    samples: Vec<Vec<f64>>,
    exts: Vec<ExtrinsicData>,
    packs: Vec<CurvaturePack>,
    decs: Vec<crate::Result<PrincipalDecomposition>>,
}

fn prepare(item: &CatalogItem, samples: Vec<Vec<f64>>, opts: &PrincipalOptions) -> crate::Result<Prepared> {
    let mut exts = Vec::with_capacity(samples.len());
    let mut packs = Vec::with_capacity(samples.len());
    let mut decs = Vec::with_capacity(samples.len());
    for x in &samples {
        let ext = fundamental_forms(item.map.as_ref(), &item.ambient, x)?;
        packs.push(intrinsic_curvatures(&ext)?);
        decs.push(principal_decomposition(&ext, opts));
        exts.push(ext);
    }
    Ok(Prepared { samples, exts, packs, decs })
}

fn is_control(item: &CatalogItem, suite: Suite) -> bool {
    item.expected.negative_control.as_deref() == Some(suite.name())
}

fn is_any_control(item: &CatalogItem) -> bool {
    item.expected.negative_control.is_some()
}

/// Order-2 jets of the induced metric.
fn metric_jets(item: &CatalogItem, x: &[f64]) -> crate::Result<Vec<Vec<Jet>>> {
    let f = evaluate_jets(item.map.as_ref(), x, 3)?;
    let n = x.len();
    let signs = item.ambient.signs();
    let d: Vec<Vec<Jet>> = (0..n).map(|i| f.iter().map(|c| c.partial(i)).collect()).collect();
    Ok((0..n).map(|i| (0..n).map(|j| jet_sdot(&signs, &d[i], &d[j])).collect()).collect())
}

/// Deviation of the curvature tensor from constant curvature `c`, relative.
fn constant_curvature_defect(pack: &CurvaturePack, c: f64) -> f64 {
    let model = Riemann::constant_curvature(&pack.metric, c);
    pack.riemann.max_diff(&model) / model.max_abs().max(1.0)
}

fn suite_seed(sc: &Scenario, suite: Suite) -> u64 {
    sc.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(suite as u64 + 1)
}

fn extrinsic_suite(rec: &mut Recorder, item: &CatalogItem, prep: &Prepared, rng: &mut ChaCha8Rng) {
    let ricci = prep
        .packs
        .iter()
        .map(|p| p.ricci_disagreement().unwrap_or(0.0) / max_abs(&p.ricci).max(1.0))
        .fold(0.0, f64::max);
    rec.at_most("ricci_agreement", "Ricci tensor from the mean curvature vector", ricci, 1e-9);

    let intrinsic: crate::Result<(f64, f64)> =
        prep.samples.iter().zip(&prep.packs).try_fold((0.0f64, 0.0f64), |(g, s), (x, p)| {
            let r = riemann_from_metric(&metric_jets(item, x)?)?;
            let scale = r.max_abs().max(1.0);
            Ok((g.max(r.max_diff(&p.riemann) / scale), s.max(r.symmetry_defect() / scale)))
        });
    match intrinsic {
        Ok((gauss, sym)) => {
            rec.at_most("gauss_equation", "Gauss equation", gauss, 1e-8);
            rec.at_most("riemann_symmetries", "symmetries of the curvature tensor", sym, 1e-10);
        }
        Err(e) => {
            rec.error("gauss_equation", None, "Gauss equation", &e);
            rec.error("riemann_symmetries", None, "symmetries of the curvature tensor", &e);
        }
    }

    let nc: crate::Result<(f64, f64)> = prep.exts.iter().try_fold((0.0f64, 0.0f64), |(d, m), ext| {
        let r = normal_curvature(ext)?;
        let s = ext.shape_scale().powi(2).max(1.0);
        Ok((d.max(r.disagreement / s), m.max(r.norm / s)))
    });
    match nc {
        Ok((routes, norm)) => {
            rec.at_most("normal_curvature_routes", "Ricci equation for the normal curvature", routes, 1e-8);
            if item.expected.flat_normal_bundle {
                rec.at_most("flat_normal_bundle", "flat normal bundle", norm, 1e-7);
            } else {
                rec.na("flat_normal_bundle", "flat normal bundle", "item is not declared to have a flat normal bundle");
            }
        }
        Err(e) => {
            rec.error("normal_curvature_routes", None, "Ricci equation for the normal curvature", &e);
            rec.error("flat_normal_bundle", None, "flat normal bundle", &e);
        }
    }

    let anchor = "sectional curvature of a conformally flat metric";
    let n = item.dim();
    if item.expected.conformally_flat && n >= 3 {
        let mut worst = 0.0f64;
        let mut kmax = 1.0f64;
        let mut failed = None;
        for pack in &prep.packs {
            let (t, l) = match (orthonormal_frame(&pack.metric), pack.schouten()) {
                (Ok(t), Ok(l)) => (t, l.clone()),
                (Err(e), _) | (_, Err(e)) => {
                    failed = Some(e);
                    break;
                }
            };
            let q = random_orthonormal(n, 2, rng);
            let x: DVector<f64> = &t * q.column(0);
            let y: DVector<f64> = &t * q.column(1);
            let k = pack.sectional(&x, &y);
            let lsum = (x.transpose() * &l * &x)[0] + (y.transpose() * &l * &y)[0];
            worst = worst.max((k - lsum).abs());
            kmax = kmax.max(k.abs());
        }
        match failed {
            Some(e) => rec.error("schouten_sectional", None, anchor, &e),
            None => rec.at_most("schouten_sectional", anchor, worst / kmax, 1e-8),
        }
    } else {
        rec.na("schouten_sectional", anchor, "needs a conformally flat item with n >= 3");
    }

    let anchor = "constant sectional curvature";
    match item.expected.constant_curvature {
        Some(c) => {
            let d = prep.packs.iter().map(|p| constant_curvature_defect(p, c)).fold(0.0, f64::max);
            rec.at_most_note("constant_curvature", anchor, d, 1e-8, format!("c = {c}"));
        }
        None => rec.na("constant_curvature", anchor, "item has no declared constant curvature"),
    }
}

fn principal_suite(rec: &mut Recorder, item: &CatalogItem, prep: &Prepared, opts: &PrincipalOptions) {
    let ex = &item.expected;
    let n = item.dim();
    let control = is_any_control(item);

    let a_k = "constant number of principal normals";
    let a_m = "multiplicities of the principal normals";
    let a_high = "at most one principal normal of multiplicity two or more";
    let a_dupin = "Dupin principal normals";
    match properness_and_census(item.map.as_ref(), &item.ambient, &prep.samples, opts) {
        Ok(c) => {
            match ex.k {
                Some(k) => rec.holds("census_k", a_k, c.k == k, format!("k = {} at every sample, declared {k}", c.k)),
                None => rec.na("census_k", a_k, "no declared k"),
            }
            match &ex.multiplicities {
                Some(m) => {
                    let ok = c.census.keys().all(|x| x == m);
                    rec.holds("census_multiplicities", a_m, ok, format!("census {:?}, declared {m:?}", c.census));
                }
                None => rec.na("census_multiplicities", a_m, "no declared multiplicities"),
            }
            if n >= 4 && !control {
                rec.holds("at_most_one_high", a_high, c.at_most_one_high, format!("census {:?}", c.census));
            } else {
                rec.na("at_most_one_high", a_high, "needs n >= 4 and an item that is not a negative control");
            }
            rec.at_most("dupin", a_dupin, c.dupin, 1e-7);
        }
        Err(e) => {
            for (name, a) in
                [("census_k", a_k), ("census_multiplicities", a_m), ("at_most_one_high", a_high), ("dupin", a_dupin)]
            {
                rec.error(name, None, a, &e);
            }
        }
    }

    let decs: Vec<&PrincipalDecomposition> = match prep.decs.iter().map(|d| d.as_ref()).collect::<Result<Vec<_>, _>>() {
        Ok(d) => d,
        Err(e) => {
            rec.error("principal_decomposition", None, "principal normal splitting of the shape operators", e);
            return;
        }
    };
    let recon = decs.iter().map(|d| d.reconstruction / d.scale.max(1.0)).fold(0.0, f64::max);
    rec.at_most("reconstruction", "principal normal splitting of the shape operators", recon, 1e-7);

    holonomic_checks(rec, item, &prep.samples, opts);

    let a_sep = "linear independence of principal normal differences";
    if control {
        rec.na("separation", a_sep, "negative control");
    } else if decs.iter().all(|d| d.k() >= 3) {
        match decs.iter().map(|d| separation_check(d)).collect::<crate::Result<Vec<_>>>() {
            Ok(seps) => {
                let min = seps.iter().map(|s| s.min_singular).fold(f64::INFINITY, f64::min);
                rec.at_least(
                    "separation",
                    a_sep,
                    min,
                    1e-3,
                    Some("smallest singular value of normalized difference pairs".into()),
                );
            }
            Err(e) => rec.error("separation", None, a_sep, &e),
        }
    } else {
        rec.na("separation", a_sep, "needs k >= 3");
    }

    let a_span = "span of principal normals and their differences";
    let a_umb = "umbilical direction orthogonal to the difference span";
    match decs.iter().map(|d| span_structure(d)).collect::<crate::Result<Vec<_>>>() {
        Ok(spans) => {
            let ok = spans.iter().all(|s| s.bounds_hold);
            let dims: Vec<(usize, usize)> = spans.iter().map(|s| (s.d, s.dim_sf)).collect();
            let distinct: std::collections::BTreeSet<_> = dims.into_iter().collect();
            rec.holds("span_bounds", a_span, ok, format!("(d, dim S) values {distinct:?}"));
            let umb: Vec<f64> = spans.iter().filter_map(|s| s.umbilic_residual).collect();
            if umb.is_empty() {
                rec.na("span_umbilic", a_umb, "difference span has full dimension");
            } else {
                rec.at_most("span_umbilic", a_umb, umb.iter().copied().fold(0.0, f64::max), 1e-8);
            }
        }
        Err(e) => {
            rec.error("span_bounds", None, a_span, &e);
            rec.error("span_umbilic", None, a_umb, &e);
        }
    }

    let a_q = "quasiumbilical normal frame";
    let a_cod = "codimension bound for a high-multiplicity principal normal";
    let a_orth = "orthogonality of principal normal differences";
    let one_high = decs.iter().all(|d| d.normals.iter().filter(|e| e.multiplicity >= 2).count() == 1);
    if control || n < 4 || !one_high {
        let why = "needs n >= 4, exactly one multiplicity >= 2 and an item that is not a negative control";
        rec.na("quasiumbilical_multiplicity", a_q, why);
        rec.na("codimension_bound", a_cod, why);
        rec.na("quasiumbilical_orthogonality", a_orth, why);
    } else {
        match decs.iter().map(|d| quasiumbilical_frame(d, 1e-6)).collect::<crate::Result<Vec<_>>>() {
            Ok(qs) => {
                let mult = qs.iter().all(|q| q.multiplicity_ok());
                let minm = qs.iter().flat_map(|q| q.multiplicities.iter().copied()).min().unwrap_or(0);
                rec.holds(
                    "quasiumbilical_multiplicity",
                    a_q,
                    mult,
                    format!("smallest eigenvalue multiplicity {minm}, need {}", n - 1),
                );
                let q0 = &qs[0];
                rec.holds(
                    "codimension_bound",
                    a_cod,
                    qs.iter().all(|q| q.codimension_ok()),
                    format!("p = {}, n - m = {}", q0.p, q0.n as i64 - q0.m as i64),
                );
                rec.at_most(
                    "quasiumbilical_orthogonality",
                    a_orth,
                    qs.iter().map(|q| q.max_cross).fold(0.0, f64::max),
                    1e-6,
                );
            }
            Err(e) => {
                rec.error("quasiumbilical_multiplicity", None, a_q, &e);
                rec.error("codimension_bound", None, a_cod, &e);
                rec.error("quasiumbilical_orthogonality", None, a_orth, &e);
            }
        }
    }

    schouten_relations(rec, item, prep, &decs);
    leaf_checks(rec, item, prep, &decs, opts);
}

fn holonomic_checks(rec: &mut Recorder, item: &CatalogItem, samples: &[Vec<f64>], opts: &PrincipalOptions) {
    let names = [
        ("holonomic_offdiag", "coordinate fields diagonalize the second fundamental form"),
        ("holonomic_christoffel", "orthogonal net has no mixed Christoffel symbols"),
        ("codazzi_principal", "Codazzi equation along a principal distribution"),
        ("codazzi_mixed", "Codazzi equation across three principal distributions"),
    ];
    if !item.expected.principal_chart {
        for (name, a) in names {
            rec.na(name, a, "chart is not principal");
        }
        return;
    }
    match holonomicity_check(item.map.as_ref(), &item.ambient, samples, 1e-6, opts) {
        Ok(h) => {
            rec.at_most(names[0].0, names[0].1, h.offdiag, 1e-7);
            rec.at_most(names[1].0, names[1].1, h.christoffel, 1e-7);
            rec.at_most(names[2].0, names[2].1, h.codazzi_c1, 1e-7);
            rec.at_most(names[3].0, names[3].1, h.codazzi_c2, 1e-7);
        }
        Err(e) => {
            for (name, a) in names {
                rec.error(name, None, a, &e);
            }
        }
    }
}

/// Relations between the normalized principal normals `η̂ = η − H`, the mean
/// curvature and the scalar curvature of a conformally flat submanifold.
fn schouten_relations(rec: &mut Recorder, item: &CatalogItem, prep: &Prepared, decs: &[&PrincipalDecomposition]) {
    let a1 = "length of the high-multiplicity normalized principal normal";
    let a2 = "normalized principal normals paired with the high-multiplicity one";
    let a3 = "pairs of simple normalized principal normals";
    let n = item.dim();
    let flat_ambient = matches!(item.ambient, AmbientSpace::Euclidean { .. });
    if !(item.expected.conformally_flat && flat_ambient && n >= 4) {
        let why = "needs a conformally flat item in Euclidean space with n >= 4";
        rec.na("schouten_high_norm", a1, why);
        rec.na("schouten_high_pairs", a2, why);
        rec.na("schouten_simple_pairs", a3, why);
        return;
    }
    let nf = n as f64;
    let (mut r1, mut r2, mut r3) = (None::<f64>, None::<f64>, None::<f64>);
    let up = |slot: &mut Option<f64>, v: f64| *slot = Some(slot.unwrap_or(0.0).max(v));
    for ((ext, pack), dec) in prep.exts.iter().zip(&prep.packs).zip(decs) {
        let h = &ext.mean_curvature;
        let hats: Vec<DVector<f64>> = dec.normals.iter().map(|e| &e.eta - h).collect();
        let ip = |a: &DVector<f64>, b: &DVector<f64>| ext.inner(a, b);
        let h2 = ip(h, h);
        let tau = pack.scalar;
        let s = dec.scale.powi(2).max(1.0);
        if let Some(r) = dec.normals.iter().position(|e| e.multiplicity >= 2) {
            let hr = &hats[r];
            up(&mut r1, (ip(hr, hr) - (h2 - tau / (nf * (nf - 1.0)))).abs() / s);
            for (j, hj) in hats.iter().enumerate() {
                if j != r {
                    let v: DVector<f64> = hj * 2.0 + hr * (nf - 2.0);
                    up(&mut r2, (ip(&v, &v).sqrt() - nf * ip(hr, hr).sqrt()).abs() / s.sqrt());
                }
            }
        }
        for i in 0..dec.k() {
            for j in i + 1..dec.k() {
                if dec.normals[i].multiplicity == 1 && dec.normals[j].multiplicity == 1 {
                    let (hi, hj) = (&hats[i], &hats[j]);
                    let lhs = ip(hi, hi) + (nf - 2.0) * ip(hi, hj) + ip(hj, hj);
                    up(&mut r3, (lhs - (nf * h2 - tau / (nf - 1.0))).abs() / s);
                }
            }
        }
    }
    match r1 {
        Some(v) => rec.at_most("schouten_high_norm", a1, v, 1e-7),
        None => rec.na("schouten_high_norm", a1, "no principal normal of multiplicity >= 2"),
    }
    match r2 {
        Some(v) => rec.at_most("schouten_high_pairs", a2, v, 1e-7),
        None => rec.na("schouten_high_pairs", a2, "no principal normal of multiplicity >= 2 with a partner"),
    }
    match r3 {
        Some(v) => rec.at_most("schouten_simple_pairs", a3, v, 1e-7),
        None => rec.na("schouten_simple_pairs", a3, "fewer than two simple principal normals"),
    }
}

fn leaf_checks(
    rec: &mut Recorder,
    item: &CatalogItem,
    prep: &Prepared,
    decs: &[&PrincipalDecomposition],
    opts: &PrincipalOptions,
) {
    let ex = &item.expected;
    let n = item.dim();
    let a_moore = "relative nullity lower bound for flat submanifolds";
    let flat_in_ambient = ex.constant_curvature.is_some_and(|c| (c - item.ambient.curvature()).abs() < 1e-12);
    let p = prep.exts.first().map(|e| e.p).unwrap_or(0);
    if flat_in_ambient && p < n {
        let nu = decs.iter().map(|d| nullity(d, opts).map(|(_, z)| z.nu0).unwrap_or(0)).min().unwrap_or(0);
        rec.holds("moore_bound", a_moore, nu + p >= n, format!("nu0 = {nu}, n - p = {}", n - p));
    } else {
        rec.na("moore_bound", a_moore, "needs curvature equal to the ambient curvature and p < n");
    }

    let names = [
        ("nullity_index", "relative nullity index"),
        ("leaf_pairs", "leaf invariant shared by pairs of principal normals"),
        ("leaf_high_norm", "leaf invariant and the high-multiplicity principal normal"),
        ("leaf_constancy", "leaf invariant constant along conullity leaves"),
        ("nullity_branch", "constant-curvature or cone branch"),
        ("branch_curvature", "curvature of the constant-curvature branch"),
    ];
    if ex.nu0.unwrap_or(0) == 0 {
        for (name, a) in names {
            rec.na(name, a, "no relative nullity declared");
        }
        return;
    }
    match nullity_and_leaf_invariants(item.map.as_ref(), &item.ambient, &prep.samples, opts) {
        Ok(li) => {
            let want = ex.nu0.unwrap_or(0);
            rec.holds(names[0].0, names[0].1, li.nu0 == want, format!("nu0 = {}, declared {want}", li.nu0));
            let s = li.lambda_scale.max(1.0);
            rec.at_most(names[1].0, names[1].1, li.pair_spread / s, 1e-7);
            match li.high_defect {
                Some(d) => rec.at_most(names[2].0, names[2].1, d / s, 1e-7),
                None => rec.na(names[2].0, names[2].1, "k = n or no high-multiplicity normal"),
            }
            rec.at_most_note(
                names[3].0,
                names[3].1,
                li.leaf_derivative / s,
                1e-7,
                format!("derivative along the rulings {:.3e}", li.ruling_derivative / s),
            );
            match ex.branch {
                Some(b) => rec.holds(
                    names[4].0,
                    names[4].1,
                    li.branch == b,
                    format!("measured {:?}, declared {b:?}", li.branch),
                ),
                None => rec.na(names[4].0, names[4].1, "no declared branch"),
            }
            if li.branch == NullityBranch::ConstantCurvature {
                let c = ex.constant_curvature.unwrap_or(0.0);
                let d = prep.packs.iter().map(|p| constant_curvature_defect(p, c)).fold(0.0, f64::max);
                rec.at_most_note(names[5].0, names[5].1, d, 1e-8, format!("c = {c}"));
            } else {
                rec.na(names[5].0, names[5].1, "cone branch");
            }
        }
        Err(e) => {
            for (name, a) in names {
                rec.error(name, None, a, &e);
            }
        }
    }
}

/// Three conformal factors used to cross-check the curvature of `e^{2ω} g`.
fn test_factors(x: &[Jet]) -> [Jet; 3] {
    let n = x.len();
    let linear = &(&(&x[0] * 0.3) - &(&x[1] * 0.2)) + &(&x[n - 1] * 0.1);
    let log = (dot(x, x) + 1.0).ln() * 0.5;
    let trig = &(&(&x[0].sin() * &x[1].cos()) * 0.2) + &(x[n - 1].square() * 0.1);
    [linear, log, trig]
}

fn conformal_suite(
    rec: &mut Recorder,
    item: &CatalogItem,
    prep: &Prepared,
    opts: &PrincipalOptions,
    rng: &mut ChaCha8Rng,
) {
    let n = item.dim();
    let a = "quadruple identity for sectional curvatures";
    if n < 4 {
        rec.na("quadruple_identity", a, format!("needs n >= 4, have {n}"));
    } else {
        match conformal_flatness_test(&prep.packs, 50, 1e-8, rng) {
            Ok(fl) if is_control(item, Suite::Conformal) => {
                let note =
                    if fl.residual > 0.05 { "negative control confirmed" } else { "negative control not confirmed" };
                rec.at_least("quadruple_identity", a, fl.residual, 0.05, Some(note.into()));
            }
            Ok(fl) => {
                let note =
                    (!item.expected.conformally_flat).then(|| "item is not declared conformally flat".to_string());
                rec.bounded("quadruple_identity", None, a, fl.residual, 1e-6, Bound::AtMost, note);
            }
            Err(e) => rec.error("quadruple_identity", None, a, &e),
        }
    }

    let a_c = "curvature under a conformal change of metric";
    let a_d = "metric duality of Q and Q0";
    let pts = &prep.samples[..prep.samples.len().min(20)];
    let cc: crate::Result<(f64, f64)> = pts.iter().try_fold((0.0f64, 0.0f64), |(c, d), x| {
        let g = metric_jets(item, x)?;
        let mut out = (c, d);
        for w in test_factors(&seed(x, 2)) {
            let ch = conformal_change(&g, &w)?;
            out.0 = out.0.max(ch.curvature_residual()).max(ch.connection_residual());
            out.1 = out.1.max(ch.duality_residual());
        }
        Ok(out)
    });
    match cc {
        Ok((c, d)) => {
            rec.at_most_note(
                "conformal_change_curvature",
                a_c,
                c,
                1e-7,
                format!("three factors at {} points", pts.len()),
            );
            rec.at_most("q_duality", a_d, d, 1e-9);
        }
        Err(e) => {
            rec.error("conformal_change_curvature", None, a_c, &e);
            rec.error("q_duality", None, a_d, &e);
        }
    }

    let a_f = "conformal factor of the induced metric";
    let a_q1 = "Q vanishes across eigendistributions";
    let a_q2 = "Q on the high-multiplicity distribution";
    match &item.conformal {
        Some(cs) => {
            match prep.exts.iter().map(|e| cs.metric_residual(e)).collect::<crate::Result<Vec<_>>>() {
                Ok(v) => rec.at_most("metric_factor", a_f, v.into_iter().fold(0.0, f64::max), 1e-9),
                Err(e) => rec.error("metric_factor", None, a_f, &e),
            }
            match q_tensor_checks(item.map.as_ref(), &item.ambient, cs, &prep.samples, opts) {
                Ok(q) => {
                    rec.at_most("q_offdiagonal", a_q1, q.q_offdiag, 1e-7);
                    match q.q_high {
                        Some(v) => rec.at_most("q_high_multiplicity", a_q2, v, 1e-7),
                        None => rec.na("q_high_multiplicity", a_q2, "no distribution of dimension >= 2"),
                    }
                }
                Err(e) => {
                    rec.error("q_offdiagonal", None, a_q1, &e);
                    rec.error("q_high_multiplicity", None, a_q2, &e);
                }
            }
        }
        None => {
            for (name, a) in [("metric_factor", a_f), ("q_offdiagonal", a_q1), ("q_high_multiplicity", a_q2)] {
                rec.na(name, a, "no explicit conformal factor");
            }
        }
    }

    let a_s = "principal normals under a conformal change of the ambient metric";
    match moebius_shift_residual(item, prep, opts) {
        Ok(v) => rec.at_most_note("moebius_normal_shift", a_s, v, 1e-7, "inversion centered off the image".into()),
        Err(e) => rec.error("moebius_normal_shift", None, a_s, &e),
    }
}

/// Principal normals of `τ∘f` for an inversion `τ`, predicted from those of
/// `f` and compared with a direct decomposition.
fn moebius_shift_residual(item: &CatalogItem, prep: &Prepared, opts: &PrincipalOptions) -> crate::Result<f64> {
    let AmbientSpace::Euclidean { dim } = item.ambient else {
        return Err(Error::NotApplicable("needs a Euclidean ambient".into()));
    };
    let f0 = evaluate(item.map.as_ref(), &item.domain().center())?;
    let mut reach = 1.0f64;
    for e in &prep.exts {
        reach = reach.max((&e.position - DVector::from_column_slice(&f0)).norm() + 1.0);
    }
    let mut a = f0.clone();
    a[dim - 1] += 1.5 * reach;
    let far = ChartDomain::around(&vec![0.0; dim], 1e6);
    let a1 = a.clone();
    let tau: MapRef = FnMap::new(far.clone(), dim, move |y| {
        let d: Vec<Jet> = y.iter().zip(&a1).map(|(c, s)| c - *s).collect();
        let r = dot(&d, &d).recip();
        d.iter().map(|c| c * &r).collect()
    })
    .into_ref();
    let lambda: MapRef = FnMap::new(far, 1, move |y| {
        let d: Vec<Jet> = y.iter().zip(&a).map(|(c, s)| c - *s).collect();
        vec![dot(&d, &d).recip()]
    })
    .into_ref();
    let (f, t) = (item.map.clone(), tau.clone());
    let image: MapRef = FnMap::new(item.domain().clone(), dim, move |x| t.eval(&f.eval(x))).into_ref();
    let mut worst = 0.0f64;
    for (ext, x) in prep.exts.iter().zip(&prep.samples).take(20) {
        let pred = transported_principal_normals(ext, tau.as_ref(), lambda.as_ref(), opts)?;
        let direct = principal_decomposition(&fundamental_forms(image.as_ref(), &item.ambient, x)?, opts)?;
        if direct.k() != pred.len() {
            return Ok(f64::INFINITY);
        }
        let scale = direct.normals.iter().map(|e| e.eta.amax()).fold(1.0, f64::max);
        for p in &pred {
            let best = direct.normals.iter().map(|e| (&e.eta - p).amax()).fold(f64::INFINITY, f64::min);
            worst = worst.max(best / scale);
        }
    }
    Ok(worst)
}

fn lightcone_suite(
    rec: &mut Recorder,
    item: &CatalogItem,
    prep: &Prepared,
    opts: &PrincipalOptions,
    rng: &mut ChaCha8Rng,
) {
    let big_n = item.ambient.realization_dim();
    let model = match build_cone_model(big_n) {
        Ok(m) => m,
        Err(e) => {
            rec.error("model_identities", None, "light-cone model of Euclidean space", &e);
            return;
        }
    };
    rec.at_most("model_identities", "light-cone model of Euclidean space", model.invariant_defect(), 1e-14);

    let mut iso = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..big_n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..big_n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = model.psi(&x) - model.psi(&y);
        let e2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        iso = iso.max((model.inner(&d, &d) - e2).abs() / e2.max(1.0));
    }
    rec.at_most("model_isometry", "isometric embedding of Euclidean space into the light cone", iso, 1e-12);

    let a_sff = "second fundamental form of the model embedding";
    let a_lift = "flat lift into the light cone";
    let AmbientSpace::Euclidean { .. } = item.ambient else {
        rec.na("model_sff", a_sff, "needs a Euclidean ambient");
        rec.na("flat_lift", a_lift, "needs a Euclidean ambient");
        return;
    };
    match prep
        .exts
        .iter()
        .take(10)
        .map(|e| psi_sff_residual(&model, e.position.as_slice()))
        .collect::<crate::Result<Vec<_>>>()
    {
        Ok(v) => rec.at_most("model_sff", a_sff, v.into_iter().fold(0.0, f64::max), 1e-10),
        Err(e) => rec.error("model_sff", None, a_sff, &e),
    }
    let Some(cs) = &item.conformal else {
        rec.na("flat_lift", a_lift, "no explicit conformal factor");
        return;
    };
    let (li, inv) = match flat_lift(item.map.clone(), cs, &model, &prep.samples) {
        Ok(v) => v,
        Err(e) => {
            rec.error("flat_lift", None, a_lift, &e);
            return;
        }
    };
    rec.at_most("lift_metric", "flat lift is isometric to the flat metric", inv.metric, 1e-8);
    rec.at_most("lift_umbilic", "position vector of the lift is an umbilical normal", inv.umbilic, 1e-8);
    rec.at_most("lift_parallel", "position vector of the lift is parallel", inv.parallel, 1e-8);
    rec.at_most("lift_null", "flat lift lies in the light cone", inv.cone, 1e-8);
    rec.at_most("lift_scale", "pairing of the lift with the null direction", inv.w_defect, 1e-8);

    let a_ls = "second fundamental form of the flat lift";
    let a_ld = "diagonal of the lift's second fundamental form";
    match prep.samples.iter().map(|x| lift_second_fundamental_form(&li, x)).collect::<crate::Result<Vec<_>>>() {
        Ok(v) => {
            rec.at_most("lift_sff", a_ls, v.iter().map(|c| c.residual).fold(0.0, f64::max), 1e-7);
            rec.at_most("lift_sff_diagonal", a_ld, v.iter().map(|c| c.diagonal_residual).fold(0.0, f64::max), 1e-7);
        }
        Err(e) => {
            rec.error("lift_sff", None, a_ls, &e);
            rec.error("lift_sff_diagonal", None, a_ld, &e);
        }
    }

    let a_rt = "projection from the light cone recovers the immersion";
    let a_pm = "metric of the projection from the light cone";
    let proj = project_from_cone(li.lift.clone(), &model, POLE_REL_EPS);
    let rt: crate::Result<f64> = prep.samples.iter().try_fold(0.0f64, |w, x| {
        let back = proj.eval_checked(x)?;
        let orig = evaluate(item.map.as_ref(), x)?;
        let s = orig.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Ok(back.iter().zip(&orig).fold(w, |m, (a, b)| m.max((a - b).abs() / s)))
    });
    match rt {
        Ok(v) => rec.at_most("round_trip", a_rt, v, 1e-9),
        Err(e) => rec.error("round_trip", None, a_rt, &e),
    }
    match check_projection(&proj, li.lift.as_ref(), &model, &prep.samples) {
        Ok(pc) => rec.at_most_note(
            "projection_metric",
            a_pm,
            pc.metric_residual,
            1e-9,
            format!("{} checked, {} masked", pc.checked, pc.masked.len()),
        ),
        Err(e) => rec.error("projection_metric", None, a_pm, &e),
    }

    let a_c = "principal coordinates and normals shared by f and its lift";
    let a_o = "lift is holonomic in the principal coordinates of f";
    let a_n = "principal normals of the lift";
    match lift_correspondence_check(item.map.clone(), Some(cs), &model, &prep.samples, opts) {
        Ok(c) => {
            rec.holds(
                "lift_correspondence",
                a_c,
                c.matches(),
                format!(
                    "k {} vs {}, multiplicities {:?} vs {:?}",
                    c.k_f, c.k_lift, c.multiplicities_f, c.multiplicities_lift
                ),
            );
            if item.expected.principal_chart {
                rec.at_most("lift_offdiag", a_o, c.lift_offdiag, 1e-8);
            } else {
                rec.na("lift_offdiag", a_o, "chart is not principal");
            }
            rec.at_most("lift_principal_normals", a_n, c.normal_residual, 1e-7);
        }
        Err(e) => {
            rec.error("lift_correspondence", None, a_c, &e);
            rec.error("lift_offdiag", None, a_o, &e);
            rec.error("lift_principal_normals", None, a_n, &e);
        }
    }
}

fn ribaucour_suite(rec: &mut Recorder, item: &CatalogItem, sc: &Scenario) -> Option<FamilyReport> {
    let a = "conformally flat family from Ribaucour transforms of the flat lift";
    let fam = match conformally_flat_family(item, &sc.family_options()) {
        Ok(f) => f,
        Err(e) => {
            rec.error("family", None, a, &e);
            return None;
        }
    };
    let ns = &fam.nullspace;
    let h2 = ns.spacing * ns.spacing;
    rec.at_most_note(
        "condition_analytic",
        "constant-vector solutions of the Ribaucour condition",
        ns.analytic_residual,
        h2,
        format!("tolerance h^2 with h = {}", ns.spacing),
    );
    rec.at_least(
        "nullspace_dim",
        "null space of the discretized Ribaucour condition",
        ns.dim as f64,
        ns.lower_bound as f64,
        Some(format!("{} unknowns, {} equations, threshold {:.3e}", ns.unknowns, ns.equations, ns.threshold)),
    );
    let cap = ns.analytic_capture.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    rec.at_least("analytic_capture", "constant-vector family inside the numerical null space", cap, 0.999, None);
    rec.at_most_note(
        "compatibility",
        "Hessian of the solution commutes with the shape operators",
        ns.compatibility,
        100.0 * h2,
        "tolerance 100 h^2".into(),
    );

    let al = &fam.algebra;
    rec.at_most(
        "reflection_cone",
        "reflection data keep the transform in the light cone",
        al.reflection_cone_defect,
        1e-10,
    );
    rec.at_least(
        "shifted_leaves_cone",
        "nonzero light-cone constant leaves the cone",
        al.shifted_cone_defect,
        1e-3,
        None,
    );
    rec.at_most("cone_defect_identity", "cone defect of a Ribaucour transform", al.shifted_defect_identity, 1e-8);
    rec.at_most("scaling_invariance", "data-scaling invariance of the transform", al.scaling_invariance, 1e-12);

    for m in &fam.members {
        let label = Some(m.label.as_str());
        let am = "member of the conformally flat family";
        if let Some(err) = &m.error {
            if m.kind != "grid" {
                rec.push("member", label, am, None, None, Bound::AtMost, Status::Error, Some(err.clone()), false);
            }
            continue;
        }
        let mut bound = |name: &str, anchor: &str, v: Option<f64>, tol: f64| match v {
            Some(v) => rec.bounded(name, label, anchor, v, tol, Bound::AtMost, None),
            None => rec.push(
                name,
                label,
                anchor,
                None,
                None,
                Bound::AtMost,
                Status::NotApplicable,
                Some("not computed".into()),
                false,
            ),
        };
        match m.kind.as_str() {
            "identity" => {
                bound("identity_member", "vanishing data give the identity transform", m.identity_defect, 1e-12)
            }
            "reflection" => {
                bound("reflection_cone_defect", "reflection stays in the light cone", Some(m.cone_defect), 1e-10);
                bound("reflection_metric", "reflection preserves the flat metric", Some(m.metric_residual), 1e-9);
                bound("reflection_curvature", "transformed lift is flat", Some(m.curvature_residual), 1e-8);
                bound("reflection_quadruple", "projected member is conformally flat", m.quadruple_residual, 1e-6);
                bound(
                    "reflection_holonomic",
                    "projected member is holonomic in the same coordinates",
                    m.holonomic_offdiag,
                    1e-7,
                );
                let st = if m.retained { Status::Pass } else { Status::Fail };
                rec.push(
                    "reflection_retained",
                    label,
                    "flatness filter keeps reflections",
                    Some(if m.retained { 0.0 } else { 1.0 }),
                    None,
                    Bound::Holds,
                    st,
                    None,
                    false,
                );
            }
            _ if m.retained => {
                bound("grid_quadruple", "projected member is conformally flat", m.quadruple_residual, 1e-6);
                bound(
                    "grid_holonomic",
                    "projected member is holonomic in the same coordinates",
                    m.holonomic_offdiag,
                    1e-7,
                );
            }
            _ => {}
        }
    }
    Some(fam)
}

/// Run the selected suites of a validated scenario.
pub fn run_scenario(sc: &Scenario) -> Result<Run, RunError> {
    sc.validate()?;
    let suites = sc.suite.resolve()?;
    let item = catalog::build(&sc.item, &sc.params).map_err(|e| ConfigError::field("params", e.to_string()))?;
    let opts = PrincipalOptions::default();
    let mut checks = Vec::new();
    let mut timings = BTreeMap::new();
    let mut family = None;

    let pointwise = suites.iter().any(|s| *s != Suite::Ribaucour);
    let t0 = Instant::now();
    let prep = if pointwise { Some(prepare(&item, item.samples(sc.samples, sc.seed), &opts)) } else { None };
    if pointwise {
        timings.insert("prepare".to_string(), t0.elapsed().as_secs_f64());
    }

    for suite in &suites {
        let t = Instant::now();
        let mut rec = Recorder::new(*suite, sc);
        let mut rng = ChaCha8Rng::seed_from_u64(suite_seed(sc, *suite));
        match (suite, &prep) {
            (Suite::Ribaucour, _) => family = ribaucour_suite(&mut rec, &item, sc),
            (_, Some(Err(e))) => rec.error("fundamental_forms", None, "second fundamental form at the samples", e),
            (Suite::Extrinsic, Some(Ok(p))) => extrinsic_suite(&mut rec, &item, p, &mut rng),
            (Suite::Principal, Some(Ok(p))) => principal_suite(&mut rec, &item, p, &opts),
            (Suite::Conformal, Some(Ok(p))) => conformal_suite(&mut rec, &item, p, &opts, &mut rng),
            (Suite::Lightcone, Some(Ok(p))) => lightcone_suite(&mut rec, &item, p, &opts, &mut rng),
            (_, None) => unreachable!("pointwise data prepared for pointwise suites"),
        }
        checks.extend(rec.checks);
        timings.insert(suite.name().to_string(), t.elapsed().as_secs_f64());
    }

    let mut echo = sc.clone();
    echo.output = OutputPaths::default();
    let deterministic = Deterministic {
        scenario: echo,
        item: ItemSummary::of(&item),
        suites,
        summary: Summary::of(&checks),
        exit_code: exit_code_of(&checks),
        checks,
        family: family.clone(),
    };
    let hash = deterministic.digest();
    let report = Report { schema: SCHEMA_VERSION, deterministic, hash, environment: Environment::current(), timings };
    Ok(Run { report, family })
}

/// The Ribaucour suite alone, whatever the scenario selects.
pub fn run_pipeline(sc: &Scenario) -> Result<Run, RunError> {
    let sc = sc.clone().with_suites(&[Suite::Ribaucour]);
    run_scenario(&sc)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// File name of a member's grid samples.
pub fn member_file_name(index: usize, label: &str) -> String {
    let clean: String =
        label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("member_{index:02}_{clean}.grid")
}

/// Write the report, the CSV table and the family directory as configured.
/// Returns the paths written.
pub fn write_outputs(run: &Run, out: &OutputPaths) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    if let Some(p) = &out.report {
        let text = serde_json::to_string_pretty(&run.report).expect("report serializes");
        write_file(p, text.as_bytes())?;
        written.push(p.clone());
    }
    if let Some(p) = &out.csv {
        write_file(p, run.report.to_csv().as_bytes())?;
        written.push(p.clone());
    }
    if let (Some(dir), Some(fam)) = (&out.family_dir, &run.family) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let header = GridHeader::for_domain(&fam.domain, fam.ambient_dim);
        let mut files = BTreeMap::new();
        for (i, m) in fam.members.iter().enumerate() {
            if m.error.is_some() || m.samples.is_empty() {
                continue;
            }
            let values: Vec<f64> = m.samples.iter().flatten().copied().collect();
            let name = member_file_name(i, &m.label);
            let path = dir.join(&name);
            let mut buf = Vec::new();
            write_grid(&mut buf, &header, &values).map_err(io_err(&path))?;
            write_file(&path, &buf)?;
            files.insert(m.label.clone(), name);
            written.push(path);
        }
        #[derive(Serialize)]
        struct FamilyFile<'a> {
            family: &'a FamilyReport,
            files: BTreeMap<String, String>,
        }
        let path = dir.join("family.json");
        let text = serde_json::to_string_pretty(&FamilyFile { family: fam, files }).expect("family serializes");
        write_file(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Largest entry of a matrix, for callers formatting report notes.
pub fn matrix_scale(m: &DMatrix<f64>) -> f64 {
    max_abs(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_report_their_position() {
        let e = Scenario::from_json("{\n  \"schema\": 1,\n  \"item\": \"flat_inclusion\",\n  \"sute\": \"all\"\n}")
            .unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.message.contains("sute"), "{e}");
    }

    #[test]
    fn validation_names_the_field() {
        let e = Scenario::from_json(r#"{"schema": 1, "item": "flat_inclusion", "grid": 3}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("grid"));
        let e = Scenario::from_json(r#"{"schema": 2, "item": "flat_inclusion"}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("schema"));
        let e = Scenario::from_json(r#"{"schema": 1, "item": "klein_bottle"}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("item"));
        let e = Scenario::from_json(r#"{"schema": 1, "item": "s3xs1", "suite": ["principal", "magic"]}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("suite"));
    }

    #[test]
    fn suite_lists_are_sorted_and_deduplicated() {
        let s = SuiteSelection::Many(vec!["lightcone".into(), "extrinsic".into(), "lightcone".into()]);
        assert_eq!(s.resolve().unwrap(), vec![Suite::Extrinsic, Suite::Lightcone]);
        assert_eq!(SuiteSelection::default().resolve().unwrap(), Suite::ALL.to_vec());
    }

    #[test]
    fn exit_code_prefers_failures_over_degeneracies() {
        let mk = |status, degenerate| Check {
            name: "x".into(),
            anchor: "y".into(),
            residual: None,
            tolerance: None,
            bound: Bound::AtMost,
            status,
            pass: false,
            note: None,
            degenerate,
        };
        assert_eq!(exit_code_of(&[mk(Status::Pass, false)]), 0);
        assert_eq!(exit_code_of(&[mk(Status::Error, true)]), 3);
        assert_eq!(exit_code_of(&[mk(Status::Error, true), mk(Status::Fail, false)]), 1);
        assert_eq!(exit_code_of(&[mk(Status::Error, false)]), 1);
    }

    #[test]
    fn member_names_are_filesystem_safe() {
        assert_eq!(member_file_name(3, "reflection e1"), "member_03_reflection_e1.grid");
    }
}
