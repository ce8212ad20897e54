//! Batch experiment driver: JSON config in, JSON report out.
//!
//! Every pipeline number is computed at the configured resolution and at a
//! refined one (half stencil step, doubled quadrature orders). Reports carry
//! the refined value with `|refined - configured|` as its uncertainty, and an
//! assertion whose margin is inside that uncertainty is reported as
//! insufficient resolution instead of passing or failing.

use std::path::PathBuf;
use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundles::{
    default_samples, dual_curvature, griffiths_min, line_curvature, nakano_form, proj_weight,
    verify_total_positivity, Base, BundleSpec, LineWeight, Perturbation, GRIFFITHS_GRID,
};
use crate::direct_image::{
    default_fiber_samples, gram_matrix, harmonicity_residual, l2_curvature, second_term_residual,
    L2Curvature, Resolution,
};
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, Stencil};
use crate::linalg::{eigvalsh, verdict_from_min, C64};
use crate::oracles::{
    beta_gram_entry, bott_p1, cech_p1, classify_split, fs_oracle, gamma_decomposition_r2,
    split_spectrum, weights_r2, SplitClass,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_RESOLUTION: i32 = 4;
pub const EXIT_ASSERTION: i32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Check,
    ScanK,
    NefLimit,
    Decompose,
    Harmonicity,
    Cohomology,
    OracleCompare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::ScanK => "scan-k",
            Command::NefLimit => "nef-limit",
            Command::Decompose => "decompose",
            Command::Harmonicity => "harmonicity",
            Command::Cohomology => "cohomology",
            Command::OracleCompare => "oracle-compare",
        }
    }
}

/// Degree entry: a bare integer on `P1`, or one integer per base factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DegreeEntry {
    Scalar(i64),
    Tuple(Vec<i64>),
}

impl DegreeEntry {
    fn to_vec(&self) -> Vec<i64> {
        match self {
            DegreeEntry::Scalar(d) => vec![*d],
            DegreeEntry::Tuple(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub radial: usize,
    pub angular: Option<usize>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { radial: 64, angular: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative band for positive-definiteness verdicts.
    pub margin: f64,
    /// Floor `lambda_min` must clear for ample bundles.
    pub positivity: f64,
    /// Allowed negativity of `lambda_min` for nef bundles.
    pub nef: f64,
    /// Bound on the decomposition residual ratio for unperturbed weights at the origin.
    pub residual: f64,
    /// Expected residual ratio bound recorded for diagnostic rows.
    pub residual_diagnostic: f64,
    pub harmonicity: f64,
    /// Lower bound on the least-squares slope of `lambda_min(k)`.
    pub slope: f64,
    /// Relative tolerance of pipeline-vs-oracle spectra.
    pub oracle: f64,
    /// Normalised gap allowed in the dual-curvature identity.
    pub duality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            positivity: 1e-3,
            nef: 1e-4,
            residual: 1e-6,
            residual_diagnostic: 1e-3,
            harmonicity: 1e-8,
            slope: 0.0,
            oracle: 1e-3,
            duality: 1e-10,
        }
    }
}

/// One experiment, as read from the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default = "default_base")]
    pub base: Base,
    #[serde(default)]
    pub degrees: Vec<DegreeEntry>,
    #[serde(default)]
    pub perturbations: Vec<Option<String>>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub k_range: Option<[usize; 2]>,
    /// `[re, im]` per base coordinate; the origin when empty.
    #[serde(default)]
    pub xi: Vec<[f64; 2]>,
    #[serde(default)]
    pub stencil: Stencil,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Largest `lambda_1` enumerated by `cohomology`.
    #[serde(default)]
    pub lambda_bound: Option<u32>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn default_base() -> Base {
    Base::P1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// A `P1` config with the given degrees and `k`.
    pub fn p1(command: Command, degrees: &[i64], k: usize) -> Self {
        Self {
            command: Some(command),
            base: Base::P1,
            degrees: degrees.iter().map(|&d| DegreeEntry::Scalar(d)).collect(),
            perturbations: Vec::new(),
            k: Some(k),
            k_range: None,
            xi: Vec::new(),
            stencil: Stencil::default(),
            quadrature: QuadratureConfig::default(),
            tolerances: Tolerances::default(),
            lambda_bound: None,
            output: None,
            csv: None,
        }
    }

    pub fn bundle(&self) -> Result<BundleSpec> {
        if self.degrees.is_empty() {
            return Err(Error::Config("'degrees' must list at least one summand".into()));
        }
        if !self.perturbations.is_empty() && self.perturbations.len() != self.degrees.len() {
            return Err(Error::Config(format!(
                "{} perturbations given for {} summands",
                self.perturbations.len(),
                self.degrees.len()
            )));
        }
        let mut summands = Vec::with_capacity(self.degrees.len());
        for (i, d) in self.degrees.iter().enumerate() {
            let mut w = LineWeight::fubini_study(d.to_vec());
            if let Some(Some(p)) = self.perturbations.get(i) {
                w = w.with_perturbation(Perturbation::parse(p)?);
            }
            summands.push(w);
        }
        BundleSpec::new(self.base, summands)
    }

    pub fn ks(&self) -> Result<Vec<usize>> {
        match (self.k, self.k_range) {
            (Some(k), None) => Ok(vec![k]),
            (None, Some([lo, hi])) if lo <= hi => Ok((lo..=hi).collect()),
            (None, Some(r)) => Err(Error::Config(format!("empty k_range {r:?}"))),
            (Some(_), Some(_)) => Err(Error::Config("give either 'k' or 'k_range', not both".into())),
            (None, None) => Err(Error::Config("missing 'k' or 'k_range'".into())),
        }
    }

    pub fn xi(&self) -> Result<ChartPoint> {
        let m = self.base.dim();
        if self.xi.is_empty() {
            return Ok(ChartPoint::origin(m));
        }
        if self.xi.len() != m {
            return Err(Error::Config(format!("xi has {} coordinates, base {} needs {m}", self.xi.len(), self.base)));
        }
        ChartPoint::new(self.xi.iter().map(|&[re, im]| C64::new(re, im)).collect())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolution(&self, rank: usize) -> Result<Resolution> {
        self.stencil.validate()?;
        let mut res = Resolution::default_for_rank(rank);
        res.stencil = self.stencil;
        if self.quadrature != QuadratureConfig::default() || rank == 2 {
            res.radial_order = self.quadrature.radial;
            res.angular_order = self.quadrature.angular;
        }
        if res.radial_order < 4 || res.angular_order.is_some_and(|a| a < 4) {
            return Err(Error::Config("quadrature orders must be >= 4".into()));
        }
        Ok(res)
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub quadrature: Option<usize>,
    pub angular: Option<usize>,
    pub step: Option<f64>,
    pub tol: Option<f64>,
}

impl Overrides {
    /// Applies overrides; `--tol` sets the primary tolerance of `command`.
    pub fn apply(&self, cfg: &mut ExperimentConfig, command: Command) {
        if let Some(n) = self.quadrature {
            cfg.quadrature.radial = n;
        }
        if let Some(n) = self.angular {
            cfg.quadrature.angular = Some(n);
        }
        if let Some(h) = self.step {
            cfg.stencil.step = h;
        }
        if let Some(t) = self.tol {
            let tol = &mut cfg.tolerances;
            match command {
                Command::Check => tol.positivity = t,
                Command::ScanK => tol.slope = t,
                Command::NefLimit => tol.nef = t,
                Command::Decompose => tol.residual = t,
                Command::Harmonicity => tol.harmonicity = t,
                Command::OracleCompare => tol.oracle = t,
                Command::Cohomology => {}
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEq,
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    InsufficientResolution,
    NoAssert,
}

/// `value <relation> threshold`, judged against the resolution uncertainty.
#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    pub relation: Relation,
    pub value: f64,
    pub threshold: f64,
    pub uncertainty: f64,
    pub status: Status,
}

impl Assertion {
    pub fn check(name: impl Into<String>, value: f64, relation: Relation, threshold: f64, uncertainty: f64) -> Self {
        let margin = match relation {
            Relation::Greater | Relation::GreaterEq => value - threshold,
            Relation::Less | Relation::LessEq => threshold - value,
        };
        let holds = match relation {
            Relation::Greater | Relation::Less => margin > 0.0,
            Relation::GreaterEq | Relation::LessEq => margin >= 0.0,
        };
        let status = if !margin.is_finite() || !value.is_finite() {
            Status::Fail
        } else if uncertainty > 0.0 && margin.abs() < uncertainty {
            Status::InsufficientResolution
        } else if holds {
            Status::Pass
        } else {
            Status::Fail
        };
        Self { name: name.into(), relation, value, threshold, uncertainty, status }
    }

    /// Recorded for the report without affecting the exit code.
    pub fn diagnostic(name: impl Into<String>, value: f64, relation: Relation, threshold: f64, uncertainty: f64) -> Self {
        Self { status: Status::NoAssert, ..Self::check(name, value, relation, threshold, uncertainty) }
    }
}

/// A finished experiment.
#[derive(Clone, Debug)]
pub struct Report {
    pub command: Command,
    pub results: Value,
    pub assertions: Vec<Assertion>,
    pub csv: Option<String>,
    pub elapsed_ms: Option<u128>,
    config_echo: Value,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.assertions.iter().any(|a| a.status == Status::Fail) {
            EXIT_ASSERTION
        } else if self.assertions.iter().any(|a| a.status == Status::InsufficientResolution) {
            EXIT_RESOLUTION
        } else {
            EXIT_OK
        }
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    /// JSON document with keys in sorted order.
    pub fn to_json(&self) -> Value {
        let status = match self.exit_code() {
            EXIT_OK => "pass",
            EXIT_RESOLUTION => "insufficient-resolution",
            _ => "fail",
        };
        let mut doc = json!({
            "command": self.command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config_echo,
            "results": self.results,
            "assertions": self.assertions,
            "status": status,
            "exit_code": self.exit_code(),
        });
        if let Some(ms) = self.elapsed_ms {
            doc["timings"] = json!({ "total_ms": ms });
        }
        doc
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("report serialises")
    }
}

fn measured(fine: f64, coarse: f64) -> Value {
    json!({ "value": fine, "uncertainty": (fine - coarse).abs() })
}

fn measured_list(fine: &[f64], coarse: &[f64]) -> Value {
    Value::Array(fine.iter().zip(coarse).map(|(&f, &c)| measured(f, c)).collect())
}

/// Curvature at the configured and refined resolutions.
struct CurvaturePair {
    fine: L2Curvature,
    coarse: L2Curvature,
}

impl CurvaturePair {
    fn compute(bundle: &BundleSpec, k: usize, xi: &ChartPoint, res: &Resolution) -> Result<Self> {
        let coarse = l2_curvature(bundle, k, xi, res)?;
        let fine = l2_curvature(bundle, k, xi, &res.refined_for(k, bundle.rank()))?;
        Ok(Self { fine, coarse })
    }

    fn lambda_min(&self) -> (f64, f64) {
        (self.fine.eigen.min, (self.fine.eigen.min - self.coarse.eigen.min).abs())
    }

    fn trace(&self) -> f64 {
        self.fine.form.matrix.trace()
    }

    fn dim(&self) -> usize {
        self.fine.form.matrix.dim()
    }
}

/// Runs one experiment. Configuration problems surface as [`Error::Config`].
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Report> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Config(format!(
                "config is for '{}' but '{}' was requested",
                c.name(),
                command.name()
            )));
        }
    }
    let started = Instant::now();
    let (results, assertions, csv) = match command {
        Command::Check => run_check(cfg)?,
        Command::ScanK => run_scan_k(cfg)?,
        Command::NefLimit => run_nef_limit(cfg)?,
        Command::Decompose => run_decompose(cfg, false)?,
        Command::Harmonicity => run_decompose(cfg, true)?,
        Command::Cohomology => run_cohomology(cfg)?,
        Command::OracleCompare => run_oracle_compare(cfg)?,
    };
    let mut echo = serde_json::to_value(cfg)?;
    echo["command"] = json!(command.name());
    Ok(Report {
        command,
        results,
        assertions,
        csv,
        elapsed_ms: Some(started.elapsed().as_millis()),
        config_echo: echo,
    })
}

type Outcome = (Value, Vec<Assertion>, Option<String>);

fn run_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = cfg.bundle()?;
    let res = cfg.resolution(bundle.rank())?;
    let xi = cfg.xi()?;
    let tol = &cfg.tolerances;
    let class = classify_split(&bundle.degrees());
    let weight_check = |k: usize| -> Result<Value> {
        let w = proj_weight(&bundle, k)?;
        let tp = verify_total_positivity(&w, &default_samples(bundle.base_dim(), w.fiber_dim()), &res.stencil, tol.margin)?;
        let tp = if class == SplitClass::NotNef { tp } else { tp.require_nonnegative()? };
        Ok(serde_json::to_value(tp)?)
    };

    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for k in cfg.ks()? {
        let total = weight_check(k)?;
        let pair = CurvaturePair::compute(&bundle, k, &xi, &res)?;
        let (lmin, lmin_u) = pair.lambda_min();
        let verdict = verdict_from_min(lmin, pair.trace(), pair.dim(), tol.margin);
        let band = tol.margin * pair.trace().abs() / pair.dim() as f64;

        let g_fine = griffiths_min(&pair.fine.tensor, GRIFFITHS_GRID)?;
        let g_coarse = griffiths_min(&pair.coarse.tensor, GRIFFITHS_GRID)?;
        let dual = eigvalsh(&nakano_form(&dual_curvature(&pair.fine.tensor)).matrix)?;

        match class {
            SplitClass::Ample => {
                assertions.push(Assertion::check(format!("k={k}: verdict POSITIVE_DEFINITE"), lmin, Relation::Greater, band, lmin_u));
                assertions.push(Assertion::check(format!("k={k}: lambda_min floor"), lmin, Relation::Greater, tol.positivity, lmin_u));
            }
            SplitClass::NefNotAmple => {
                assertions.push(Assertion::check(format!("k={k}: verdict not INDEFINITE"), lmin, Relation::GreaterEq, -band, lmin_u));
            }
            SplitClass::NotNef => {
                assertions.push(Assertion::diagnostic(format!("k={k}: lambda_min (no expectation)"), lmin, Relation::Greater, 0.0, lmin_u));
            }
        }
        assertions.push(Assertion::check(
            format!("k={k}: griffiths_min >= nakano lambda_min"),
            g_fine - lmin,
            Relation::GreaterEq,
            -1e-9 * pair.fine.eigen.max.abs().max(1.0),
            0.0,
        ));
        let duality_gap = (dual.max + lmin).abs() / lmin.abs().max(1.0);
        let duality = if bundle.base_dim() == 1 { Assertion::check } else { Assertion::diagnostic };
        assertions.push(duality(format!("k={k}: dual max eigenvalue = -lambda_min"), duality_gap, Relation::LessEq, tol.duality, 0.0));

        rows.push(json!({
            "k": k,
            "total_positivity": total,
            "eigenvalues": measured_list(&pair.fine.eigen.eigenvalues, &pair.coarse.eigen.eigenvalues),
            "lambda_min": measured(lmin, pair.coarse.eigen.min),
            "lambda_max": measured(pair.fine.eigen.max, pair.coarse.eigen.max),
            "griffiths_min": measured(g_fine, g_coarse),
            "dual_max_eigenvalue": dual.max,
            "verdict": verdict,
            "hermitian_asymmetry": pair.fine.form.asymmetry,
            "eigen_residual": pair.fine.eigen.residual,
        }));
    }
    let results = json!({ "classification": class, "rows": rows });
    Ok((results, assertions, None))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn run_scan_k(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = cfg.bundle()?;
    let res = cfg.resolution(bundle.rank())?;
    let xi = cfg.xi()?;
    let ks = cfg.ks()?;
    if ks.len() < 2 {
        return Err(Error::Config("scan-k needs a k_range with at least two values".into()));
    }
    let ample = bundle.is_ample();
    let mut lam = Vec::with_capacity(ks.len());
    let mut unc = Vec::with_capacity(ks.len());
    for &k in &ks {
        let (l, u) = CurvaturePair::compute(&bundle, k, &xi, &res)?.lambda_min();
        lam.push(l);
        unc.push(u);
    }
    let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let slope = least_squares_slope(&kf, &lam);
    let slope_unc = least_squares_slope(&kf, &unc.iter().zip(&lam).map(|(u, l)| l + u).collect::<Vec<_>>()) - slope;

    let mut assertions = Vec::new();
    let mk = if ample { Assertion::check } else { Assertion::diagnostic };
    let slope_rel = if cfg.tolerances.slope > 0.0 { Relation::GreaterEq } else { Relation::Greater };
    assertions.push(mk("least-squares slope".into(), slope, slope_rel, cfg.tolerances.slope, slope_unc.abs()));
    for w in 0..ks.len() - 1 {
        assertions.push(mk(
            format!("lambda_min increases from k={} to k={}", ks[w], ks[w + 1]),
            lam[w + 1] - lam[w],
            Relation::Greater,
            0.0,
            unc[w] + unc[w + 1],
        ));
    }

    let mut csv = String::from("k,lambda_min,uncertainty\n");
    let mut rows = Vec::new();
    for i in 0..ks.len() {
        csv.push_str(&format!("{},{},{}\n", ks[i], lam[i], unc[i]));
        rows.push(json!({ "k": ks[i], "lambda_min": lam[i], "uncertainty": unc[i] }));
    }
    let results = json!({
        "classification": classify_split(&bundle.degrees()),
        "rows": rows,
        "slope": { "value": slope, "uncertainty": slope_unc.abs() },
    });
    Ok((results, assertions, Some(csv)))
}

fn comparison_bundle(bundle: &BundleSpec) -> Result<BundleSpec> {
    let degrees: Vec<Vec<i64>> =
        bundle.degrees().iter().map(|d| d.iter().map(|&x| x.max(1)).collect()).collect();
    BundleSpec::split(bundle.base, &degrees)
}

fn run_nef_limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = cfg.bundle()?;
    let res = cfg.resolution(bundle.rank())?;
    let xi = cfg.xi()?;
    let class = classify_split(&bundle.degrees());
    let comparison = comparison_bundle(&bundle)?;
    let asserted = class == SplitClass::NefNotAmple;
    let mk = if asserted { Assertion::check } else { Assertion::diagnostic };
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for k in cfg.ks()? {
        let (l, u) = CurvaturePair::compute(&bundle, k, &xi, &res)?.lambda_min();
        let (lc, uc) = CurvaturePair::compute(&comparison, k, &xi, &res)?.lambda_min();
        assertions.push(mk(format!("k={k}: lambda_min >= -tol"), l, Relation::GreaterEq, -cfg.tolerances.nef, u));
        assertions.push(mk(format!("k={k}: lambda_min below comparison"), l, Relation::Less, lc, u + uc));
        rows.push(json!({
            "k": k,
            "lambda_min": { "value": l, "uncertainty": u },
            "comparison_lambda_min": { "value": lc, "uncertainty": uc },
        }));
    }
    let results = json!({
        "classification": class,
        "comparison_degrees": comparison.degrees(),
        "rows": rows,
    });
    Ok((results, assertions, None))
}

fn run_decompose(cfg: &ExperimentConfig, harmonicity_only: bool) -> Result<Outcome> {
    let bundle = cfg.bundle()?;
    if bundle.rank() != 2 {
        return Err(Error::Config("decompose and harmonicity need a rank-two bundle".into()));
    }
    let res = cfg.resolution(2)?;
    let xi = cfg.xi()?;
    let tol = &cfg.tolerances;
    let at_origin = xi.coords().iter().all(|z| *z == C64::new(0.0, 0.0));
    let asserted = !bundle.is_perturbed() && at_origin;
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for k in cfg.ks()? {
        let fine_res = res.refined_for(k, 2);
        if harmonicity_only {
            let samples = default_fiber_samples();
            let mut per_dir = Vec::new();
            for i in 0..xi.dim() {
                let f = harmonicity_residual(&bundle, k, &xi, i, &samples, &fine_res.stencil)?;
                let c = harmonicity_residual(&bundle, k, &xi, i, &samples, &res.stencil)?;
                per_dir.push((f, c));
            }
            let f = per_dir.iter().map(|p| p.0).fold(0.0, f64::max);
            let c = per_dir.iter().map(|p| p.1).fold(0.0, f64::max);
            push_harmonicity(&mut assertions, k, f, c, asserted, tol);
            rows.push(json!({
                "k": k,
                "harmonicity_sup": measured(f, c),
                "per_direction": per_dir.iter().map(|&(f, c)| measured(f, c)).collect::<Vec<_>>(),
            }));
            continue;
        }
        let coarse = second_term_residual(&bundle, k, &xi, &res)?;
        let fine = second_term_residual(&bundle, k, &xi, &fine_res)?;
        let ratio_u = (fine.residual_norm_ratio - coarse.residual_norm_ratio).abs();
        if asserted {
            assertions.push(Assertion::check(format!("k={k}: residual_norm_ratio"), fine.residual_norm_ratio, Relation::LessEq, tol.residual, ratio_u));
        } else {
            assertions.push(Assertion::diagnostic(format!("k={k}: residual_norm_ratio"), fine.residual_norm_ratio, Relation::LessEq, tol.residual_diagnostic, ratio_u));
        }
        let hf = fine.harmonicity_sup.unwrap_or(0.0);
        let hc = coarse.harmonicity_sup.unwrap_or(0.0);
        push_harmonicity(&mut assertions, k, hf, hc, asserted, tol);
        let theta_f = eigvalsh(&fine.theta.matrix)?;
        let theta_c = eigvalsh(&coarse.theta.matrix)?;
        let first_f = eigvalsh(&fine.first_term)?;
        let first_c = eigvalsh(&coarse.first_term)?;
        let res_f = eigvalsh(&fine.residual)?;
        let res_c = eigvalsh(&coarse.residual)?;
        rows.push(json!({
            "k": k,
            "theta": fine.theta.matrix.to_pairs(),
            "first_term": fine.first_term.to_pairs(),
            "residual": fine.residual.to_pairs(),
            "theta_eigenvalues": measured_list(&theta_f.eigenvalues, &theta_c.eigenvalues),
            "first_term_eigenvalues": measured_list(&first_f.eigenvalues, &first_c.eigenvalues),
            "residual_eigenvalues": measured_list(&res_f.eigenvalues, &res_c.eigenvalues),
            "residual_norm_ratio": measured(fine.residual_norm_ratio, coarse.residual_norm_ratio),
            "harmonicity_sup": measured(hf, hc),
            "mode": if asserted { "asserted" } else { "no-assert" },
        }));
    }
    Ok((json!({ "rows": rows }), assertions, None))
}

fn push_harmonicity(out: &mut Vec<Assertion>, k: usize, fine: f64, coarse: f64, asserted: bool, tol: &Tolerances) {
    let name = format!("k={k}: harmonicity_sup");
    let u = (fine - coarse).abs();
    out.push(if asserted {
        Assertion::check(name, fine, Relation::LessEq, tol.harmonicity, u)
    } else {
        Assertion::diagnostic(name, fine, Relation::LessEq, tol.harmonicity, u)
    });
}

fn run_cohomology(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.base != Base::P1 {
        return Err(Error::Config("cohomology is computed on P1 only".into()));
    }
    let bundle = cfg.bundle()?;
    let degrees = bundle.degrees();
    if degrees.len() != 2 {
        return Err(Error::Config("cohomology expects a rank-two bundle (a, b)".into()));
    }
    let (a, b) = (degrees[0][0], degrees[1][0]);
    let class = classify_split(&degrees);
    let bound = cfg.lambda_bound.unwrap_or(4);
    let cech_h11 = |ds: &[i64]| -> u64 { ds.iter().map(|&d| cech_p1(d - 2).1).sum() };

    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for lambda in weights_r2(bound) {
        let ds = gamma_decomposition_r2(&lambda, a, b)?;
        let table = bott_p1(&ds);
        let cech = cech_h11(&ds);
        assertions.push(Assertion::check(
            format!("lambda={lambda}: closed form equals Cech count"),
            (table.h11 as f64 - cech as f64).abs(),
            Relation::LessEq,
            0.0,
            0.0,
        ));
        let vanishing = format!("lambda={lambda}: H^(1,1) = 0");
        if class == SplitClass::Ample && lambda.height() >= 1 {
            assertions.push(Assertion::check(vanishing, table.h11 as f64, Relation::LessEq, 0.0, 0.0));
        } else {
            assertions.push(Assertion::diagnostic(vanishing, table.h11 as f64, Relation::LessEq, 0.0, 0.0));
        }
        rows.push(json!({
            "lambda": lambda.parts(),
            "height": lambda.height(),
            "degrees": ds,
            "table": table,
            "h11_cech": cech,
            "control": lambda.height() == 0,
        }));
    }
    let control = bott_p1(&[0]);
    assertions.push(Assertion::check("control O(0): H^(1,1) = 1", control.h11 as f64, Relation::GreaterEq, 1.0, 0.0));
    assertions.push(Assertion::check("control O(0): H^(1,1) <= 1", control.h11 as f64, Relation::LessEq, 1.0, 0.0));
    let results = json!({
        "classification": class,
        "lambda_bound": bound,
        "rows": rows,
        "control": { "degrees": [0], "h11": control.h11, "h11_cech": cech_h11(&[0]) },
    });
    Ok((results, assertions, None))
}

fn rel_err(got: f64, want: f64) -> f64 {
    let scale = if want == 0.0 { 1.0 } else { want.abs() };
    (got - want).abs() / scale
}

fn run_oracle_compare(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = cfg.bundle()?;
    if bundle.is_perturbed() {
        return Err(Error::Config("oracle-compare needs unperturbed Fubini–Study weights".into()));
    }
    let res = cfg.resolution(bundle.rank())?;
    let origin = ChartPoint::origin(bundle.base_dim());
    let tol = &cfg.tolerances;
    let mut assertions = Vec::new();
    let mut fs_rows = Vec::new();
    for (s, w) in bundle.summands.iter().enumerate() {
        let h = line_curvature(w, &origin, &res.stencil)?;
        let want = fs_oracle(0, 0).into_iter().chain(w.degrees.iter().map(|&d| fs_oracle(d, 1)[0])).collect::<Vec<_>>();
        for (t, &d) in want.iter().enumerate() {
            let got = h[(t, t)].re;
            assertions.push(Assertion::check(format!("summand {s} direction {t}: FS curvature"), (got - d).abs(), Relation::LessEq, 1e-6, 0.0));
            fs_rows.push(json!({ "summand": s, "direction": t, "computed": got, "oracle": d }));
        }
    }

    let mut rows = Vec::new();
    for k in cfg.ks()? {
        let mut row = json!({ "k": k });
        if bundle.rank() == 2 {
            let rule = res.rule(k, 2)?;
            let g = gram_matrix(&bundle, k, &origin, &rule)?;
            let want: Vec<f64> = (0..=k).map(|a| beta_gram_entry(k, a)).collect();
            let worst = want.iter().enumerate().map(|(a, &w)| rel_err(g.matrix[(a, a)].re, w)).fold(0.0, f64::max);
            assertions.push(Assertion::check(format!("k={k}: Gram diagonal vs Beta integrals"), worst, Relation::LessEq, 1e-8, 0.0));

            let pair = CurvaturePair::compute(&bundle, k, &origin, &res)?;
            let d = bundle.degrees();
            let oracle = split_spectrum(&d[0], &d[1], k);
            let got = &pair.fine.eigen.eigenvalues;
            let worst_spec = got.iter().zip(&oracle).map(|(&g, &o)| rel_err(g, o)).fold(0.0, f64::max);
            let unc = pair
                .fine
                .eigen
                .eigenvalues
                .iter()
                .zip(&pair.coarse.eigen.eigenvalues)
                .map(|(f, c)| rel_err(*f, *c))
                .fold(0.0, f64::max);
            assertions.push(Assertion::check(format!("k={k}: Nakano spectrum vs closed form"), worst_spec, Relation::LessEq, tol.oracle, unc));
            row["gram_diagonal"] = json!(want.iter().enumerate().map(|(a, &w)| json!({ "computed": g.matrix[(a, a)].re, "oracle": w })).collect::<Vec<_>>());
            row["gram_convergence"] = json!(g.convergence);
            row["spectrum"] = json!({ "computed": measured_list(got, &pair.coarse.eigen.eigenvalues), "oracle": oracle });
            if bundle.base == Base::P1 {
                let ds: Vec<i64> = oracle.iter().map(|&x| x.round() as i64).collect();
                let bott = bott_p1(&ds).h11;
                let cech: u64 = ds.iter().map(|&x| cech_p1(x - 2).1).sum();
                assertions.push(Assertion::check(format!("k={k}: Bott vs Cech on direct image"), (bott as f64 - cech as f64).abs(), Relation::LessEq, 0.0, 0.0));
                row["h11"] = json!({ "closed_form": bott, "cech": cech });
            }
        } else {
            let pair = CurvaturePair::compute(&bundle, k, &origin, &res)?;
            row["spectrum"] = json!({ "computed": measured_list(&pair.fine.eigen.eigenvalues, &pair.coarse.eigen.eigenvalues) });
        }
        rows.push(row);
    }
    Ok((json!({ "fubini_study": fs_rows, "rows": rows }), assertions, None))
}

/// Maps a pipeline error to the documented exit code.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assertion_statuses() {
        assert_eq!(Assertion::check("a", 1.0, Relation::Greater, 0.5, 0.1).status, Status::Pass);
        assert_eq!(Assertion::check("a", 0.4, Relation::Greater, 0.5, 0.01).status, Status::Fail);
        assert_eq!(Assertion::check("a", 0.55, Relation::Greater, 0.5, 0.1).status, Status::InsufficientResolution);
        assert_eq!(Assertion::check("a", 0.0, Relation::GreaterEq, 0.0, 0.0).status, Status::Pass);
        assert_eq!(Assertion::check("a", 0.0, Relation::Greater, 0.0, 0.0).status, Status::Fail);
        assert_eq!(Assertion::diagnostic("a", 9.0, Relation::LessEq, 0.0, 0.0).status, Status::NoAssert);
        assert_eq!(Assertion::check("a", f64::NAN, Relation::LessEq, 0.0, 0.0).status, Status::Fail);
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_json(
            r#"{"command": "scan-k", "degrees": [1, 2], "k_range": [1, 3], "stencil": {"step": 0.002, "levels": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.command, Some(Command::ScanK));
        assert_eq!(cfg.ks().unwrap(), vec![1, 2, 3]);
        assert_eq!(cfg.bundle().unwrap(), BundleSpec::p1(1, 2));
        assert_eq!(cfg.resolution(2).unwrap().stencil.step, 0.002);

        let cfg = ExperimentConfig::from_json(
            r#"{"base": "P1xP1", "degrees": [[1, 2], [2, 1]], "k": 0, "xi": [[0.1, 0.0], [0.0, -0.2]],
                "perturbations": [null, "0.1*re(z2)"]}"#,
        )
        .unwrap();
        let b = cfg.bundle().unwrap();
        assert!(b.is_perturbed() && b.is_ample());
        assert_eq!(cfg.xi().unwrap().coords()[1], C64::new(0.0, -0.2));
    }

    #[test]
    fn config_errors() {
        let bad = [
            r#"{"degrees": [1, 2]}"#,
            r#"{"degrees": [1, 2], "k": 1, "k_range": [1, 2]}"#,
            r#"{"degrees": [[1, 2], [1]], "base": "P1xP1", "k": 1}"#,
            r#"{"degrees": [1, 2], "k": 1, "perturbations": ["sin(z)", null]}"#,
            r#"{"degrees": [1, 2], "k": 1, "xi": [[0, 0], [0, 0]]}"#,
            r#"{"degrees": [1, 2], "k": 1, "stencil": {"step": 1.0, "levels": 2}}"#,
        ];
        for text in bad {
            let cfg = ExperimentConfig::from_json(text).unwrap();
            let err = run(Command::Check, &cfg).unwrap_err();
            assert_eq!(exit_code_for(&err), EXIT_CONFIG, "{text}: {err}");
        }
        assert!(ExperimentConfig::from_json(r#"{"degrees": [1], "bogus": 1}"#).is_err());
        let cfg = ExperimentConfig::p1(Command::Check, &[1, 1], 0);
        assert!(matches!(run(Command::ScanK, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_target_primary_tolerance() {
        let mut cfg = ExperimentConfig::p1(Command::NefLimit, &[0, 1], 1);
        Overrides { tol: Some(1e-5), step: Some(2e-3), ..Default::default() }.apply(&mut cfg, Command::NefLimit);
        assert_eq!(cfg.tolerances.nef, 1e-5);
        assert_eq!(cfg.stencil.step, 2e-3);
    }

    #[test]
    fn slope_of_line() {
        assert!((least_squares_slope(&[1.0, 2.0, 3.0], &[5.0, 7.0, 9.0]) - 2.0).abs() < 1e-15);
        assert_eq!(least_squares_slope(&[1.0, 2.0], &[0.0, 0.0]), 0.0);
    }
}
