//! Batch experiments: configuration, the five commands, and their CSV/JSON
//! artifacts.
//!
//! Every command is a pure function of its [`ExperimentConfig`] returning a
//! [`CommandOutput`]; rows are computed in parallel and rendered in config
//! order, so identical configs give byte-identical artifacts.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dyadic::{Cube, Grid, MAX_DEPTH};
use crate::error::{Error, Result};
use crate::normest::{
    budget_for, dual_extremal, power_iteration_with, proof_step_audit, Averaging, EstimatorSettings,
    ProofStepReport, AUDIT_RATIO_TOL,
};
use crate::sparse::{generate_family, FamilyKind, SparseFamily};
use crate::weights::{
    ainfty_exp_constant, ainfty_fw_constant, ap_constant, conjugate, dual_weight, martingale_weight,
    mixed_constant, power_weight, power_weight_constants_oracle, Exponents, FactorKind, FactorSpec,
    MixedConstant, Weight,
};

/// Absolute slack on `estimate <= budget · mixed`.
pub const BOUND_SLACK: f64 = 1e-9;

/// Exit code for a configuration or parameter error.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code when a row is flagged (failed bound or non-convergence).
pub const EXIT_FLAGGED: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightSpec {
    Constant { value: f64 },
    Power { a: f64 },
    Martingale { seed: u64, delta: f64 },
}

impl WeightSpec {
    pub fn build(&self, grid: Grid) -> Result<Weight> {
        match *self {
            WeightSpec::Constant { value } => Weight::constant(grid, value),
            WeightSpec::Power { a } => power_weight(a, grid),
            WeightSpec::Martingale { seed, delta } => martingale_weight(seed, delta, grid),
        }
    }
}

impl std::fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightSpec::Constant { value } => write!(f, "constant(value={value})"),
            WeightSpec::Power { a } => write!(f, "power(a={a})"),
            WeightSpec::Martingale { seed, delta } => write!(f, "martingale(seed={seed},delta={delta})"),
        }
    }
}

/// One `(p, q)` pair and the `r` values to test `A_{r,S}` with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub r: Vec<f64>,
}

impl ExponentSpec {
    /// The plain exponents followed by one entry per `r`.
    pub fn expand(&self) -> Result<Vec<Exponents>> {
        let base = Exponents::new(self.p, self.q)?;
        let mut out = vec![base];
        for &r in &self.r {
            out.push(base.with_r(r)?);
        }
        Ok(out)
    }
}

/// Parameters of the sharpness scan over `w = x^{q-1-ε}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    pub epsilons: Vec<f64>,
    /// Depth used for the norm estimates, which are far costlier than the
    /// constants.
    pub norm_depth: u32,
    pub family: FamilyKind,
    /// Depths for the refinement sweep at the smallest `ε`.
    pub refine_depths: Vec<u32>,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            epsilons: (1..=5).map(|k| 0.5f64.powi(k)).collect(),
            norm_depth: 10,
            family: FamilyKind::Tower,
            refine_depths: vec![12, 14, 16, 18, 20],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub depth: u32,
    pub exponents: Vec<ExponentSpec>,
    pub families: Vec<FamilyKind>,
    pub weights: Vec<WeightSpec>,
    /// Sparsity constant of record; each family's largest feasible `γ` when
    /// absent.
    pub gamma: Option<f64>,
    pub estimator: EstimatorSettings,
    pub scan: ScanSettings,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::battery()
    }
}

fn midpoint_r(p: f64, q: f64) -> Vec<f64> {
    let mid = (1.0 + p / q) / 2.0;
    let mut rs = vec![1.1];
    if (mid - 1.1).abs() > 1e-12 {
        rs.push(mid);
    }
    rs
}

impl ExperimentConfig {
    /// The default battery: 7 exponent pairs, 5 families, 9 weights at depth 10.
    pub fn battery() -> Self {
        let mut exponents = Vec::new();
        for p in [1.5, 2.0, 3.0] {
            for q in [1.0, 1.25, 2.0] {
                if q < p {
                    exponents.push(ExponentSpec { p, q, r: midpoint_r(p, q) });
                }
            }
        }
        let mut families = vec![FamilyKind::Tower, FamilyKind::Full];
        families.extend((1..=3).map(|seed| FamilyKind::Random { seed, keep: 0.25 }));
        let mut weights: Vec<WeightSpec> = [-0.5, 0.5, 1.0].into_iter().map(|a| WeightSpec::Power { a }).collect();
        for delta in [0.25, 0.5] {
            weights.extend((1..=3).map(|seed| WeightSpec::Martingale { seed, delta }));
        }
        ExperimentConfig {
            scenario: "battery".into(),
            depth: 10,
            exponents,
            families,
            weights,
            gamma: None,
            estimator: EstimatorSettings::default(),
            scan: ScanSettings::default(),
            out: None,
        }
    }

    /// Battery weights on a fine grid, for constant tables.
    pub fn constants_default() -> Self {
        ExperimentConfig {
            scenario: "constants".into(),
            depth: 18,
            ..ExperimentConfig::battery()
        }
    }

    /// `q = 2`, `p = 3` on a depth-20 grid.
    pub fn sharpness_default() -> Self {
        ExperimentConfig {
            scenario: "sharpness".into(),
            depth: 20,
            exponents: vec![ExponentSpec { p: 3.0, q: 2.0, r: vec![] }],
            ..ExperimentConfig::battery()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.depth)
    }

    /// Checks every range before any computation.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Parameter(m) | Error::Domain(m) => Error::Config(m),
            other => other,
        };
        if self.depth > MAX_DEPTH {
            return Err(Error::Config(format!("depth must be at most {MAX_DEPTH}, got {}", self.depth)));
        }
        if self.exponents.is_empty() || self.families.is_empty() || self.weights.is_empty() {
            return Err(Error::Config("exponents, families and weights must be non-empty".into()));
        }
        for spec in &self.exponents {
            spec.expand().map_err(cfg)?;
        }
        let probe = Grid::new(1).map_err(cfg)?;
        for w in &self.weights {
            match *w {
                WeightSpec::Constant { value } if !(value > 0.0 && value.is_finite()) => {
                    return Err(Error::Config(format!("constant weight must be positive, got {value}")));
                }
                _ => {
                    w.build(probe).map_err(cfg)?;
                }
            }
        }
        for fam in &self.families {
            if let FamilyKind::Random { keep, .. } = *fam {
                if !(keep > 0.0 && keep <= 1.0) {
                    return Err(Error::Config(format!("keep probability must lie in (0, 1], got {keep}")));
                }
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("gamma must lie in (0, 1], got {g}")));
            }
        }
        self.estimator.validate().map_err(cfg)?;
        if self.scan.norm_depth > MAX_DEPTH || self.scan.refine_depths.iter().any(|&d| d > MAX_DEPTH) {
            return Err(Error::Config(format!("scan depths must be at most {MAX_DEPTH}")));
        }
        Ok(())
    }

    fn validate_scan(&self) -> Result<()> {
        self.validate()?;
        if self.scan.epsilons.len() < 4 {
            return Err(Error::Config(format!(
                "sharpness scan needs at least 4 epsilons, got {}",
                self.scan.epsilons.len()
            )));
        }
        for spec in &self.exponents {
            if spec.q <= 1.0 {
                return Err(Error::Config(format!("sharpness scan needs q > 1, got {}", spec.q)));
            }
            for &eps in &self.scan.epsilons {
                if !(eps > 0.0 && eps < spec.q - 1.0) {
                    return Err(Error::Config(format!(
                        "epsilon {eps} outside (0, q - 1) for q = {}",
                        spec.q
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.depth {
            self.depth = d;
        }
        for spec in &mut self.exponents {
            if let Some(p) = o.p {
                spec.p = p;
            }
            if let Some(q) = o.q {
                spec.q = q;
            }
            if let Some(r) = o.r {
                spec.r = vec![r];
            }
        }
        let mut seen: Vec<ExponentSpec> = Vec::new();
        for spec in self.exponents.drain(..) {
            if !seen.contains(&spec) {
                seen.push(spec);
            }
        }
        self.exponents = seen;
        if o.gamma.is_some() {
            self.gamma = o.gamma;
        }
        if let Some(s) = o.seed {
            self.estimator.seed = s;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }
}

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub depth: Option<u32>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub r: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Everything needed to regenerate one row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub scenario: String,
    pub depth: u32,
    pub exponents: Exponents,
    pub gamma: f64,
    pub family: String,
    pub family_hash: String,
    pub weight: WeightSpec,
    pub estimator: EstimatorSettings,
}

/// First 16 hex digits of the SHA-256 of the family's canonical JSON.
pub fn family_hash(family: &SparseFamily) -> String {
    let json = serde_json::to_vec(family).expect("family serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// A named file produced by a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    /// Human-readable reasons for a nonzero exit.
    pub flagged: Vec<String>,
    pub summary: String,
}

impl CommandOutput {
    pub fn exit_code(&self) -> i32 {
        if self.flagged.is_empty() {
            0
        } else {
            EXIT_FLAGGED
        }
    }

    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.contents.as_str())
    }

    /// Writes every artifact into `dir`, or the first one to stdout.
    pub fn write(&self, dir: Option<&Path>) -> Result<()> {
        match dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                for a in &self.artifacts {
                    std::fs::write(dir.join(&a.name), &a.contents)?;
                }
            }
            None => {
                if let Some(a) = self.artifacts.first() {
                    print!("{}", a.contents);
                }
            }
        }
        Ok(())
    }
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Table { header, rows: Vec::new() }
    }

    fn render(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Comparison constants from the literature for one weight and `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Comparisons {
    /// `[w]_{A_p}^{1/p} ([w]_{A_∞}^{1/p'} + [σ]_{A_∞}^{1/p})`, Fujii–Wilson `A_∞`.
    pub hytonen_lacey: MixedConstant,
    /// `[w]_{A_p^{1/(p-1)} (A_∞^exp)^{1-1/(p-1)}} + [σ]_{A_{p'}^{1/(p'-1)} (A_∞^exp)^{1-1/(p'-1)}}`.
    pub lerner_moen: MixedConstant,
    /// `[w]_{A_p^{1/p} A_∞^{1/p'}} + [σ]_{A_{p'}^{1/p'} A_∞^{1/p}}`.
    pub one_supremum: MixedConstant,
}

fn sum_of(a: MixedConstant, b: MixedConstant) -> MixedConstant {
    MixedConstant {
        value: a.value + b.value,
        argmax: if b.value > a.value { b.argmax } else { a.argmax },
    }
}

pub fn comparison_constants(w: &Weight, p: f64) -> Result<Comparisons> {
    let pp = conjugate(p);
    let sigma = dual_weight(w, p)?;
    let ap = ap_constant(w, p)?;
    let fw = ainfty_fw_constant(w).value;
    let fw_sigma = ainfty_fw_constant(&sigma).value;
    let hytonen_lacey = MixedConstant {
        value: ap.value.powf(1.0 / p) * (fw.powf(1.0 / pp) + fw_sigma.powf(1.0 / p)),
        argmax: ap.argmax,
    };
    let mixed = |weight: &Weight, s: f64, second: FactorKind, a: f64, b: f64| {
        mixed_constant(
            weight,
            &[FactorSpec::new(FactorKind::Ap(s), a)?, FactorSpec::new(second, b)?],
        )
    };
    let lerner_moen = sum_of(
        mixed(w, p, FactorKind::AinftyExp, 1.0 / (p - 1.0), 1.0 - 1.0 / (p - 1.0))?,
        mixed(&sigma, pp, FactorKind::AinftyExp, 1.0 / (pp - 1.0), 1.0 - 1.0 / (pp - 1.0))?,
    );
    let one_supremum = sum_of(
        mixed(w, p, FactorKind::AinftyFW, 1.0 / p, 1.0 / pp)?,
        mixed(&sigma, pp, FactorKind::AinftyFW, 1.0 / pp, 1.0 / p)?,
    );
    Ok(Comparisons {
        hytonen_lacey,
        lerner_moen,
        one_supremum,
    })
}

/// One row of the constants table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsRow {
    pub weight: WeightSpec,
    pub p: f64,
    pub q: f64,
    pub aq: MixedConstant,
    pub ap: MixedConstant,
    pub ainfty_fw: MixedConstant,
    pub ainfty_exp: MixedConstant,
    pub mixed: MixedConstant,
    pub comparisons: Comparisons,
}

pub fn constants_rows(cfg: &ExperimentConfig) -> Result<Vec<ConstantsRow>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let jobs: Vec<(&WeightSpec, Exponents)> = cfg
        .weights
        .iter()
        .flat_map(|w| cfg.exponents.iter().map(move |e| (w, e)))
        .map(|(w, e)| Ok((w, Exponents::new(e.p, e.q)?)))
        .collect::<Result<_>>()?;
    jobs.par_iter()
        .map(|(spec, e)| {
            let w = spec.build(grid)?;
            Ok(ConstantsRow {
                weight: (*spec).clone(),
                p: e.p(),
                q: e.q(),
                aq: ap_constant(&w, e.q())?,
                ap: ap_constant(&w, e.p())?,
                ainfty_fw: ainfty_fw_constant(&w),
                ainfty_exp: ainfty_exp_constant(&w),
                mixed: mixed_constant(&w, &e.theorem_factors())?,
                comparisons: comparison_constants(&w, e.p())?,
            })
        })
        .collect()
}

/// Per-weight table of `A_q`, `A_p`, both `A_∞` constants, the mixed
/// constant and the comparison constants, each with its maximizing cube.
pub fn cmd_constants(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rows = constants_rows(cfg)?;
    let mut t = Table::new(vec![
        "scenario", "depth", "weight", "p", "q", "aq", "aq_argmax", "ap", "ap_argmax", "ainfty_fw",
        "ainfty_fw_argmax", "ainfty_exp", "ainfty_exp_argmax", "mixed", "mixed_argmax",
        "hytonen_lacey", "hytonen_lacey_argmax", "lerner_moen", "lerner_moen_argmax",
        "one_supremum", "one_supremum_argmax",
    ]);
    for r in &rows {
        let mut row = vec![cfg.scenario.clone(), cfg.depth.to_string(), r.weight.to_string(), num(r.p), num(r.q)];
        for c in [
            r.aq,
            r.ap,
            r.ainfty_fw,
            r.ainfty_exp,
            r.mixed,
            r.comparisons.hytonen_lacey,
            r.comparisons.lerner_moen,
            r.comparisons.one_supremum,
        ] {
            row.push(num(c.value));
            row.push(c.argmax.to_string());
        }
        t.rows.push(row);
    }
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { name: "constants.csv".into(), contents: t.render()? },
            Artifact { name: "config.json".into(), contents: cfg.to_json() + "\n" },
        ],
        flagged: Vec::new(),
        summary: format!("constants: {} rows at depth {}", rows.len(), cfg.depth),
    })
}

struct Prepared {
    weights: Vec<Weight>,
    families: Vec<(SparseFamily, String)>,
    jobs: Vec<(usize, usize, Exponents)>,
}

fn prepare(cfg: &ExperimentConfig, with_r: bool) -> Result<Prepared> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let weights = cfg
        .weights
        .par_iter()
        .map(|w| w.build(grid))
        .collect::<Result<Vec<_>>>()?;
    let families = cfg
        .families
        .par_iter()
        .map(|kind| {
            let fam = generate_family(*kind, grid)?;
            let fam = match cfg.gamma {
                Some(g) => fam.verified(g).map_err(|_| {
                    Error::Config(format!("family {kind} is not {g}-sparse at depth {}", cfg.depth))
                })?,
                None => fam,
            };
            let hash = family_hash(&fam);
            Ok((fam, hash))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut exps = Vec::new();
    for spec in &cfg.exponents {
        let all = spec.expand()?;
        if with_r {
            exps.extend(all);
        } else {
            exps.push(all[0]);
        }
    }
    let mut jobs = Vec::new();
    for e in &exps {
        for fi in 0..families.len() {
            for wi in 0..weights.len() {
                jobs.push((wi, fi, *e));
            }
        }
    }
    Ok(Prepared { weights, families, jobs })
}

fn provenance(cfg: &ExperimentConfig, prep: &Prepared, wi: usize, fi: usize, e: Exponents) -> Provenance {
    let (fam, hash) = &prep.families[fi];
    Provenance {
        scenario: cfg.scenario.clone(),
        depth: cfg.depth,
        exponents: e,
        gamma: fam.gamma(),
        family: cfg.families[fi].to_string(),
        family_hash: hash.clone(),
        weight: cfg.weights[wi].clone(),
        estimator: cfg.estimator,
    }
}

fn operator_label(e: &Exponents) -> String {
    match e.r() {
        Some(r) => format!("A_r(r={r})"),
        None => "A".into(),
    }
}

/// One `(w, S, exponents)` instance of the theorem check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub provenance: Provenance,
    pub operator: String,
    pub estimate: f64,
    pub converged: bool,
    pub iterations: usize,
    pub best_restart: usize,
    pub mixed: MixedConstant,
    /// `estimate / mixed`.
    pub ratio: f64,
    pub budget: f64,
    pub pass: bool,
    /// `[w]_{A_q}` and `estimate / [w]_{A_q}`.
    pub aq: f64,
    pub ratio_aq: f64,
    /// Comparison constants and `estimate` over each.
    pub hytonen_lacey: f64,
    pub lerner_moen: f64,
    pub one_supremum: f64,
    pub ratio_one_supremum: f64,
}

pub fn check_rows(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    let prep = prepare(cfg, true)?;
    prep.jobs
        .par_iter()
        .map(|&(wi, fi, e)| {
            let w = &prep.weights[wi];
            let fam = &prep.families[fi].0;
            let est = power_iteration_with(Averaging::for_exponents(&e), fam, w, e.p(), &cfg.estimator)?;
            let mixed = mixed_constant(w, &e.theorem_factors())?;
            let budget = budget_for(&e, fam.gamma())?;
            let aq = ap_constant(w, e.q())?.value;
            let cmp = comparison_constants(w, e.p())?;
            Ok(CheckRow {
                provenance: provenance(cfg, &prep, wi, fi, e),
                operator: operator_label(&e),
                estimate: est.value,
                converged: est.converged,
                iterations: est.iterations,
                best_restart: est.best_restart,
                mixed,
                ratio: est.value / mixed.value,
                budget,
                pass: est.value <= budget * mixed.value + BOUND_SLACK,
                aq,
                ratio_aq: est.value / aq,
                hytonen_lacey: cmp.hytonen_lacey.value,
                lerner_moen: cmp.lerner_moen.value,
                one_supremum: cmp.one_supremum.value,
                ratio_one_supremum: est.value / cmp.one_supremum.value,
            })
        })
        .collect()
}

const PROVENANCE_HEADER: [&str; 11] = [
    "scenario", "depth", "p", "q", "r", "gamma", "family", "family_hash", "weight", "seed", "restarts",
];

fn provenance_fields(p: &Provenance) -> Vec<String> {
    vec![
        p.scenario.clone(),
        p.depth.to_string(),
        num(p.exponents.p()),
        num(p.exponents.q()),
        opt_num(p.exponents.r()),
        num(p.gamma),
        p.family.clone(),
        p.family_hash.clone(),
        p.weight.to_string(),
        p.estimator.seed.to_string(),
        p.estimator.restarts.to_string(),
    ]
}

fn header_with(extra: &[&'static str]) -> Vec<&'static str> {
    PROVENANCE_HEADER.iter().chain(extra).copied().collect()
}

#[derive(Serialize)]
struct CheckReport<'a> {
    config: &'a ExperimentConfig,
    rows: usize,
    failed_bound: usize,
    not_converged: usize,
    max_ratio_over_budget: f64,
}

/// Norm estimates against the theorem bound, for `A_S` and every `A_{r,S}`.
/// Flags rows that exceed the bound or did not converge.
pub fn cmd_check_theorem(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rows = check_rows(cfg)?;
    let mut t = Table::new(header_with(&[
        "operator", "estimate", "converged", "iterations", "mixed", "mixed_argmax", "ratio", "budget",
        "pass", "aq", "ratio_aq", "hytonen_lacey", "lerner_moen", "one_supremum", "ratio_one_supremum",
    ]));
    let mut flagged = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let mut row = provenance_fields(&r.provenance);
        row.extend([
            r.operator.clone(),
            num(r.estimate),
            r.converged.to_string(),
            r.iterations.to_string(),
            num(r.mixed.value),
            r.mixed.argmax.to_string(),
            num(r.ratio),
            num(r.budget),
            r.pass.to_string(),
            num(r.aq),
            num(r.ratio_aq),
            num(r.hytonen_lacey),
            num(r.lerner_moen),
            num(r.one_supremum),
            num(r.ratio_one_supremum),
        ]);
        t.rows.push(row);
        if !r.pass {
            flagged.push(format!("row {k}: estimate {} exceeds bound {}", r.estimate, r.budget * r.mixed.value));
        }
        if !r.converged {
            flagged.push(format!("row {k}: estimator did not converge"));
        }
    }
    let report = CheckReport {
        config: cfg,
        rows: rows.len(),
        failed_bound: rows.iter().filter(|r| !r.pass).count(),
        not_converged: rows.iter().filter(|r| !r.converged).count(),
        max_ratio_over_budget: rows.iter().map(|r| r.ratio / r.budget).fold(0.0, f64::max),
    };
    let summary = format!(
        "check-theorem: {} rows, {} above bound, {} not converged, max ratio/budget {}",
        report.rows, report.failed_bound, report.not_converged, report.max_ratio_over_budget
    );
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { name: "check_theorem.csv".into(), contents: t.render()? },
            Artifact { name: "check_theorem.json".into(), contents: json(&report) },
        ],
        flagged,
        summary,
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// One `ε` of the sharpness scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    pub a: f64,
    pub aq: f64,
    pub aq_oracle: f64,
    pub mixed: f64,
    pub mixed_oracle: f64,
    pub estimate: f64,
    pub converged: bool,
    pub gamma: f64,
    pub budget: f64,
}

/// Log-log slopes of the constants against `1/ε`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanFit {
    pub p: f64,
    pub q: f64,
    pub depth: u32,
    pub norm_depth: u32,
    pub slope_aq: f64,
    pub slope_mixed: f64,
    pub slope_aq_oracle: f64,
    pub slope_mixed_oracle: f64,
    pub slope_estimate: f64,
    pub expected_aq: f64,
    pub expected_mixed: f64,
}

/// Grid and closed-form constants of `x^a` at several depths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementRow {
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    pub depth: u32,
    pub aq: f64,
    pub aq_oracle: f64,
    pub mixed: f64,
    pub mixed_oracle: f64,
}

fn power_mixed_oracle(a: f64, e: &Exponents) -> Result<(f64, f64)> {
    let o = power_weight_constants_oracle(a, e.q())?;
    Ok((o.ap, o.ap.powf(1.0 / e.p()) * o.ainfty_exp.powf(1.0 / e.p_prime())))
}

pub fn refinement_rows(e: &Exponents, epsilon: f64, depths: &[u32]) -> Result<Vec<RefinementRow>> {
    let a = e.q() - 1.0 - epsilon;
    let (aq_oracle, mixed_oracle) = power_mixed_oracle(a, e)?;
    depths
        .par_iter()
        .map(|&d| {
            let w = power_weight(a, Grid::new(d)?)?;
            Ok(RefinementRow {
                p: e.p(),
                q: e.q(),
                epsilon,
                depth: d,
                aq: ap_constant(&w, e.q())?.value,
                aq_oracle,
                mixed: mixed_constant(&w, &e.theorem_factors())?.value,
                mixed_oracle,
            })
        })
        .collect()
}

pub fn scan_rows(cfg: &ExperimentConfig) -> Result<(Vec<ScanRow>, Vec<ScanFit>)> {
    cfg.validate_scan()?;
    let grid = cfg.grid()?;
    let norm_grid = Grid::new(cfg.scan.norm_depth.min(cfg.depth))?;
    let family = generate_family(cfg.scan.family, norm_grid)?;
    let family = match cfg.gamma {
        Some(g) => family.verified(g).map_err(|_| Error::Config(format!("scan family is not {g}-sparse")))?,
        None => family,
    };
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for spec in &cfg.exponents {
        let e = Exponents::new(spec.p, spec.q)?;
        let part = cfg
            .scan
            .epsilons
            .par_iter()
            .map(|&eps| {
                let a = e.q() - 1.0 - eps;
                let w = power_weight(a, grid)?;
                let (aq_oracle, mixed_oracle) = power_mixed_oracle(a, &e)?;
                let wn = power_weight(a, norm_grid)?;
                let est = power_iteration_with(Averaging::Plain, &family, &wn, e.p(), &cfg.estimator)?;
                Ok(ScanRow {
                    p: e.p(),
                    q: e.q(),
                    epsilon: eps,
                    a,
                    aq: ap_constant(&w, e.q())?.value,
                    aq_oracle,
                    mixed: mixed_constant(&w, &e.theorem_factors())?.value,
                    mixed_oracle,
                    estimate: est.value,
                    converged: est.converged,
                    gamma: family.gamma(),
                    budget: budget_for(&e, family.gamma())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let xs: Vec<f64> = part.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
        let slope = |f: fn(&ScanRow) -> f64| fit_slope(&xs, &part.iter().map(|r| f(r).ln()).collect::<Vec<_>>());
        fits.push(ScanFit {
            p: e.p(),
            q: e.q(),
            depth: cfg.depth,
            norm_depth: norm_grid.depth(),
            slope_aq: slope(|r| r.aq),
            slope_mixed: slope(|r| r.mixed),
            slope_aq_oracle: slope(|r| r.aq_oracle),
            slope_mixed_oracle: slope(|r| r.mixed_oracle),
            slope_estimate: slope(|r| r.estimate),
            expected_aq: e.q() - 1.0,
            expected_mixed: (e.q() - 1.0) / e.p(),
        });
        rows.extend(part);
    }
    Ok((rows, fits))
}

/// Constants of `w = x^{q-1-ε}` against `ε`, with log-log slope fits and a
/// refinement sweep in depth at the smallest `ε`.
pub fn cmd_sharpness_scan(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let (rows, fits) = scan_rows(cfg)?;
    let mut t = Table::new(vec![
        "scenario", "depth", "norm_depth", "family", "seed", "p", "q", "epsilon", "a", "aq", "aq_oracle",
        "mixed", "mixed_oracle", "estimate", "converged", "gamma", "budget",
    ]);
    let norm_depth = cfg.scan.norm_depth.min(cfg.depth);
    let mut flagged = Vec::new();
    for r in &rows {
        t.rows.push(vec![
            cfg.scenario.clone(),
            cfg.depth.to_string(),
            norm_depth.to_string(),
            cfg.scan.family.to_string(),
            cfg.estimator.seed.to_string(),
            num(r.p),
            num(r.q),
            num(r.epsilon),
            num(r.a),
            num(r.aq),
            num(r.aq_oracle),
            num(r.mixed),
            num(r.mixed_oracle),
            num(r.estimate),
            r.converged.to_string(),
            num(r.gamma),
            num(r.budget),
        ]);
        if !r.converged {
            flagged.push(format!("epsilon {}: estimator did not converge", r.epsilon));
        }
    }
    let mut refine = Table::new(vec!["p", "q", "epsilon", "depth", "aq", "aq_oracle", "mixed", "mixed_oracle"]);
    let eps_min = cfg.scan.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    for spec in &cfg.exponents {
        let e = Exponents::new(spec.p, spec.q)?;
        for r in refinement_rows(&e, eps_min, &cfg.scan.refine_depths)? {
            refine.rows.push(vec![
                num(r.p),
                num(r.q),
                num(r.epsilon),
                r.depth.to_string(),
                num(r.aq),
                num(r.aq_oracle),
                num(r.mixed),
                num(r.mixed_oracle),
            ]);
        }
    }
    let summary = fits
        .iter()
        .map(|f| {
            format!(
                "sharpness-scan p={} q={}: slope aq {} (expected {}), slope mixed {} (expected {})",
                f.p, f.q, f.slope_aq, f.expected_aq, f.slope_mixed, f.expected_mixed
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { name: "sharpness_scan.csv".into(), contents: t.render()? },
            Artifact { name: "sharpness_fit.json".into(), contents: json(&fits) },
            Artifact { name: "sharpness_refinement.csv".into(), contents: refine.render()? },
        ],
        flagged,
        summary,
    })
}

/// Audit of one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRecord {
    pub provenance: Provenance,
    pub operator: String,
    /// The inequality step with the smallest ratio, i.e. the most slack.
    pub dominant_step: String,
    pub passes: bool,
    pub failures: Vec<String>,
    pub report: ProofStepReport,
}

pub fn audit_records(cfg: &ExperimentConfig) -> Result<Vec<AuditRecord>> {
    let prep = prepare(cfg, true)?;
    prep.jobs
        .par_iter()
        .map(|&(wi, fi, e)| {
            let w = &prep.weights[wi];
            let fam = &prep.families[fi].0;
            let op = Averaging::for_exponents(&e);
            let est = power_iteration_with(op, fam, w, e.p(), &cfg.estimator)?;
            let af = op.apply(&est.certificate, fam)?;
            let g = dual_extremal(&af, w, e.p())?;
            let report = proof_step_audit(&est.certificate, &g, fam, w, &e)?;
            let dominant_step = report
                .steps
                .iter()
                .filter(|s| !s.identity && s.name != "jensen" && s.name != "theorem_bound")
                .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
                .map(|s| s.name.clone())
                .unwrap_or_default();
            let failures = report.failures();
            Ok(AuditRecord {
                provenance: provenance(cfg, &prep, wi, fi, e),
                operator: operator_label(&e),
                dominant_step,
                passes: failures.is_empty(),
                failures,
                report,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct StepSummary {
    step: String,
    identity: bool,
    count: usize,
    min: f64,
    max: f64,
    mean: f64,
    failures: usize,
}

/// Runs the proof-chain audit with the estimator's certificate as `f` and
/// its dual extremal as `g`. Flags any ratio above `1 + 1e-10` and any
/// identity off by more than `1e-12`.
pub fn cmd_audit(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let records = audit_records(cfg)?;
    let mut steps_table = Table::new(header_with(&["operator", "step", "lhs", "rhs", "ratio", "identity"]));
    let mut summaries: Vec<StepSummary> = Vec::new();
    let mut flagged = Vec::new();
    for (k, rec) in records.iter().enumerate() {
        for s in &rec.report.steps {
            let mut row = provenance_fields(&rec.provenance);
            row.extend([
                rec.operator.clone(),
                s.name.clone(),
                num(s.lhs),
                num(s.rhs),
                num(s.ratio),
                s.identity.to_string(),
            ]);
            steps_table.rows.push(row);
            let failed = if s.identity {
                (s.ratio - 1.0).abs() > crate::normest::AUDIT_IDENTITY_TOL
            } else {
                s.ratio > 1.0 + AUDIT_RATIO_TOL
            };
            let entry = match summaries.iter_mut().find(|e| e.step == s.name) {
                Some(e) => e,
                None => {
                    summaries.push(StepSummary {
                        step: s.name.clone(),
                        identity: s.identity,
                        count: 0,
                        min: f64::INFINITY,
                        max: f64::NEG_INFINITY,
                        mean: 0.0,
                        failures: 0,
                    });
                    summaries.last_mut().expect("just pushed")
                }
            };
            entry.count += 1;
            entry.min = entry.min.min(s.ratio);
            entry.max = entry.max.max(s.ratio);
            entry.mean += s.ratio;
            entry.failures += failed as usize;
        }
        for f in &rec.failures {
            flagged.push(format!("row {k}: {f}"));
        }
    }
    let mut summary_table = Table::new(vec!["step", "identity", "count", "min", "max", "mean", "failures"]);
    for s in &mut summaries {
        s.mean /= s.count as f64;
        summary_table.rows.push(vec![
            s.step.clone(),
            s.identity.to_string(),
            s.count.to_string(),
            num(s.min),
            num(s.max),
            num(s.mean),
            s.failures.to_string(),
        ]);
    }
    let mut dominant: Vec<(String, usize)> = Vec::new();
    for rec in &records {
        match dominant.iter_mut().find(|(n, _)| *n == rec.dominant_step) {
            Some((_, c)) => *c += 1,
            None => dominant.push((rec.dominant_step.clone(), 1)),
        }
    }
    let dominant_text = dominant
        .iter()
        .map(|(n, c)| format!("{n}={c}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { name: "audit_summary.csv".into(), contents: summary_table.render()? },
            Artifact { name: "audit_steps.csv".into(), contents: steps_table.render()? },
            Artifact { name: "audit_reports.json".into(), contents: json(&records) },
        ],
        summary: format!(
            "audit: {} instances, {} failing checks; dominant slack: {dominant_text}",
            records.len(),
            flagged.len()
        ),
        flagged,
    })
}

/// Measured norm over the one-supremum conjecture constant for one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub provenance: Provenance,
    pub estimate: f64,
    pub one_supremum: MixedConstant,
    pub ratio: f64,
    pub budget: f64,
    /// `ratio > budget`, worth a closer look.
    pub exceeds_budget: bool,
}

#[derive(Serialize)]
struct ProbeSummary {
    rows: usize,
    max_ratio: f64,
    argmax_row: usize,
    exceeding_budget: usize,
}

/// Observational: estimates against the one-supremum conjecture constant.
/// Never flags, so always exits 0.
pub fn cmd_conjecture_probe(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let prep = prepare(cfg, false)?;
    let rows = prep
        .jobs
        .par_iter()
        .map(|&(wi, fi, e)| {
            let w = &prep.weights[wi];
            let fam = &prep.families[fi].0;
            let est = power_iteration_with(Averaging::Plain, fam, w, e.p(), &cfg.estimator)?;
            let one_supremum = comparison_constants(w, e.p())?.one_supremum;
            let budget = budget_for(&e, fam.gamma())?;
            let ratio = est.value / one_supremum.value;
            Ok(ProbeRow {
                provenance: provenance(cfg, &prep, wi, fi, e),
                estimate: est.value,
                one_supremum,
                ratio,
                budget,
                exceeds_budget: ratio > budget,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(header_with(&["estimate", "one_supremum", "one_supremum_argmax", "ratio", "budget", "exceeds_budget"]));
    for r in &rows {
        let mut row = provenance_fields(&r.provenance);
        row.extend([
            num(r.estimate),
            num(r.one_supremum.value),
            r.one_supremum.argmax.to_string(),
            num(r.ratio),
            num(r.budget),
            r.exceeds_budget.to_string(),
        ]);
        t.rows.push(row);
    }
    let (argmax_row, max_ratio) = rows
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, r)| if r.ratio > acc.1 { (k, r.ratio) } else { acc });
    let summary = ProbeSummary {
        rows: rows.len(),
        max_ratio,
        argmax_row,
        exceeding_budget: rows.iter().filter(|r| r.exceeds_budget).count(),
    };
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { name: "conjecture_probe.csv".into(), contents: t.render()? },
            Artifact { name: "conjecture_summary.json".into(), contents: json(&summary) },
        ],
        flagged: Vec::new(),
        summary: format!(
            "conjecture-probe: {} rows, max ratio {} at row {}, {} above budget",
            summary.rows, summary.max_ratio, summary.argmax_row, summary.exceeding_budget
        ),
    })
}

/// Parses `(l,i)` as written in the tables.
pub fn parse_cube(s: &str) -> Option<Cube> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (l, i) = inner.split_once(',')?;
    Cube::new(l.trim().parse().ok()?, i.trim().parse().ok()?).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            scenario: "small".into(),
            depth: 4,
            exponents: vec![ExponentSpec { p: 2.0, q: 1.5, r: vec![1.1] }],
            families: vec![FamilyKind::Tower, FamilyKind::Random { seed: 2, keep: 0.4 }],
            weights: vec![WeightSpec::Constant { value: 1.0 }, WeightSpec::Power { a: 0.5 }],
            estimator: EstimatorSettings { iters: 200, restarts: 2, ..Default::default() },
            ..ExperimentConfig::battery()
        }
    }

    #[test]
    fn battery_shape() {
        let b = ExperimentConfig::battery();
        b.validate().unwrap();
        assert_eq!(b.exponents.len(), 7);
        assert_eq!(b.exponents.len() * b.families.len() * b.weights.len(), 315);
        let r_entries: usize = b.exponents.iter().map(|e| e.r.len()).sum();
        assert_eq!(r_entries, 13);
    }

    #[test]
    fn config_round_trip_and_overrides() {
        let b = ExperimentConfig::battery();
        assert_eq!(ExperimentConfig::from_json(&b.to_json()).unwrap(), b);
        let partial = ExperimentConfig::from_json(r#"{"depth": 6, "estimator": {"seed": 9}}"#).unwrap();
        assert_eq!(partial.depth, 6);
        assert_eq!(partial.estimator.seed, 9);
        assert_eq!(partial.estimator.iters, 500);
        assert!(ExperimentConfig::from_json(r#"{"dpeth": 6}"#).is_err());

        let mut c = small();
        c.apply(&Overrides { p: Some(3.0), r: Some(1.5), seed: Some(4), ..Default::default() });
        assert_eq!(c.exponents, vec![ExponentSpec { p: 3.0, q: 1.5, r: vec![1.5] }]);
        assert_eq!(c.estimator.seed, 4);
        c.validate().unwrap();
        c.apply(&Overrides { q: Some(3.0), ..Default::default() });
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let mut c = small();
        c.gamma = Some(1.5);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small();
        c.weights.push(WeightSpec::Power { a: -1.0 });
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::sharpness_default();
        c.scan.epsilons.truncate(3);
        assert!(matches!(cmd_sharpness_scan(&c), Err(Error::Config(_))));
        let mut c = small();
        c.gamma = Some(0.9);
        assert!(matches!(cmd_check_theorem(&c), Err(Error::Config(_))));
    }

    #[test]
    fn constant_weight_row() {
        let mut c = small();
        c.weights = vec![WeightSpec::Constant { value: 1.0 }];
        let rows = constants_rows(&c).unwrap();
        let r = &rows[0];
        for v in [r.aq, r.ap, r.ainfty_fw, r.ainfty_exp, r.mixed] {
            assert!((v.value - 1.0).abs() < 1e-12);
        }
        assert!((r.comparisons.one_supremum.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn check_theorem_small() {
        let out = cmd_check_theorem(&small()).unwrap();
        assert_eq!(out.exit_code(), 0, "{:?}", out.flagged);
        let rows = check_rows(&small()).unwrap();
        assert_eq!(rows.len(), 8);
        for r in rows.iter().filter(|r| r.provenance.weight == WeightSpec::Constant { value: 1.0 }) {
            assert!((r.ratio - r.estimate).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_of_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x - 2.0).collect();
        assert!((fit_slope(&xs, &ys) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cube_labels_parse() {
        let c = Cube::new(3, 5).unwrap();
        assert_eq!(parse_cube(&c.to_string()), Some(c));
        assert_eq!(parse_cube("3,5"), None);
    }
}
