//! Weights, their duals and every weight characteristic used by the lab.
//!
//! All suprema range over the dyadic cubes of the weight's grid, so each
//! global constant is a finite maximum over a [`CubeTable`] of local values.
//! The local factors are
//!
//! * `A_p(w, Q) = ⟨w⟩_Q ⟨w^{1-p'}⟩_Q^{p-1}` (and `⟨w⟩_Q / min_Q w` for `p = 1`),
//! * the Fujii–Wilson factor `⟨M(w χ_Q)⟩_Q / ⟨w⟩_Q`,
//! * the exponential factor `⟨w⟩_Q exp(-⟨log w⟩_Q)`,
//!
//! and a mixed constant is the supremum over a single cube of a product of
//! powers of these.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{
    build_tree, dyadic_maximal, localized_maximal_integrals, Cube, CubeTable, Grid, StepFunction,
    TreeSums,
};
use crate::error::{domain, param, Error, Result};
use crate::rng;

/// Hölder conjugate `s / (s - 1)`; infinite for `s = 1`.
pub fn conjugate(s: f64) -> f64 {
    if s == 1.0 {
        f64::INFINITY
    } else {
        s / (s - 1.0)
    }
}

/// The exponents of one experiment: `p > 1`, `1 <= q < p` and, for the
/// `A_{r,S}` path, `1 < r < p/q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    p: f64,
    q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
}

impl Exponents {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return param(format!("p must be > 1, got {p}"));
        }
        if !(q >= 1.0 && q < p) {
            return param(format!("q must satisfy 1 <= q < p = {p}, got {q}"));
        }
        Ok(Exponents { p, q, r: None })
    }

    pub fn with_r(self, r: f64) -> Result<Self> {
        if !(r > 1.0 && r < self.p / self.q) {
            return param(format!(
                "r must satisfy 1 < r < p/q = {}, got {r}",
                self.p / self.q
            ));
        }
        Ok(Exponents { r: Some(r), ..self })
    }

    pub fn without_r(self) -> Self {
        Exponents { r: None, ..self }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> Option<f64> {
        self.r
    }

    pub fn p_prime(&self) -> f64 {
        conjugate(self.p)
    }

    /// `q'`, only meaningful for `q > 1`.
    pub fn q_prime(&self) -> Option<f64> {
        (self.q > 1.0).then(|| conjugate(self.q))
    }

    /// Factors of `[w]_{A_q^{1/p} (A_∞^exp)^{1/p'}}`.
    pub fn theorem_factors(&self) -> Vec<FactorSpec> {
        vec![
            FactorSpec::new(FactorKind::Ap(self.q), 1.0 / self.p).expect("valid by construction"),
            FactorSpec::new(FactorKind::AinftyExp, 1.0 / self.p_prime())
                .expect("valid by construction"),
        ]
    }
}

/// Where a weight came from; serialized alongside its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum WeightSource {
    Explicit {},
    Power { a: f64 },
    Martingale { seed: u64, delta: f64 },
}

impl std::fmt::Display for WeightSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightSource::Explicit {} => write!(f, "explicit"),
            WeightSource::Power { a } => write!(f, "power(a={a})"),
            WeightSource::Martingale { seed, delta } => {
                write!(f, "martingale(seed={seed},delta={delta})")
            }
        }
    }
}

/// A strictly positive step function.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "WeightRepr", into = "WeightRepr")]
pub struct Weight {
    func: StepFunction,
    source: WeightSource,
    log_sums: OnceLock<TreeSums>,
}

#[derive(Serialize, Deserialize)]
struct WeightRepr {
    depth: u32,
    values: Vec<f64>,
    #[serde(flatten)]
    source: WeightSource,
}

impl TryFrom<WeightRepr> for Weight {
    type Error = Error;

    fn try_from(r: WeightRepr) -> Result<Self> {
        Ok(Weight::new(StepFunction::new(r.depth, r.values)?)?.with_source(r.source))
    }
}

impl From<Weight> for WeightRepr {
    fn from(w: Weight) -> Self {
        WeightRepr {
            depth: w.func.depth(),
            source: w.source,
            values: w.func.into_values(),
        }
    }
}

impl PartialEq for Weight {
    fn eq(&self, other: &Self) -> bool {
        self.func == other.func && self.source == other.source
    }
}

impl Weight {
    pub fn new(func: StepFunction) -> Result<Self> {
        if let Some((i, v)) = func.values().iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return domain(format!("weight must be strictly positive; leaf {i} is {v}"));
        }
        Ok(Weight {
            func,
            source: WeightSource::Explicit {},
            log_sums: OnceLock::new(),
        })
    }

    pub fn from_values(depth: u32, values: Vec<f64>) -> Result<Self> {
        Weight::new(StepFunction::new(depth, values)?)
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Weight::new(StepFunction::constant(grid, c)?)
    }

    pub fn with_source(mut self, source: WeightSource) -> Self {
        self.source = source;
        self
    }

    pub fn source(&self) -> &WeightSource {
        &self.source
    }

    pub fn as_function(&self) -> &StepFunction {
        &self.func
    }

    pub fn values(&self) -> &[f64] {
        self.func.values()
    }

    pub fn grid(&self) -> Grid {
        self.func.grid()
    }

    pub fn depth(&self) -> u32 {
        self.func.depth()
    }

    /// `w(Q) = ∫_Q w`.
    pub fn mass(&self, cube: &Cube) -> Result<f64> {
        self.func.integral(cube)
    }

    pub(crate) fn log_tree(&self) -> &TreeSums {
        self.log_sums.get_or_init(|| {
            let logs: Vec<f64> = self.values().iter().map(|v| v.ln()).collect();
            TreeSums::build(self.depth(), &logs)
        })
    }

    /// `⟨log w⟩_Q`.
    pub fn log_average(&self, cube: &Cube) -> Result<f64> {
        self.grid().check(cube)?;
        Ok(self.log_tree().mean(cube.node_id()))
    }

    /// Leafwise `w^s` as a weight.
    pub fn powf(&self, s: f64) -> Result<Weight> {
        Weight::new(self.func.powf(s)?)
    }
}

/// `σ = w^{1-p'}`.
pub fn dual_weight(w: &Weight, p: f64) -> Result<Weight> {
    if !(p > 1.0 && p.is_finite()) {
        return param(format!("dual weight needs p > 1, got {p}"));
    }
    w.powf(1.0 - conjugate(p))
}

fn check_ap_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return param(format!("A_p exponent must be >= 1, got {p}"));
    }
    Ok(())
}

fn mean_on(values: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    values.iter().map(|&v| f(v)).sum::<f64>() / values.len() as f64
}

/// Local `A_p(w, Q)`.
pub fn ap_local(w: &Weight, p: f64, cube: &Cube) -> Result<f64> {
    check_ap_exponent(p)?;
    let avg = w.as_function().average(cube)?;
    if p == 1.0 {
        return Ok(avg / w.as_function().min_on(cube)?);
    }
    let leaves = &w.values()[cube.leaf_range(w.depth())];
    let dual_exp = -1.0 / (p - 1.0);
    Ok(avg * mean_on(leaves, |v| v.powf(dual_exp)).powf(p - 1.0))
}

/// Local Fujii–Wilson factor `⟨M(w χ_Q)⟩_Q / ⟨w⟩_Q`.
pub fn ainfty_fw_local(w: &Weight, cube: &Cube) -> Result<f64> {
    let m = dyadic_maximal(w.as_function(), Some(*cube))?;
    Ok(m.average(cube)? / w.as_function().average(cube)?)
}

/// Local exponential factor `⟨w⟩_Q exp(⟨log w^{-1}⟩_Q)`.
pub fn ainfty_exp_local(w: &Weight, cube: &Cube) -> Result<f64> {
    Ok(w.as_function().average(cube)? * (-w.log_average(cube)?).exp())
}

/// `A_p(w, Q)` for every cube.
pub fn ap_table(w: &Weight, p: f64) -> Result<CubeTable> {
    check_ap_exponent(p)?;
    let tree = w.as_function().tree();
    if p == 1.0 {
        let mins = build_tree(w.depth(), w.values(), f64::min);
        return Ok(CubeTable::from_fn(w.depth(), |n| tree.mean(n) / mins[n]));
    }
    let dual_exp = -1.0 / (p - 1.0);
    let dual: Vec<f64> = w.values().iter().map(|v| v.powf(dual_exp)).collect();
    let dual = TreeSums::build(w.depth(), &dual);
    Ok(CubeTable::from_fn(w.depth(), |n| {
        tree.mean(n) * dual.mean(n).powf(p - 1.0)
    }))
}

pub fn ainfty_fw_table(w: &Weight) -> CubeTable {
    let integrals = localized_maximal_integrals(w.as_function());
    let tree = w.as_function().tree();
    CubeTable::from_fn(w.depth(), |n| integrals.at(n) / (tree.mean(n) * Cube::from_node_id(n).measure()))
}

pub fn ainfty_exp_table(w: &Weight) -> CubeTable {
    let tree = w.as_function().tree();
    let logs = w.log_tree();
    CubeTable::from_fn(w.depth(), |n| tree.mean(n) * (-logs.mean(n)).exp())
}

/// One local factor kind of a mixed constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorKind {
    Ap(f64),
    AinftyFW,
    AinftyExp,
}

impl std::fmt::Display for FactorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorKind::Ap(p) => write!(f, "A_{p}"),
            FactorKind::AinftyFW => write!(f, "A_inf"),
            FactorKind::AinftyExp => write!(f, "A_inf^exp"),
        }
    }
}

/// `A_kind(w, Q)^exponent` as one factor of a single-supremum product.
///
/// Exponents may be negative: the Lerner–Moen style constants raise the
/// exponential factor to `1 - 1/(p-1)`, which is negative for `p < 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorRepr", into = "FactorRepr")]
pub struct FactorSpec {
    kind: FactorKind,
    exponent: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum FactorRepr {
    Ap { p: f64, exponent: f64 },
    AinftyFW { exponent: f64 },
    AinftyExp { exponent: f64 },
}

impl TryFrom<FactorRepr> for FactorSpec {
    type Error = Error;

    fn try_from(r: FactorRepr) -> Result<Self> {
        match r {
            FactorRepr::Ap { p, exponent } => FactorSpec::new(FactorKind::Ap(p), exponent),
            FactorRepr::AinftyFW { exponent } => FactorSpec::new(FactorKind::AinftyFW, exponent),
            FactorRepr::AinftyExp { exponent } => FactorSpec::new(FactorKind::AinftyExp, exponent),
        }
    }
}

impl From<FactorSpec> for FactorRepr {
    fn from(s: FactorSpec) -> Self {
        match s.kind {
            FactorKind::Ap(p) => FactorRepr::Ap { p, exponent: s.exponent },
            FactorKind::AinftyFW => FactorRepr::AinftyFW { exponent: s.exponent },
            FactorKind::AinftyExp => FactorRepr::AinftyExp { exponent: s.exponent },
        }
    }
}

impl FactorSpec {
    pub fn new(kind: FactorKind, exponent: f64) -> Result<Self> {
        if let FactorKind::Ap(p) = kind {
            check_ap_exponent(p)?;
        }
        if !exponent.is_finite() {
            return param(format!("factor exponent must be finite, got {exponent}"));
        }
        Ok(FactorSpec { kind, exponent })
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }
}

pub fn factor_table(w: &Weight, kind: FactorKind) -> Result<CubeTable> {
    match kind {
        FactorKind::Ap(p) => ap_table(w, p),
        FactorKind::AinftyFW => Ok(ainfty_fw_table(w)),
        FactorKind::AinftyExp => Ok(ainfty_exp_table(w)),
    }
}

/// A supremum over cubes together with the cube attaining it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedConstant {
    pub value: f64,
    pub argmax: Cube,
}

/// `sup_Q ∏ A_kind(w, Q)^exponent`, one supremum shared by all factors.
pub fn mixed_constant(w: &Weight, factors: &[FactorSpec]) -> Result<MixedConstant> {
    mixed_table(w, factors).map(|t| {
        let (value, argmax) = t.argmax();
        MixedConstant { value, argmax }
    })
}

/// The local products `∏ A_kind(w, Q)^exponent` for every cube.
pub fn mixed_table(w: &Weight, factors: &[FactorSpec]) -> Result<CubeTable> {
    if factors.is_empty() {
        return param("mixed constant needs at least one factor");
    }
    let tables = factors
        .iter()
        .map(|f| factor_table(w, f.kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(CubeTable::from_fn(w.depth(), |n| {
        tables
            .iter()
            .zip(factors)
            .map(|(t, f)| {
                if f.exponent == 0.0 {
                    1.0
                } else {
                    t.at(n).powf(f.exponent)
                }
            })
            .product()
    }))
}

pub fn ap_constant(w: &Weight, p: f64) -> Result<MixedConstant> {
    mixed_constant(w, &[FactorSpec::new(FactorKind::Ap(p), 1.0)?])
}

pub fn ainfty_fw_constant(w: &Weight) -> MixedConstant {
    let (value, argmax) = ainfty_fw_table(w).argmax();
    MixedConstant { value, argmax }
}

pub fn ainfty_exp_constant(w: &Weight) -> MixedConstant {
    let (value, argmax) = ainfty_exp_table(w).argmax();
    MixedConstant { value, argmax }
}

/// The power weight `x^a`, discretized by exact cell averages.
pub fn power_weight(a: f64, grid: Grid) -> Result<Weight> {
    if !(a > -1.0 && a.is_finite()) {
        return param(format!("power weight exponent must be > -1, got {a}"));
    }
    let h = grid.leaf_measure();
    let b = a + 1.0;
    let cell = |i: usize| -> f64 {
        if a == 0.0 {
            return 1.0;
        }
        if i == 0 {
            return h.powf(a) / b;
        }
        // (v^b - u^b) / (b h) with u = i h, written to avoid cancellation
        let u = i as f64 * h;
        u.powf(b) * (b * (h / u).ln_1p()).exp_m1() / (b * h)
    };
    Ok(Weight::new(StepFunction::from_fn(grid, cell)?)?.with_source(WeightSource::Power { a }))
}

/// Closed-form local constants of `x^a` on intervals `[0, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerOracle {
    pub ap: f64,
    pub ainfty_exp: f64,
}

/// Continuous-model constants of `x^a` on `[0, h)`, independent of `h`:
/// `A_p = (1/(1+a)) (1/(1 + a(1-p')))^{p-1}` and `A_∞^exp = e^a/(1+a)`.
pub fn power_weight_constants_oracle(a: f64, p: f64) -> Result<PowerOracle> {
    if !(a > -1.0 && a.is_finite()) {
        return param(format!("power exponent must be > -1, got {a}"));
    }
    check_ap_exponent(p)?;
    let ainfty_exp = a.exp() / (1.0 + a);
    let ap = if p == 1.0 {
        if a > 0.0 {
            return param(format!("x^{a} has zero essential infimum near 0; A_1 diverges"));
        }
        1.0 / (1.0 + a)
    } else {
        let dual = 1.0 + a * (1.0 - conjugate(p));
        if dual <= 0.0 {
            return param(format!(
                "dual power x^({}) is not integrable near 0; A_{p} diverges",
                a * (1.0 - conjugate(p))
            ));
        }
        (1.0 / (1.0 + a)) * (1.0 / dual).powf(p - 1.0)
    };
    Ok(PowerOracle { ap, ainfty_exp })
}

/// A log-martingale weight: `log w` starts at 0 on the root and each child
/// moves its parent's value by `±u`, `u ~ U[0, δ]`, with opposite signs on
/// the two siblings. Hence `⟨log w⟩_Q` is exactly the value attached to `Q`.
pub fn martingale_weight(seed: u64, delta: f64, grid: Grid) -> Result<Weight> {
    if !(delta > 0.0 && delta <= 1.0) {
        return param(format!("martingale step must lie in (0, 1], got {delta}"));
    }
    let leaves = grid.leaves();
    let mut logs = vec![0.0f64; 2 * leaves];
    let mut rng = rng::seeded(seed);
    for node in 1..leaves {
        let u = rng.random_range(0.0..=delta);
        let step = if rng.random::<bool>() { u } else { -u };
        logs[2 * node] = logs[node] + step;
        logs[2 * node + 1] = logs[node] - step;
    }
    let values = logs[leaves..].iter().map(|l| l.exp()).collect();
    Ok(Weight::from_values(grid.depth(), values)?
        .with_source(WeightSource::Martingale { seed, delta }))
}
