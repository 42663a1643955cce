//! Operator norms of `A_S` and `A_{r,S}` on `L^p(w)`.
//!
//! Norms are estimated from below by a nonlinear power iteration whose
//! output carries its maximizing function as a certificate, and bounded from
//! above by [`theorem_budget`] times the mixed constant
//! `[w]_{A_q^{1/p} (A_∞^exp)^{1/p'}}`. [`proof_step_audit`] evaluates each
//! inequality of the duality argument behind that upper bound on concrete
//! `f`, `g`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{
    dyadic_measure, same_grid, weighted_dyadic_maximal, Cube, StepFunction, TreeSums,
};
use crate::error::{param, Error, Result};
use crate::orlicz::{bump_exponents, luxemburg_table, maximal_norm_budget, orlicz_maximal};
use crate::rng;
use crate::sparse::{apply_sparse, apply_sparse_r, push_down, SparseFamily};
use crate::weights::{ainfty_exp_table, ap_table, conjugate, mixed_table, Exponents, Weight};

/// Largest depth accepted by [`dense_norm_oracle_p2`].
pub const DENSE_MAX_DEPTH: u32 = 12;
const DENSE_ITERATIONS: usize = 10_000;
const DENSE_SEED: u64 = 0x5eed_0fd3;

/// Per-step slack allowed when checking that the Rayleigh sequence increases.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Which sparse operator is being measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Averaging {
    /// `A_S f = Σ ⟨f⟩_Q χ_Q`.
    Plain,
    /// `A_{r,S} f = Σ ⟨f^r⟩_Q^{1/r} χ_Q`.
    Power { r: f64 },
}

impl Averaging {
    pub fn for_exponents(e: &Exponents) -> Self {
        match e.r() {
            Some(r) => Averaging::Power { r },
            None => Averaging::Plain,
        }
    }

    fn r(&self) -> f64 {
        match *self {
            Averaging::Plain => 1.0,
            Averaging::Power { r } => r,
        }
    }

    pub fn apply(&self, f: &StepFunction, family: &SparseFamily) -> Result<StepFunction> {
        match *self {
            Averaging::Plain => apply_sparse(f, family),
            Averaging::Power { r } => apply_sparse_r(f, family, r),
        }
    }

    /// Lebesgue gradient of `f ↦ ∫ (A f) g`. For the linear operator this is
    /// `A g` by self-adjointness; for `A_{r,S}` it is
    /// `f^{r-1} Σ_{Q∋x} ⟨g⟩_Q ⟨f^r⟩_Q^{1/r-1}`.
    fn pullback(&self, f: &StepFunction, g: &StepFunction, family: &SparseFamily) -> Result<StepFunction> {
        match *self {
            Averaging::Plain => apply_sparse(g, family),
            Averaging::Power { r: 1.0 } => apply_sparse(g, family),
            Averaging::Power { r } => {
                let depth = f.depth();
                let powered: Vec<f64> = f.values().iter().map(|v| v.powf(r)).collect();
                let fr = TreeSums::build(depth, &powered);
                let gt = g.tree();
                let mut coef = vec![0.0f64; 1usize << (depth + 1)];
                for c in family.cubes() {
                    let n = c.node_id();
                    let m = fr.mean(n);
                    if m > 0.0 {
                        coef[n] = gt.mean(n) * m.powf(1.0 / r - 1.0);
                    }
                }
                let sums = push_down(depth, &mut coef);
                StepFunction::new(
                    depth,
                    sums.iter()
                        .zip(f.values())
                        .map(|(c, v)| c * v.powf(r - 1.0))
                        .collect(),
                )
            }
        }
    }
}

/// `‖f‖_{L^p(w)}`.
pub fn lp_norm(f: &StepFunction, w: &Weight, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return param(format!("L^p norm needs p >= 1, got {p}"));
    }
    same_grid(f, w.as_function())?;
    let h = dyadic_measure(f.depth());
    let total: f64 = f
        .values()
        .iter()
        .zip(w.values())
        .map(|(v, wv)| v.powf(p) * wv)
        .sum();
    Ok((total * h).powf(1.0 / p))
}

/// `‖A_S f‖_{L^p(w)} / ‖f‖_{L^p(w)}`, a lower bound for the operator norm.
pub fn rayleigh(f: &StepFunction, family: &SparseFamily, w: &Weight, p: f64) -> Result<f64> {
    rayleigh_with(Averaging::Plain, f, family, w, p)
}

pub fn rayleigh_with(
    op: Averaging,
    f: &StepFunction,
    family: &SparseFamily,
    w: &Weight,
    p: f64,
) -> Result<f64> {
    if f.is_zero() {
        return param("Rayleigh quotient of the zero function");
    }
    Ok(lp_norm(&op.apply(f, family)?, w, p)? / lp_norm(f, w, p)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            iters: 500,
            tol: 1e-10,
            restarts: 8,
            seed: 0,
        }
    }
}

impl EstimatorSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.restarts == 0 {
            return param("estimator needs at least one iteration and one restart");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return param(format!("estimator tolerance must lie in (0, 1), got {}", self.tol));
        }
        Ok(())
    }
}

/// A certified lower bound for an operator norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    /// Maximizing function, normalized to `‖f‖_{L^p(w)} = 1`.
    pub certificate: StepFunction,
    /// Iterations used by the winning restart.
    pub iterations: usize,
    pub restarts: usize,
    /// Index of the winning restart.
    pub best_restart: usize,
    pub converged: bool,
    /// Rayleigh values of the winning restart, one per iterate.
    #[serde(skip)]
    pub history: Vec<f64>,
}

struct RestartRun {
    f: StepFunction,
    value: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

/// Leaves grouped by the maximal cube of the family containing them. The
/// operator acts independently on each group, so its norm is the largest of
/// the group norms.
struct Blocks {
    leaf_block: Vec<usize>,
    count: usize,
}

impl Blocks {
    const NONE: usize = usize::MAX;

    fn new(family: &SparseFamily) -> Self {
        let depth = family.depth();
        let mask = family.membership();
        let mut leaf_block = vec![Self::NONE; 1usize << depth];
        let mut count = 0;
        for c in family.cubes() {
            let mut node = c.node_id() / 2;
            let mut covered = false;
            while node >= 1 {
                if mask[node] {
                    covered = true;
                    break;
                }
                node /= 2;
            }
            if !covered {
                for i in c.leaf_range(depth) {
                    leaf_block[i] = count;
                }
                count += 1;
            }
        }
        Blocks { leaf_block, count }
    }

    /// `‖f χ_B‖_{L^p(w)}^p` for every block `B`.
    fn powers(&self, f: &StepFunction, w: &Weight, p: f64) -> Vec<f64> {
        let h = dyadic_measure(f.depth());
        let mut out = vec![0.0; self.count];
        for ((&b, v), wv) in self.leaf_block.iter().zip(f.values()).zip(w.values()) {
            if b != Self::NONE {
                out[b] += v.powf(p) * wv * h;
            }
        }
        out
    }

    /// Rescales each block to unit norm; zero outside the blocks.
    fn normalize(&self, f: &StepFunction, w: &Weight, p: f64) -> Result<Option<StepFunction>> {
        let norms = self.powers(f, w, p);
        if norms.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return Ok(None);
        }
        let scale: Vec<f64> = norms.iter().map(|n| n.powf(-1.0 / p)).collect();
        let values = self
            .leaf_block
            .iter()
            .zip(f.values())
            .map(|(&b, v)| if b == Self::NONE { 0.0 } else { v * scale[b] })
            .collect();
        Ok(Some(StepFunction::new(f.depth(), values)?))
    }

    /// `f` on block `b` only.
    fn restrict(&self, f: &StepFunction, b: usize) -> Result<StepFunction> {
        let values = self
            .leaf_block
            .iter()
            .zip(f.values())
            .map(|(&k, v)| if k == b { *v } else { 0.0 })
            .collect();
        StepFunction::new(f.depth(), values)
    }
}

fn best_block(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
}

fn run_restart(
    op: Averaging,
    family: &SparseFamily,
    blocks: &Blocks,
    w: &Weight,
    p: f64,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<RestartRun> {
    let mut rng = rng::seeded(seed);
    let start = StepFunction::from_fn(w.grid(), |_| 0.5 + rng.random::<f64>())?;
    let mut f = blocks.normalize(&start, w, p)?.expect("positive start has positive norm");
    let mut af = op.apply(&f, family)?;
    let block_values = |af: &StepFunction| -> Vec<f64> {
        blocks.powers(af, w, p).into_iter().map(|v| v.powf(1.0 / p)).collect()
    };
    let mut values = block_values(&af);
    let (mut best_k, mut value) = best_block(&values);
    let mut best_f = f.clone();
    let mut history = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    let inv = 1.0 / (p - 1.0);
    for it in 1..=settings.iters {
        iterations = it;
        let g = af.zip(w.as_function(), |a, wv| a.powf(p - 1.0) * wv)?;
        let h = op.pullback(&f, &g, family)?;
        let next = h.zip(w.as_function(), |hv, wv| (hv / wv).powf(inv))?;
        let Some(next) = blocks.normalize(&next, w, p)? else {
            break;
        };
        af = op.apply(&next, family)?;
        f = next;
        let next_values = block_values(&af);
        let gain = next_values
            .iter()
            .zip(&values)
            .map(|(n, o)| (n - o) / o)
            .fold(f64::NEG_INFINITY, f64::max);
        values = next_values;
        let (k, v) = best_block(&values);
        history.push(v);
        if v >= value {
            value = v;
            best_k = k;
            best_f = f.clone();
        }
        if gain < settings.tol {
            converged = true;
            break;
        }
    }
    let restricted = blocks.restrict(&best_f, best_k)?;
    let f = restricted.scale(1.0 / lp_norm(&restricted, w, p)?)?;
    Ok(RestartRun {
        f,
        value,
        iterations,
        converged,
        history,
    })
}

/// Lower bound for `‖A_S‖_{L^p(w)}`; see [`power_iteration_with`].
pub fn power_iteration(
    family: &SparseFamily,
    w: &Weight,
    p: f64,
    settings: &EstimatorSettings,
) -> Result<NormEstimate> {
    power_iteration_with(Averaging::Plain, family, w, p, settings)
}

/// Fixed-point ascent `g = (Af)^{p-1} w`, `h = ∇_f ∫ (Af) g`,
/// `f ← (h/w)^{1/(p-1)}` renormalized in `L^p(w)`. Each step maximizes the
/// linearization of the convex functional `f ↦ ‖Af‖_{L^p(w)}` over the unit
/// sphere, so the Rayleigh value never decreases. Normalization is done
/// separately under each maximal cube of the family, where the operator
/// decouples, and the certificate lives on the best such cube. The best of
/// several random positive starts is kept; ties go to the lowest restart
/// index.
pub fn power_iteration_with(
    op: Averaging,
    family: &SparseFamily,
    w: &Weight,
    p: f64,
    settings: &EstimatorSettings,
) -> Result<NormEstimate> {
    if !(p > 1.0 && p.is_finite()) {
        return param(format!("power iteration needs p > 1, got {p}"));
    }
    settings.validate()?;
    if family.depth() != w.depth() {
        return Err(Error::Domain("family and weight live on different grids".into()));
    }
    let blocks = Blocks::new(family);
    let runs = (0..settings.restarts)
        .into_par_iter()
        .map(|k| run_restart(op, family, &blocks, w, p, settings, rng::substream(settings.seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (best_restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.value > a.1.value { b } else { a })
        .expect("at least one restart");
    let value = rayleigh_with(op, &best.f, family, w, p)?;
    Ok(NormEstimate {
        value,
        certificate: best.f,
        iterations: best.iterations,
        restarts: settings.restarts,
        best_restart,
        converged: best.converged,
        history: best.history,
    })
}

/// `‖A_S‖_{L^2(w)}` as the top singular value of
/// `B = diag(w^{1/2}) K diag(w^{-1/2})`, where `K` is the dense leaf matrix of
/// `A_S`. Power iteration on `BᵀB` from a fixed seed.
pub fn dense_norm_oracle_p2(family: &SparseFamily, w: &Weight) -> Result<f64> {
    let depth = family.depth();
    if depth > DENSE_MAX_DEPTH {
        return param(format!(
            "dense oracle is limited to depth {DENSE_MAX_DEPTH}, got {depth}"
        ));
    }
    if w.depth() != depth {
        return Err(Error::Domain("family and weight live on different grids".into()));
    }
    let n = 1usize << depth;
    let mut k = vec![0.0f64; n * n];
    for c in family.cubes() {
        let range = c.leaf_range(depth);
        let entry = 1.0 / range.len() as f64;
        for i in range.clone() {
            for j in range.clone() {
                k[i * n + j] += entry;
            }
        }
    }
    let sw: Vec<f64> = w.values().iter().map(|v| v.sqrt()).collect();
    let b: Vec<f64> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            sw[i] * k[ij] / sw[j]
        })
        .collect();
    // G = BᵀB
    let mut gram = vec![0.0f64; n * n];
    for row in 0..n {
        let brow = &b[row * n..(row + 1) * n];
        for i in 0..n {
            let bi = brow[i];
            if bi == 0.0 {
                continue;
            }
            let g = &mut gram[i * n..(i + 1) * n];
            for (gj, bj) in g.iter_mut().zip(brow) {
                *gj += bi * bj;
            }
        }
    }
    let mut rng = rng::seeded(DENSE_SEED);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
    let mut y = vec![0.0f64; n];
    let mut lambda = 0.0;
    for _ in 0..DENSE_ITERATIONS {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = gram[i * n..(i + 1) * n].iter().zip(&x).map(|(g, v)| g * v).sum();
        }
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        std::mem::swap(&mut x, &mut y);
    }
    Ok(lambda.max(0.0).sqrt())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return param(format!("sparsity constant must lie in (0, 1], got {gamma}"));
    }
    Ok(())
}

/// Upper-bound constant for `‖A_S‖_{L^p(w)} / [w]_{A_q^{1/p}(A_∞^exp)^{1/p'}}`
/// in the dyadic model: `γ^{-1} e^{1/p'} p ‖M_A‖`, with `‖M_A‖` from
/// [`maximal_norm_budget`] for `A(t) = t^{p/(p-q+1)}`.
///
/// The factors are: `γ^{-1/p}` from sparsity, the `M_A` budget, and
/// `(e γ^{-1})^{1/p'} p` from the weighted Carleson embedding, where
/// `e γ^{-1}` bounds the packing of `exp(⟨log w⟩_Q)|Q|` against `w` and `p`
/// is the norm of `M^w` on `L^{p'}(w)`.
pub fn theorem_budget(e: &Exponents, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let bumps = bump_exponents(&e.without_r())?;
    let ma = maximal_norm_budget(bumps.a.exponent(), e.p())?;
    Ok(carleson_factor(e, gamma) * ma / gamma.powf(1.0 / e.p()))
}

/// The `A_{r,S}` analogue: `γ^{-1} e^{1/p'} p ‖M_B‖_{L^{p/r}}^{1/r}`.
pub fn theorem_budget_r(e: &Exponents, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let Some(r) = e.r() else {
        return param("the A_(r,S) budget needs an r exponent");
    };
    let bumps = bump_exponents(e)?;
    let b = bumps.b.expect("present when r is set");
    let mb = maximal_norm_budget(b.exponent(), e.p() / r)?;
    Ok(carleson_factor(e, gamma) * mb.powf(1.0 / r) / gamma.powf(1.0 / e.p()))
}

/// Budget for whichever operator the exponents select.
pub fn budget_for(e: &Exponents, gamma: f64) -> Result<f64> {
    match e.r() {
        Some(_) => theorem_budget_r(e, gamma),
        None => theorem_budget(e, gamma),
    }
}

fn carleson_factor(e: &Exponents, gamma: f64) -> f64 {
    (std::f64::consts::E / gamma).powf(1.0 / e.p_prime()) * e.p()
}

/// One inequality (or identity) of the chain, evaluated on concrete data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSlack {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Identities must have ratio 1; inequalities ratio at most 1.
    pub identity: bool,
}

/// Per-cube ratios for the cubes of the family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeSlack {
    pub cube: Cube,
    /// `⟨f^r⟩_Q^{1/r} / (⟨F⟩_{B,Q} ⟨w^{-r/p}⟩_{B̄,Q})^{1/r}`.
    pub holder_split: f64,
    /// Regrouped product over `A_q^{1/p} (A_∞^exp)^{1/p'} exp(⟨log w⟩_Q)^{1/p'}`.
    pub regrouping: f64,
    /// Local mixed factor over the global mixed constant.
    pub mixed_extraction: f64,
    /// `exp(⟨log w⟩_Q)|Q| / w(Q)`.
    pub jensen: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerCubeSummary {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub argmax: Cube,
}

/// Slack ratios of every step of the duality argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProofStepReport {
    pub exponents: Exponents,
    pub gamma: f64,
    pub mixed_constant: f64,
    pub budget: f64,
    pub steps: Vec<StepSlack>,
    pub per_cube_summary: Vec<PerCubeSummary>,
    #[serde(skip)]
    pub per_cube: Vec<CubeSlack>,
}

/// Tolerance on inequality ratios.
pub const AUDIT_RATIO_TOL: f64 = 1e-10;
/// Tolerance on identity ratios.
pub const AUDIT_IDENTITY_TOL: f64 = 1e-12;

impl ProofStepReport {
    pub fn step(&self, name: &str) -> Option<&StepSlack> {
        self.steps.iter().find(|s| s.name == name)
    }

    /// Steps that violate their tolerance, including per-cube checks.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .steps
            .iter()
            .filter(|s| !step_ok(s.ratio, s.identity))
            .map(|s| format!("{}: ratio {}", s.name, s.ratio))
            .collect();
        for c in &self.per_cube {
            for (name, ratio, identity) in [
                ("holder_split", c.holder_split, false),
                ("regrouping", c.regrouping, true),
                ("mixed_extraction", c.mixed_extraction, false),
                ("jensen", c.jensen, false),
            ] {
                if !step_ok(ratio, identity) {
                    out.push(format!("{name} on {}: ratio {ratio}", c.cube));
                }
            }
        }
        out
    }

    pub fn passes(&self) -> bool {
        self.failures().is_empty()
    }
}

fn step_ok(ratio: f64, identity: bool) -> bool {
    if identity {
        (ratio - 1.0).abs() <= AUDIT_IDENTITY_TOL
    } else {
        ratio <= 1.0 + AUDIT_RATIO_TOL
    }
}

fn slack(name: &str, lhs: f64, rhs: f64, identity: bool) -> StepSlack {
    StepSlack {
        name: name.to_string(),
        lhs,
        rhs,
        ratio: lhs / rhs,
        identity,
    }
}

/// Evaluates the duality argument for `‖A f‖_{L^p(w)}` tested against `g`.
///
/// With `r = 1` (no `r` in `e`) the operator is `A_S` and the bumps are
/// `A, Ā`; otherwise it is `A_{r,S}` with `B, B̄`. Writing `F = f^r w^{r/p}`,
/// `G_Q = ⟨g⟩_Q^w` and `ℓ_Q = ⟨log w⟩_Q`, the chain is
///
/// ```text
/// ∫ (Af) g w = Σ_S ⟨f^r⟩^{1/r} G_Q w(Q)
///            <= Σ_S ⟨F⟩_B^{1/r} ⟨w^{-r/p}⟩_{B̄}^{1/r} G_Q w(Q)                 holder_split
///             = Σ_S ⟨F⟩_B^{1/r} G_Q e^{ℓ_Q/p'} |Q| · A_q^{1/p} (A_∞^exp)^{1/p'}   regrouping
///            <= [w] Σ_S ⟨F⟩_B^{1/r} |Q|^{1/p} · G_Q e^{ℓ_Q/p'} |Q|^{1/p'}        mixed_extraction
///            <= [w] X^{1/p} Y^{1/p'}                                            discrete_holder
/// X = Σ_S ⟨F⟩_B^{p/r} |Q| <= γ^{-1} ‖M_B F‖_{p/r}^{p/r}                         sparsity
///   ‖M_B F‖_{p/r} <= budget ‖F‖_{p/r}                                            maximal_domination
/// Y = Σ_S G_Q^{p'} e^{ℓ_Q} |Q| <= Λ ‖M^w g‖_{L^{p'}(w)}^{p'}                     carleson_embedding
///   Λ = max_R Σ_{Q⊆R} e^{ℓ_Q}|Q| / w(R) <= e γ^{-1}                             log_packing
///   ‖M^w g‖_{L^{p'}(w)} <= p ‖g‖_{L^{p'}(w)}                                     weighted_maximal
/// ```
pub fn proof_step_audit(
    f: &StepFunction,
    g: &StepFunction,
    family: &SparseFamily,
    w: &Weight,
    e: &Exponents,
) -> Result<ProofStepReport> {
    same_grid(f, w.as_function())?;
    same_grid(g, w.as_function())?;
    if family.depth() != w.depth() {
        return Err(Error::Domain("family and weight live on different grids".into()));
    }
    if f.is_zero() || g.is_zero() {
        return param("audit needs nonzero f and g");
    }
    let (p, pp) = (e.p(), e.p_prime());
    let op = Averaging::for_exponents(e);
    let r = op.r();
    let gamma = family.gamma();
    let bumps = bump_exponents(e)?;
    let (inner, outer) = match e.r() {
        Some(_) => (bumps.b.expect("r set"), bumps.b_bar.expect("r set")),
        None => (bumps.a, bumps.a_bar),
    };
    let budget = budget_for(e, gamma)?;

    let wf = w.as_function();
    let big_f = f.zip(wf, |fv, wv| fv.powf(r) * wv.powf(r / p))?;
    let w_neg = wf.map(|wv| wv.powf(-r / p))?;
    let f_r = f.powf(r)?;
    let gw = g.mul(wf)?;

    let lux_f = luxemburg_table(&big_f, inner)?;
    let lux_w = luxemburg_table(&w_neg, outer)?;
    let aq = ap_table(w, e.q())?;
    let aexp = ainfty_exp_table(w);
    let mixed_local = mixed_table(w, &e.theorem_factors())?;
    let mixed = mixed_local.argmax().0;
    let (fr_tree, gw_tree, w_tree, log_tree) = (f_r.tree(), gw.tree(), wf.tree(), w.log_tree());

    let mut per_cube = Vec::with_capacity(family.len());
    let (mut t0, mut t1, mut t1_factored, mut t2, mut x_sum, mut y_sum) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for c in family.cubes() {
        let n = c.node_id();
        let measure = c.measure();
        let local = fr_tree.mean(n).powf(1.0 / r);
        let split = (lux_f.at(n) * lux_w.at(n)).powf(1.0 / r);
        let g_avg = gw_tree.sum(n) / w_tree.sum(n);
        let w_mass = w_tree.mean(n) * measure;
        let lg = log_tree.mean(n);
        let e_lg = lg.exp();

        let regrouped_lhs = lux_w.at(n).powf(1.0 / r) * w_tree.mean(n) * ((-lg).exp() * e_lg).powf(1.0 / pp);
        let regrouped_rhs = aq.at(n).powf(1.0 / p) * aexp.at(n).powf(1.0 / pp) * e_lg.powf(1.0 / pp);

        t0 += local * g_avg * w_mass;
        t1 += split * g_avg * w_mass;
        let lux_term = lux_f.at(n).powf(1.0 / r);
        t1_factored += lux_term * regrouped_rhs * g_avg * measure;
        t2 += lux_term * g_avg * e_lg.powf(1.0 / pp) * measure;
        x_sum += lux_f.at(n).powf(p / r) * measure;
        y_sum += g_avg.powf(pp) * e_lg * measure;

        per_cube.push(CubeSlack {
            cube: *c,
            holder_split: if split > 0.0 { local / split } else { 0.0 },
            regrouping: regrouped_lhs / regrouped_rhs,
            mixed_extraction: mixed_local.at(n) / mixed,
            jensen: e_lg * measure / w_mass,
        });
    }
    let t2 = mixed * t2;
    let t3 = mixed * x_sum.powf(1.0 / p) * y_sum.powf(1.0 / pp);

    let af = op.apply(f, family)?;
    let duality = af.zip(&gw, |a, b| a * b)?.integral(&Cube::ROOT)?;
    let f_norm = lp_norm(f, w, p)?;
    let g_norm = lp_norm(g, w, pp)?;
    let af_norm = lp_norm(&af, w, p)?;

    let ps = p / r;
    let h = dyadic_measure(f.depth());
    let ma_f = orlicz_maximal(&big_f, inner)?;
    let ma_norm_pow: f64 = ma_f.values().iter().map(|v| v.powf(ps)).sum::<f64>() * h;
    let f_norm_ps: f64 = big_f.values().iter().map(|v| v.powf(ps)).sum::<f64>() * h;
    let m_budget = maximal_norm_budget(inner.exponent(), ps)?;

    let packing = log_packing(family, w);
    let mw_g = weighted_dyadic_maximal(g, wf)?;
    let mw_norm = lp_norm(&mw_g, w, pp)?;

    let mut steps = vec![
        slack("duality_identity", t0, duality, true),
        slack("duality_holder", t0, af_norm * g_norm, false),
        slack("holder_split", t0, t1, false),
        slack("regrouping_identity", t1, t1_factored, true),
        slack("mixed_extraction", t1, t2, false),
        slack("discrete_holder", t2, t3, false),
        slack("sparsity", x_sum, ma_norm_pow / gamma, false),
        slack("maximal_domination", ma_norm_pow.powf(1.0 / ps), m_budget * f_norm_ps.powf(1.0 / ps), false),
        slack("log_packing", packing, std::f64::consts::E / gamma, false),
        slack("carleson_embedding", y_sum, packing * mw_norm.powf(pp), false),
        slack("weighted_maximal", mw_norm, p * g_norm, false),
        slack("theorem_bound", t0, budget * mixed * f_norm * g_norm, false),
    ];
    let jensen_max = per_cube.iter().map(|c| c.jensen).fold(0.0, f64::max);
    steps.push(slack("jensen", jensen_max, 1.0, false));

    let per_cube_summary = summarize(&per_cube);
    Ok(ProofStepReport {
        exponents: *e,
        gamma,
        mixed_constant: mixed,
        budget,
        steps,
        per_cube_summary,
        per_cube,
    })
}

/// `max_R Σ_{Q ∈ S, Q ⊆ R} exp(⟨log w⟩_Q)|Q| / w(R)` over all grid cubes.
pub fn log_packing(family: &SparseFamily, w: &Weight) -> f64 {
    let depth = family.depth();
    let total = 1usize << (depth + 1);
    let leaves = total / 2;
    let mask = family.membership();
    let logs = w.log_tree();
    let wt = w.as_function().tree();
    let mut acc = vec![0.0f64; total];
    let mut best = 0.0f64;
    for node in (1..total).rev() {
        let below = if node < leaves {
            acc[2 * node] + acc[2 * node + 1]
        } else {
            0.0
        };
        let measure = dyadic_measure(Cube::from_node_id(node).level());
        acc[node] = below + if mask[node] { logs.mean(node).exp() * measure } else { 0.0 };
        best = best.max(acc[node] / (wt.mean(node) * measure));
    }
    best
}

type SlackField = (&'static str, fn(&CubeSlack) -> f64);

fn summarize(cubes: &[CubeSlack]) -> Vec<PerCubeSummary> {
    let fields: [SlackField; 4] = [
        ("holder_split", |c| c.holder_split),
        ("regrouping", |c| c.regrouping),
        ("mixed_extraction", |c| c.mixed_extraction),
        ("jensen", |c| c.jensen),
    ];
    fields
        .iter()
        .map(|(name, get)| {
            let mut s = PerCubeSummary {
                name: name.to_string(),
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                mean: 0.0,
                argmax: Cube::ROOT,
            };
            for c in cubes {
                let v = get(c);
                s.min = s.min.min(v);
                if v > s.max {
                    s.max = v;
                    s.argmax = c.cube;
                }
                s.mean += v;
            }
            s.mean /= cubes.len().max(1) as f64;
            s
        })
        .collect()
}

/// The `g` that makes `∫ (Af) g w = ‖Af‖_{L^p(w)} ‖g‖_{L^{p'}(w)}`:
/// `g = (Af)^{p-1}`, normalized in `L^{p'}(w)`.
pub fn dual_extremal(af: &StepFunction, w: &Weight, p: f64) -> Result<StepFunction> {
    let g = af.powf(p - 1.0)?;
    let n = lp_norm(&g, w, conjugate(p))?;
    if n == 0.0 {
        return param("dual extremal of the zero function");
    }
    g.scale(1.0 / n)
}
