//! Power-type Young functions, Luxemburg cube averages and Orlicz maximal
//! functions.
//!
//! For `A(t) = t^s` the Luxemburg average `inf{λ > 0 : ⟨A(f/λ)⟩_Q <= 1}` is
//! the `L^s` cube average `⟨f^s⟩_Q^{1/s}`. The bisection path evaluates the
//! infimum straight from its definition and is kept for cross-checking.

use serde::{Deserialize, Serialize};

use crate::dyadic::{dyadic_maximal, Cube, CubeTable, StepFunction, TreeSums};
use crate::error::{param, Result};
use crate::weights::{conjugate, Exponents};

/// Relative bracket width at which bisection stops by default.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-12;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum YoungFunction {
    /// `t^s` with `s >= 1`.
    Power { s: f64 },
    /// The degenerate function that is 0 on `[0, 1]` and infinite beyond;
    /// its Luxemburg average is the essential supremum.
    EssSup,
}

impl YoungFunction {
    pub fn power(s: f64) -> Result<Self> {
        if !(s >= 1.0 && s.is_finite()) {
            return param(format!("Young power must be >= 1, got {s}"));
        }
        Ok(YoungFunction::Power { s })
    }

    pub fn complementary(&self) -> Self {
        match *self {
            YoungFunction::Power { s: 1.0 } => YoungFunction::EssSup,
            YoungFunction::Power { s } => YoungFunction::Power { s: conjugate(s) },
            YoungFunction::EssSup => YoungFunction::Power { s: 1.0 },
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            YoungFunction::Power { s } => t.powf(s),
            YoungFunction::EssSup => {
                if t <= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// The exponent `s` of a power function, `∞` for the essential supremum.
    pub fn exponent(&self) -> f64 {
        match *self {
            YoungFunction::Power { s } => s,
            YoungFunction::EssSup => f64::INFINITY,
        }
    }
}

/// Young-function exponents of the bumps `Ā(t) = t^{p/(q-1)}`, `A = Ā'`, and
/// of `B̄(t) = t^{p/(r(q-1))}`, `B = B̄'` when `r` is present.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BumpExponents {
    pub a_bar: YoungFunction,
    pub a: YoungFunction,
    pub b_bar: Option<YoungFunction>,
    pub b: Option<YoungFunction>,
}

pub fn bump_exponents(e: &Exponents) -> Result<BumpExponents> {
    let (p, q) = (e.p(), e.q());
    let bump = |divisor: f64| -> Result<(YoungFunction, YoungFunction)> {
        if q == 1.0 {
            return Ok((YoungFunction::EssSup, YoungFunction::Power { s: 1.0 }));
        }
        let s_bar = p / (divisor * (q - 1.0));
        let bar = YoungFunction::power(s_bar)?;
        Ok((bar, bar.complementary()))
    };
    let (a_bar, a) = bump(1.0)?;
    let (b_bar, b) = match e.r() {
        Some(r) => {
            if !(r > 1.0 && r < p / q) {
                return param(format!("r must lie in (1, p/q) = (1, {}), got {r}", p / q));
            }
            let (bb, b) = bump(r)?;
            (Some(bb), Some(b))
        }
        None => (None, None),
    };
    Ok(BumpExponents { a_bar, a, b_bar, b })
}

/// Closed-form Luxemburg average `⟨f⟩_{A,Q}`.
pub fn luxemburg_average(f: &StepFunction, cube: &Cube, young: YoungFunction) -> Result<f64> {
    match young {
        YoungFunction::EssSup => f.max_on(cube),
        YoungFunction::Power { s: 1.0 } => f.average(cube),
        YoungFunction::Power { s } => {
            f.grid().check(cube)?;
            let leaves = &f.values()[cube.leaf_range(f.depth())];
            let top = leaves.iter().copied().fold(0.0, f64::max);
            if top == 0.0 {
                return Ok(0.0);
            }
            // scale by the max so large s cannot overflow
            let mean = leaves.iter().map(|v| (v / top).powf(s)).sum::<f64>() / leaves.len() as f64;
            Ok(top * mean.powf(1.0 / s))
        }
    }
}

/// Luxemburg average by bisection on `λ` over `[max(⟨f⟩_Q, tiny), max_Q f]`,
/// stopping once the bracket's relative width drops below `tol`.
pub fn luxemburg_average_bisect(
    f: &StepFunction,
    cube: &Cube,
    young: YoungFunction,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0 && tol.is_finite()) {
        return param(format!("bisection tolerance must be positive, got {tol}"));
    }
    let leaves = &f.values()[{
        f.grid().check(cube)?;
        cube.leaf_range(f.depth())
    }];
    let mut hi = leaves.iter().copied().fold(0.0, f64::max);
    if hi == 0.0 {
        return Ok(0.0);
    }
    let n = leaves.len() as f64;
    let modular = |lambda: f64| leaves.iter().map(|v| young.eval(v / lambda)).sum::<f64>() / n;
    let mut lo = f.average(cube)?.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_BISECTION_STEPS {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if modular(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `⟨f⟩_{A,Q}` for every cube at once.
pub fn luxemburg_table(f: &StepFunction, young: YoungFunction) -> Result<CubeTable> {
    let depth = f.depth();
    match young {
        YoungFunction::EssSup => {
            let maxes = crate::dyadic::build_tree(depth, f.values(), f64::max);
            Ok(CubeTable::from_fn(depth, |n| maxes[n]))
        }
        YoungFunction::Power { s: 1.0 } => Ok(f.average_table()),
        YoungFunction::Power { s } => {
            let powered: Vec<f64> = f.values().iter().map(|v| v.powf(s)).collect();
            let tree = TreeSums::build(depth, &powered);
            Ok(CubeTable::from_fn(depth, |n| tree.mean(n).powf(1.0 / s)))
        }
    }
}

/// `M_A f(x) = max_{Q ∋ x} ⟨f⟩_{A,Q}`, via `M_A f = (M f^s)^{1/s}`.
pub fn orlicz_maximal(f: &StepFunction, young: YoungFunction) -> Result<StepFunction> {
    match young {
        YoungFunction::EssSup => {
            let top = f.max_on(&Cube::ROOT)?;
            StepFunction::constant(f.grid(), top)
        }
        YoungFunction::Power { s: 1.0 } => dyadic_maximal(f, None),
        YoungFunction::Power { s } => dyadic_maximal(&f.powf(s)?, None)?.powf(1.0 / s),
    }
}

/// Upper bound `((p/s)')^{1/s}` for the dyadic `M_A`, `A(t) = t^s`, on `L^p`.
pub fn maximal_norm_budget(s: f64, p: f64) -> Result<f64> {
    if !(s >= 1.0 && s.is_finite()) {
        return param(format!("Young power must be >= 1, got {s}"));
    }
    if s >= p || p.is_nan() {
        return param(format!("M_A with A(t) = t^{s} is unbounded on L^{p}"));
    }
    Ok(conjugate(p / s).powf(1.0 / s))
}
