//! Sparse families of dyadic cubes and the sparse operators
//! `A_S f = Σ_{Q∈S} ⟨f⟩_Q χ_Q` and `A_{r,S} f = Σ_{Q∈S} ⟨|f|^r⟩_Q^{1/r} χ_Q`.
//!
//! Sparsity witnesses are tracked by measure only. Processing the family from
//! the deepest level up and reserving exactly `γ|Q|` for each cube succeeds
//! precisely when every cube `Q` of the family satisfies
//! `Σ_{Q' ∈ S, Q' ⊆ Q} |Q'| <= |Q| / γ`, i.e. when the Carleson packing
//! constant is at most `1/γ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{dyadic_measure, Cube, Grid, StepFunction, TreeSums};
use crate::error::{param, Error, Result};
use crate::rng;

/// Relative slack allowed when comparing available and requested measure.
const GREEDY_SLACK: f64 = 1e-12;

/// Default absolute tolerance of [`SparseFamily::max_gamma`].
pub const DEFAULT_GAMMA_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct SparseFamily {
    depth: u32,
    cubes: Vec<Cube>,
    gamma: f64,
    /// `|E_Q|` for each entry of `cubes`, in the same order.
    selected: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FamilyRepr {
    depth: u32,
    gamma: f64,
    cubes: Vec<Cube>,
}

impl TryFrom<FamilyRepr> for SparseFamily {
    type Error = Error;

    fn try_from(r: FamilyRepr) -> Result<Self> {
        SparseFamily::with_gamma(Grid::new(r.depth)?, r.cubes, r.gamma)
    }
}

impl From<SparseFamily> for FamilyRepr {
    fn from(s: SparseFamily) -> Self {
        FamilyRepr {
            depth: s.depth,
            gamma: s.gamma,
            cubes: s.cubes,
        }
    }
}

/// Outcome of the greedy sparsity check.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityCheck {
    pub ok: bool,
    /// `(Q, |E_Q|)` for every cube of the family when `ok`.
    pub witness: Option<Vec<(Cube, f64)>>,
}

fn canonical_cubes(grid: Grid, mut cubes: Vec<Cube>) -> Result<Vec<Cube>> {
    if cubes.is_empty() {
        return param("a sparse family needs at least one cube");
    }
    for c in &cubes {
        grid.check(c)?;
    }
    cubes.sort();
    if let Some(w) = cubes.windows(2).find(|w| w[0] == w[1]) {
        return param(format!("cube {} appears twice in the family", w[0]));
    }
    Ok(cubes)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return param(format!("sparsity constant must lie in (0, 1], got {gamma}"));
    }
    Ok(())
}

impl SparseFamily {
    /// A family verified at its largest feasible sparsity constant (found by
    /// bisection to [`DEFAULT_GAMMA_TOL`]).
    pub fn from_cubes(grid: Grid, cubes: Vec<Cube>) -> Result<Self> {
        let cubes = canonical_cubes(grid, cubes)?;
        let probe = SparseFamily {
            depth: grid.depth(),
            cubes,
            gamma: 1.0,
            selected: Vec::new(),
        };
        let gamma = probe.max_gamma(DEFAULT_GAMMA_TOL);
        probe.verified(gamma)
    }

    /// A family verified at the given `γ`; fails if it is not `γ`-sparse.
    pub fn with_gamma(grid: Grid, cubes: Vec<Cube>, gamma: f64) -> Result<Self> {
        let cubes = canonical_cubes(grid, cubes)?;
        SparseFamily {
            depth: grid.depth(),
            cubes,
            gamma: 1.0,
            selected: Vec::new(),
        }
        .verified(gamma)
    }

    /// Re-verifies the same cubes at a different `γ`.
    pub fn verified(self, gamma: f64) -> Result<Self> {
        let check = self.verify_sparse(gamma)?;
        match check.witness {
            Some(w) => Ok(SparseFamily {
                gamma,
                selected: w.into_iter().map(|(_, m)| m).collect(),
                ..self
            }),
            None => param(format!("family is not {gamma}-sparse")),
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.depth).expect("validated at construction")
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// The sparsity constant the family was verified at.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(Q, |E_Q|)` pairs of the verified witness.
    pub fn selected(&self) -> impl Iterator<Item = (Cube, f64)> + '_ {
        self.cubes.iter().copied().zip(self.selected.iter().copied())
    }

    pub(crate) fn membership(&self) -> Vec<bool> {
        let mut mask = vec![false; 1usize << (self.depth + 1)];
        for c in &self.cubes {
            mask[c.node_id()] = true;
        }
        mask
    }

    /// `Λ = max_R Σ_{Q ∈ S, Q ⊆ R} |Q| / |R|` over all cubes `R` of the grid.
    pub fn carleson_packing_constant(&self) -> f64 {
        let mask = self.membership();
        let total = mask.len();
        let leaves = total / 2;
        let mut packed = vec![0.0f64; total];
        let mut best = 0.0f64;
        for node in (1..total).rev() {
            let level = Cube::from_node_id(node).level();
            let below = if node < leaves {
                packed[2 * node] + packed[2 * node + 1]
            } else {
                0.0
            };
            let measure = dyadic_measure(level);
            packed[node] = below + if mask[node] { measure } else { 0.0 };
            best = best.max(packed[node] / measure);
        }
        best
    }

    /// Greedy bottom-up check for pairwise disjoint `E_Q ⊆ Q`, `|E_Q| >= γ|Q|`.
    pub fn verify_sparse(&self, gamma: f64) -> Result<SparsityCheck> {
        check_gamma(gamma)?;
        let mask = self.membership();
        let total = mask.len();
        let leaves = total / 2;
        let mut inside = vec![0.0f64; total];
        for node in (1..total).rev() {
            let below = if node < leaves {
                inside[2 * node] + inside[2 * node + 1]
            } else {
                0.0
            };
            inside[node] = below;
            if mask[node] {
                let measure = dyadic_measure(Cube::from_node_id(node).level());
                let need = gamma * measure;
                if measure - below + GREEDY_SLACK * measure < need {
                    return Ok(SparsityCheck { ok: false, witness: None });
                }
                inside[node] += need;
            }
        }
        let witness = self
            .cubes
            .iter()
            .map(|c| (*c, gamma * c.measure()))
            .collect();
        Ok(SparsityCheck {
            ok: true,
            witness: Some(witness),
        })
    }

    /// Largest `γ` for which [`verify_sparse`](Self::verify_sparse) succeeds,
    /// to absolute tolerance `tol`. Always returns a feasible value.
    pub fn max_gamma(&self, tol: f64) -> f64 {
        let feasible = |g: f64| self.verify_sparse(g).map(|c| c.ok).unwrap_or(false);
        if feasible(1.0) {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == 0.0 {
            // unreachable for nonempty families: γ = 1/(depth+1) always works
            lo = tol.min(1.0 / (self.depth as f64 + 1.0));
        }
        lo
    }
}

/// Generator recipes for test families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FamilyKind {
    /// `{[0, 2^-k) : k = 0..=depth}`.
    Tower,
    /// Every cube of the grid.
    Full,
    /// Each cube kept independently with probability `keep`.
    Random { seed: u64, keep: f64 },
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FamilyKind::Tower => write!(f, "tower"),
            FamilyKind::Full => write!(f, "full"),
            FamilyKind::Random { seed, keep } => write!(f, "random(seed={seed},keep={keep})"),
        }
    }
}

/// Builds a family and verifies it at its largest feasible `γ`. An empty
/// random draw falls back to the root cube.
pub fn generate_family(kind: FamilyKind, grid: Grid) -> Result<SparseFamily> {
    let cubes = match kind {
        FamilyKind::Tower => (0..=grid.depth())
            .map(|k| Cube::new(k, 0))
            .collect::<Result<Vec<_>>>()?,
        FamilyKind::Full => grid.cubes().collect(),
        FamilyKind::Random { seed, keep } => {
            if !(keep > 0.0 && keep <= 1.0) {
                return param(format!("keep probability must lie in (0, 1], got {keep}"));
            }
            let mut rng = rng::seeded(seed);
            let mut cubes: Vec<Cube> = grid
                .cubes()
                .filter(|_| rng.random::<f64>() < keep)
                .collect();
            if cubes.is_empty() {
                cubes.push(Cube::ROOT);
            }
            cubes
        }
    };
    SparseFamily::from_cubes(grid, cubes)
}

fn check_family_grid(f: &StepFunction, family: &SparseFamily) -> Result<()> {
    if f.depth() != family.depth {
        return Err(Error::Domain(format!(
            "function on depth {} used with a family on depth {}",
            f.depth(),
            family.depth
        )));
    }
    Ok(())
}

/// Adds `coef[node]` along every root-to-leaf path and returns the leaf totals.
pub(crate) fn push_down(depth: u32, coef: &mut [f64]) -> Vec<f64> {
    let leaves = 1usize << depth;
    for node in 2..2 * leaves {
        coef[node] += coef[node >> 1];
    }
    coef[leaves..].to_vec()
}

fn apply_with(family: &SparseFamily, local: impl Fn(usize) -> f64) -> StepFunction {
    let mut coef = vec![0.0f64; 1usize << (family.depth + 1)];
    for c in &family.cubes {
        let n = c.node_id();
        coef[n] = local(n);
    }
    StepFunction::from_checked(family.depth, push_down(family.depth, &mut coef))
}

/// `A_S f = Σ_{Q∈S} ⟨f⟩_Q χ_Q`.
pub fn apply_sparse(f: &StepFunction, family: &SparseFamily) -> Result<StepFunction> {
    check_family_grid(f, family)?;
    let tree = f.tree();
    Ok(apply_with(family, |n| tree.mean(n)))
}

/// `A_{r,S} f = Σ_{Q∈S} ⟨f^r⟩_Q^{1/r} χ_Q` for `r >= 1`.
pub fn apply_sparse_r(f: &StepFunction, family: &SparseFamily, r: f64) -> Result<StepFunction> {
    if !(r >= 1.0 && r.is_finite()) {
        return param(format!("A_(r,S) needs r >= 1, got {r}"));
    }
    if r == 1.0 {
        return apply_sparse(f, family);
    }
    check_family_grid(f, family)?;
    let powered: Vec<f64> = f.values().iter().map(|v| v.powf(r)).collect();
    let tree = TreeSums::build(f.depth(), &powered);
    Ok(apply_with(family, |n| tree.mean(n).powf(1.0 / r)))
}
