//! The dyadic grid on `[0, 1)` and step functions at leaf resolution.
//!
//! Cubes are addressed either as `(level, index)` pairs or by their heap node
//! id `2^level + index`, so that the root is node 1 and the children of node
//! `n` are `2n` and `2n + 1`. Every per-cube table in the crate uses the node
//! id as its index, which makes "level-major, then index" the natural
//! iteration order.

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};

/// Largest supported grid depth (2^24 leaves).
pub const MAX_DEPTH: u32 = 24;

/// The dyadic interval `[index * 2^-level, (index + 1) * 2^-level)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "[u64; 2]", try_from = "[u64; 2]")]
pub struct Cube {
    level: u32,
    index: u64,
}

impl Cube {
    pub const ROOT: Cube = Cube { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Result<Self> {
        if level > MAX_DEPTH {
            return domain(format!("cube level {level} exceeds maximum depth {MAX_DEPTH}"));
        }
        if index >= 1u64 << level {
            return domain(format!("cube index {index} out of range at level {level}"));
        }
        Ok(Cube { level, index })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Lebesgue measure `2^-level`, exact in binary floating point.
    pub fn measure(&self) -> f64 {
        dyadic_measure(self.level)
    }

    pub fn node_id(&self) -> usize {
        (1usize << self.level) + self.index as usize
    }

    pub fn from_node_id(node: usize) -> Self {
        debug_assert!(node >= 1);
        let level = usize::BITS - 1 - node.leading_zeros();
        Cube {
            level,
            index: (node - (1usize << level)) as u64,
        }
    }

    pub fn parent(&self) -> Option<Cube> {
        (self.level > 0).then(|| Cube {
            level: self.level - 1,
            index: self.index >> 1,
        })
    }

    pub fn children(&self) -> [Cube; 2] {
        let level = self.level + 1;
        [
            Cube { level, index: 2 * self.index },
            Cube { level, index: 2 * self.index + 1 },
        ]
    }

    /// Whether `other` is a (not necessarily proper) subcube of `self`.
    pub fn contains(&self, other: &Cube) -> bool {
        other.level >= self.level && other.index >> (other.level - self.level) == self.index
    }

    /// Left and right endpoints as real numbers.
    pub fn bounds(&self) -> (f64, f64) {
        let h = self.measure();
        (self.index as f64 * h, (self.index + 1) as f64 * h)
    }

    /// Range of leaf indices covered by this cube in a grid of the given depth.
    pub fn leaf_range(&self, depth: u32) -> std::ops::Range<usize> {
        debug_assert!(self.level <= depth);
        let shift = depth - self.level;
        let start = (self.index as usize) << shift;
        start..start + (1usize << shift)
    }
}

impl std::fmt::Display for Cube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.level, self.index)
    }
}

impl From<Cube> for [u64; 2] {
    fn from(c: Cube) -> Self {
        [c.level as u64, c.index]
    }
}

impl TryFrom<[u64; 2]> for Cube {
    type Error = Error;

    fn try_from([level, index]: [u64; 2]) -> Result<Self> {
        let level = u32::try_from(level)
            .map_err(|_| Error::Domain(format!("cube level {level} out of range")))?;
        Cube::new(level, index)
    }
}

pub(crate) fn dyadic_measure(level: u32) -> f64 {
    1.0 / (1u64 << level) as f64
}

/// A uniform dyadic grid of the given depth (`2^depth` leaves).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    depth: u32,
}

impl Grid {
    pub fn new(depth: u32) -> Result<Self> {
        if depth > MAX_DEPTH {
            return param(format!("grid depth {depth} exceeds maximum {MAX_DEPTH}"));
        }
        Ok(Grid { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn leaves(&self) -> usize {
        1usize << self.depth
    }

    pub fn leaf_measure(&self) -> f64 {
        dyadic_measure(self.depth)
    }

    /// Number of cubes across all levels, `2^(depth+1) - 1`.
    pub fn num_cubes(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn check(&self, cube: &Cube) -> Result<()> {
        if cube.level > self.depth {
            return domain(format!(
                "cube {cube} lies below the grid of depth {}",
                self.depth
            ));
        }
        Ok(())
    }

    /// All cubes, ordered by level and then by index.
    pub fn cubes(&self) -> impl Iterator<Item = Cube> {
        (1..=self.num_cubes()).map(Cube::from_node_id)
    }

    pub fn leaf(&self, i: usize) -> Cube {
        Cube {
            level: self.depth,
            index: i as u64,
        }
    }
}

/// Hierarchical sums of a leaf array, stored in heap order.
///
/// `sums[node]` is the plain sum of the leaf values under `node`; `sums[0]`
/// is unused. Children are always combined left-then-right, so two arrays
/// with identical leaves produce bit-identical sums.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TreeSums {
    depth: u32,
    sums: Vec<f64>,
}

impl TreeSums {
    pub(crate) fn build(depth: u32, values: &[f64]) -> Self {
        Self {
            depth,
            sums: build_tree(depth, values, |a, b| a + b),
        }
    }

    pub(crate) fn sum(&self, node: usize) -> f64 {
        self.sums[node]
    }

    pub(crate) fn mean(&self, node: usize) -> f64 {
        let level = Cube::from_node_id(node).level;
        self.sums[node] / (1u64 << (self.depth - level)) as f64
    }
}

/// Builds a heap-ordered reduction tree over `values` (which must have length
/// `2^depth`) using `combine` for internal nodes.
pub(crate) fn build_tree(depth: u32, values: &[f64], combine: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let leaves = 1usize << depth;
    debug_assert_eq!(values.len(), leaves);
    let mut tree = vec![0.0; 2 * leaves];
    tree[leaves..].copy_from_slice(values);
    for node in (1..leaves).rev() {
        tree[node] = combine(tree[2 * node], tree[2 * node + 1]);
    }
    tree
}

/// Values attached to every cube of a grid, indexed by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeTable {
    depth: u32,
    data: Vec<f64>,
}

impl CubeTable {
    pub(crate) fn from_fn(depth: u32, mut f: impl FnMut(usize) -> f64) -> Self {
        let n = 1usize << (depth + 1);
        let mut data = vec![f64::NAN; n];
        for (node, slot) in data.iter_mut().enumerate().skip(1) {
            *slot = f(node);
        }
        CubeTable { depth, data }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn get(&self, cube: &Cube) -> f64 {
        self.data[cube.node_id()]
    }

    pub(crate) fn at(&self, node: usize) -> f64 {
        self.data[node]
    }

    /// `(cube, value)` pairs in level-major order.
    pub fn iter(&self) -> impl Iterator<Item = (Cube, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .skip(1)
            .map(|(node, &v)| (Cube::from_node_id(node), v))
    }

    /// Largest entry with its cube. Ties go to the smallest level, then the
    /// smallest index.
    pub fn argmax(&self) -> (f64, Cube) {
        let mut best = (f64::NEG_INFINITY, Cube::ROOT);
        for (node, &v) in self.data.iter().enumerate().skip(1) {
            if v > best.0 {
                best = (v, Cube::from_node_id(node));
            }
        }
        best
    }
}

/// A nonnegative function on `[0, 1)`, constant on each leaf of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFunctionRepr", into = "StepFunctionRepr")]
pub struct StepFunction {
    depth: u32,
    values: Vec<f64>,
    sums: TreeSums,
}

#[derive(Serialize, Deserialize)]
struct StepFunctionRepr {
    depth: u32,
    values: Vec<f64>,
}

impl TryFrom<StepFunctionRepr> for StepFunction {
    type Error = Error;

    fn try_from(r: StepFunctionRepr) -> Result<Self> {
        StepFunction::new(r.depth, r.values)
    }
}

impl From<StepFunction> for StepFunctionRepr {
    fn from(f: StepFunction) -> Self {
        StepFunctionRepr {
            depth: f.depth,
            values: f.values,
        }
    }
}

impl StepFunction {
    pub fn new(depth: u32, values: Vec<f64>) -> Result<Self> {
        Grid::new(depth)?;
        if values.len() != 1usize << depth {
            return domain(format!(
                "expected {} leaf values for depth {depth}, got {}",
                1usize << depth,
                values.len()
            ));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return domain(format!("leaf {i} has invalid value {v}"));
        }
        Ok(Self::from_checked(depth, values))
    }

    pub(crate) fn from_checked(depth: u32, values: Vec<f64>) -> Self {
        let sums = TreeSums::build(depth, &values);
        StepFunction { depth, values, sums }
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid.depth, vec![c; grid.leaves()])
    }

    /// Builds a function from its leaf values, `f(i)` giving leaf `i`.
    pub fn from_fn(grid: Grid, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new(grid.depth, (0..grid.leaves()).map(f).collect())
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn grid(&self) -> Grid {
        Grid { depth: self.depth }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn tree(&self) -> &TreeSums {
        &self.sums
    }

    /// Mean of the leaf values under `cube`.
    pub fn average(&self, cube: &Cube) -> Result<f64> {
        self.grid().check(cube)?;
        Ok(self.sums.mean(cube.node_id()))
    }

    /// `∫_Q f`, i.e. `average * |Q|`.
    pub fn integral(&self, cube: &Cube) -> Result<f64> {
        Ok(self.average(cube)? * cube.measure())
    }

    /// Averages over every cube of the grid.
    pub fn average_table(&self) -> CubeTable {
        CubeTable::from_fn(self.depth, |node| self.sums.mean(node))
    }

    pub fn min_on(&self, cube: &Cube) -> Result<f64> {
        self.grid().check(cube)?;
        Ok(self.values[cube.leaf_range(self.depth)]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min))
    }

    pub fn max_on(&self, cube: &Cube) -> Result<f64> {
        self.grid().check(cube)?;
        Ok(self.values[cube.leaf_range(self.depth)]
            .iter()
            .copied()
            .fold(0.0, f64::max))
    }

    /// Leafwise map; the result must again be finite and nonnegative.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<StepFunction> {
        StepFunction::new(self.depth, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Leafwise `self^s`.
    pub fn powf(&self, s: f64) -> Result<StepFunction> {
        self.map(|v| v.powf(s))
    }

    /// Leafwise product.
    pub fn mul(&self, other: &StepFunction) -> Result<StepFunction> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<StepFunction> {
        self.map(|v| c * v)
    }

    pub(crate) fn zip(&self, other: &StepFunction, f: impl Fn(f64, f64) -> f64) -> Result<StepFunction> {
        same_grid(self, other)?;
        StepFunction::new(
            self.depth,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

pub(crate) fn same_grid(a: &StepFunction, b: &StepFunction) -> Result<()> {
    if a.depth != b.depth {
        return domain(format!(
            "functions live on different grids (depth {} vs {})",
            a.depth, b.depth
        ));
    }
    Ok(())
}

/// `⟨g⟩_Q^w = ∫_Q g w / w(Q)`.
pub fn weighted_average(g: &StepFunction, w: &StepFunction, cube: &Cube) -> Result<f64> {
    let gw = g.mul(w)?;
    let mass = w.integral(cube)?;
    if mass <= 0.0 {
        return Err(Error::Domain(format!("weight has zero mass on {cube}")));
    }
    Ok(gw.integral(cube)? / mass)
}

/// Root-to-leaf running maximum of per-node values restricted to the subtree
/// of `start`. Leaves outside that subtree are left at zero.
fn sweep_max(depth: u32, start: Cube, node_value: impl Fn(usize) -> f64) -> Vec<f64> {
    let leaves = 1usize << depth;
    let mut best = vec![0.0f64; 2 * leaves];
    for level in start.level..=depth {
        let span = 1usize << (level - start.level);
        let first = (1usize << level) + ((start.index as usize) << (level - start.level));
        for node in first..first + span {
            let inherited = if level == start.level {
                f64::NEG_INFINITY
            } else {
                best[node >> 1]
            };
            best[node] = inherited.max(node_value(node));
        }
    }
    let mut out = vec![0.0; leaves];
    out[start.leaf_range(depth)].copy_from_slice(&best[leaves..][start.leaf_range(depth)]);
    out
}

/// Dyadic maximal function `Mf(x) = max_{Q ∋ x} ⟨f⟩_Q`, optionally restricted
/// to subcubes of `restrict` (and zero outside it).
pub fn dyadic_maximal(f: &StepFunction, restrict: Option<Cube>) -> Result<StepFunction> {
    let start = restrict.unwrap_or(Cube::ROOT);
    f.grid().check(&start)?;
    let tree = f.tree();
    Ok(StepFunction::from_checked(
        f.depth,
        sweep_max(f.depth, start, |node| tree.mean(node)),
    ))
}

/// Weighted dyadic maximal function `M^w g(x) = max_{Q ∋ x} ⟨g⟩_Q^w`.
pub fn weighted_dyadic_maximal(g: &StepFunction, w: &StepFunction) -> Result<StepFunction> {
    let gw = g.mul(w)?;
    let (num, den) = (gw.tree(), w.tree());
    Ok(StepFunction::from_checked(
        g.depth,
        sweep_max(g.depth, Cube::ROOT, |node| num.sum(node) / den.sum(node)),
    ))
}

/// `∫_Q M(f χ_Q)` for every cube `Q`, where the maximal function only sees
/// subcubes of `Q`. Runs in `O(depth * 2^depth)`.
pub(crate) fn localized_maximal_integrals(f: &StepFunction) -> CubeTable {
    let depth = f.depth;
    let leaves = 1usize << depth;
    let leaf_measure = dyadic_measure(depth);
    let means: Vec<f64> = (0..2 * leaves)
        .map(|n| if n == 0 { 0.0 } else { f.sums.mean(n) })
        .collect();

    fn walk(means: &[f64], leaves: usize, node: usize, running: f64) -> f64 {
        let m = running.max(means[node]);
        if node >= leaves {
            m
        } else {
            walk(means, leaves, 2 * node, m) + walk(means, leaves, 2 * node + 1, m)
        }
    }

    CubeTable::from_fn(depth, |node| walk(&means, leaves, node, 0.0) * leaf_measure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(depth: u32, v: &[f64]) -> StepFunction {
        StepFunction::new(depth, v.to_vec()).unwrap()
    }

    #[test]
    fn cube_addressing() {
        let c = Cube::new(3, 5).unwrap();
        assert_eq!(Cube::from_node_id(c.node_id()), c);
        assert_eq!(c.measure(), 0.125);
        assert_eq!(c.parent(), Some(Cube::new(2, 2).unwrap()));
        assert_eq!(c.children()[1], Cube::new(4, 11).unwrap());
        assert!(Cube::new(1, 1).unwrap().contains(&c));
        assert!(!Cube::new(1, 0).unwrap().contains(&c));
        assert_eq!(c.leaf_range(5), 20..24);
        assert!(Cube::new(2, 4).is_err());
        assert_eq!(Cube::ROOT.parent(), None);
    }

    #[test]
    fn grid_rejects_deep_cubes() {
        let g = Grid::new(2).unwrap();
        assert!(g.check(&Cube::new(3, 0).unwrap()).is_err());
        assert_eq!(g.cubes().count(), 7);
        let f = StepFunction::constant(g, 1.0).unwrap();
        assert!(matches!(
            f.average(&Cube::new(3, 0).unwrap()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn step_function_validation() {
        assert!(StepFunction::new(1, vec![1.0]).is_err());
        assert!(StepFunction::new(1, vec![1.0, -1.0]).is_err());
        assert!(StepFunction::new(1, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn averages_and_integrals() {
        let f = sf(1, &[1.0, 3.0]);
        assert_eq!(f.average(&Cube::ROOT).unwrap(), 2.0);
        let f = sf(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.average(&Cube::new(1, 1).unwrap()).unwrap(), 3.5);
        assert_eq!(f.integral(&Cube::new(1, 0).unwrap()).unwrap(), 0.75);
        let c = StepFunction::constant(Grid::new(4).unwrap(), 2.5).unwrap();
        for q in c.grid().cubes() {
            assert_eq!(c.average(&q).unwrap(), 2.5);
            assert_eq!(c.integral(&q).unwrap(), 2.5 * q.measure());
        }
    }

    #[test]
    fn weighted_average_examples() {
        let g = sf(1, &[1.0, 0.0]);
        let w = sf(1, &[3.0, 1.0]);
        assert_eq!(weighted_average(&g, &w, &Cube::ROOT).unwrap(), 0.75);
        let c = sf(1, &[4.0, 4.0]);
        assert_eq!(weighted_average(&c, &w, &Cube::ROOT).unwrap(), 4.0);
    }

    #[test]
    fn maximal_examples() {
        let f = sf(1, &[2.0, 0.0]);
        assert_eq!(dyadic_maximal(&f, None).unwrap().values(), &[2.0, 1.0]);
        let one = StepFunction::constant(Grid::new(3).unwrap(), 1.0).unwrap();
        assert!(dyadic_maximal(&one, None).unwrap().values().iter().all(|&v| v == 1.0));

        let g = sf(1, &[1.0, 0.0]);
        let w = sf(1, &[3.0, 1.0]);
        assert_eq!(weighted_dyadic_maximal(&g, &w).unwrap().values(), &[1.0, 0.75]);
    }

    #[test]
    fn restricted_maximal_is_zero_outside() {
        let f = sf(2, &[4.0, 0.0, 8.0, 0.0]);
        let m = dyadic_maximal(&f, Some(Cube::new(1, 1).unwrap())).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 8.0, 4.0]);
    }

    #[test]
    fn localized_integrals_match_restricted_maximal() {
        let f = sf(3, &[1.0, 5.0, 0.5, 2.0, 7.0, 0.1, 3.0, 3.0]);
        let table = localized_maximal_integrals(&f);
        for q in f.grid().cubes() {
            let m = dyadic_maximal(&f, Some(q)).unwrap();
            let direct = m.integral(&q).unwrap();
            assert!((table.get(&q) - direct).abs() <= 1e-14 * direct.max(1.0));
        }
    }

    #[test]
    fn table_argmax_breaks_ties_by_level_then_index() {
        let t = CubeTable::from_fn(2, |node| if node == 1 { 0.0 } else { 1.0 });
        assert_eq!(t.argmax(), (1.0, Cube::new(1, 0).unwrap()));
    }

    #[test]
    fn json_shape() {
        let f = sf(1, &[1.0, 2.5]);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"depth":1,"values":[1.0,2.5]}"#);
        let back: StepFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<StepFunction>(r#"{"depth":1,"values":[1.0]}"#).is_err());
        let c: Cube = serde_json::from_str("[2,3]").unwrap();
        assert_eq!(c, Cube::new(2, 3).unwrap());
        assert!(serde_json::from_str::<Cube>("[2,4]").is_err());
    }
}
