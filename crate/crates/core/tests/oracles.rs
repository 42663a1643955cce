//! Library results against brute-force computations that share no code
//! with the library.

use rand::Rng;
use sparselab::dyadic::{dyadic_maximal, weighted_dyadic_maximal, Cube, Grid, StepFunction};
use sparselab::normest::{
    dense_norm_oracle_p2, power_iteration, power_iteration_with, rayleigh, theorem_budget, Averaging,
    EstimatorSettings, MONOTONE_SLACK,
};
use sparselab::rng;
use sparselab::sparse::{apply_sparse, apply_sparse_r, generate_family, FamilyKind, SparseFamily};
use sparselab::weights::{
    ainfty_exp_local, ainfty_fw_local, ap_local, martingale_weight, power_weight, power_weight_constants_oracle,
    Exponents, Weight,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Leaves `[lo, hi)` of `cube` at `depth`, without the library's helpers.
fn span(level: u32, index: u64, depth: u32) -> (usize, usize) {
    let width = 1usize << (depth - level);
    (index as usize * width, (index as usize + 1) * width)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_function(seed: u64, depth: u32) -> StepFunction {
    let mut rng = rng::seeded(seed);
    StepFunction::from_fn(Grid::new(depth).unwrap(), |_| rng.random_range(0.0..3.0)).unwrap()
}

#[test]
fn tower_norm_matches_simplex_search() {
    // D = 2 tower {[0,1), [0,1/2), [0,1/4)}, w ≡ 1, p = 2.
    let steps = 200usize;
    let mut best = 0.0f64;
    for i in 0..=steps {
        for j in 0..=steps - i {
            for k in 0..=steps - i - j {
                let l = steps - i - j - k;
                let f = [i as f64, j as f64, k as f64, l as f64];
                let all = (f[0] + f[1] + f[2] + f[3]) / 4.0;
                let half = (f[0] + f[1]) / 2.0;
                let af = [all + half + f[0], all + half, all, all];
                let num: f64 = af.iter().map(|v| v * v).sum();
                let den: f64 = f.iter().map(|v| v * v).sum();
                best = best.max((num / den).sqrt());
            }
        }
    }
    let grid = Grid::new(2).unwrap();
    let tower = generate_family(FamilyKind::Tower, grid).unwrap();
    let one = Weight::constant(grid, 1.0).unwrap();
    let dense = dense_norm_oracle_p2(&tower, &one).unwrap();
    let est = power_iteration(&tower, &one, 2.0, &EstimatorSettings::default()).unwrap();
    assert!(rel(dense, best) <= 0.005, "dense {dense} vs simplex {best}");
    assert!(rel(est.value, best) <= 0.005, "estimate {} vs simplex {best}", est.value);
    assert!(est.value >= best * (1.0 - 1e-12));
}

#[test]
fn sparse_operator_matches_cube_sums() {
    for seed in 0..20u64 {
        let depth = 3 + (seed % 4) as u32;
        let grid = Grid::new(depth).unwrap();
        let family = generate_family(FamilyKind::Random { seed, keep: 0.4 }, grid).unwrap();
        let f = random_function(seed + 100, depth);
        let r = 1.0 + (seed % 3) as f64 * 0.4;
        let mut plain = vec![0.0; grid.leaves()];
        let mut powered = vec![0.0; grid.leaves()];
        for c in family.cubes() {
            let (lo, hi) = span(c.level(), c.index(), depth);
            let vals = &f.values()[lo..hi];
            let avg = mean(vals);
            let ravg = mean(&vals.iter().map(|v| v.powf(r)).collect::<Vec<_>>()).powf(1.0 / r);
            for x in lo..hi {
                plain[x] += avg;
                powered[x] += ravg;
            }
        }
        let lib = apply_sparse(&f, &family).unwrap();
        let lib_r = apply_sparse_r(&f, &family, r).unwrap();
        for x in 0..grid.leaves() {
            assert!((lib.values()[x] - plain[x]).abs() <= 1e-12 * plain[x].max(1.0));
            assert!((lib_r.values()[x] - powered[x]).abs() <= 1e-12 * powered[x].max(1.0));
        }
    }
}

#[test]
fn maximal_functions_match_ancestor_scan() {
    for seed in 0..10u64 {
        let depth = 2 + (seed % 5) as u32;
        let f = random_function(seed, depth);
        let w = random_function(seed + 50, depth).map(|v| v + 0.1).unwrap();
        let m = dyadic_maximal(&f, None).unwrap();
        let mw = weighted_dyadic_maximal(&f, &w).unwrap();
        for x in 0..1usize << depth {
            let mut best = 0.0f64;
            let mut best_w = 0.0f64;
            for level in 0..=depth {
                let index = (x >> (depth - level)) as u64;
                let (lo, hi) = span(level, index, depth);
                best = best.max(mean(&f.values()[lo..hi]));
                let num: f64 = (lo..hi).map(|i| f.values()[i] * w.values()[i]).sum();
                let den: f64 = w.values()[lo..hi].iter().sum();
                best_w = best_w.max(num / den);
            }
            assert!(rel(m.values()[x], best) <= 1e-12);
            assert!(rel(mw.values()[x], best_w) <= 1e-12);
        }
    }
}

#[test]
fn fujii_wilson_matches_localized_maximal() {
    for seed in 0..6u64 {
        let depth = 5;
        let w = martingale_weight(seed, 0.6, Grid::new(depth).unwrap()).unwrap();
        let v = w.values();
        for level in 0..=depth {
            for index in 0..1u64 << level {
                let (lo, hi) = span(level, index, depth);
                let mut integral = 0.0;
                for x in lo..hi {
                    let mut best = 0.0f64;
                    for sub in level..=depth {
                        let (a, b) = span(sub, (x >> (depth - sub)) as u64, depth);
                        best = best.max(mean(&v[a..b]));
                    }
                    integral += best;
                }
                let expected = integral / v[lo..hi].iter().sum::<f64>();
                let cube = Cube::new(level, index).unwrap();
                assert!(rel(ainfty_fw_local(&w, &cube).unwrap(), expected) <= 1e-12);
            }
        }
    }
}

#[test]
fn local_constants_match_direct_formulas() {
    let w = martingale_weight(11, 0.5, Grid::new(6).unwrap()).unwrap();
    let v = w.values();
    for level in 0..=6u32 {
        for index in 0..1u64 << level {
            let (lo, hi) = span(level, index, 6);
            let cell = &v[lo..hi];
            let cube = Cube::new(level, index).unwrap();
            let avg = mean(cell);
            for p in [1.5f64, 2.0, 4.0] {
                let dual = mean(&cell.iter().map(|x| x.powf(-1.0 / (p - 1.0))).collect::<Vec<_>>());
                assert!(rel(ap_local(&w, p, &cube).unwrap(), avg * dual.powf(p - 1.0)) <= 1e-12);
            }
            let min = cell.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(rel(ap_local(&w, 1.0, &cube).unwrap(), avg / min) <= 1e-12);
            let geo = mean(&cell.iter().map(|x| x.ln()).collect::<Vec<_>>()).exp();
            assert!(rel(ainfty_exp_local(&w, &cube).unwrap(), avg / geo) <= 1e-12);
        }
    }
}

#[test]
fn packing_constant_matches_subcube_sums() {
    for seed in 0..30u64 {
        let depth = 2 + (seed % 6) as u32;
        let grid = Grid::new(depth).unwrap();
        let family = generate_family(FamilyKind::Random { seed, keep: 0.5 }, grid).unwrap();
        let mut best = 0.0f64;
        for level in 0..=depth {
            for index in 0..1u64 << level {
                let (lo, hi) = span(level, index, depth);
                let inside: f64 = family
                    .cubes()
                    .iter()
                    .filter(|c| {
                        let (a, b) = span(c.level(), c.index(), depth);
                        a >= lo && b <= hi
                    })
                    .map(|c| 0.5f64.powi(c.level() as i32))
                    .sum();
                best = best.max(inside / 0.5f64.powi(level as i32));
            }
        }
        assert!(rel(family.carleson_packing_constant(), best) <= 1e-12);
        let tower = generate_family(FamilyKind::Tower, grid).unwrap();
        assert_eq!(tower.carleson_packing_constant(), 2.0 - 0.5f64.powi(depth as i32));
    }
}

#[test]
fn power_weight_cells_match_quadrature() {
    let grid = Grid::new(6).unwrap();
    let h = grid.leaf_measure();
    for a in [-0.5, 0.5, 1.0, 2.5] {
        let w = power_weight(a, grid).unwrap();
        for i in 1..grid.leaves() {
            // composite Simpson on [ih, (i+1)h]
            let n = 64;
            let step = h / n as f64;
            let x0 = i as f64 * h;
            let mut s = 0.0;
            for k in 0..=n {
                let coef = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                s += coef * (x0 + k as f64 * step).powf(a);
            }
            let avg = s * step / 3.0 / h;
            assert!(rel(w.values()[i], avg) <= 1e-9, "a={a} i={i}");
        }
        // first cell: ∫_0^h x^a / h = h^a / (a+1)
        assert!(rel(w.values()[0], h.powf(a) / (a + 1.0)) <= 1e-14);
    }
    let o = power_weight_constants_oracle(0.5, 2.0).unwrap();
    assert!(rel(o.ap, 4.0 / 3.0) <= 1e-15);
    let o = power_weight_constants_oracle(1.0, 3.0).unwrap();
    assert!(rel(o.ainfty_exp, std::f64::consts::E / 2.0) <= 1e-15);
}

#[test]
fn budget_is_product_of_step_constants() {
    for (p, q, gamma) in [(2.0f64, 1.5, 0.5f64), (3.0, 1.0, 0.25), (1.5, 1.25, 1.0)] {
        let e = Exponents::new(p, q).unwrap();
        let pp = p / (p - 1.0);
        let s = p / (p - q + 1.0);
        let maximal = (p / s / (p / s - 1.0)).powf(1.0 / s);
        let sparsity = gamma.powf(-1.0 / p);
        let carleson = (std::f64::consts::E / gamma).powf(1.0 / pp) * p;
        let expected = sparsity * maximal * carleson;
        assert!(rel(theorem_budget(&e, gamma).unwrap(), expected) <= 1e-14);
        assert!(rel(expected, maximal * p * std::f64::consts::E.powf(1.0 / pp) / gamma) <= 1e-14);
    }
}

#[test]
fn rayleigh_sequence_is_monotone() {
    for k in 0..50u64 {
        let depth = 3 + (k % 5) as u32;
        let grid = Grid::new(depth).unwrap();
        let family = generate_family(FamilyKind::Random { seed: k, keep: 0.35 }, grid).unwrap();
        let w = martingale_weight(k + 7, 0.5, grid).unwrap();
        let p = [1.5, 2.0, 3.0][(k % 3) as usize];
        let op = if k % 2 == 0 { Averaging::Plain } else { Averaging::Power { r: 1.2 } };
        let settings = EstimatorSettings { restarts: 2, seed: k, ..Default::default() };
        let est = power_iteration_with(op, &family, &w, p, &settings).unwrap();
        for pair in est.history.windows(2) {
            assert!(pair[1] >= pair[0] * (1.0 - MONOTONE_SLACK), "instance {k}: {pair:?}");
        }
        let flat = StepFunction::constant(grid, 1.0).unwrap();
        if op == Averaging::Plain {
            assert!(rayleigh(&flat, &family, &w, p).unwrap() <= est.value * (1.0 + 1e-9));
        }
    }
}

#[test]
fn dense_oracle_on_block_families() {
    // Two disjoint halves with different weights: the norm is the larger block norm.
    let grid = Grid::new(4).unwrap();
    let cubes = vec![Cube::new(1, 0).unwrap(), Cube::new(2, 0).unwrap(), Cube::new(1, 1).unwrap()];
    let family = SparseFamily::from_cubes(grid, cubes).unwrap();
    let w = martingale_weight(4, 0.8, grid).unwrap();
    let dense = dense_norm_oracle_p2(&family, &w).unwrap();
    let est = power_iteration(&family, &w, 2.0, &EstimatorSettings::default()).unwrap();
    assert!(rel(est.value, dense) <= 1e-6);
}
