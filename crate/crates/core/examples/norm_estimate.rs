//! Certified lower bounds for weighted sparse operator norms.

use sparselab::{
    dense_norm_oracle_p2, generate_family, mixed_constant, power_iteration, power_iteration_with, power_weight,
    theorem_budget, Averaging, EstimatorSettings, Exponents, FamilyKind, Grid,
};

fn main() -> sparselab::Result<()> {
    let grid = Grid::new(9)?;
    let w = power_weight(-0.4, grid)?;
    let family = generate_family(FamilyKind::Random { seed: 11, keep: 0.3 }, grid)?;
    let settings = EstimatorSettings::default();

    let est = power_iteration(&family, &w, 2.0, &settings)?;
    println!(
        "p = 2: estimate {:.10} after {} iterations (restart {}), dense oracle {:.10}",
        est.value,
        est.iterations,
        est.best_restart,
        dense_norm_oracle_p2(&family, &w)?,
    );

    let e = Exponents::new(3.0, 2.0)?.with_r(1.2)?;
    let plain = power_iteration(&family, &w, e.p(), &settings)?;
    let powered = power_iteration_with(Averaging::for_exponents(&e), &family, &w, e.p(), &settings)?;
    let mixed = mixed_constant(&w, &e.theorem_factors())?.value;
    println!("p = 3: plain {:.6}, r = 1.2 {:.6}", plain.value, powered.value);
    println!("upper bound {:.6}", theorem_budget(&e, family.gamma())? * mixed);
    Ok(())
}
