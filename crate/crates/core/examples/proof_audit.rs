//! Slack of every step in the chain of inequalities behind the upper bound.

use sparselab::normest::dual_extremal;
use sparselab::{
    generate_family, martingale_weight, power_iteration_with, proof_step_audit, Averaging, EstimatorSettings,
    Exponents, FamilyKind, Grid,
};

fn main() -> sparselab::Result<()> {
    let grid = Grid::new(8)?;
    let w = martingale_weight(5, 0.6, grid)?;
    let family = generate_family(FamilyKind::Full, grid)?;
    let e = Exponents::new(2.5, 1.5)?;
    let op = Averaging::for_exponents(&e);
    let est = power_iteration_with(op, &family, &w, e.p(), &EstimatorSettings::default())?;
    let g = dual_extremal(&op.apply(&est.certificate, &family)?, &w, e.p())?;
    let report = proof_step_audit(&est.certificate, &g, &family, &w, &e)?;
    for step in &report.steps {
        let kind = if step.identity { "=" } else { "<=" };
        println!("{:<20} {:>14.6e} {kind} {:>14.6e}  ratio {:.6}", step.name, step.lhs, step.rhs, step.ratio);
    }
    println!("all steps hold: {}", report.passes());
    Ok(())
}
