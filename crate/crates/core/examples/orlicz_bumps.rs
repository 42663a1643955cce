//! Luxemburg averages of power bumps and the Orlicz maximal function.

use sparselab::{bump_exponents, luxemburg_average, maximal_norm_budget, orlicz_maximal, Cube, Exponents, Grid};
use sparselab::{StepFunction, YoungFunction};

fn main() -> sparselab::Result<()> {
    let e = Exponents::new(3.0, 1.5)?.with_r(1.5)?;
    let bumps = bump_exponents(&e)?;
    println!("bumps: {bumps:?}");

    let grid = Grid::new(10)?;
    let f = StepFunction::from_fn(grid, |i| 1.0 + (i % 7) as f64)?;
    for young in [YoungFunction::power(1.0)?, bumps.a_bar, bumps.a, YoungFunction::EssSup] {
        println!("<f>_{young:?} on [0,1) = {:.6}", luxemburg_average(&f, &Cube::ROOT, young)?);
    }
    let m = orlicz_maximal(&f, bumps.a)?;
    println!("M_A f at leaf 0 = {:.6}", m.values()[0]);
    println!("L^p budget of M_A: {:.6}", maximal_norm_budget(bumps.a.exponent(), e.p())?);
    Ok(())
}
