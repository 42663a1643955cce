//! Sparse families, their packing constants, and the sparse operator.

use sparselab::{apply_sparse, apply_sparse_r, generate_family, FamilyKind, Grid, StepFunction};

fn main() -> sparselab::Result<()> {
    let grid = Grid::new(8)?;
    for kind in [FamilyKind::Tower, FamilyKind::Full, FamilyKind::Random { seed: 3, keep: 0.2 }] {
        let family = generate_family(kind, grid)?;
        println!(
            "{kind}: {} cubes, packing {:.6}, sparse for gamma = {:.6}",
            family.len(),
            family.carleson_packing_constant(),
            family.gamma(),
        );
    }
    let family = generate_family(FamilyKind::Tower, grid)?;
    let f = StepFunction::from_fn(grid, |i| if i < 4 { 1.0 } else { 0.0 })?;
    let af = apply_sparse(&f, &family)?;
    let afr = apply_sparse_r(&f, &family, 2.0)?;
    println!("A f on the first leaves: {:?}", &af.values()[..6]);
    println!("A_2 f on the first leaves: {:?}", &afr.values()[..6]);
    Ok(())
}
