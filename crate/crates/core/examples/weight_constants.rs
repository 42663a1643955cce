//! A_p, A_∞ and mixed constants of power and martingale weights.

use sparselab::weights::power_weight_constants_oracle;
use sparselab::{
    ainfty_exp_constant, ainfty_fw_constant, ap_constant, martingale_weight, mixed_constant, power_weight, Exponents,
    Grid,
};

fn main() -> sparselab::Result<()> {
    let grid = Grid::new(16)?;
    let e = Exponents::new(3.0, 2.0)?;
    for a in [-0.5, 0.5, 0.9] {
        let w = power_weight(a, grid)?;
        let a2 = ap_constant(&w, 2.0)?;
        let oracle = power_weight_constants_oracle(a, 2.0)?;
        println!(
            "x^{a}: A_2 = {:.6} on {} (continuous {:.6}), A_exp = {:.6} (continuous {:.6}), A_fw = {:.6}",
            a2.value,
            a2.argmax,
            oracle.ap,
            ainfty_exp_constant(&w).value,
            oracle.ainfty_exp,
            ainfty_fw_constant(&w).value,
        );
        let mixed = mixed_constant(&w, &e.theorem_factors())?;
        println!("  mixed A_q^(1/p) A_exp^(1/p') = {:.6} on {}", mixed.value, mixed.argmax);
    }
    let w = martingale_weight(42, 0.5, grid)?;
    println!("martingale: A_2 = {:.6}, A_exp = {:.6}", ap_constant(&w, 2.0)?.value, ainfty_exp_constant(&w).value);
    Ok(())
}
