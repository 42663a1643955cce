//! Blow-up of the constants of x^(q-1-eps) as eps shrinks.

use sparselab::lab::{refinement_rows, scan_rows, ExperimentConfig};
use sparselab::Exponents;

fn main() -> sparselab::Result<()> {
    let mut cfg = ExperimentConfig::sharpness_default();
    cfg.depth = 14;
    cfg.scan.norm_depth = 8;
    let (rows, fits) = scan_rows(&cfg)?;
    for r in &rows {
        println!(
            "eps {:<8} A_q {:>10.4} (continuous {:>10.4})  mixed {:>8.4}  estimate {:.4}",
            r.epsilon, r.aq, r.aq_oracle, r.mixed, r.estimate
        );
    }
    for fit in &fits {
        println!("slopes: A_q {:.4}, mixed {:.4}", fit.slope_aq, fit.slope_mixed);
    }
    for r in refinement_rows(&Exponents::new(3.0, 2.0)?, 1.0 / 32.0, &[10, 14, 18])? {
        println!("depth {}: A_q {:.4} (continuous {:.4})", r.depth, r.aq, r.aq_oracle);
    }
    Ok(())
}
