//! Running lab commands from a JSON config.

use sparselab::lab::{cmd_check_theorem, ExperimentConfig};

const CONFIG: &str = r#"{
  "scenario": "example",
  "depth": 6,
  "exponents": [{ "p": 2.0, "q": 1.5, "r": [1.1] }],
  "families": [{ "kind": "tower" }, { "kind": "random", "seed": 4, "keep": 0.25 }],
  "weights": [{ "kind": "power", "a": 0.5 }, { "kind": "martingale", "seed": 1, "delta": 0.4 }],
  "estimator": { "restarts": 4 }
}"#;

fn main() -> sparselab::Result<()> {
    let cfg = ExperimentConfig::from_json(CONFIG)?;
    cfg.validate()?;
    let output = cmd_check_theorem(&cfg)?;
    println!("{}", output.summary);
    output.write(None)?;
    Ok(())
}
