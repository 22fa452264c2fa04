//! A reduced rate-accuracy sweep. `baf sweep` runs the full default grid.

use baf::harness::{run_experiment, HarnessConfig};

fn main() -> baf::Result<()> {
    let mut cfg = HarnessConfig::default();
    cfg.dataset.count = 300;
    cfg.baf.iterations = 30;
    cfg.sweep.channels = vec![8, 32];
    cfg.sweep.bits = vec![2, 8];
    cfg.sweep.baf_train_images = 96;
    let e = run_experiment::<f32>(&cfg, |m| eprintln!("{m}"))?;
    println!("uncompressed accuracy {:.2}%", 100.0 * e.baseline_accuracy);
    print!("{}", e.sweep.to_csv());
    Ok(())
}
