//! Ranks the split layer's output channels by how well they correlate
//! with its inputs, averaged over the four stride-2 phases.

use baf::harness::{gen_synthetic_dataset, SurrogateNet};
use baf::select::{accumulate_stats, select_channels};

fn main() -> baf::Result<()> {
    let data = gen_synthetic_dataset(3, 64, 4, 0.25)?;
    // An untrained network is enough to show the mechanics.
    let net = SurrogateNet::<f32>::init(16, 32, 4, 11)?;
    let images: Vec<_> = data.train_images().cloned().collect();
    let stats = accumulate_stats(&net.front, &images)?;
    let scores = stats.scores();

    let sel = select_channels(&stats, 8)?;
    println!("{} images, P = {}, Q = {}", stats.sample_count(), stats.outputs(), stats.inputs());
    for &p in sel.order() {
        println!("  channel {p:2}  score {:.4}", scores[p]);
    }
    let rest = (0..32).filter(|p| !sel.order().contains(p)).map(|p| scores[p]).fold(0.0, f64::max);
    println!("best unselected score {rest:.4}");
    Ok(())
}
