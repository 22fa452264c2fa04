//! Trains a restoration model for a quarter of the channels and compares it
//! with zero-filling the missing ones.

use baf::baf::{BafModel, TrainConfig};
use baf::codec::CodecId;
use baf::harness::surrogate::train_surrogate;
use baf::harness::sweep::{evaluate, split_stats, split_set, train_config_model};
use baf::harness::{gen_synthetic_dataset, Restorer, SurrogateConfig};

fn main() -> baf::Result<()> {
    let data = gen_synthetic_dataset(7, 400, 4, 0.25)?;
    let net = train_surrogate(&data, &SurrogateConfig::default(), 8)?.net;

    let train: Vec<_> = data.train_images().cloned().collect();
    let (_, ranking) = split_stats(&net, &train)?;
    let selection = ranking.prefix(8)?;
    let zs: Vec<_> = train.iter().map(|x| net.front.forward(x)).collect::<baf::Result<_>>()?;

    let cfg = TrainConfig { iterations: 150, ..TrainConfig::default() };
    let report = train_config_model::<f32>(&net, &zs, &selection, 8, 0, 0.1, &cfg, 1)?;
    let model: BafModel<f32> = report.model;
    println!(
        "loss {:.1} -> {:.1} over {} iterations",
        report.train_loss[0],
        report.train_loss.last().unwrap(),
        report.train_loss.len()
    );

    let val = split_set(&net, &data, &data.val)?;
    let bn = net.front.split_bn.clone();
    for (name, r) in [("baf", Restorer::Baf(&model)), ("zero-fill", Restorer::ZeroFill(&bn))] {
        let s = evaluate(&net, &val, &selection, 8, &[CodecId::MedRange], &r)?;
        println!("{name:>9}: accuracy {:.1}%, mean |Z~ - Z| {:.4}", 100.0 * s.accuracy, s.restore_err);
    }
    Ok(())
}
