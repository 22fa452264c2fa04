//! Rate-accuracy sweeps over `(C, n)` and the end-to-end desk experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::config::HarnessConfig;
use super::dataset::{gen_synthetic_dataset, Dataset};
use super::pipeline::{decode_pack, Restorer};
use super::surrogate::{accuracy, train_surrogate, SurrogateNet, SurrogateReport};
use crate::baf::{train_baf, BafModel, TrainConfig, TrainReport};
use crate::codec::{decode, encode, CodecId};
use crate::error::{Error, Result};
use crate::quant::quantize_selected;
use crate::select::{accumulate_stats, rank_channels, ChannelSelection, CorrelationMatrix};
use crate::tensor::{activation, FeatureTensor, Real, Tensor};

pub const CSV_HEADER: &str = "C,n,codec,bits_mean,accuracy,restore_err";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub channels: usize,
    pub n_bits: u8,
    pub codec: CodecId,
    /// Mean total stream bits per image.
    pub bits_mean: f64,
    pub accuracy: f64,
    /// Mean `|Z~ - Z|` over all elements of the validation split tensors.
    pub restore_err: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.6},{:.6}",
                r.channels, r.n_bits, r.codec, r.bits_mean, r.accuracy, r.restore_err
            );
        }
        out
    }

    pub fn row(&self, c: usize, n: u8, codec: CodecId) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.channels == c && r.n_bits == n && r.codec == codec)
    }
}

/// Aggregate measurements of one restorer over a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean total bits per image, one entry per codec.
    pub bits_mean: Vec<(CodecId, f64)>,
    pub accuracy: f64,
    pub restore_err: f64,
}

struct ImageOutcome {
    bits: Vec<u64>,
    correct: bool,
    err: f64,
}

fn evaluate_one<T: Real>(
    net: &SurrogateNet<T>,
    z: &Tensor<f32>,
    label: usize,
    selection: &ChannelSelection,
    n_bits: u8,
    codecs: &[CodecId],
    restorer: &Restorer<'_, T>,
) -> Result<ImageOutcome> {
    let pack = quantize_selected(z, selection, n_bits)?;
    let mut bits = Vec::with_capacity(codecs.len());
    for &codec in codecs {
        let stream = encode(&pack, codec)?;
        bits.push(stream.total_bits());
        if decode(stream.bytes())? != pack {
            return Err(Error::Harness(format!("{codec} stream did not decode to the transmitted pack")));
        }
    }
    let (pred, restored) = decode_pack(&pack, net, restorer)?;
    Ok(ImageOutcome {
        bits,
        correct: pred == label,
        err: restored.cast::<f32>().mean_abs_diff(z)?,
    })
}

/// Encodes every image with every codec, checks that each stream decodes to
/// the transmitted pack, restores and classifies. Images are spread over
/// worker threads; results are reduced in input order so the sums do not
/// depend on the thread count.
pub fn evaluate<T: Real>(
    net: &SurrogateNet<T>,
    split: &[(Tensor<f32>, usize)],
    selection: &ChannelSelection,
    n_bits: u8,
    codecs: &[CodecId],
    restorer: &Restorer<'_, T>,
) -> Result<EvalSummary> {
    if split.is_empty() || codecs.is_empty() {
        return Err(Error::Input("evaluation needs images and at least one codec".into()));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(split.len());
    let chunk = split.len().div_ceil(workers);
    let run = |part: &[(Tensor<f32>, usize)]| -> Result<Vec<ImageOutcome>> {
        part.iter()
            .map(|(z, label)| evaluate_one(net, z, *label, selection, n_bits, codecs, restorer))
            .collect()
    };
    let outcomes: Vec<ImageOutcome> = if workers == 1 {
        run(split)?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = split.chunks(chunk).map(|part| s.spawn(move || run(part))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    let mut bits = vec![0u64; codecs.len()];
    let (mut correct, mut err) = (0usize, 0.0);
    for o in &outcomes {
        for (acc, b) in bits.iter_mut().zip(&o.bits) {
            *acc += b;
        }
        correct += o.correct as usize;
        err += o.err;
    }
    let n = split.len() as f64;
    Ok(EvalSummary {
        bits_mean: codecs.iter().zip(&bits).map(|(&c, &b)| (c, b as f64 / n)).collect(),
        accuracy: correct as f64 / n,
        restore_err: err / n,
    })
}

/// One row per `(C, n, codec)`, in the order of the lists given.
pub fn sweep<T: Real>(
    net: &SurrogateNet<f32>,
    models: &BTreeMap<(usize, u8), BafModel<T>>,
    channels: &[usize],
    bits: &[u8],
    codecs: &[CodecId],
    split: &[(Tensor<f32>, usize)],
) -> Result<SweepResult> {
    let net_t = net.cast::<T>();
    let mut rows = Vec::new();
    for &c in channels {
        for &n in bits {
            let model = models
                .get(&(c, n))
                .ok_or_else(|| Error::config(format!("no restoration model for C={c}, n={n}")))?;
            let selection = ChannelSelection::new(model.order().to_vec(), net.split_outputs())?;
            let s = evaluate(&net_t, split, &selection, n, codecs, &Restorer::Baf(model))?;
            for (codec, b) in s.bits_mean {
                rows.push(SweepRow {
                    channels: c,
                    n_bits: n,
                    codec,
                    bits_mean: b,
                    accuracy: s.accuracy,
                    restore_err: s.restore_err,
                });
            }
        }
    }
    Ok(SweepResult { rows })
}

/// Training pairs `(dequantized selected channels, sigma(Z))`.
pub fn baf_pairs<T: Real>(
    zs: &[Tensor<f32>],
    selection: &ChannelSelection,
    n_bits: u8,
    net: &SurrogateNet<f32>,
) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    zs.iter()
        .map(|z| {
            let zc = quantize_selected(z, selection, n_bits)?.dequantize()?;
            Ok((zc.cast(), activation(z, net.sigma).cast()))
        })
        .collect()
}

/// Seed for the restoration model of one `(C, n)` configuration.
pub fn baf_seed(base: u64, c: usize, n: u8) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((c as u64) << 8 | n as u64)
}

/// Trains one restoration model on the given split tensors, holding out the
/// tail for model selection.
#[allow(clippy::too_many_arguments)]
pub fn train_config_model<T: Real>(
    net: &SurrogateNet<f32>,
    zs: &[Tensor<f32>],
    selection: &ChannelSelection,
    n_bits: u8,
    hidden: usize,
    holdout: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport<T>> {
    let pairs = baf_pairs::<T>(zs, selection, n_bits, net)?;
    let n_val = ((pairs.len() as f64) * holdout).round() as usize;
    let (train, val) = pairs.split_at(pairs.len() - n_val);
    let front = net.front.cast::<T>();
    let hidden = if hidden == 0 { net.front.split_inputs() } else { hidden };
    let init = BafModel::init(
        selection.order().to_vec(),
        n_bits,
        hidden,
        front.split_conv,
        front.split_bn,
        net.sigma,
        seed,
    )?;
    train_baf(init, train, val, &TrainConfig { seed, ..cfg.clone() })
}

/// Everything the desk experiment produces.
pub struct Experiment<T: Real = f32> {
    pub dataset: Dataset,
    pub surrogate: SurrogateReport,
    pub stats: CorrelationMatrix,
    /// All `P` channels in selection order; each `C` uses a prefix.
    pub ranking: ChannelSelection,
    pub baseline_accuracy: f64,
    pub models: BTreeMap<(usize, u8), BafModel<T>>,
    pub sweep: SweepResult,
}

/// Split tensors and labels for a list of dataset indices.
pub fn split_set(net: &SurrogateNet<f32>, data: &Dataset, idx: &[usize]) -> Result<Vec<(Tensor<f32>, usize)>> {
    idx.iter()
        .map(|&i| Ok((net.front.forward(&data.images[i])?, data.labels[i])))
        .collect()
}

/// Channel statistics over the training split and the full ranking.
pub fn split_stats(net: &SurrogateNet<f32>, images: &[FeatureTensor]) -> Result<(CorrelationMatrix, ChannelSelection)> {
    let stats = accumulate_stats(&net.front, images)?;
    let ranking = ChannelSelection::new(rank_channels(&stats), net.split_outputs())?;
    Ok((stats, ranking))
}

/// Dataset, surrogate, channel ranking, one restoration model per
/// `(C, n)`, and the sweep over the validation split.
pub fn run_experiment<T: Real>(cfg: &HarnessConfig, mut progress: impl FnMut(&str)) -> Result<Experiment<T>> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let data = gen_synthetic_dataset(cfg.seed, d.count, d.classes, d.val_fraction)?;
    progress(&format!("dataset: {} train / {} val images, {} classes", data.train.len(), data.val.len(), d.classes));
    let surrogate = train_surrogate(&data, &cfg.surrogate, cfg.seed.wrapping_add(1))?;
    let net = &surrogate.net;
    let baseline_accuracy = accuracy(net, &data, &data.val)?;
    progress(&format!("surrogate: validation accuracy {:.2}%", 100.0 * baseline_accuracy));

    let train_images: Vec<FeatureTensor> = data.train_images().cloned().collect();
    let (stats, ranking) = split_stats(net, &train_images)?;
    let limit = match cfg.sweep.baf_train_images {
        0 => train_images.len(),
        k => k.min(train_images.len()),
    };
    let zs: Vec<Tensor<f32>> = train_images[..limit]
        .iter()
        .map(|img| net.front.forward(img))
        .collect::<Result<_>>()?;

    let mut models = BTreeMap::new();
    for &c in &cfg.sweep.channels {
        let selection = ranking.prefix(c)?;
        for &n in &cfg.sweep.bits {
            let seed = baf_seed(cfg.seed, c, n);
            let r = train_config_model::<T>(net, &zs, &selection, n, cfg.sweep.hidden, cfg.sweep.baf_holdout, &cfg.baf, seed)?;
            progress(&format!(
                "restoration C={c} n={n}: loss {:.2} -> {:.2}, best held-out at iteration {}",
                r.train_loss.first().copied().unwrap_or(f64::NAN),
                r.train_loss.last().copied().unwrap_or(f64::NAN),
                r.best_iteration
            ));
            models.insert((c, n), r.model);
        }
    }
    let val = split_set(net, &data, &data.val)?;
    let codecs = cfg.sweep.codec_ids()?;
    let result = sweep(net, &models, &cfg.sweep.channels, &cfg.sweep.bits, &codecs, &val)?;
    Ok(Experiment {
        dataset: data,
        surrogate,
        stats,
        ranking,
        baseline_accuracy,
        models,
        sweep: result,
    })
}
