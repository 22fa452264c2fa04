use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use baf::baf::{read_bafm, write_bafm, BafModel};
use baf::codec::{decode, decode_with_tile, encode, export_tile_pgm, Bitstream, CodecId};
use baf::harness::surrogate::{accuracy, train_surrogate};
use baf::harness::sweep::{baf_seed, evaluate, split_stats, run_experiment, split_set, train_config_model};
use baf::harness::{gen_synthetic_dataset, load_image, load_image_dir, Dataset, HarnessConfig, Restorer, SelectionFile, SurrogateNet};
use baf::quant::quantize_selected;
use baf::tensor::{ften, FeatureTensor, Real};
use baf::{Error, Result};

#[derive(Parser)]
#[command(name = "baf", version, about = "Split-inference feature compression with back-and-forth restoration")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restoration precision, 32 or 64; overrides the config file.
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(["32", "64"]))]
    precision: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the surrogate split classifier on the synthetic dataset.
    TrainSurrogate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation statistics of the split layer and the channel ranking.
    Stats {
        #[arg(long)]
        surrogate: PathBuf,
        /// Directory of .ften/.pgm images; defaults to the synthetic training split.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one restoration model for a (C, n) configuration.
    TrainBaf {
        #[command(flatten)]
        sel: SelectArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode one image into a stream.
    Encode {
        #[command(flatten)]
        sel: SelectArgs,
        #[arg(long, default_value = "med_range")]
        codec: String,
        /// .ften or 8-bit .pgm image.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Index into the synthetic dataset instead of a file.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a stream, restore the split tensor and classify.
    Decode {
        #[arg(long)]
        surrogate: PathBuf,
        /// Restoration model; without it untransmitted channels are zero-filled.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Graymap tile for external-codec streams.
        #[arg(long)]
        tile: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Write the restored split tensor as FTEN.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one restoration model against zero-fill on the validation split.
    Eval {
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Full experiment: surrogate, ranking, one model per (C, n), CSV.
    Sweep {
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also store the surrogate, selection and models here.
        #[arg(long)]
        save_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    surrogate: PathBuf,
    #[arg(long)]
    selection: PathBuf,
    /// Channels to transmit.
    #[arg(long, short = 'c')]
    channels: usize,
    /// Quantizer bits.
    #[arg(long, short = 'n', default_value_t = 8)]
    bits: u8,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            HarnessConfig::from_toml(&text)?
        }
        None => HarnessConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.precision {
        cfg.precision = p.parse().expect("validated by clap");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_text(p: &Path) -> Result<String> {
    Ok(fs::read_to_string(p)?)
}

fn load_net(p: &Path) -> Result<SurrogateNet<f32>> {
    SurrogateNet::from_json(&read_text(p)?)
}

fn dataset(cfg: &HarnessConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    gen_synthetic_dataset(cfg.seed, d.count, d.classes, d.val_fraction)
}

fn load_model<T: Real>(net: &SurrogateNet<f32>, p: &Path) -> Result<BafModel<T>> {
    let front = net.front.cast::<T>();
    read_bafm(&fs::read(p)?, front.split_conv, front.split_bn)
}

fn report_stream(s: &Bitstream) {
    let b = s.breakdown();
    println!(
        "codec {}: {} bits (header {}, side info {}, payload {}, padding {})",
        s.codec(),
        s.total_bits(),
        b.header_bits,
        b.side_info_bits,
        b.payload_bits,
        b.padding_bits
    );
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::TrainSurrogate { out } => {
            let data = dataset(&cfg)?;
            let r = train_surrogate(&data, &cfg.surrogate, cfg.seed.wrapping_add(1))?;
            println!(
                "surrogate: validation accuracy {:.2}% (untrained {:.2}%)",
                100.0 * r.val_accuracy,
                100.0 * r.untrained_accuracy
            );
            fs::write(out, r.net.to_json())?;
        }
        Cmd::Stats { surrogate, images, out } => {
            let net = load_net(surrogate)?;
            let imgs: Vec<FeatureTensor> = match images {
                Some(dir) => load_image_dir(dir)?,
                None => dataset(&cfg)?.train_images().cloned().collect(),
            };
            let (stats, _) = split_stats(&net, &imgs)?;
            let f = SelectionFile::from_stats(&stats)?;
            println!("{} images; channel ranking {:?}", f.sample_count, f.order);
            fs::write(out, f.to_json())?;
        }
        Cmd::TrainBaf { sel, out } => {
            let net = load_net(&sel.surrogate)?;
            let selection = SelectionFile::from_json(&read_text(&sel.selection)?)?.selection(sel.channels)?;
            let data = dataset(&cfg)?;
            let mut zs = Vec::new();
            for img in data.train_images() {
                zs.push(net.front.forward(img)?);
            }
            if cfg.sweep.baf_train_images > 0 {
                zs.truncate(cfg.sweep.baf_train_images);
            }
            let (h, ho, b) = (cfg.sweep.hidden, cfg.sweep.baf_holdout, &cfg.baf);
            let seed = baf_seed(cfg.seed, sel.channels, sel.bits);
            let bytes = if cfg.precision == 64 {
                let r = train_config_model::<f64>(&net, &zs, &selection, sel.bits, h, ho, b, seed)?;
                print_training(&r.train_loss, r.best_iteration);
                write_bafm(&r.model)
            } else {
                let r = train_config_model::<f32>(&net, &zs, &selection, sel.bits, h, ho, b, seed)?;
                print_training(&r.train_loss, r.best_iteration);
                write_bafm(&r.model)
            };
            fs::write(out, bytes)?;
        }
        Cmd::Encode { sel, codec, input, synthetic, out } => {
            let codec: CodecId = codec.parse()?;
            let net = load_net(&sel.surrogate)?;
            let selection = SelectionFile::from_json(&read_text(&sel.selection)?)?.selection(sel.channels)?;
            let image = match (input, synthetic) {
                (Some(p), _) => load_image(p)?,
                (None, Some(i)) => {
                    let data = dataset(&cfg)?;
                    let img = data.images.get(*i).ok_or_else(|| {
                        Error::Input(format!("synthetic index {i} out of range ({} images)", data.images.len()))
                    })?;
                    println!("synthetic image {i}, label {}", data.labels[*i]);
                    img.clone()
                }
                (None, None) => unreachable!("clap requires one image source"),
            };
            let pack = quantize_selected(&net.front.forward(&image)?, &selection, sel.bits)?;
            let stream = encode(&pack, codec)?;
            report_stream(&stream);
            if codec == CodecId::External {
                let (pgm, sidecar) = export_tile_pgm(&pack)?;
                fs::write(out.with_extension("pgm"), pgm)?;
                fs::write(out.with_extension("txt"), sidecar)?;
            }
            fs::write(out, stream.bytes())?;
        }
        Cmd::Decode { surrogate, model, tile, input, out } => {
            let net = load_net(surrogate)?;
            let bytes = fs::read(input)?;
            let pack = match tile {
                Some(t) => decode_with_tile(&bytes, &fs::read(t)?)?,
                None => decode(&bytes)?,
            };
            let (class, z) = if cfg.precision == 64 {
                decode_any::<f64>(&net, model.as_deref(), &pack)?
            } else {
                decode_any::<f32>(&net, model.as_deref(), &pack)?
            };
            println!("class {class}");
            if let Some(o) = out {
                fs::write(o, ften::to_bytes(&z))?;
            }
        }
        Cmd::Eval { surrogate, model } => {
            let net = load_net(surrogate)?;
            if cfg.precision == 64 {
                eval::<f64>(&cfg, &net, model)?
            } else {
                eval::<f32>(&cfg, &net, model)?
            }
        }
        Cmd::Sweep { out, save_dir } => {
            let csv = if cfg.precision == 64 {
                sweep::<f64>(&cfg, save_dir.as_deref())?
            } else {
                sweep::<f32>(&cfg, save_dir.as_deref())?
            };
            match out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn print_training(loss: &[f64], best: usize) {
    println!(
        "training loss {:.4} -> {:.4}; best held-out model at iteration {best}",
        loss.first().copied().unwrap_or(f64::NAN),
        loss.last().copied().unwrap_or(f64::NAN)
    );
}

fn decode_any<T: Real>(
    net: &SurrogateNet<f32>,
    model: Option<&Path>,
    pack: &baf::quant::QuantizedPack,
) -> Result<(usize, FeatureTensor)> {
    let net_t = net.cast::<T>();
    let bn = net_t.front.split_bn.clone();
    let m;
    let restorer = match model {
        Some(p) => {
            m = load_model::<T>(net, p)?;
            Restorer::Baf(&m)
        }
        None => Restorer::ZeroFill(&bn),
    };
    let z = restorer.restore(pack)?;
    Ok((net_t.predict_from_split(&z)?, z.cast()))
}

fn eval<T: Real>(cfg: &HarnessConfig, net: &SurrogateNet<f32>, model: &Path) -> Result<()> {
    let m = load_model::<T>(net, model)?;
    let data = dataset(cfg)?;
    let val = split_set(net, &data, &data.val)?;
    let selection = baf::select::ChannelSelection::new(m.order().to_vec(), m.split_outputs())?;
    let codecs = cfg.sweep.codec_ids()?;
    let net_t = net.cast::<T>();
    println!("uncompressed accuracy {:.2}%", 100.0 * accuracy(net, &data, &data.val)?);
    let bn = net_t.front.split_bn.clone();
    for (name, r) in [("baf", Restorer::Baf(&m)), ("zero-fill", Restorer::ZeroFill(&bn))] {
        let s = evaluate(&net_t, &val, &selection, m.n_bits(), &codecs, &r)?;
        println!(
            "{name}: C={} n={} accuracy {:.2}% restore_err {:.6}",
            m.channels(),
            m.n_bits(),
            100.0 * s.accuracy,
            s.restore_err
        );
        if name == "baf" {
            for (c, b) in s.bits_mean {
                println!("  {c}: {b:.1} bits per image");
            }
        }
    }
    Ok(())
}

fn sweep<T: Real>(cfg: &HarnessConfig, save_dir: Option<&Path>) -> Result<String> {
    let e = run_experiment::<T>(cfg, |m| eprintln!("{m}"))?;
    eprintln!("uncompressed accuracy {:.2}%", 100.0 * e.baseline_accuracy);
    if let Some(dir) = save_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("surrogate.json"), e.surrogate.net.to_json())?;
        fs::write(dir.join("selection.json"), SelectionFile::from_stats(&e.stats)?.to_json())?;
        for ((c, n), m) in &e.models {
            fs::write(dir.join(format!("baf_c{c}_n{n}.bafm")), write_bafm(m))?;
        }
    }
    Ok(e.sweep.to_csv())
}
