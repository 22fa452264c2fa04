//! On-disk artifacts shared by the command-line tools: input images and the
//! selection file written by `stats`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::parse_pgm;
use crate::error::{Error, Result};
use crate::select::{rank_channels, ChannelSelection, CorrelationMatrix};
use crate::tensor::{ften, FeatureTensor};

/// Loads a single-channel image from an `FTEN` file or an 8-bit binary
/// graymap (scaled to `[0, 1]`), chosen by content.
pub fn load_image(path: &Path) -> Result<FeatureTensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(ften::MAGIC) {
        return ften::from_bytes(&bytes);
    }
    if bytes.starts_with(b"P5") {
        let (w, h, px) = parse_pgm(&bytes, 8)?;
        return FeatureTensor::new(1, h, w, px.iter().map(|&p| p as f32 / 255.0).collect());
    }
    Err(Error::Format(format!("{}: neither an FTEN tensor nor a binary graymap", path.display())))
}

/// Every `.ften` / `.pgm` file in `dir`, in file-name order.
pub fn load_image_dir(dir: &Path) -> Result<Vec<FeatureTensor>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ften" | "pgm")));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("{}: no .ften or .pgm images", dir.display())));
    }
    paths.iter().map(|p| load_image(p)).collect()
}

/// Correlation statistics and the channel ranking they imply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionFile {
    /// P.
    pub outputs: usize,
    /// Q.
    pub inputs: usize,
    pub sample_count: usize,
    /// All P channels, best first.
    pub order: Vec<usize>,
    /// Per-channel score, indexed by channel.
    pub scores: Vec<f64>,
    /// `P x Q` row-major.
    pub rho: Vec<f64>,
}

impl SelectionFile {
    pub fn from_stats(stats: &CorrelationMatrix) -> Result<Self> {
        Ok(Self {
            outputs: stats.outputs(),
            inputs: stats.inputs(),
            sample_count: stats.sample_count(),
            order: rank_channels(stats),
            scores: stats.scores(),
            rho: stats.values().to_vec(),
        })
    }

    /// The first `c` channels of the ranking.
    pub fn selection(&self, c: usize) -> Result<ChannelSelection> {
        ChannelSelection::new(self.order.clone(), self.outputs)?.prefix(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection serializes")
    }

    /// Parses and checks that the stored ranking is the one the stored
    /// statistics produce.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("selection file: {e}")))?;
        let stats = CorrelationMatrix::new(f.outputs, f.inputs, f.rho.clone(), f.sample_count)?;
        if Self::from_stats(&stats)? != f {
            return Err(Error::Corrupt("selection file ranking does not match its statistics".into()));
        }
        Ok(f)
    }
}
