//! Binary graymap (P5) export of the tiled image, for handing the tile to an
//! external image codec, with a text sidecar carrying everything else.

use std::collections::HashMap;
use std::fmt::Write as _;

use half::f16;

use crate::error::{Error, Result};
use crate::quant::{tile, untile, TiledImage};
use crate::quant::{check_bits, max_code, QuantizedPack, SideInfo};

/// Pack metadata that does not fit in the graymap.
///
/// ```text
/// version=1
/// n_bits=8
/// P=32
/// C=4
/// channel_h=16
/// channel_w=16
/// order=3,0,17,9
/// side_info=b4003c00,...      (min and max binary16 bits as hex, per channel)
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileSidecar {
    pub n_bits: u8,
    pub total_channels: usize,
    pub channel_h: usize,
    pub channel_w: usize,
    pub order: Vec<usize>,
    pub side_info: Vec<SideInfo>,
}

impl TileSidecar {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version=1");
        let _ = writeln!(out, "n_bits={}", self.n_bits);
        let _ = writeln!(out, "P={}", self.total_channels);
        let _ = writeln!(out, "C={}", self.order.len());
        let _ = writeln!(out, "channel_h={}", self.channel_h);
        let _ = writeln!(out, "channel_w={}", self.channel_w);
        let order: Vec<String> = self.order.iter().map(|o| o.to_string()).collect();
        let _ = writeln!(out, "order={}", order.join(","));
        let side: Vec<String> = self
            .side_info
            .iter()
            .map(|s| format!("{:04x}{:04x}", s.min.to_bits(), s.max.to_bits()))
            .collect();
        let _ = writeln!(out, "side_info={}", side.join(","));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut f = HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("tile sidecar: bad line {line:?}")))?;
            f.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            f.get(k)
                .copied()
                .ok_or_else(|| Error::format(format!("tile sidecar: missing field {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::format(format!("tile sidecar: field {k} is not a count")))
        };
        if num("version")? != 1 {
            return Err(Error::format("tile sidecar: unsupported version"));
        }
        let n_bits = u8::try_from(num("n_bits")?).map_err(|_| Error::format("tile sidecar: bad n_bits"))?;
        let c = num("C")?;
        let order = get("order")?
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format("tile sidecar: bad order list"))?;
        let side_info = get("side_info")?
            .split(',')
            .map(|t| {
                let v = u32::from_str_radix(t.trim(), 16)
                    .ok()
                    .filter(|_| t.trim().len() == 8)
                    .ok_or_else(|| Error::format(format!("tile sidecar: bad side info {t:?}")))?;
                SideInfo::new(f16::from_bits((v >> 16) as u16), f16::from_bits(v as u16))
            })
            .collect::<Result<Vec<_>>>()?;
        if order.len() != c || side_info.len() != c {
            return Err(Error::format("tile sidecar: order or side info length differs from C"));
        }
        Ok(Self {
            n_bits,
            total_channels: num("P")?,
            channel_h: num("channel_h")?,
            channel_w: num("channel_w")?,
            order,
            side_info,
        })
    }
}

/// Writes a P5 graymap with single-byte samples.
pub fn write_pgm(width: usize, height: usize, maxval: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a P5 graymap whose maxval must be `2^n - 1`. Returns
/// `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8], n_bits: u8) -> Result<(usize, usize, Vec<u8>)> {
    check_bits(n_bits)?;
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::corrupt("graymap header is truncated")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err(Error::format("not a binary graymap (expected P5)"));
    }
    let mut num = || -> Result<usize> {
        std::str::from_utf8(token()?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("graymap header field is not a number"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != max_code(n_bits) as usize {
        return Err(Error::format(format!(
            "graymap maxval {maxval} does not match {n_bits}-bit codes"
        )));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let start = pos + 1;
    let pixels = bytes
        .get(start..)
        .filter(|p| p.len() == w * h)
        .ok_or_else(|| Error::corrupt("graymap sample count does not match its dimensions"))?;
    if pixels.iter().any(|&p| p as usize > maxval) {
        return Err(Error::corrupt("graymap sample exceeds maxval"));
    }
    Ok((w, h, pixels.to_vec()))
}

/// Tiles a pack into a graymap plus its sidecar text.
pub fn export_tile_pgm(pack: &QuantizedPack) -> Result<(Vec<u8>, String)> {
    let img = tile(pack)?;
    let pgm = write_pgm(img.width(), img.height(), max_code(pack.n_bits()), &img.pixels);
    let sidecar = TileSidecar {
        n_bits: pack.n_bits(),
        total_channels: pack.total_channels(),
        channel_h: pack.channel_h(),
        channel_w: pack.channel_w(),
        order: pack.order().to_vec(),
        side_info: pack.side_info().to_vec(),
    };
    Ok((pgm, sidecar.to_text()))
}

/// Inverse of [`export_tile_pgm`].
pub fn import_tile_pgm(pgm: &[u8], sidecar: &str) -> Result<QuantizedPack> {
    let s = TileSidecar::parse(sidecar)?;
    let c = s.order.len();
    let (cols, rows) = crate::quant::grid_dims(c)?;
    let (w, h, pixels) = parse_pgm(pgm, s.n_bits)?;
    if w != cols * s.channel_w || h != rows * s.channel_h {
        return Err(Error::corrupt("graymap dimensions do not match the sidecar"));
    }
    let img = TiledImage {
        grid_cols: cols,
        grid_rows: rows,
        channel_h: s.channel_h,
        channel_w: s.channel_w,
        n_bits: s.n_bits,
        pixels,
    };
    let codes = untile(&img, s.channel_h, s.channel_w, c)?;
    QuantizedPack::new(s.n_bits, s.total_channels, s.channel_h, s.channel_w, s.order, codes, s.side_info)
}
