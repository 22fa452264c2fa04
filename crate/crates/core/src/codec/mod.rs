//! `BAFC` bitstream: header, binary16 side info and a coded tile payload.
//!
//! All integers are little-endian.
//!
//! | field        | size          |
//! |--------------|---------------|
//! | magic `BAFC` | 4             |
//! | version      | 1             |
//! | codec id     | 1             |
//! | n_bits       | 1             |
//! | reserved (0) | 1             |
//! | P            | u16           |
//! | C            | u16           |
//! | channel_h    | u16           |
//! | channel_w    | u16           |
//! | order        | C x u16       |
//! | side info    | C x (u16, u16) binary16 bit patterns (min, max) |
//! | payload_len  | u32           |
//! | payload      | payload_len   |
//! | CRC-32       | u32 over every preceding byte |

mod med;
mod pgm;
mod range;

pub use med::med_predict;
pub use pgm::{export_tile_pgm, import_tile_pgm, parse_pgm, write_pgm, TileSidecar};

use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::error::{Error, Result};
use crate::quant::{tile, untile, TiledImage};
use crate::quant::{check_bits, QuantizedPack, SideInfo};

pub const MAGIC: &[u8; 4] = b"BAFC";
pub const VERSION: u8 = 1;

const FIXED_HEADER: usize = 16;
const CRC_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodecId {
    /// n-bit codes packed MSB first in raster order of the tiled image.
    Raw,
    /// MED prediction residuals with an adaptive binary range coder.
    MedRange,
    /// Tile travels out of band as a graymap; the stream carries no payload.
    External,
}

impl CodecId {
    pub const BUILT_IN: [CodecId; 2] = [CodecId::Raw, CodecId::MedRange];

    fn to_byte(self) -> u8 {
        match self {
            CodecId::Raw => 0,
            CodecId::MedRange => 1,
            CodecId::External => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(CodecId::Raw),
            1 => Ok(CodecId::MedRange),
            2 => Ok(CodecId::External),
            _ => Err(Error::corrupt(format!("unknown codec id {b}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Raw => "raw",
            CodecId::MedRange => "med_range",
            CodecId::External => "external",
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(CodecId::Raw),
            "med_range" => Ok(CodecId::MedRange),
            "external" => Ok(CodecId::External),
            _ => Err(Error::config(format!("unknown codec {s:?} (raw, med_range, external)"))),
        }
    }
}

/// Where the bits of a stream went. The four parts sum to `8 * bytes.len()`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitBreakdown {
    /// Fixed header, order list, payload length and CRC.
    pub header_bits: u64,
    /// Exactly `32 * C`.
    pub side_info_bits: u64,
    pub payload_bits: u64,
    /// Zero bits that pad a raw payload to a whole byte.
    pub padding_bits: u64,
}

impl BitBreakdown {
    pub fn total(&self) -> u64 {
        self.header_bits + self.side_info_bits + self.payload_bits + self.padding_bits
    }
}

/// An encoded stream together with its bit accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    bytes: Vec<u8>,
    codec: CodecId,
    breakdown: BitBreakdown,
}

impl Bitstream {
    /// Validates framing (magic, version, CRC, lengths) and recomputes the
    /// bit accounting from the bytes alone.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let parsed = parse(&bytes)?;
        let breakdown = breakdown_for(&parsed.header, parsed.payload.len() as u64);
        Ok(Self {
            codec: parsed.header.codec,
            bytes,
            breakdown,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn codec(&self) -> CodecId {
        self.codec
    }

    pub fn breakdown(&self) -> BitBreakdown {
        self.breakdown
    }

    pub fn total_bits(&self) -> u64 {
        8 * self.bytes.len() as u64
    }
}

#[derive(Clone, Debug)]
struct Header {
    codec: CodecId,
    n_bits: u8,
    total_channels: usize,
    channel_h: usize,
    channel_w: usize,
    order: Vec<usize>,
    side_info: Vec<SideInfo>,
}

impl Header {
    fn channels(&self) -> usize {
        self.order.len()
    }

    fn encoded_len(&self) -> usize {
        FIXED_HEADER + 2 * self.channels() + 4 * self.channels() + 4
    }
}

struct Parsed<'a> {
    header: Header,
    payload: &'a [u8],
}

fn breakdown_for(h: &Header, payload_len: u64) -> BitBreakdown {
    let c = h.channels() as u64;
    let side_info_bits = 32 * c;
    let header_bits = 8 * (h.encoded_len() as u64 + CRC_LEN as u64) - side_info_bits;
    let (payload_bits, padding_bits) = match h.codec {
        CodecId::Raw => {
            let exact = h.n_bits as u64 * c * (h.channel_h * h.channel_w) as u64;
            (exact, 8 * payload_len - exact)
        }
        _ => (8 * payload_len, 0),
    };
    BitBreakdown {
        header_bits,
        side_info_bits,
        payload_bits,
        padding_bits,
    }
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::config(format!("{what} = {v} does not fit the stream header")))
}

fn write_header(h: &Header, payload_len: usize, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(h.codec.to_byte());
    out.push(h.n_bits);
    out.push(0);
    out.extend_from_slice(&to_u16(h.total_channels, "P")?.to_le_bytes());
    out.extend_from_slice(&to_u16(h.channels(), "C")?.to_le_bytes());
    out.extend_from_slice(&to_u16(h.channel_h, "channel height")?.to_le_bytes());
    out.extend_from_slice(&to_u16(h.channel_w, "channel width")?.to_le_bytes());
    for &o in &h.order {
        out.extend_from_slice(&(o as u16).to_le_bytes());
    }
    for s in &h.side_info {
        out.extend_from_slice(&s.min.to_bits().to_le_bytes());
        out.extend_from_slice(&s.max.to_bits().to_le_bytes());
    }
    let len = u32::try_from(payload_len).map_err(|_| Error::config("payload exceeds 4 GiB"))?;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::corrupt("stream is truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>> {
    if bytes.len() < 5 {
        return Err(Error::corrupt("stream is too short to hold a header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("not a BAFC stream (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!("unsupported BAFC version {}", bytes[4])));
    }
    if bytes.len() < FIXED_HEADER + 4 + CRC_LEN {
        return Err(Error::corrupt("stream is truncated"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - CRC_LEN);
    if crc32fast::hash(body).to_le_bytes() != crc {
        return Err(Error::corrupt("stream checksum mismatch"));
    }

    let mut r = Reader { buf: body, pos: 5 };
    let codec = CodecId::from_byte(r.u8()?)?;
    let n_bits = r.u8()?;
    check_bits(n_bits).map_err(|_| Error::corrupt(format!("n_bits {n_bits} out of range")))?;
    if r.u8()? != 0 {
        return Err(Error::corrupt("reserved header byte is not zero"));
    }
    let total_channels = r.u16()? as usize;
    let c = r.u16()? as usize;
    let channel_h = r.u16()? as usize;
    let channel_w = r.u16()? as usize;
    if c == 0 || channel_h == 0 || channel_w == 0 {
        return Err(Error::corrupt("stream declares an empty tensor"));
    }
    let order = (0..c).map(|_| r.u16().map(usize::from)).collect::<Result<Vec<_>>>()?;
    let side_info = (0..c)
        .map(|_| {
            let lo = f16::from_bits(r.u16()?);
            let hi = f16::from_bits(r.u16()?);
            SideInfo::new(lo, hi)
        })
        .collect::<Result<Vec<_>>>()?;
    let payload_len = r.u32()? as usize;
    let payload = r.take(payload_len)?;
    if r.pos != body.len() {
        return Err(Error::corrupt("stream has trailing bytes after the payload"));
    }
    let header = Header {
        codec,
        n_bits,
        total_channels,
        channel_h,
        channel_w,
        order,
        side_info,
    };
    if codec == CodecId::Raw {
        let bits = n_bits as usize * c * channel_h * channel_w;
        if payload_len != bits.div_ceil(8) {
            return Err(Error::corrupt("raw payload length does not match the header"));
        }
    }
    if codec == CodecId::External && payload_len != 0 {
        return Err(Error::corrupt("external-codec stream carries a payload"));
    }
    Ok(Parsed { header, payload })
}

fn pack_bits(pixels: &[u8], n: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity((pixels.len() * n as usize).div_ceil(8));
    let (mut acc, mut filled) = (0u32, 0u32);
    for &p in pixels {
        acc = (acc << n) | p as u32;
        filled += n as u32;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    out
}

fn unpack_bits(bytes: &[u8], n: u8, count: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(count);
    let (mut acc, mut filled) = (0u32, 0u32);
    let mut it = bytes.iter();
    while out.len() < count {
        while filled < n as u32 {
            let b = *it.next().ok_or_else(|| Error::corrupt("raw payload is truncated"))?;
            acc = (acc << 8) | b as u32;
            filled += 8;
        }
        filled -= n as u32;
        out.push((acc >> filled) as u8 & ((1u16 << n) - 1) as u8);
        acc &= (1 << filled) - 1;
    }
    if acc != 0 {
        return Err(Error::corrupt("raw payload padding bits are not zero"));
    }
    Ok(out)
}

fn header_of(pack: &QuantizedPack, codec: CodecId) -> Header {
    Header {
        codec,
        n_bits: pack.n_bits(),
        total_channels: pack.total_channels(),
        channel_h: pack.channel_h(),
        channel_w: pack.channel_w(),
        order: pack.order().to_vec(),
        side_info: pack.side_info().to_vec(),
    }
}

/// Serializes a pack. With [`CodecId::External`] the tile must be carried
/// separately (see [`export_tile_pgm`] and [`decode_with_tile`]).
pub fn encode(pack: &QuantizedPack, codec: CodecId) -> Result<Bitstream> {
    let header = header_of(pack, codec);
    let img = tile(pack)?;
    let payload = match codec {
        CodecId::Raw => pack_bits(&img.pixels, img.n_bits),
        CodecId::MedRange => med::encode_image(&img.pixels, img.width(), img.height(), img.n_bits),
        CodecId::External => Vec::new(),
    };
    let mut bytes = Vec::with_capacity(header.encoded_len() + payload.len() + CRC_LEN);
    write_header(&header, payload.len(), &mut bytes)?;
    bytes.extend_from_slice(&payload);
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    let breakdown = breakdown_for(&header, payload.len() as u64);
    Ok(Bitstream {
        bytes,
        codec,
        breakdown,
    })
}

fn rebuild(header: Header, img: &TiledImage) -> Result<QuantizedPack> {
    let codes = untile(img, header.channel_h, header.channel_w, header.channels())?;
    QuantizedPack::new(
        header.n_bits,
        header.total_channels,
        header.channel_h,
        header.channel_w,
        header.order,
        codes,
        header.side_info,
    )
    .map_err(|e| match e {
        Error::Shape(m) => Error::Corrupt(m),
        other => other,
    })
}

fn empty_tile(h: &Header) -> Result<TiledImage> {
    let (cols, rows) = crate::quant::grid_dims(h.channels())
        .map_err(|_| Error::corrupt("stream channel count is not a power of two"))?;
    Ok(TiledImage {
        grid_cols: cols,
        grid_rows: rows,
        channel_h: h.channel_h,
        channel_w: h.channel_w,
        n_bits: h.n_bits,
        pixels: Vec::new(),
    })
}

/// Inverse of [`encode`] for the built-in codecs.
pub fn decode(bytes: &[u8]) -> Result<QuantizedPack> {
    let Parsed { header, payload } = parse(bytes)?;
    let mut img = empty_tile(&header)?;
    let count = img.width() * img.height();
    img.pixels = match header.codec {
        CodecId::Raw => unpack_bits(payload, header.n_bits, count)?,
        CodecId::MedRange => med::decode_image(payload, img.width(), img.height(), header.n_bits)?,
        CodecId::External => return Err(Error::ExternalPayload),
    };
    rebuild(header, &img)
}

/// Decodes an external-codec stream whose tile arrives as a binary graymap.
pub fn decode_with_tile(bytes: &[u8], pgm: &[u8]) -> Result<QuantizedPack> {
    let Parsed { header, .. } = parse(bytes)?;
    if header.codec != CodecId::External {
        return Err(Error::format("stream does not use the external codec"));
    }
    let mut img = empty_tile(&header)?;
    let (w, h, pixels) = parse_pgm(pgm, header.n_bits)?;
    if w != img.width() || h != img.height() {
        return Err(Error::corrupt(format!(
            "graymap is {w}x{h}, stream expects {}x{}",
            img.width(),
            img.height()
        )));
    }
    img.pixels = pixels;
    rebuild(header, &img)
}
