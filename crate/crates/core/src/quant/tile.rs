use super::{check_bits, QuantizedPack};
use crate::error::{Error, Result};

/// Quantized channels laid out on a `grid_rows x grid_cols` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TiledImage {
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub channel_h: usize,
    pub channel_w: usize,
    pub n_bits: u8,
    /// Row-major, `(grid_rows * channel_h) x (grid_cols * channel_w)`.
    pub pixels: Vec<u8>,
}

impl TiledImage {
    pub fn width(&self) -> usize {
        self.grid_cols * self.channel_w
    }

    pub fn height(&self) -> usize {
        self.grid_rows * self.channel_h
    }
}

/// Grid shape for `c` channels: `(2^ceil(log2(c)/2), 2^floor(log2(c)/2))`
/// as `(cols, rows)`.
pub fn grid_dims(c: usize) -> Result<(usize, usize)> {
    if c == 0 || !c.is_power_of_two() {
        return Err(Error::config(format!("cannot tile {c} channels: not a power of two")));
    }
    let e = c.trailing_zeros() as usize;
    Ok((1 << e.div_ceil(2), 1 << (e / 2)))
}

/// Places channel `i` of the pack at grid cell `(i / cols, i % cols)`.
pub fn tile(pack: &QuantizedPack) -> Result<TiledImage> {
    let (cols, rows) = grid_dims(pack.channels())?;
    let (ch, cw) = (pack.channel_h(), pack.channel_w());
    let width = cols * cw;
    let mut pixels = vec![0u8; rows * ch * width];
    for i in 0..pack.channels() {
        let (gr, gc) = (i / cols, i % cols);
        let src = pack.channel_codes(i);
        for y in 0..ch {
            let dst = (gr * ch + y) * width + gc * cw;
            pixels[dst..dst + cw].copy_from_slice(&src[y * cw..(y + 1) * cw]);
        }
    }
    Ok(TiledImage {
        grid_cols: cols,
        grid_rows: rows,
        channel_h: ch,
        channel_w: cw,
        n_bits: pack.n_bits(),
        pixels,
    })
}

/// Cuts a tiled image back into `c` channels of `channel_h x channel_w`
/// codes, in tile order.
pub fn untile(img: &TiledImage, channel_h: usize, channel_w: usize, c: usize) -> Result<Vec<u8>> {
    check_bits(img.n_bits)?;
    let (cols, rows) = grid_dims(c)?;
    if img.grid_cols != cols || img.grid_rows != rows {
        return Err(Error::corrupt(format!(
            "tiled image grid {}x{} does not hold {c} channels",
            img.grid_rows, img.grid_cols
        )));
    }
    if img.channel_h != channel_h
        || img.channel_w != channel_w
        || img.pixels.len() != rows * channel_h * cols * channel_w
    {
        return Err(Error::corrupt("tiled image dimensions do not match the channel size"));
    }
    let width = cols * channel_w;
    let mut codes = Vec::with_capacity(c * channel_h * channel_w);
    for i in 0..c {
        let (gr, gc) = (i / cols, i % cols);
        for y in 0..channel_h {
            let src = (gr * channel_h + y) * width + gc * channel_w;
            codes.extend_from_slice(&img.pixels[src..src + channel_w]);
        }
    }
    Ok(codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::SideInfo;
    use half::f16;
    use proptest::prelude::*;

    fn pack(c: usize, h: usize, w: usize, codes: Vec<u8>, n: u8) -> QuantizedPack {
        let s = SideInfo::new(f16::ZERO, f16::ONE).unwrap();
        QuantizedPack::new(n, c, h, w, (0..c).collect(), codes, vec![s; c]).unwrap()
    }

    #[test]
    fn grid_rule() {
        assert_eq!(grid_dims(1).unwrap(), (1, 1));
        assert_eq!(grid_dims(2).unwrap(), (2, 1));
        assert_eq!(grid_dims(8).unwrap(), (4, 2));
        assert_eq!(grid_dims(32).unwrap(), (8, 4));
        assert_eq!(grid_dims(64).unwrap(), (8, 8));
        assert!(matches!(grid_dims(6), Err(Error::Config(_))));
    }

    #[test]
    fn sixty_four_channels_of_64x64() {
        let p = pack(64, 64, 64, vec![1; 64 * 64 * 64], 8);
        let img = tile(&p).unwrap();
        assert_eq!((img.grid_cols, img.grid_rows), (8, 8));
        assert_eq!((img.width(), img.height()), (512, 512));
    }

    #[test]
    fn four_constant_channels_make_quadrants() {
        let codes: Vec<u8> = (1..=4u8).flat_map(|v| [v; 4]).collect();
        let img = tile(&pack(4, 2, 2, codes.clone(), 3)).unwrap();
        #[rustfmt::skip]
        let want = vec![
            1, 1, 2, 2,
            1, 1, 2, 2,
            3, 3, 4, 4,
            3, 3, 4, 4,
        ];
        assert_eq!(img.pixels, want);
        assert_eq!(untile(&img, 2, 2, 4).unwrap(), codes);
    }

    #[test]
    fn single_channel_is_identity() {
        let codes: Vec<u8> = (0..12).collect();
        let img = tile(&pack(1, 3, 4, codes.clone(), 4)).unwrap();
        assert_eq!(img.pixels, codes);
        assert_eq!(untile(&img, 3, 4, 1).unwrap(), codes);
    }

    #[test]
    fn untile_rejects_mismatched_dims() {
        let img = tile(&pack(4, 2, 2, vec![0; 16], 3)).unwrap();
        assert!(matches!(untile(&img, 2, 3, 4), Err(Error::Corrupt(_))));
        assert!(matches!(untile(&img, 2, 2, 8), Err(Error::Corrupt(_))));
    }

    proptest! {
        #[test]
        fn tile_untile_is_bijective(e in 0u32..6, h in 1usize..6, w in 1usize..6, n in 2u8..=8, seed in any::<u64>()) {
            let c = 1usize << e;
            let top = (1u32 << n) - 1;
            let codes: Vec<u8> = (0..c * h * w)
                .map(|i| ((seed.rotate_left(i as u32 % 64) ^ i as u64) % (top as u64 + 1)) as u8)
                .collect();
            let img = tile(&pack(c, h, w, codes.clone(), n)).unwrap();
            prop_assert_eq!(untile(&img, h, w, c).unwrap(), codes);
        }
    }
}
