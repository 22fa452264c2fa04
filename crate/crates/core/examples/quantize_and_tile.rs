//! Per-channel uniform quantization with binary16 ranges, then tiling the
//! selected channels into one image.

use baf::quant::{dequantize_channel, grid_dims, quantize_channel, quantize_selected, tile};
use baf::select::ChannelSelection;
use baf::tensor::Tensor;

fn main() -> baf::Result<()> {
    let z: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin() * 3.0).collect();
    for n in [2u8, 4, 8] {
        let (codes, side) = quantize_channel(&z, n)?;
        let back = dequantize_channel(&codes, side, n)?;
        let err = z.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        println!(
            "n={n}: range [{}, {}], max error {err:.4}, half step {:.4}",
            side.lo(),
            side.hi(),
            side.step(n) / 2.0
        );
    }

    let t = Tensor::<f32>::from_fn(32, 8, 8, |c, y, x| (c as f32 - 16.0) * 0.1 + ((x + y) % 3) as f32);
    for c in [4, 8, 32] {
        let sel = ChannelSelection::new((0..c).map(|i| (i * 5) % 32).collect(), 32)?;
        let pack = quantize_selected(&t, &sel, 6)?;
        let img = tile(&pack)?;
        let (rows, cols) = grid_dims(c)?;
        println!("C={c:2}: {rows}x{cols} grid, tile {}x{}", img.width(), img.height());
    }
    Ok(())
}
