//! Convolution, batch norm and its inverse, leaky ReLU, stride-2 phases.

use baf::tensor::{
    activation, bn_forward, bn_inverse, conv2d, downsample_phases, interleave_phases, Activation, BnAffine, ConvLayer,
    Tensor,
};

fn main() -> baf::Result<()> {
    let x = Tensor::<f32>::from_fn(2, 6, 6, |c, y, x| (c * 36 + y * 6 + x) as f32 / 10.0 - 3.0);

    // 2 -> 3 channels, 3x3, stride 2, same padding.
    let weights: Vec<f32> = (0..3 * 2 * 9).map(|i| ((i * 7) % 11) as f32 / 11.0 - 0.5).collect();
    let conv = ConvLayer::new(3, 2, 3, 2, weights, None)?;
    let s = conv2d(&x, &conv)?;
    println!("conv2d: {:?} -> {:?}", x.shape(), s.shape());

    let bn = BnAffine::new(vec![2.0, 0.5, -1.0], vec![1.0, 0.0, 0.25])?;
    let z = bn_forward(&s, &bn)?;
    let back = bn_inverse(&z, &bn)?;
    println!("bn round trip, mean |error| = {:.2e}", back.mean_abs_diff(&s)?);

    let y = activation(&z, Activation::default());
    let neg = z.data().iter().filter(|v| **v < 0.0).count();
    println!("leaky ReLU scaled {neg} of {} values by 0.1", y.len());

    let phases = downsample_phases(&x)?;
    println!("phases: 4 x {:?}", phases[0].shape());
    assert_eq!(interleave_phases(&phases)?, x);
    println!("interleaving the phases gives the input back");
    Ok(())
}
