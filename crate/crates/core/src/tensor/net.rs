use serde::{Deserialize, Serialize};

use super::{activation, bn_forward, conv2d, Activation, BnAffine, ConvLayer, Real, Tensor};
use crate::error::{Error, Result};

/// The device-side part of a split network: a stem of conv+activation
/// layers, then the split layer's convolution and batch norm. The split
/// layer's activation runs on the receiving side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontModel<T = f32> {
    pub stem: Vec<(ConvLayer<T>, Activation)>,
    pub split_conv: ConvLayer<T>,
    pub split_bn: BnAffine<T>,
}

impl<T: Real> FrontModel<T> {
    pub fn new(
        stem: Vec<(ConvLayer<T>, Activation)>,
        split_conv: ConvLayer<T>,
        split_bn: BnAffine<T>,
    ) -> Result<Self> {
        if split_conv.stride() != 2 {
            return Err(Error::config("split layer must have stride 2"));
        }
        if split_bn.channels() != split_conv.out_channels() {
            return Err(Error::shape("split batch norm does not match split conv outputs"));
        }
        let mut channels = None;
        for (conv, _) in &stem {
            if let Some(c) = channels {
                if conv.in_channels() != c {
                    return Err(Error::shape("stem layer channel counts do not chain"));
                }
            }
            channels = Some(conv.out_channels());
        }
        if let Some(c) = channels {
            if c != split_conv.in_channels() {
                return Err(Error::shape("stem output does not feed the split conv"));
            }
        }
        Ok(Self {
            stem,
            split_conv,
            split_bn,
        })
    }

    pub fn cast<U: Real>(&self) -> FrontModel<U> {
        FrontModel {
            stem: self.stem.iter().map(|(c, a)| (c.cast(), *a)).collect(),
            split_conv: self.split_conv.cast(),
            split_bn: self.split_bn.cast(),
        }
    }

    /// Input channel count of the split layer (Q).
    pub fn split_inputs(&self) -> usize {
        self.split_conv.in_channels()
    }

    /// Output channel count of the split layer (P).
    pub fn split_outputs(&self) -> usize {
        self.split_conv.out_channels()
    }

    /// Runs the stem, returning the split layer's input `X`.
    pub fn stem_forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = image.clone();
        for (conv, act) in &self.stem {
            h = activation(&conv2d(&h, conv)?, *act);
        }
        Ok(h)
    }

    /// Returns `(X, Z)`: the split layer's input and its batch-norm output.
    pub fn split_tensors(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let x = self.stem_forward(image)?;
        if x.height() % 2 != 0 || x.width() % 2 != 0 {
            return Err(Error::shape("split layer input must have even dims"));
        }
        let z = bn_forward(&conv2d(&x, &self.split_conv)?, &self.split_bn)?;
        Ok((x, z))
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.split_tensors(image).map(|(_, z)| z)
    }
}
