//! Device-to-cloud flow: split tensor, select, quantize, tile and encode on
//! one side; decode, restore and classify on the other.

use super::surrogate::SurrogateNet;
use crate::baf::BafModel;
use crate::codec::{decode, encode, Bitstream, CodecId};
use crate::error::{Error, Result};
use crate::quant::{quantize_selected, QuantizedPack};
use crate::select::ChannelSelection;
use crate::tensor::{BnAffine, FeatureTensor, FrontModel, Real, Tensor};

/// Device side: runs the front layers on `image` and encodes the selected
/// channels of the split tensor.
pub fn pipeline_encode(
    image: &FeatureTensor,
    front: &FrontModel<f32>,
    selection: &ChannelSelection,
    n_bits: u8,
    codec: CodecId,
) -> Result<Bitstream> {
    let z = front.forward(image)?;
    encode(&quantize_selected(&z, selection, n_bits)?, codec)
}

/// How the receiving side fills in the full split tensor.
pub enum Restorer<'a, T: Real = f32> {
    Baf(&'a BafModel<T>),
    /// Untransmitted channels take their batch-norm bias (the value a
    /// zero convolution output maps to); transmitted ones are dequantized.
    ZeroFill(&'a BnAffine<T>),
}

impl<T: Real> Restorer<'_, T> {
    /// Pre-activation restored tensor with all `P` channels.
    pub fn restore(&self, pack: &QuantizedPack) -> Result<Tensor<T>> {
        match self {
            Restorer::Baf(m) => {
                if pack.total_channels() != m.split_outputs() {
                    return Err(Error::Compatibility(format!(
                        "stream indexes {} channels, model restores {}",
                        pack.total_channels(),
                        m.split_outputs()
                    )));
                }
                m.restore(pack)
            }
            Restorer::ZeroFill(bn) => zero_fill(pack, bn),
        }
    }
}

pub fn zero_fill<T: Real>(pack: &QuantizedPack, bn: &BnAffine<T>) -> Result<Tensor<T>> {
    let p = bn.channels();
    if pack.total_channels() != p {
        return Err(Error::Compatibility(format!(
            "stream indexes {} channels, network has {p}",
            pack.total_channels()
        )));
    }
    let (h, w) = (pack.channel_h(), pack.channel_w());
    let deq = pack.dequantize()?;
    let mut slot = vec![None; p];
    for (i, &c) in pack.order().iter().enumerate() {
        slot[c] = Some(i);
    }
    Ok(Tensor::from_fn(p, h, w, |c, y, x| match slot[c] {
        Some(i) => T::of(deq.get(i, y, x) as f64),
        None => bn.bias()[c],
    }))
}

/// Cloud side: decodes the stream, restores the split tensor and runs the
/// remaining layers. Returns the predicted class and the restored tensor.
pub fn pipeline_decode<T: Real>(
    stream: &[u8],
    net: &SurrogateNet<T>,
    restorer: &Restorer<'_, T>,
) -> Result<(usize, Tensor<T>)> {
    let pack = decode(stream)?;
    decode_pack(&pack, net, restorer)
}

pub(crate) fn decode_pack<T: Real>(
    pack: &QuantizedPack,
    net: &SurrogateNet<T>,
    restorer: &Restorer<'_, T>,
) -> Result<(usize, Tensor<T>)> {
    if pack.total_channels() != net.split_outputs() {
        return Err(Error::Compatibility(format!(
            "stream indexes {} channels, network splits into {}",
            pack.total_channels(),
            net.split_outputs()
        )));
    }
    let z = restorer.restore(pack)?;
    Ok((net.predict_from_split(&z)?, z))
}
