//! One image through the whole chain: device-side encode, cloud-side decode,
//! restore and classify.

use baf::codec::CodecId;
use baf::harness::surrogate::train_surrogate;
use baf::harness::{gen_synthetic_dataset, pipeline_decode, pipeline_encode, Restorer, SurrogateConfig};
use baf::select::ChannelSelection;

fn main() -> baf::Result<()> {
    let data = gen_synthetic_dataset(1, 200, 4, 0.25)?;
    let net = train_surrogate(&data, &SurrogateConfig::default(), 2)?.net;
    let i = data.val[0];
    let (image, label) = (&data.images[i], data.labels[i]);

    let all = ChannelSelection::new((0..32).collect(), 32)?;
    let zero_fill = Restorer::ZeroFill(&net.front.split_bn);
    for (c, n) in [(32, 8), (16, 8), (8, 4)] {
        let sel = all.prefix(c)?;
        let stream = pipeline_encode(image, &net.front, &sel, n, CodecId::MedRange)?;
        let (class, _) = pipeline_decode(stream.bytes(), &net, &zero_fill)?;
        println!("C={c:2} n={n}: {:5} bits, predicted {class}, label {label}", stream.total_bits());
    }
    println!("uncompressed prediction {}", net.predict(image)?);
    Ok(())
}
