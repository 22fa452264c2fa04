use baf::baf::BafModel;
use baf::codec::CodecId;
use baf::harness::{gen_synthetic_dataset, pipeline_decode, pipeline_encode, zero_fill, Restorer, SurrogateNet};
use baf::quant::{dequantize_channel, quantize_channel, quantize_selected};
use baf::select::ChannelSelection;
use baf::tensor::Tensor;
use baf::Error;

fn net() -> SurrogateNet<f32> {
    SurrogateNet::init(4, 8, 3, 21).unwrap()
}

#[test]
fn full_selection_matches_quantized_unsplit_net() {
    let net = net();
    let data = gen_synthetic_dataset(2, 12, 3, 0.5).unwrap();
    // Any permutation of all P channels.
    let sel = ChannelSelection::new(vec![5, 2, 7, 0, 1, 6, 3, 4], 8).unwrap();
    let restorer = Restorer::ZeroFill(&net.front.split_bn);
    for img in &data.images {
        let z = net.front.forward(img).unwrap();
        let mut planes = Vec::new();
        for c in 0..8 {
            let (codes, side) = quantize_channel(z.channel(c), 8).unwrap();
            planes.push(dequantize_channel(&codes, side, 8).unwrap());
        }
        let refs: Vec<&[f32]> = planes.iter().map(|p| p.as_slice()).collect();
        let zq = Tensor::stack(z.height(), z.width(), &refs).unwrap();
        let expected = net.predict_from_split(&zq).unwrap();
        for codec in CodecId::BUILT_IN {
            let s = pipeline_encode(img, &net.front, &sel, 8, codec).unwrap();
            let (class, restored) = pipeline_decode(s.bytes(), &net, &restorer).unwrap();
            assert_eq!(class, expected);
            assert_eq!(restored, zq);
        }
    }
}

#[test]
fn zero_fill_uses_bn_bias_for_missing_channels() {
    let net = net();
    let img = &gen_synthetic_dataset(3, 4, 2, 0.5).unwrap().images[0];
    let z = net.front.forward(img).unwrap();
    let pack = quantize_selected(&z, &ChannelSelection::new(vec![6, 1], 8).unwrap(), 6).unwrap();
    let mut bn = net.front.split_bn.clone();
    bn = baf::tensor::BnAffine::new(bn.scale().to_vec(), (0..8).map(|i| i as f32).collect()).unwrap();
    let r = zero_fill(&pack, &bn).unwrap();
    for c in [0, 2, 3, 4, 5, 7] {
        assert!(r.channel(c).iter().all(|&v| v == c as f32));
    }
    let deq = pack.dequantize().unwrap();
    assert_eq!(r.channel(6), deq.channel(0));
    assert_eq!(r.channel(1), deq.channel(1));
}

#[test]
fn damaged_streams_never_classify() {
    let net = net();
    let img = &gen_synthetic_dataset(4, 4, 2, 0.5).unwrap().images[1];
    let sel = ChannelSelection::new(vec![3, 0], 8).unwrap();
    let restorer = Restorer::ZeroFill(&net.front.split_bn);
    let bytes = pipeline_encode(img, &net.front, &sel, 4, CodecId::MedRange).unwrap().into_bytes();
    for i in 0..bytes.len() {
        for bit in [0x01u8, 0x80] {
            let mut b = bytes.clone();
            b[i] ^= bit;
            assert!(pipeline_decode(&b, &net, &restorer).is_err(), "byte {i} bit {bit:#x}");
        }
    }
    for len in 0..bytes.len() {
        assert!(pipeline_decode(&bytes[..len], &net, &restorer).is_err());
    }
}

#[test]
fn mismatched_model_is_a_compatibility_error() {
    let net = net();
    let img = &gen_synthetic_dataset(5, 4, 2, 0.5).unwrap().images[0];
    let f = &net.front;
    let model = BafModel::init(vec![1, 2], 8, 4, f.split_conv.clone(), f.split_bn.clone(), net.sigma, 3).unwrap();
    let restorer = Restorer::Baf(&model);
    for (order, n) in [(vec![2, 1], 8), (vec![1, 2], 6), (vec![1, 2, 3, 4], 8)] {
        let sel = ChannelSelection::new(order, 8).unwrap();
        let s = pipeline_encode(img, f, &sel, n, CodecId::Raw).unwrap();
        assert!(matches!(pipeline_decode(s.bytes(), &net, &restorer), Err(Error::Compatibility(_))));
    }
    let sel = ChannelSelection::new(vec![1, 2], 8).unwrap();
    let s = pipeline_encode(img, f, &sel, 8, CodecId::Raw).unwrap();
    let (_, z) = pipeline_decode(s.bytes(), &net, &restorer).unwrap();
    assert_eq!(z.shape(), (8, 16, 16));
}

#[test]
fn encoding_is_deterministic() {
    let net = net();
    let img = &gen_synthetic_dataset(6, 4, 2, 0.5).unwrap().images[2];
    let sel = ChannelSelection::new(vec![0, 4, 5, 7], 8).unwrap();
    let a = pipeline_encode(img, &net.front, &sel, 5, CodecId::MedRange).unwrap();
    let b = pipeline_encode(img, &net.front, &sel, 5, CodecId::MedRange).unwrap();
    assert_eq!(a.bytes(), b.bytes());
}
