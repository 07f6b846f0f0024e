use eegart_autodiff::{SeededRng, Tensor};
use eegart_core::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, CheckpointError, ModelKind, Persist};
use eegart_core::cgan::{Discriminator, Generator};
use eegart_core::encoder::EncoderModel;
use eegart_core::features::{default_montage, BandDef};
use proptest::prelude::*;

fn sample_bytes() -> Vec<u8> {
    let mut rng = SeededRng::new(1);
    let tensors = vec![
        ("a".to_string(), Tensor::randn(&[3, 4], 1.0, &mut rng)),
        ("bias".to_string(), Tensor::randn(&[7], 1.0, &mut rng)),
        ("scalar".to_string(), Tensor::scalar(2.5)),
    ];
    encode(ModelKind::Encoder, &tensors).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn any_single_byte_corruption_is_caught(pos in any::<prop::sample::Index>(), delta in 1u8..=255) {
        let mut bytes = sample_bytes();
        let i = pos.index(bytes.len());
        bytes[i] = bytes[i].wrapping_add(delta);
        let caught = matches!(decode(&bytes), Err(CheckpointError::Crc { .. }));
        prop_assert!(caught, "corruption at {} not caught", i);
    }

    #[test]
    fn tensor_tables_round_trip_bitwise(
        shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let tensors: Vec<(String, Tensor<f32>)> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("t{i}"), Tensor::randn(s, 3.0, &mut rng)))
            .collect();
        let (kind, back) = decode(&encode(ModelKind::Generator, &tensors).unwrap()).unwrap();
        prop_assert_eq!(kind, ModelKind::Generator);
        prop_assert_eq!(back, tensors);
    }
}

#[test]
fn truncated_file_is_rejected() {
    let bytes = sample_bytes();
    for len in [0, 3, 10, bytes.len() - 1] {
        assert!(decode(&bytes[..len]).is_err());
    }
}

#[test]
fn models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(2);
    let enc = EncoderModel::<f32>::new(&default_montage(8, 0.6).unwrap(), BandDef::defaults(), 6, 7, &mut rng).unwrap();
    let gen = Generator::<f32>::new(5, 7, [8, 4, 4], &mut rng);
    let disc = Discriminator::<f32>::new([4, 4, 8], &mut rng);
    let paths = [dir.path().join("e"), dir.path().join("g"), dir.path().join("d")];
    save_checkpoint(&enc, &paths[0]).unwrap();
    save_checkpoint(&gen, &paths[1]).unwrap();
    save_checkpoint(&disc, &paths[2]).unwrap();
    assert_eq!(load_checkpoint::<EncoderModel>(&paths[0]).unwrap().to_tensors(), enc.to_tensors());
    assert_eq!(load_checkpoint::<Generator>(&paths[1]).unwrap(), gen);
    assert_eq!(load_checkpoint::<Discriminator>(&paths[2]).unwrap(), disc);
    // a generator file is not an encoder
    assert!(matches!(load_checkpoint::<EncoderModel>(&paths[1]), Err(CheckpointError::WrongKind { .. })));
}
