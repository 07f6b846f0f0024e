use std::sync::OnceLock;

use eegart_autodiff::{SeededRng, Tensor};
use eegart_core::cgan::{
    augment, generate_from_latent, generate_painting, train_gan, AdaState, GanError, GanHyper, Generator, Painting,
    IMAGE_SIZE,
};
use eegart_core::checkpoint::{decode, encode, Persist};
use eegart_core::encoder::{train_encoder, EncoderHyper, EncoderModel};
use eegart_core::features::{default_montage, BandDef};
use eegart_core::imaging::synth_painting;
use eegart_core::ingest::{synth_dataset, EegDataset, SynthParams};
use eegart_core::EmotionLabel;
use proptest::prelude::*;

fn eeg() -> &'static (EegDataset, EncoderModel) {
    static CELL: OnceLock<(EegDataset, EncoderModel)> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = EegDataset::new(synth_dataset(&EmotionLabel::ALL, 12, 3, 250.0, 2.0, SynthParams::default()).unwrap())
            .unwrap();
        let hyper = EncoderHyper {
            passes: 5,
            ..EncoderHyper::default()
        };
        let (model, _) = train_encoder(&data, &default_montage(8, 0.6).unwrap(), &BandDef::defaults(), &hyper, 3).unwrap();
        (data, model)
    })
}

fn paintings(labels: &[EmotionLabel], per_class: u64) -> Vec<Painting> {
    (0..per_class)
        .flat_map(|i| {
            labels.iter().map(move |&label| Painting {
                label,
                image: synth_painting(label, i, IMAGE_SIZE).unwrap(),
            })
        })
        .collect()
}

fn tiny() -> GanHyper {
    GanHyper {
        noise_dim: 8,
        batch: 4,
        steps: 3,
        g_channels: [8, 8, 4],
        d_channels: [4, 8, 8],
        report_every: 0,
        ..GanHyper::default()
    }
}

#[test]
fn training_is_deterministic() {
    let (data, encoder) = eeg();
    let p = paintings(&EmotionLabel::ALL, 3);
    let (g1, d1, r1) = train_gan(&p, data, encoder, &tiny(), 9).unwrap();
    let (g2, d2, r2) = train_gan(&p, data, encoder, &tiny(), 9).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(d1, d2);
    assert_eq!(r1, r2);
    assert_eq!(r1.d_losses.len(), 3);
    assert!(r1.d_losses.iter().chain(&r1.g_losses).all(|l| l.is_finite()));
    let (g3, _, _) = train_gan(&p, data, encoder, &tiny(), 10).unwrap();
    assert_ne!(g1, g3);
}

#[test]
fn colour_checkpoints_follow_report_interval() {
    let (data, encoder) = eeg();
    let hyper = GanHyper {
        steps: 4,
        report_every: 2,
        ..tiny()
    };
    let (_, _, report) = train_gan(&paintings(&EmotionLabel::ALL, 2), data, encoder, &hyper, 1).unwrap();
    let steps: Vec<usize> = report.checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![2, 4]);
    assert_eq!(report.checkpoints[0].classes.len(), 4);
}

#[test]
fn missing_painting_class_rejected() {
    let (data, encoder) = eeg();
    let p = paintings(&[EmotionLabel::Happiness, EmotionLabel::Sadness, EmotionLabel::Anger], 2);
    match train_gan(&p, data, encoder, &tiny(), 1) {
        Err(GanError::ClassMissing { label, .. }) => assert_eq!(label, EmotionLabel::Fear),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_painting_size_rejected() {
    let (data, encoder) = eeg();
    let mut p = paintings(&EmotionLabel::ALL, 1);
    p[2].image = synth_painting(EmotionLabel::Anger, 0, 16).unwrap();
    assert!(matches!(train_gan(&p, data, encoder, &tiny(), 1), Err(GanError::BadImage { index: 2, .. })));
}

#[test]
fn noise_seeds_give_distinct_images_and_a_seed_repeats_exactly() {
    let (data, encoder) = eeg();
    let g = Generator::<f32>::new(8, encoder.latent_dim(), [8, 8, 4], &mut SeededRng::new(5));
    let epoch = &data.epochs()[0];
    let images: Vec<_> = (0..10).map(|s| generate_painting(epoch, encoder, &g, s, 1).unwrap().remove(0)).collect();
    for i in 0..10 {
        for j in 0..i {
            assert!(images[i].max_abs_diff(&images[j]) > 1e-4, "{i} vs {j}");
        }
    }
    let again = generate_painting(epoch, encoder, &g, 3, 1).unwrap().remove(0);
    assert_eq!(again, images[3]);
    assert!(generate_painting(epoch, encoder, &g, 3, 0).unwrap().is_empty());
}

#[test]
fn mismatched_latent_width_rejected() {
    let (data, encoder) = eeg();
    let g = Generator::<f32>::new(8, encoder.latent_dim() + 1, [4, 4, 4], &mut SeededRng::new(5));
    assert!(matches!(
        generate_painting(&data.epochs()[0], encoder, &g, 0, 1),
        Err(GanError::EncoderMismatch { .. })
    ));
}

#[test]
fn generator_checkpoint_reproduces_images() {
    let g = Generator::<f32>::new(6, 9, [8, 4, 4], &mut SeededRng::new(12));
    let back = Generator::from_tensors(decode(&encode(Generator::KIND, &g.to_tensors()).unwrap()).unwrap().1).unwrap();
    assert_eq!(back, g);
    let latent = vec![0.3; 9];
    assert_eq!(generate_from_latent(&latent, &back, 4, 2).unwrap(), generate_from_latent(&latent, &g, 4, 2).unwrap());
}

#[test]
fn ada_reaches_one_in_exactly_one_hundred_saturated_updates() {
    let mut s = AdaState::new(0.6, 0.01, 64);
    for _ in 0..63 {
        s.update(&[1.0]);
    }
    assert!(!s.is_saturated());
    assert_eq!(s.p, 0.0);
    for k in 1..=100 {
        s.update(&[1.0]);
        assert_eq!(s.r(), 1.0);
        if k < 100 {
            assert!(s.p < 1.0, "p hit 1 after {k} updates");
        }
    }
    assert_eq!(s.p, 1.0);
    s.update(&[1.0]);
    assert_eq!(s.p, 1.0);
}

#[test]
fn augmentation_preserves_shape_and_range() {
    let mut rng = SeededRng::new(8);
    let img = Tensor::<f32>::randn(&[3, 32, 32], 0.5, &mut rng).map(|v| v.clamp(-1.0, 1.0));
    let mut changed = 0;
    for _ in 0..20 {
        let out = augment(&img, 1.0, &mut rng);
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        changed += usize::from(out != img);
    }
    assert!(changed >= 15);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ada_probability_stays_in_unit_interval(
        target in 0.0f64..=1.0,
        step in 0.001f64..0.5,
        batches in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..40), 1..100),
    ) {
        let mut s = AdaState::new(target, step, 64);
        for b in &batches {
            s.update(b);
            prop_assert!((0.0..=1.0).contains(&s.p));
            prop_assert!((-1.0..=1.0).contains(&s.r()));
        }
    }
}
