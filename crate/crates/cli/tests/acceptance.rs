//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Run with `cargo test -p eegart-cli --test acceptance`.

use std::f64::consts::{E, PI, TAU};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use eegart_autodiff::{check_all_ops, grad_check_detail, GradCheck, SeededRng, Tape, Tensor};
use eegart_core::cgan::{class_colors, generate_painting, train_gan, AdaState, GanHyper, Painting, IMAGE_SIZE};
use eegart_core::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, CheckpointError, Persist};
use eegart_core::encoder::{forward, loss, train_encoder, EncoderHyper, EncoderModel, TrainReport};
use eegart_core::fairness::evaluate_fairness;
use eegart_core::features::{band_power, default_montage, diff_entropy, periodogram, sample_variance, BandDef};
use eegart_core::imaging::{color_stats, synth_painting};
use eegart_core::ingest::{
    parse_packet, resync_stream, synth_dataset, CytonPacket, EegDataset, EegEpoch, SynthParams, FRAME_LEN, HEADER,
};
use eegart_core::{EmotionLabel, NUM_CLASSES};

const SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed.as_secs_f64() < limit_s as f64
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let ops = check_all_ops(10).expect("op checks run");
    let (worst_op, op_err) = ops
        .iter()
        .map(|c| (c.name, c.max_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });

    // the whole encoder loss, each parameter block and the input, 10 points.
    // ε = 1e-4: smaller steps drown gradients near 1e-7 in rounding of the
    // O(1) loss, larger ones start crossing leaky-ReLU kinks
    let mut enc = GradCheck {
        max_error: 0.0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut enc_where = (0, 0);
    for point in 0..10 {
        let mut rng = SeededRng::new(500 + point);
        let montage = default_montage(4, 0.6).unwrap();
        let bands = vec![BandDef::new("a", 1.0, 8.0), BandDef::new("b", 8.0, 30.0)];
        let mut model = EncoderModel::<f64>::new(&montage, bands, 3, 5, &mut rng).unwrap();
        model.delta_upper = Tensor::randn(&[6], 0.05, &mut rng);
        let x = Tensor::<f64>::randn(&[3, 4, 2], 1.0, &mut rng);
        let labels = [0usize, 3, (point % 4) as usize];
        for slot in 0..6 {
            let at = [&model.delta_upper, &model.w1, &model.w2, &model.wp, &model.wc, &x][slot].clone();
            let check = grad_check_detail(
                |tape: &Tape<f64>, v| {
                    let mut vars = model.bind(tape);
                    let mut input = tape.constant(x.clone());
                    match slot {
                        0 => vars.delta_upper = v,
                        1 => vars.w1 = v,
                        2 => vars.w2 = v,
                        3 => vars.wp = v,
                        4 => vars.wc = v,
                        _ => input = v,
                    }
                    let (_, logits) = forward(vars, input)?;
                    loss(vars, logits, &labels, 1e-3)
                },
                &at,
                1e-4,
            )
            .expect("encoder check runs");
            if check.max_error > enc.max_error {
                enc = check;
                enc_where = (point, slot);
            }
        }
    }
    let t = start.elapsed();
    outcome(
        op_err < 1e-5 && enc.max_error < 1e-5 && within(t, 60),
        format!(
            "{} ops x 10 points, worst {worst_op} {op_err:.1e}; encoder loss {:.1e} \
             (point {}, {}[{}]: analytic {:.4e} vs numeric {:.4e}); {:.1} s",
            ops.len(),
            enc.max_error,
            enc_where.0,
            ["delta_a", "w1", "w2", "wp", "wc", "input"][enc_where.1],
            enc.index,
            enc.analytic,
            enc.numeric,
            t.as_secs_f64()
        ),
    )
}

fn random_packet(index: u8, rng: &mut SeededRng) -> CytonPacket {
    CytonPacket {
        sample_index: index,
        channel_counts: std::array::from_fn(|_| rng.int_in(-(1 << 23), (1 << 23) - 1) as i32),
        aux: std::array::from_fn(|_| rng.below(256) as u8),
    }
}

fn garbage_byte(rng: &mut SeededRng) -> u8 {
    match rng.below(4) {
        0 => HEADER,
        1 => 0xC0 | rng.below(16) as u8,
        _ => rng.below(256) as u8,
    }
}

/// Another parseable window shares bytes with the frame at `off`, so the bytes
/// alone cannot say which one is genuine.
fn contested(bytes: &[u8], off: usize) -> bool {
    let lo = off.saturating_sub(FRAME_LEN - 1);
    let hi = (off + FRAME_LEN).min(bytes.len().saturating_sub(FRAME_LEN - 1));
    (lo..hi).any(|q| q != off && parse_packet(&bytes[q..q + FRAME_LEN]).is_ok())
}

fn parser_fuzz() -> Outcome {
    let start = Instant::now();
    let (mut bad_round_trip, mut lost, mut intact_total) = (0usize, 0usize, 0usize);
    let (mut contested_total, mut contested_found) = (0usize, 0usize);
    for case in 0..10_000u64 {
        let mut rng = SeededRng::derive(SEED, case);
        let first = rng.below(256) as u8;
        let mut bytes = Vec::new();
        let mut intact = Vec::new();
        for k in 0..1 + rng.below(40) {
            let p = random_packet(first.wrapping_add(k as u8), &mut rng);
            let original = p.to_bytes_with_footer(0xC0 | rng.below(16) as u8).unwrap().to_vec();
            let mut frame = original.clone();
            match rng.below(10) {
                0 | 1 => {
                    for _ in 0..1 + rng.below(40) {
                        bytes.push(garbage_byte(&mut rng));
                    }
                }
                2 => frame[rng.below(FRAME_LEN)] = garbage_byte(&mut rng),
                3 => frame.truncate(1 + rng.below(FRAME_LEN - 1)),
                _ => {}
            }
            if frame == original {
                intact.push((bytes.len(), p));
            }
            bytes.extend(frame);
        }
        let (contested_frames, uncontested): (Vec<_>, Vec<_>) =
            intact.into_iter().partition(|&(off, _)| contested(&bytes, off));
        let intact = uncontested;
        contested_total += contested_frames.len();
        let out = resync_stream(&bytes);
        contested_found += contested_frames
            .iter()
            .filter(|&&(off, p)| out.offsets.iter().position(|&o| o == off).map(|i| out.packets[i]) == Some(p))
            .count();
        for (p, &off) in out.packets.iter().zip(&out.offsets) {
            let again = p.to_bytes().unwrap();
            if parse_packet(&again).ok() != Some(*p) || again[..FRAME_LEN - 1] != bytes[off..off + FRAME_LEN - 1] {
                bad_round_trip += 1;
            }
        }
        intact_total += intact.len();
        for (off, p) in intact {
            let found = out.offsets.iter().position(|&o| o == off).map(|i| out.packets[i]);
            if found != Some(p) {
                lost += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        bad_round_trip == 0 && lost == 0 && within(t, 30),
        format!(
            "10000 cases: {bad_round_trip} bad round trips, {lost} of {intact_total} intact frames lost \
             (plus {contested_found} of {contested_total} contested frames); {:.1} s",
            t.as_secs_f64()
        ),
    )
}

fn spectral() -> Outcome {
    let mut rng = SeededRng::new(SEED);
    let x: Vec<f64> = (0..10_000).map(|_| rng.gaussian(0.0, 2.0)).collect();
    let analytic = 0.5 * (2.0 * PI * E * 4.0).ln();
    let de_err = (diff_entropy(&x).unwrap() - analytic).abs() / analytic;

    let sine: Vec<f64> = (0..1024).map(|t| (TAU * 10.0 * t as f64 / 250.0).sin()).collect();
    let s = periodogram(&sine, 250.0).unwrap();
    let alpha = band_power(&s, &BandDef::defaults()[2]).unwrap() / s.total_power();

    let mut parseval: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed);
        let noise: Vec<f64> = (0..4096).map(|_| rng.normal()).collect();
        let var = sample_variance(&noise);
        parseval = parseval.max((periodogram(&noise, 250.0).unwrap().total_power() - var).abs() / var);
    }
    outcome(
        de_err < 0.02 && alpha >= 0.95 && parseval < 0.10,
        format!(
            "DE error {:.2}%, 10 Hz sine alpha share {:.2}%, worst Parseval gap {:.2}% over 20 seeds",
            100.0 * de_err,
            100.0 * alpha,
            100.0 * parseval
        ),
    )
}

fn eeg_dataset() -> EegDataset {
    EegDataset::new(synth_dataset(&EmotionLabel::ALL, 200, SEED, 250.0, 2.0, SynthParams::default()).unwrap()).unwrap()
}

fn encoder_training(data: &EegDataset) -> (Outcome, EncoderModel) {
    let montage = default_montage(8, 0.6).unwrap();
    let hyper = EncoderHyper::default();
    let start = Instant::now();
    let (model, report): (EncoderModel, TrainReport) =
        train_encoder(data, &montage, &BandDef::defaults(), &hyper, SEED).unwrap();
    let t = start.elapsed();
    let (_, again) = train_encoder(data, &montage, &BandDef::defaults(), &hyper, SEED).unwrap();
    let bits = |r: &TrainReport| r.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>();
    let same = bits(&report) == bits(&again);
    (
        outcome(
            report.val_accuracy >= 0.90 && within(t, 300) && same,
            format!(
                "val accuracy {:.3} on {} held out; {:.1} s; rerun loss curve bitwise {}",
                report.val_accuracy,
                report.val_size,
                t.as_secs_f64(),
                if same { "identical" } else { "DIFFERENT" }
            ),
        ),
        model,
    )
}

fn gan_fidelity(data: &EegDataset, encoder: &EncoderModel) -> (Outcome, Option<eegart_core::cgan::Generator>) {
    let paintings: Vec<Painting> = (0..500u64)
        .flat_map(|i| {
            EmotionLabel::ALL.map(|label| Painting {
                label,
                image: synth_painting(label, SEED.wrapping_mul(1_000_003).wrapping_add(i), IMAGE_SIZE).unwrap(),
            })
        })
        .collect();
    let mut train_cold = [0.0; NUM_CLASSES];
    for p in &paintings {
        train_cold[p.label.code()] += color_stats(&p.image).coldness / 500.0;
    }
    let hyper = GanHyper::default();
    let start = Instant::now();
    let (generator, _, report) = match train_gan(&paintings, data, encoder, &hyper, SEED) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("training failed: {e}")), None),
    };
    let t = start.elapsed();
    let mut latents = vec![Vec::new(); NUM_CLASSES];
    for (l, e) in encoder.encode_epochs(data.epochs()).unwrap().into_iter().zip(data.epochs()) {
        latents[e.label.unwrap().code()].push(l);
    }
    let colors = class_colors(&generator, &latents, 64, &mut SeededRng::derive(SEED, 77)).unwrap();
    let c = |l: EmotionLabel| &colors[l.code()];
    let margin = c(EmotionLabel::Sadness).coldness - c(EmotionLabel::Anger).coldness;
    let brighter = c(EmotionLabel::Happiness).value > c(EmotionLabel::Anger).value;
    let drift: Vec<f64> = EmotionLabel::ALL
        .iter()
        .map(|&l| (c(l).coldness - train_cold[l.code()]).abs())
        .collect();
    let worst_drift = drift.iter().copied().fold(0.0, f64::max);
    let summary: Vec<String> = colors
        .iter()
        .map(|k| format!("{} c{:+.2}/v{:.2}", k.label.name(), k.coldness, k.value))
        .collect();
    (
        outcome(
            margin >= 0.1 && brighter && worst_drift <= 0.15 && within(t, 1800),
            format!(
                "{} steps in {:.0} s, final p {:.2}; sadness-anger coldness {margin:+.3}, happiness brighter than anger {brighter}, worst class drift {worst_drift:.3} [{}]",
                report.d_losses.len(),
                t.as_secs_f64(),
                report.p.last().copied().unwrap_or(0.0),
                summary.join(", ")
            ),
        ),
        Some(generator),
    )
}

fn randomness(data: &EegDataset, encoder: &EncoderModel, generator: &eegart_core::cgan::Generator) -> Outcome {
    let epoch = &data.epochs()[0];
    let images: Vec<_> = (0..10u64)
        .map(|s| generate_painting(epoch, encoder, generator, s, 1).unwrap().remove(0))
        .collect();
    let mut min_gap = f32::INFINITY;
    for i in 0..10 {
        for j in 0..i {
            min_gap = min_gap.min(images[i].max_abs_diff(&images[j]));
        }
    }
    let repeat = generate_painting(epoch, encoder, generator, 3, 1).unwrap().remove(0);
    let identical = repeat.data().iter().zip(images[3].data()).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        min_gap > 1e-4 && identical,
        format!("smallest pairwise L-inf over 10 seeds {min_gap:.3e}; same seed bit-identical {identical}"),
    )
}

fn ada() -> Outcome {
    let mut s = AdaState::new(0.6, 0.01, 64);
    for _ in 0..63 {
        s.update(&[1.0]);
    }
    let mut reached = None;
    for k in 1..=200 {
        s.update(&[1.0]);
        if s.p == 1.0 && reached.is_none() {
            reached = Some(k);
        }
    }
    let mut rng = SeededRng::new(SEED);
    let mut escaped = 0;
    let mut r = AdaState::new(0.6, 0.01, 64);
    for _ in 0..10_000 {
        let batch: Vec<f64> = (0..1 + rng.below(32)).map(|_| rng.normal() + 0.3).collect();
        r.step = rng.uniform_in(0.001, 0.2);
        r.update(&batch);
        if !(0.0..=1.0).contains(&r.p) {
            escaped += 1;
        }
    }
    outcome(
        reached == Some(100) && escaped == 0,
        format!("p reached 1 after {reached:?} saturated updates; {escaped} of 10000 random updates left [0,1]"),
    )
}

fn eegart(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_eegart"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Small budgets: the criterion is about determinism, not quality.
const PIPELINE_CONFIG: &str = r#"{
    "seed": 42,
    "encoder": {"passes": 10},
    "gan": {"steps": 20, "batch": 8, "g_channels": [32, 16, 8], "d_channels": [8, 16, 32], "report_every": 0},
    "upscale": 16
}"#;

fn pipeline_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let p = |n: &str| dir.join(n).to_string_lossy().into_owned();
    fs::write(p("config.json"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    eegart(&["synth-data", "--per-class", "12", "--seed", "42", "--out-eeg", &p("eeg.csv"), "--out-paintings", &p("paintings")])?;
    eegart(&["train-encoder", "--config", &p("config.json"), "--data", &p("eeg.csv"), "--out-ckpt", &p("enc")])?;
    eegart(&[
        "train-gan", "--config", &p("config.json"), "--paintings", &p("paintings"), "--eeg", &p("eeg.csv"),
        "--encoder-ckpt", &p("enc"), "--out-g", &p("g"), "--out-d", &p("d"),
    ])?;
    eegart(&["synth-data", "--per-class", "1", "--seed", "7", "--out-eeg", &p("input.csv")])?;
    eegart(&[
        "generate", "--encoder-ckpt", &p("enc"), "--g-ckpt", &p("g"), "--epoch-csv", &p("input.csv"), "--seed", "42",
        "--count", "2", "--upscale", "16", "--out-dir", &p("out"),
    ])?;
    let mut pngs: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("out"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    pngs.sort();
    Ok(pngs)
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let runs = (pipeline_run(&dir.path().join("one")), pipeline_run(&dir.path().join("two")));
    let (a, b) = match runs {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    // PNG IHDR carries width and height as big-endian u32 at bytes 16..24
    let all_512 = a.iter().all(|(_, png)| png.len() > 24 && png[16..24] == [0, 0, 2, 0, 0, 0, 2, 0]);
    outcome(
        !a.is_empty() && a == b && all_512,
        format!(
            "{} PNGs per run, 512x512 {all_512}, byte-identical across runs {}",
            a.len(),
            a == b
        ),
    )
}

/// Subject-tagged copies of a synthetic set at a given noise level.
fn group(tag: &str, seed: u64, noise_uv: f64) -> Vec<EegEpoch> {
    let params = SynthParams { channels: 8, noise_uv };
    synth_dataset(&EmotionLabel::ALL, 50, seed, 250.0, 2.0, params)
        .unwrap()
        .into_iter()
        .map(|e| e.with_subject(tag))
        .collect()
}

fn fairness() -> Outcome {
    let train = EegDataset::new(group("train", 1, FAIRNESS_NOISE_UV)).unwrap();
    let (model, _) = train_encoder(
        &train,
        &default_montage(8, 0.6).unwrap(),
        &BandDef::defaults(),
        &EncoderHyper::default(),
        SEED,
    )
    .unwrap();
    let same = [group("a", 2, FAIRNESS_NOISE_UV), group("b", 3, FAIRNESS_NOISE_UV)].concat();
    let same = evaluate_fairness(&model, &same).unwrap();
    let skewed = [group("a", 2, FAIRNESS_NOISE_UV), group("b", 3, 2.0 * FAIRNESS_NOISE_UV)].concat();
    let skewed = evaluate_fairness(&model, &skewed).unwrap();
    let accs = |r: &eegart_core::fairness::FairnessReport| {
        r.groups.iter().map(|g| format!("{} {:.3}", g.subject, g.accuracy)).collect::<Vec<_>>().join(", ")
    };
    outcome(
        same.max_gap < 0.05 && skewed.max_gap > 0.0 && skewed.best_group == "a" && skewed.worst_group == "b",
        format!(
            "identical groups gap {:.3} [{}]; doubled noise gap {:.3} [{}], worst {}",
            same.max_gap,
            accs(&same),
            skewed.max_gap,
            accs(&skewed),
            skewed.worst_group
        ),
    )
}

/// At this noise level an encoder trained on it still separates the classes,
/// while twice the noise pushes the held-out group well below.
const FAIRNESS_NOISE_UV: f64 = 16.0;

fn persistence(encoder: &EncoderModel) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.ckpt");
    save_checkpoint(encoder, &path).unwrap();
    let back: EncoderModel = load_checkpoint(&path).unwrap();
    let bits = |m: &EncoderModel| {
        m.to_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    let bitwise = bits(&back) == bits(encoder);
    let bytes = encode(EncoderModel::KIND, &encoder.to_tensors()).unwrap();
    let mut rng = SeededRng::new(SEED);
    let mut caught = 0;
    for _ in 0..1000 {
        let mut corrupt = bytes.clone();
        let i = rng.below(corrupt.len());
        corrupt[i] ^= 1 + rng.below(255) as u8;
        if matches!(decode(&corrupt), Err(CheckpointError::Crc { .. })) {
            caught += 1;
        }
    }
    outcome(
        bitwise && caught == 1000,
        format!("encoder round trip bitwise {bitwise}; {caught} of 1000 single-byte corruptions caught by CRC"),
    )
}

fn report(n: usize, name: &str, o: &Outcome, failures: &mut usize) {
    println!("[{}] {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass {
        *failures += 1;
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    report(1, "gradient correctness", &gradients(), &mut failures);
    report(2, "parser robustness", &parser_fuzz(), &mut failures);
    report(3, "spectral and entropy oracles", &spectral(), &mut failures);
    let data = eeg_dataset();
    let (enc_outcome, encoder) = encoder_training(&data);
    report(4, "encoder training", &enc_outcome, &mut failures);
    let (gan_outcome, generator) = gan_fidelity(&data, &encoder);
    report(5, "conditional generation fidelity", &gan_outcome, &mut failures);
    let rand_outcome = match &generator {
        Some(g) => randomness(&data, &encoder, g),
        None => outcome(false, "no generator"),
    };
    report(6, "randomness contract", &rand_outcome, &mut failures);
    report(7, "ADA dynamics", &ada(), &mut failures);
    report(8, "end-to-end determinism", &end_to_end(), &mut failures);
    report(9, "fairness instrumentation", &fairness(), &mut failures);
    report(10, "persistence", &persistence(&encoder), &mut failures);
    println!("{} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
