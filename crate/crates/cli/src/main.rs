//! `eegart`: synthesize data, train the EEG encoder and the conditional GAN,
//! and paint from recorded or live EEG.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Results go to
//! stdout as JSON lines; progress and diagnostics go to stderr.

mod source;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use eegart_core::cgan::{generate_painting, train_gan, Generator, IMAGE_SIZE};
use eegart_core::checkpoint::{load_checkpoint, save_checkpoint};
use eegart_core::config::PipelineConfig;
use eegart_core::encoder::{train_encoder, EncoderModel};
use eegart_core::fairness::evaluate_fairness;
use eegart_core::gallery::{load_painting_folder, save_painting};
use eegart_core::imaging::{bicubic_upscale, save_png, save_ppm, synth_painting, ImageRGB, UPSCALE_FACTORS};
use eegart_core::ingest::{
    load_epochs_csv, load_unlabeled_csv, synth_epoch_with, write_epochs, EegDataset, EegEpoch, SynthParams,
    DEFAULT_NOISE_UV,
};
use eegart_core::stream::WindowAssembler;
use eegart_core::EmotionLabel;

#[derive(Parser)]
#[command(name = "eegart", version, about = "Paint emotions decoded from EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled EEG CSV and a matching painting folder.
    SynthData {
        /// Comma-separated class names.
        #[arg(long, value_delimiter = ',', default_value = "happiness,sadness,anger,fear")]
        classes: Vec<EmotionLabel>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        per_class: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_eeg: PathBuf,
        #[arg(long)]
        out_paintings: Option<PathBuf>,
        /// Subject tag stored with every epoch.
        #[arg(long)]
        subject: Option<String>,
        /// Standard deviation of the additive white noise, µV.
        #[arg(long, default_value_t = DEFAULT_NOISE_UV)]
        noise_uv: f64,
        /// Supplies rate, channel count and epoch length.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the graph encoder on a labelled EEG CSV.
    TrainEncoder {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
    },
    /// Train the conditional GAN on a painting folder paired with EEG latents.
    TrainGan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        paintings: PathBuf,
        #[arg(long)]
        eeg: PathBuf,
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        out_g: PathBuf,
        #[arg(long)]
        out_d: PathBuf,
    },
    /// Paint every epoch of a CSV.
    Generate {
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        g_ckpt: PathBuf,
        #[arg(long)]
        epoch_csv: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// 1 keeps the generated 32×32 size.
        #[arg(long, default_value_t = 16, value_parser = parse_upscale)]
        upscale: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Paint one image per window of a Cyton byte stream.
    Stream {
        /// A file path, `stdin`, or `tcp:host:port`.
        #[arg(long)]
        source: String,
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        g_ckpt: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        window_seconds: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 16, value_parser = parse_upscale)]
        upscale: usize,
        #[arg(long, default_value_t = 250.0)]
        rate_hz: f64,
        #[arg(long, default_value_t = 24)]
        gain: u32,
    },
    /// Per-subject accuracy of an encoder and the largest gap between subjects.
    EvalFairness {
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn parse_upscale(s: &str) -> Result<usize, String> {
    let f: usize = s.parse().map_err(|e| format!("{e}"))?;
    if f == 1 || UPSCALE_FACTORS.contains(&f) {
        Ok(f)
    } else {
        Err(format!("must be 1 or one of {UPSCALE_FACTORS:?}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eegart: error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData {
            classes,
            per_class,
            seed,
            out_eeg,
            out_paintings,
            subject,
            noise_uv,
            config,
        } => synth_data(
            &classes,
            per_class as usize,
            seed,
            &out_eeg,
            out_paintings.as_deref(),
            subject,
            noise_uv,
            &load_config(config.as_deref())?,
        ),
        Command::TrainEncoder { config, data, out_ckpt } => {
            train_encoder_cmd(&load_config(config.as_deref())?, &data, &out_ckpt)
        }
        Command::TrainGan {
            config,
            paintings,
            eeg,
            encoder_ckpt,
            out_g,
            out_d,
        } => train_gan_cmd(&load_config(config.as_deref())?, &paintings, &eeg, &encoder_ckpt, &out_g, &out_d),
        Command::Generate {
            encoder_ckpt,
            g_ckpt,
            epoch_csv,
            seed,
            count,
            upscale,
            out_dir,
        } => generate_cmd(&encoder_ckpt, &g_ckpt, &epoch_csv, seed, count, upscale, &out_dir),
        Command::Stream {
            source,
            encoder_ckpt,
            g_ckpt,
            window_seconds,
            out_dir,
            seed,
            upscale,
            rate_hz,
            gain,
        } => stream_cmd(&source, &encoder_ckpt, &g_ckpt, window_seconds, &out_dir, seed, upscale, rate_hz, gain),
        Command::EvalFairness { encoder_ckpt, data } => {
            let encoder = load_encoder(&encoder_ckpt)?;
            let epochs = load_unlabeled_csv(&data).with_context(|| format!("reading {}", data.display()))?;
            let report = evaluate_fairness(&encoder, &epochs)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_encoder(path: &Path) -> Result<EncoderModel> {
    load_checkpoint(path).with_context(|| format!("encoder checkpoint {}", path.display()))
}

fn load_generator(path: &Path) -> Result<Generator> {
    load_checkpoint(path).with_context(|| format!("generator checkpoint {}", path.display()))
}

/// Distinct, reproducible seed for the `index`-th item derived from `seed`.
fn item_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[allow(clippy::too_many_arguments)]
fn synth_data(
    classes: &[EmotionLabel],
    per_class: usize,
    seed: u64,
    out_eeg: &Path,
    out_paintings: Option<&Path>,
    subject: Option<String>,
    noise_uv: f64,
    config: &PipelineConfig,
) -> Result<()> {
    if !(noise_uv.is_finite() && noise_uv >= 0.0) {
        bail!("noise_uv must be non-negative, got {noise_uv}");
    }
    let params = SynthParams {
        channels: config.channels,
        noise_uv,
    };
    let mut epochs = Vec::with_capacity(classes.len() * per_class);
    for i in 0..per_class {
        for &label in classes {
            let mut e: EegEpoch = synth_epoch_with(label, item_seed(seed, i), config.rate_hz, config.epoch_seconds, params)?;
            if let Some(s) = &subject {
                e = e.with_subject(s.clone());
            }
            epochs.push(e);
        }
    }
    if let Some(parent) = out_eeg.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(out_eeg).with_context(|| format!("creating {}", out_eeg.display()))?;
    write_epochs(&epochs, std::io::BufWriter::new(file))?;

    let mut paintings = 0;
    if let Some(dir) = out_paintings {
        create_dir(dir)?;
        for i in 0..per_class {
            for &label in classes {
                let image = synth_painting(label, item_seed(seed, i), IMAGE_SIZE)?;
                save_painting(dir, label, i, &image)?;
                paintings += 1;
            }
        }
    }
    eprintln!("eegart: wrote {} epochs and {paintings} paintings", epochs.len());
    println!(
        "{}",
        json!({"command": "synth-data", "epochs": epochs.len(), "paintings": paintings, "eeg": out_eeg, "paintings_dir": out_paintings})
    );
    Ok(())
}

fn train_encoder_cmd(config: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset = load_epochs_csv(data).with_context(|| format!("reading {}", data.display()))?;
    check_dataset(config, &dataset)?;
    let montage = config.montage()?;
    let start = Instant::now();
    eprintln!("eegart: training encoder on {} epochs", dataset.len());
    let (model, report) = train_encoder(&dataset, &montage, &config.bands, &config.encoder, config.seed)?;
    save_checkpoint(&model, out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("eegart: encoder trained in {:.1} s", start.elapsed().as_secs_f64());
    println!(
        "{}",
        json!({
            "command": "train-encoder",
            "train_accuracy": report.train_accuracy,
            "val_accuracy": report.val_accuracy,
            "final_loss": report.losses.last(),
            "train_size": report.train_size,
            "val_size": report.val_size,
            "confusion": report.confusion,
            "checkpoint": out,
        })
    );
    Ok(())
}

fn check_dataset(config: &PipelineConfig, dataset: &EegDataset) -> Result<()> {
    if dataset.channels() != config.channels {
        bail!("dataset has {} channels, config expects {}", dataset.channels(), config.channels);
    }
    if dataset.rate_hz() != config.rate_hz {
        bail!("dataset is sampled at {} Hz, config expects {}", dataset.rate_hz(), config.rate_hz);
    }
    Ok(())
}

fn train_gan_cmd(
    config: &PipelineConfig,
    paintings_dir: &Path,
    eeg: &Path,
    encoder_ckpt: &Path,
    out_g: &Path,
    out_d: &Path,
) -> Result<()> {
    let encoder = load_encoder(encoder_ckpt)?;
    let paintings = load_painting_folder(paintings_dir)?;
    let dataset = load_epochs_csv(eeg).with_context(|| format!("reading {}", eeg.display()))?;
    check_dataset(config, &dataset)?;
    let start = Instant::now();
    eprintln!(
        "eegart: training GAN for {} steps on {} paintings and {} epochs",
        config.gan.steps,
        paintings.len(),
        dataset.len()
    );
    let (generator, disc, report) = train_gan(&paintings, &dataset, &encoder, &config.gan, config.seed)?;
    save_checkpoint(&generator, out_g).with_context(|| format!("writing {}", out_g.display()))?;
    save_checkpoint(&disc, out_d).with_context(|| format!("writing {}", out_d.display()))?;
    for c in &report.checkpoints {
        eprintln!("eegart: step {} colours {}", c.step, serde_json::to_string(&c.classes)?);
    }
    eprintln!("eegart: GAN trained in {:.1} s", start.elapsed().as_secs_f64());
    println!(
        "{}",
        json!({
            "command": "train-gan",
            "steps": report.d_losses.len(),
            "d_loss": report.d_losses.last(),
            "g_loss": report.g_losses.last(),
            "ada_p": report.p.last(),
            "colours": report.checkpoints.last().map(|c| &c.classes),
            "generator": out_g,
            "discriminator": out_d,
        })
    );
    Ok(())
}

fn upscaled(image: ImageRGB, factor: usize) -> Result<ImageRGB> {
    Ok(if factor == 1 { image } else { bicubic_upscale(&image, factor)? })
}

fn write_image(image: &ImageRGB, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let png = dir.join(format!("{stem}.png"));
    let ppm = dir.join(format!("{stem}.ppm"));
    save_png(image, &png).with_context(|| format!("writing {}", png.display()))?;
    save_ppm(image, &ppm).with_context(|| format!("writing {}", ppm.display()))?;
    Ok([png, ppm])
}

fn generate_cmd(
    encoder_ckpt: &Path,
    g_ckpt: &Path,
    epoch_csv: &Path,
    seed: u64,
    count: usize,
    upscale: usize,
    out_dir: &Path,
) -> Result<()> {
    let encoder = load_encoder(encoder_ckpt)?;
    let generator = load_generator(g_ckpt)?;
    let epochs = load_unlabeled_csv(epoch_csv).with_context(|| format!("reading {}", epoch_csv.display()))?;
    create_dir(out_dir)?;
    let mut written = 0;
    for (i, epoch) in epochs.iter().enumerate() {
        let prediction = encoder.predict(epoch)?;
        let images = generate_painting(epoch, &encoder, &generator, item_seed(seed, i), count)?;
        let mut files = Vec::with_capacity(images.len());
        for (k, image) in images.into_iter().enumerate() {
            let stem = format!("epoch{i:04}_{}_{k:03}", prediction.label.name());
            files.push(write_image(&upscaled(image, upscale)?, out_dir, &stem)?[0].clone());
            written += 1;
        }
        println!(
            "{}",
            json!({"epoch": i, "label": prediction.label.name(), "probabilities": prediction.probabilities, "files": files})
        );
    }
    eprintln!("eegart: wrote {written} images to {}", out_dir.display());
    println!("{}", json!({"command": "generate", "epochs": epochs.len(), "images": written}));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stream_cmd(
    source: &str,
    encoder_ckpt: &Path,
    g_ckpt: &Path,
    window_seconds: f64,
    out_dir: &Path,
    seed: u64,
    upscale: usize,
    rate_hz: f64,
    gain: u32,
) -> Result<()> {
    let encoder = load_encoder(encoder_ckpt)?;
    let generator = load_generator(g_ckpt)?;
    let mut assembler = WindowAssembler::new(rate_hz, window_seconds, gain)?;
    let reader = source::open(source)?;
    create_dir(out_dir)?;

    let (tx, rx) = mpsc::sync_channel(source::QUEUE_DEPTH);
    let handle = thread::spawn(move || source::pump(reader, tx));
    let mut images = 0;
    // the loop ends once the reader hangs up, so the queue is always drained
    for chunk in rx {
        let chunk = chunk.context("reading stream")?;
        let (windows, skipped) = assembler.push_bytes(&chunk)?;
        if skipped > 0 {
            eprintln!(
                "eegart: skipped {skipped} corrupted bytes (skipped_bytes={})",
                assembler.skipped_bytes()
            );
        }
        for epoch in windows {
            let index = assembler.windows - 1;
            let prediction = encoder.predict(&epoch)?;
            let image = generate_painting(&epoch, &encoder, &generator, item_seed(seed, index), 1)?.remove(0);
            let stem = format!("window{index:04}_{}", prediction.label.name());
            let [png, _] = write_image(&upscaled(image, upscale)?, out_dir, &stem)?;
            images += 1;
            println!("{}", json!({"window": index, "label": prediction.label.name(), "file": png}));
        }
    }
    handle.join().expect("reader thread panicked");
    let trailing = assembler.finish();
    if trailing > 0 {
        eprintln!("eegart: dropped {trailing} bytes of a truncated final frame");
    }
    eprintln!(
        "eegart: stream ended: packets={} skipped_bytes={} sample_gaps={} images={images}",
        assembler.packets(),
        assembler.skipped_bytes(),
        assembler.index_gaps
    );
    println!(
        "{}",
        json!({
            "command": "stream",
            "images": images,
            "packets": assembler.packets(),
            "skipped_bytes": assembler.skipped_bytes(),
            "sample_gaps": assembler.index_gaps,
        })
    );
    Ok(())
}
