//! RGB images in `[0, 1]`, procedural class-conditioned paintings, colour
//! statistics, bicubic upscaling and PPM/PNG files.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use eegart_autodiff::SeededRng;
use thiserror::Error;

use crate::label::EmotionLabel;

pub const PAINTING_SIZES: [usize; 3] = [16, 32, 64];
pub const UPSCALE_FACTORS: [usize; 4] = [2, 4, 8, 16];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("painting size must be one of {PAINTING_SIZES:?}, got {0}")]
    BadSize(usize),
    #[error("upscale factor must be one of {UPSCALE_FACTORS:?}, got {0}")]
    BadFactor(usize),
    #[error("image data of length {len} does not fit {h}x{w}x3")]
    BadDimensions { h: usize, w: usize, len: usize },
    #[error("malformed PPM: {0}")]
    MalformedPpm(String),
    #[error("PNG encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Interleaved `h × w × 3` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl ImageRGB {
    /// Values are clamped to `[0, 1]`; non-finite values become 0.
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if h == 0 || w == 0 || data.len() != h * w * 3 {
            return Err(ImageError::BadDimensions { h, w, len: data.len() });
        }
        let data = data
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        Self::new(h, w, rgb.iter().copied().cycle().take(h * w * 3).collect()).expect("positive dims")
    }

    /// From planar `(3, h, w)` values in `[−1, 1]`.
    pub fn from_signed_planar(h: usize, w: usize, planar: &[f32]) -> Result<Self, ImageError> {
        if planar.len() != 3 * h * w {
            return Err(ImageError::BadDimensions { h, w, len: planar.len() });
        }
        let plane = h * w;
        let data = (0..plane * 3).map(|i| to_unit(planar[(i % 3) * plane + i / 3])).collect();
        Self::new(h, w, data)
    }

    /// Planar `(3, h, w)` values in `[−1, 1]`.
    pub fn to_signed_planar(&self) -> Vec<f32> {
        let plane = self.h * self.w;
        (0..plane * 3).map(|i| to_signed(self.data[(i % plane) * 3 + i / plane])).collect()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn max_abs_diff(&self, other: &ImageRGB) -> f32 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }

    /// Bytes rounded half away from zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }

    pub fn from_bytes(h: usize, w: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(h, w, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }
}

pub fn to_byte(v: f32) -> u8 {
    (f64::from(v.clamp(0.0, 1.0)) * 255.0).round() as u8
}

/// `[−1, 1] → [0, 1]`, clamped.
pub fn to_unit(v: f32) -> f32 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

/// `[0, 1] → [−1, 1]`, clamped.
pub fn to_signed(v: f32) -> f32 {
    (v * 2.0 - 1.0).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ColorStats {
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
    /// `mean_b − mean_r`.
    pub coldness: f64,
    /// Mean of the per-pixel maximum channel.
    pub value: f64,
    /// Mean of `(max − min) / max` over pixels with `max > 0.05`.
    pub saturation: f64,
}

pub fn color_stats(image: &ImageRGB) -> ColorStats {
    let n = (image.h * image.w) as f64;
    let (mut r, mut g, mut b, mut value, mut sat, mut lit) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    for px in image.data.chunks_exact(3) {
        let [pr, pg, pb] = [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])];
        r += pr;
        g += pg;
        b += pb;
        let max = pr.max(pg).max(pb);
        let min = pr.min(pg).min(pb);
        value += max;
        if max > 0.05 {
            sat += (max - min) / max;
            lit += 1;
        }
    }
    let (mean_r, mean_g, mean_b) = (r / n, g / n, b / n);
    ColorStats {
        mean_r,
        mean_g,
        mean_b,
        coldness: mean_b - mean_r,
        value: value / n,
        saturation: if lit == 0 { 0.0 } else { sat / lit as f64 },
    }
}

/// HSV (hue in degrees) to RGB.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// Sampling ranges for one palette: hue windows in degrees (one is picked per
/// colour), value, saturation and blob count.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteSpec {
    pub hues: Vec<(f64, f64)>,
    pub value: (f64, f64),
    pub saturation: (f64, f64),
    pub blobs: (usize, usize),
}

impl PaletteSpec {
    /// Palette for a class. Fear has none fixed: see [`fear_palette`].
    pub fn for_label(label: EmotionLabel) -> PaletteSpec {
        match label {
            // blue shades and cold colours
            EmotionLabel::Sadness => PaletteSpec {
                hues: vec![(195.0, 250.0)],
                value: (0.35, 0.75),
                saturation: (0.45, 0.8),
                blobs: (3, 6),
            },
            // warmer and darker shades
            EmotionLabel::Anger => PaletteSpec {
                hues: vec![(-15.0, 30.0)],
                value: (0.2, 0.55),
                saturation: (0.65, 0.95),
                blobs: (4, 8),
            },
            // bright and gaudy colours
            EmotionLabel::Happiness => PaletteSpec {
                hues: vec![(40.0, 65.0), (80.0, 130.0), (290.0, 330.0), (20.0, 40.0)],
                value: (0.8, 1.0),
                saturation: (0.6, 0.95),
                blobs: (5, 8),
            },
            EmotionLabel::Fear => PaletteSpec {
                hues: vec![(0.0, 360.0)],
                value: (0.1, 0.9),
                saturation: (0.1, 0.9),
                blobs: (3, 8),
            },
        }
    }

    fn color(&self, rng: &mut SeededRng) -> [f64; 3] {
        let (lo, hi) = self.hues[rng.below(self.hues.len())];
        hsv_to_rgb(
            rng.uniform_in(lo, hi),
            rng.uniform_in(self.saturation.0, self.saturation.1),
            rng.uniform_in(self.value.0, self.value.1),
        )
    }
}

/// Fear draws a fresh palette per image: a random hue window and narrow
/// random value/saturation bands, so images differ strongly from each other.
pub fn fear_palette(rng: &mut SeededRng) -> PaletteSpec {
    let hue = rng.uniform_in(0.0, 360.0);
    let value = rng.uniform_in(0.15, 0.8);
    let sat = rng.uniform_in(0.15, 0.85);
    PaletteSpec {
        hues: vec![(hue - 25.0, hue + 25.0)],
        value: (value, (value + 0.15).min(1.0)),
        saturation: (sat, (sat + 0.15).min(1.0)),
        blobs: (3, 8),
    }
}

/// Background gradient plus soft elliptical blobs drawn from the class palette.
pub fn synth_painting(label: EmotionLabel, seed: u64, size: usize) -> Result<ImageRGB, ImageError> {
    if !PAINTING_SIZES.contains(&size) {
        return Err(ImageError::BadSize(size));
    }
    let mut rng = SeededRng::derive(seed, 100 + label.code() as u64);
    let palette = match label {
        EmotionLabel::Fear => fear_palette(&mut rng),
        other => PaletteSpec::for_label(other),
    };
    let top = palette.color(&mut rng);
    let bottom = palette.color(&mut rng);
    let s = size as f64;
    let mut px = vec![[0.0f64; 3]; size * size];
    for y in 0..size {
        let t = y as f64 / (s - 1.0);
        for x in 0..size {
            for c in 0..3 {
                px[y * size + x][c] = top[c] * (1.0 - t) + bottom[c] * t;
            }
        }
    }
    let blobs = palette.blobs.0 + rng.below(palette.blobs.1 - palette.blobs.0 + 1);
    for _ in 0..blobs {
        let color = palette.color(&mut rng);
        let (cx, cy) = (rng.uniform_in(0.0, s), rng.uniform_in(0.0, s));
        let (rx, ry) = (rng.uniform_in(0.08, 0.3) * s, rng.uniform_in(0.08, 0.3) * s);
        let angle = rng.uniform_in(0.0, std::f64::consts::PI);
        let opacity = rng.uniform_in(0.6, 0.95);
        let (sin, cos) = angle.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = (dx * cos + dy * sin) / rx;
                let v = (-dx * sin + dy * cos) / ry;
                let d2 = u * u + v * v;
                // soft edge: full inside the unit ellipse, fading to zero at 1.5
                let a = opacity * (1.0 - ((d2.sqrt() - 1.0) * 2.0).clamp(0.0, 1.0));
                if a > 0.0 {
                    let p = &mut px[y * size + x];
                    for c in 0..3 {
                        p[c] = p[c] * (1.0 - a) + color[c] * a;
                    }
                }
            }
        }
    }
    ImageRGB::new(size, size, px.iter().flatten().map(|&v| v as f32).collect())
}

fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// One axis of resampling: for each output index, four source taps and
/// their weights (edge-clamped).
fn taps(len: usize, factor: usize) -> Vec<[(usize, f64); 4]> {
    (0..len * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut out = [(0, 0.0); 4];
            for (k, slot) in out.iter_mut().enumerate() {
                let offset = k as f64 - 1.0;
                let idx = (base + offset).clamp(0.0, len as f64 - 1.0) as usize;
                *slot = (idx, catmull_rom(offset - frac));
            }
            out
        })
        .collect()
}

/// Separable Catmull-Rom resampling without the final clamp; planar f64 in
/// and out.
pub fn bicubic_resample(h: usize, w: usize, channels: &[Vec<f64>], factor: usize) -> Vec<Vec<f64>> {
    let (tx, ty) = (taps(w, factor), taps(h, factor));
    let (oh, ow) = (h * factor, w * factor);
    channels
        .iter()
        .map(|plane| {
            let mut rows = vec![0.0; h * ow];
            for y in 0..h {
                for (x, tap) in tx.iter().enumerate() {
                    rows[y * ow + x] = tap.iter().map(|&(i, wt)| plane[y * w + i] * wt).sum();
                }
            }
            let mut out = vec![0.0; oh * ow];
            for (y, tap) in ty.iter().enumerate() {
                for x in 0..ow {
                    out[y * ow + x] = tap.iter().map(|&(j, wt)| rows[j * ow + x] * wt).sum();
                }
            }
            out
        })
        .collect()
}

pub fn bicubic_upscale(image: &ImageRGB, factor: usize) -> Result<ImageRGB, ImageError> {
    if !UPSCALE_FACTORS.contains(&factor) {
        return Err(ImageError::BadFactor(factor));
    }
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| image.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect())
        .collect();
    let up = bicubic_resample(image.h, image.w, &planes, factor);
    let n = up[0].len();
    let data = (0..n * 3).map(|i| up[i % 3][i / 3] as f32).collect();
    ImageRGB::new(image.h * factor, image.w * factor, data)
}

pub fn write_ppm<W: Write>(image: &ImageRGB, mut out: W) -> Result<(), ImageError> {
    write!(out, "P6\n{} {}\n255\n", image.w, image.h)?;
    out.write_all(&image.to_bytes())?;
    Ok(())
}

pub fn save_ppm(image: &ImageRGB, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut f = BufWriter::new(File::create(path)?);
    write_ppm(image, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn parse_ppm(bytes: &[u8]) -> Result<ImageRGB, ImageError> {
    let bad = |m: &str| ImageError::MalformedPpm(m.to_string());
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("magic must be P6"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(3)).ok_or_else(|| bad("dimensions overflow"))?;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != need {
        return Err(ImageError::MalformedPpm(format!("expected {need} raster bytes, found {}", body.len())));
    }
    ImageRGB::from_bytes(h, w, body)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageRGB, ImageError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_ppm(&bytes)
}

/// 8-bit RGB, non-interlaced.
pub fn write_png<W: Write>(image: &ImageRGB, out: W) -> Result<(), ImageError> {
    let mut encoder = png::Encoder::new(out, image.w as u32, image.h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&image.to_bytes())?;
    writer.finish()?;
    Ok(())
}

pub fn save_png(image: &ImageRGB, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut f = BufWriter::new(File::create(path)?);
    write_png(image, &mut f)?;
    f.flush()?;
    Ok(())
}
