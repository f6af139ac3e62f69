use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::font::{self, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::error::{Error, Result};

/// Horizontal gap between glyphs before jitter, in image pixels.
pub const LETTER_GAP: usize = 1;

/// Grayscale image with its ground-truth transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` values.
    pub pixels: Vec<f64>,
    pub transcript: String,
}

impl LabeledImage {
    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Pixels quantized to 8 bits, clamped to [0, 1] first.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augment {
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Maximum random left offset of the word, in pixels.
    pub x_jitter: usize,
    /// Maximum extra pixels added to each inter-glyph gap.
    pub spacing_jitter: usize,
}

impl Augment {
    pub const NONE: Augment = Augment {
        noise_sigma: 0.0,
        x_jitter: 0,
        spacing_jitter: 0,
    };
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            noise_sigma: 0.1,
            x_jitter: 12,
            spacing_jitter: 1,
        }
    }
}

/// Integer upscaling factor of the font for a canvas height.
pub fn glyph_scale(height: usize) -> usize {
    (height / GLYPH_HEIGHT).max(1)
}

/// Draws `text` with the built-in font, left to right, then adds noise.
/// Deterministic per `(text, seed, augment, canvas)`.
pub fn render_word_image(
    text: &str,
    seed: u64,
    augment: &Augment,
    height: usize,
    width: usize,
) -> Result<LabeledImage> {
    let glyphs = text
        .chars()
        .map(|c| font::glyph(c).ok_or_else(|| Error::Render(format!("no glyph for {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if glyphs.is_empty() {
        return Err(Error::Render("cannot render an empty word".into()));
    }
    let scale = glyph_scale(height);
    if GLYPH_HEIGHT * scale > height {
        return Err(Error::Render(format!("canvas height {height} below glyph height")));
    }
    let n = glyphs.len();
    let min_width = n * GLYPH_WIDTH * scale + (n - 1) * LETTER_GAP;
    if min_width > width {
        return Err(Error::Render(format!(
            "{text:?} needs {min_width} pixels but the canvas is {width} wide"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaps: Vec<usize> = (1..n)
        .map(|_| LETTER_GAP + rng.random_range(0..=augment.spacing_jitter))
        .collect();
    let mut text_width = n * GLYPH_WIDTH * scale + gaps.iter().sum::<usize>();
    if text_width > width {
        gaps.iter_mut().for_each(|g| *g = LETTER_GAP);
        text_width = min_width;
    }
    let slack = width - text_width;
    let x0 = rng.random_range(0..=augment.x_jitter.min(slack));
    let y0 = (height - GLYPH_HEIGHT * scale) / 2;

    let mut pixels = vec![0.0; height * width];
    let mut x = x0;
    for (i, rows) in glyphs.iter().enumerate() {
        for r in 0..GLYPH_HEIGHT {
            for c in 0..GLYPH_WIDTH {
                if !font::is_ink(rows, r, c) {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        pixels[(y0 + r * scale + dy) * width + x + c * scale + dx] = 1.0;
                    }
                }
            }
        }
        x += GLYPH_WIDTH * scale + gaps.get(i).copied().unwrap_or(0);
    }

    if augment.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, augment.noise_sigma)
            .map_err(|e| Error::Render(format!("bad noise sigma: {e}")))?;
        for p in &mut pixels {
            *p = (*p + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    Ok(LabeledImage {
        height,
        width,
        pixels,
        transcript: text.to_string(),
    })
}
