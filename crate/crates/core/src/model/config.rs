use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};

/// One 3×3 convolution of the backbone (padding 1, followed by relu).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub channels: usize,
    /// `[vertical, horizontal]`.
    pub stride: [usize; 2],
}

pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Longest transcript the decoder emits, EOS excluded.
    pub max_decode_len: usize,
    pub include_punctuation: bool,
    /// Explicit character set overriding the letters/digits default.
    pub charset: Option<String>,
    pub backbone: Vec<ConvLayerSpec>,
    /// When false only the left-to-right direction embedding exists.
    pub bidirectional: bool,
    /// Add sinusoidal positions to the encoder input.
    pub encoder_positional_encoding: bool,
    /// Reserved; only 0 is accepted.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            image_height: 16,
            image_width: 96,
            max_decode_len: 12,
            include_punctuation: false,
            charset: None,
            backbone: vec![
                ConvLayerSpec { channels: 16, stride: [2, 2] },
                ConvLayerSpec { channels: 32, stride: [2, 2] },
                ConvLayerSpec { channels: 64, stride: [2, 1] },
                ConvLayerSpec { channels: 64, stride: [2, 1] },
            ],
            bidirectional: true,
            encoder_positional_encoding: true,
            dropout: 0.0,
        }
    }
}

/// Spatial extent and channel count of the last backbone activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

fn conv_out(size: usize, stride: usize) -> usize {
    (size + 2 * CONV_PADDING - CONV_KERNEL) / stride + 1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model {} must be even", self.d_model));
        }
        if self.d_ff == 0 {
            return fail("d_ff must be positive".into());
        }
        if self.max_decode_len == 0 {
            return fail("max_decode_len must be at least 1".into());
        }
        if self.dropout != 0.0 {
            return fail(format!("dropout {} is not supported; use 0", self.dropout));
        }
        if self.backbone.is_empty() {
            return fail("backbone needs at least one convolution".into());
        }
        if let Some(cs) = &self.charset {
            Vocabulary::from_chars(cs)?;
        }
        self.feature_geometry().map(|_| ())
    }

    /// Walks the backbone; each horizontal stride must divide the width.
    pub fn feature_geometry(&self) -> Result<FeatureGeometry> {
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        let (mut h, mut w) = (self.image_height, self.image_width);
        for (i, layer) in self.backbone.iter().enumerate() {
            let [sh, sw] = layer.stride;
            if sh == 0 || sw == 0 || layer.channels == 0 {
                return Err(Error::Config(format!("backbone layer {i} has a zero stride or width")));
            }
            if w % sw != 0 {
                return Err(Error::Config(format!(
                    "backbone layer {i}: width {w} is not divisible by stride {sw}"
                )));
            }
            h = conv_out(h, sh);
            w = conv_out(w, sw);
        }
        Ok(FeatureGeometry {
            height: h,
            width: w,
            channels: self.backbone.last().map_or(1, |l| l.channels),
        })
    }

    /// Length W′ of the visual feature sequence.
    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.feature_geometry()?.width)
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        match &self.charset {
            Some(cs) => Vocabulary::from_chars(cs),
            None => Ok(Vocabulary::new(self.include_punctuation)),
        }
    }

    pub fn vocab_size(&self) -> Result<usize> {
        Ok(self.vocab()?.len())
    }

    /// Decoder sequences are `[SOS, y_1 … y_L]`.
    pub fn max_decoder_positions(&self) -> usize {
        self.max_decode_len + 1
    }
}
