//! The recognizer: convolutional column features, a transformer encoder,
//! and one decoder shared by both reading directions.

mod config;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{ConvLayerSpec, FeatureGeometry, ModelConfig, CONV_KERNEL, CONV_PADDING};
pub use params::{count_parameters, init_parameters, param_specs, Init, ParamSpec, ParameterCounts, Parameters};

use crate::autodiff::Tensor;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{
    decoder_layer, encoder_layer, positional_encoding, AttentionParams, DecoderLayerParams,
    EncoderLayerParams, FeedForwardParams, LayerNormParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "ltr")]
    LeftToRight,
    #[serde(rename = "rtl")]
    RightToLeft,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::LeftToRight, Direction::RightToLeft];

    pub fn embedding_name(self) -> &'static str {
        match self {
            Direction::LeftToRight => "embed.direction.ltr",
            Direction::RightToLeft => "embed.direction.rtl",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeftToRight => "ltr",
            Direction::RightToLeft => "rtl",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ltr" => Ok(Direction::LeftToRight),
            "rtl" => Ok(Direction::RightToLeft),
            other => Err(Error::Config(format!("unknown direction {other:?}; expected ltr or rtl"))),
        }
    }
}

/// Decoder logits with the attention weights of every layer.
pub struct DecoderOutput {
    /// `[B, L, V]`.
    pub logits: Tensor,
    /// Per layer, `[B, h, L, L]`.
    pub self_attention: Vec<Tensor>,
    /// Per layer, `[B, h, L, W′]`.
    pub cross_attention: Vec<Tensor>,
}

/// Configuration, vocabulary and parameters of one recognizer.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    vocab: Vocabulary,
    params: Parameters,
    encoder_pe: Tensor,
    decoder_pe: Tensor,
}

impl Model {
    pub fn new(config: ModelConfig, params: Parameters) -> Result<Self> {
        params.check_against(&config)?;
        let vocab = config.vocab()?;
        let encoder_pe = positional_encoding(config.feature_len()?, config.d_model)?;
        let decoder_pe = positional_encoding(config.max_decoder_positions(), config.d_model)?;
        Ok(Model {
            config,
            vocab,
            params,
            encoder_pe,
            decoder_pe,
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_parameters(&config, seed)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Replaces the parameters after checking them against the config.
    pub fn set_params(&mut self, params: Parameters) -> Result<()> {
        params.check_against(&self.config)?;
        self.params = params;
        Ok(())
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    fn p(&self, name: &str) -> Tensor {
        // names are validated in `new`
        self.params.get(name).expect("parameter checked at construction").clone()
    }

    fn attention(&self, prefix: &str) -> AttentionParams {
        AttentionParams {
            wq: self.p(&format!("{prefix}.wq")),
            wk: self.p(&format!("{prefix}.wk")),
            wv: self.p(&format!("{prefix}.wv")),
            wo: self.p(&format!("{prefix}.wo")),
            heads: self.config.heads,
        }
    }

    fn norm(&self, prefix: &str) -> LayerNormParams {
        LayerNormParams {
            scale: self.p(&format!("{prefix}.scale")),
            shift: self.p(&format!("{prefix}.shift")),
        }
    }

    fn ff(&self, prefix: &str) -> FeedForwardParams {
        FeedForwardParams {
            w1: self.p(&format!("{prefix}.w1")),
            b1: self.p(&format!("{prefix}.b1")),
            w2: self.p(&format!("{prefix}.w2")),
            b2: self.p(&format!("{prefix}.b2")),
        }
    }

    pub fn encoder_layer_params(&self, i: usize) -> EncoderLayerParams {
        let p = format!("encoder.layer{i}");
        EncoderLayerParams {
            attn: self.attention(&format!("{p}.attn")),
            ln1: self.norm(&format!("{p}.ln1")),
            ff: self.ff(&format!("{p}.ff")),
            ln2: self.norm(&format!("{p}.ln2")),
        }
    }

    pub fn decoder_layer_params(&self, i: usize) -> DecoderLayerParams {
        let p = format!("decoder.layer{i}");
        DecoderLayerParams {
            self_attn: self.attention(&format!("{p}.self_attn")),
            ln1: self.norm(&format!("{p}.ln1")),
            cross_attn: self.attention(&format!("{p}.cross_attn")),
            ln2: self.norm(&format!("{p}.ln2")),
            ff: self.ff(&format!("{p}.ff")),
            ln3: self.norm(&format!("{p}.ln3")),
        }
    }

    /// `[B, H, W]` (or `[B, H, W, 1]`) normalized pixels to `[B, W′, d]`.
    pub fn extract_visual_features(&self, images: &Tensor) -> Result<Tensor> {
        let (h, w) = (self.config.image_height, self.config.image_width);
        let s = images.shape();
        let ok = match s.len() {
            3 => s[1] == h && s[2] == w,
            4 => s[1] == h && s[2] == w && s[3] == 1,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "expected images of shape [B, {h}, {w}], got {s:?}"
            )));
        }
        let mut x = images.reshape(&[s[0], h, w, 1])?;
        for (i, layer) in self.config.backbone.iter().enumerate() {
            let weight = self.p(&format!("backbone.conv{i}.weight"));
            let bias = self.p(&format!("backbone.conv{i}.bias"));
            let stride = (layer.stride[0], layer.stride[1]);
            x = x.conv2d(&weight, &bias, stride, (CONV_PADDING, CONV_PADDING))?.relu();
        }
        // [B, H′, W′, C] → [B, W′, C]
        let x = if x.shape()[1] == 1 {
            let sh = x.shape();
            x.reshape(&[sh[0], sh[2], sh[3]])?
        } else {
            x.mean_axis(1)?
        };
        x.matmul(&self.p("backbone.proj.weight"))?
            .add(&self.p("backbone.proj.bias"))
    }

    /// Encoder memory `[B, W′, d]` from visual features.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut x = if self.config.encoder_positional_encoding {
            features.add(&self.encoder_pe)?
        } else {
            features.clone()
        };
        for i in 0..self.config.n_layers {
            x = encoder_layer(&x, &self.encoder_layer_params(i))?;
        }
        Ok(x)
    }

    pub fn encode_images(&self, images: &Tensor) -> Result<Tensor> {
        self.encode(&self.extract_visual_features(images)?)
    }

    /// `tokemb(y_i) + PE(i) + dir` for a batch of equal-length id rows.
    pub fn embed_decoder_inputs(&self, tokens: &[Vec<usize>], direction: Direction) -> Result<Tensor> {
        let (b, l) = self.check_tokens(tokens)?;
        let ids: Vec<usize> = tokens.iter().flatten().copied().collect();
        let d = self.config.d_model;
        let dir = self.params.get(direction.embedding_name()).map_err(|_| {
            Error::Config(format!("model has no {direction} direction embedding"))
        })?;
        let pe = self.decoder_pe.gather_rows(&(0..l).collect::<Vec<_>>())?;
        self.p("embed.tokens")
            .gather_rows(&ids)?
            .reshape(&[b, l, d])?
            .add(&pe)?
            .add(dir)
    }

    fn check_tokens(&self, tokens: &[Vec<usize>]) -> Result<(usize, usize)> {
        let b = tokens.len();
        let l = tokens.first().map_or(0, Vec::len);
        if b == 0 || l == 0 {
            return Err(Error::Shape("decoder needs a non-empty token batch".into()));
        }
        if tokens.iter().any(|t| t.len() != l) {
            return Err(Error::Shape("token rows in a batch must have equal length".into()));
        }
        if l > self.config.max_decoder_positions() {
            return Err(Error::Length(format!(
                "{l} decoder positions exceed the table of {}",
                self.config.max_decoder_positions()
            )));
        }
        let v = self.vocab.len();
        if let Some(&bad) = tokens.iter().flatten().find(|&&id| id >= v) {
            return Err(Error::Codec(format!("token id {bad} outside vocabulary of {v}")));
        }
        Ok((b, l))
    }

    /// Teacher-forced decoder pass over `tokens` (`[B][L]`) attending to
    /// `memory` (`[B, W′, d]`).
    pub fn decode(&self, tokens: &[Vec<usize>], memory: &Tensor, direction: Direction) -> Result<DecoderOutput> {
        let mut y = self.embed_decoder_inputs(tokens, direction)?;
        if memory.rank() != 3 || memory.shape()[0] != tokens.len() || memory.shape()[2] != self.config.d_model {
            return Err(Error::Shape(format!(
                "memory shape {:?} does not match a batch of {}",
                memory.shape(),
                tokens.len()
            )));
        }
        let mut self_attention = Vec::with_capacity(self.config.n_layers);
        let mut cross_attention = Vec::with_capacity(self.config.n_layers);
        for i in 0..self.config.n_layers {
            let out = decoder_layer(&y, memory, &self.decoder_layer_params(i))?;
            y = out.hidden;
            self_attention.push(out.self_weights);
            cross_attention.push(out.cross_weights);
        }
        let logits = y.matmul(&self.p("head.weight"))?.add(&self.p("head.bias"))?;
        Ok(DecoderOutput {
            logits,
            self_attention,
            cross_attention,
        })
    }

    /// Parameter names reachable from `value` through the autodiff graph.
    pub fn touched_parameters(&self, value: &Tensor) -> Vec<String> {
        let mut names: Vec<String> = value
            .trainable_leaves()
            .iter()
            .filter_map(|t| self.params.name_of(t).map(str::to_string))
            .collect();
        names.sort();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            image_height: 4,
            image_width: 8,
            max_decode_len: 4,
            charset: Some("abc".into()),
            backbone: vec![ConvLayerSpec { channels: 3, stride: [2, 2] }],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn direction_names_round_trip() {
        for d in Direction::BOTH {
            assert_eq!(d.as_str().parse::<Direction>().unwrap(), d);
        }
        assert!("up".parse::<Direction>().is_err());
    }

    #[test]
    fn shapes_through_the_model() {
        let m = Model::init(micro(), 1).unwrap();
        let images = Tensor::zeros(&[2, 4, 8]).unwrap();
        let f = m.extract_visual_features(&images).unwrap();
        assert_eq!(f.shape(), &[2, 4, 8]);
        let mem = m.encode(&f).unwrap();
        assert_eq!(mem.shape(), &[2, 4, 8]);
        let toks = vec![vec![3, 0, 1], vec![3, 2, 2]];
        let out = m.decode(&toks, &mem, Direction::LeftToRight).unwrap();
        assert_eq!(out.logits.shape(), &[2, 3, 6]);
        assert_eq!(out.cross_attention[0].shape(), &[2, 2, 3, 4]);
        assert_eq!(out.self_attention[0].shape(), &[2, 2, 3, 3]);
    }

    #[test]
    fn bad_inputs() {
        let m = Model::init(micro(), 1).unwrap();
        assert!(matches!(
            m.extract_visual_features(&Tensor::zeros(&[1, 4, 9]).unwrap()),
            Err(Error::Shape(_))
        ));
        let mem = Tensor::zeros(&[1, 4, 8]).unwrap();
        assert!(matches!(
            m.decode(&[vec![3, 9]], &mem, Direction::LeftToRight),
            Err(Error::Codec(_))
        ));
        assert!(matches!(
            m.decode(&[vec![3; 6]], &mem, Direction::LeftToRight),
            Err(Error::Length(_))
        ));
    }
}
