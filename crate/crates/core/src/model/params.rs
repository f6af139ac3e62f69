use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, CONV_KERNEL};
use super::Direction;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±√(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

impl Init {
    pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    }
}

fn matrix(name: String, rows: usize, cols: usize) -> ParamSpec {
    spec(name, &[rows, cols], Init::Xavier { fan_in: rows, fan_out: cols })
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push(matrix(format!("{prefix}.{w}"), d, d));
    }
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(spec(format!("{prefix}.scale"), &[d], Init::Ones));
    out.push(spec(format!("{prefix}.shift"), &[d], Init::Zeros));
}

fn ff_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, d_ff: usize) {
    out.push(matrix(format!("{prefix}.w1"), d, d_ff));
    out.push(spec(format!("{prefix}.b1"), &[d_ff], Init::Zeros));
    out.push(matrix(format!("{prefix}.w2"), d_ff, d));
    out.push(spec(format!("{prefix}.b2"), &[d], Init::Zeros));
}

/// Every trainable tensor of the architecture, in initialization order.
pub fn param_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let d = config.d_model;
    let v = config.vocab_size()?;
    let mut out = Vec::new();

    let mut c_in = 1;
    for (i, layer) in config.backbone.iter().enumerate() {
        let k2 = CONV_KERNEL * CONV_KERNEL;
        out.push(spec(
            format!("backbone.conv{i}.weight"),
            &[CONV_KERNEL, CONV_KERNEL, c_in, layer.channels],
            Init::Xavier {
                fan_in: k2 * c_in,
                fan_out: k2 * layer.channels,
            },
        ));
        out.push(spec(format!("backbone.conv{i}.bias"), &[layer.channels], Init::Zeros));
        c_in = layer.channels;
    }
    out.push(matrix("backbone.proj.weight".into(), c_in, d));
    out.push(spec("backbone.proj.bias".into(), &[d], Init::Zeros));

    for i in 0..config.n_layers {
        let p = format!("encoder.layer{i}");
        attention_specs(&mut out, &format!("{p}.attn"), d);
        norm_specs(&mut out, &format!("{p}.ln1"), d);
        ff_specs(&mut out, &format!("{p}.ff"), d, config.d_ff);
        norm_specs(&mut out, &format!("{p}.ln2"), d);
    }
    for i in 0..config.n_layers {
        let p = format!("decoder.layer{i}");
        attention_specs(&mut out, &format!("{p}.self_attn"), d);
        norm_specs(&mut out, &format!("{p}.ln1"), d);
        attention_specs(&mut out, &format!("{p}.cross_attn"), d);
        norm_specs(&mut out, &format!("{p}.ln2"), d);
        ff_specs(&mut out, &format!("{p}.ff"), d, config.d_ff);
        norm_specs(&mut out, &format!("{p}.ln3"), d);
    }

    out.push(matrix("embed.tokens".into(), v, d));
    let directions: &[Direction] = if config.bidirectional {
        &[Direction::LeftToRight, Direction::RightToLeft]
    } else {
        &[Direction::LeftToRight]
    };
    for dir in directions {
        out.push(spec(
            dir.embedding_name().into(),
            &[d],
            Init::Xavier { fan_in: 1, fan_out: d },
        ));
    }

    out.push(matrix("head.weight".into(), d, v));
    out.push(spec("head.bias".into(), &[v], Init::Zeros));
    Ok(out)
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct Parameters {
    map: BTreeMap<String, Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Parameters::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.map.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Load(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.map.values().for_each(Tensor::zero_grad);
    }

    /// Name of the parameter whose storage is `tensor`, if any.
    pub fn name_of(&self, tensor: &Tensor) -> Option<&str> {
        self.map
            .iter()
            .find(|(_, t)| t.id() == tensor.id())
            .map(|(k, _)| k.as_str())
    }

    /// Checks names and shapes against the architecture.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config)?;
        for s in &specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Load(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::Load(format!("parameter {} is not finite", s.name)));
            }
        }
        if specs.len() != self.map.len() {
            let extra = self
                .names()
                .find(|n| !specs.iter().any(|s| s.name == *n))
                .unwrap_or_default();
            return Err(Error::Load(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

/// Xavier-uniform weights, zero biases and shifts, unit scales.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<Parameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    for s in param_specs(config)? {
        let n: usize = s.shape.iter().product();
        let data = match s.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier { fan_in, fan_out } => {
                let a = Init::xavier_bound(fan_in, fan_out);
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            }
        };
        params.insert(s.name, Tensor::param(&s.shape, data)?);
    }
    Ok(params)
}

/// Trainable scalars per component, in closed form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCounts {
    pub backbone: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub embeddings: usize,
    pub head: usize,
}

impl ParameterCounts {
    pub fn total(&self) -> usize {
        self.backbone + self.encoder + self.decoder + self.embeddings + self.head
    }

    /// `(component, count)` rows, total excluded.
    pub fn rows(&self) -> [(&'static str, usize); 5] {
        [
            ("backbone", self.backbone),
            ("encoder", self.encoder),
            ("decoder", self.decoder),
            ("embeddings", self.embeddings),
            ("head", self.head),
        ]
    }
}

pub fn count_parameters(config: &ModelConfig) -> Result<ParameterCounts> {
    config.validate()?;
    let d = config.d_model;
    let v = config.vocab_size()?;
    let mut backbone = 0;
    let mut c_in = 1;
    for layer in &config.backbone {
        backbone += CONV_KERNEL * CONV_KERNEL * c_in * layer.channels + layer.channels;
        c_in = layer.channels;
    }
    backbone += c_in * d + d;

    let attention = 4 * d * d;
    let norm = 2 * d;
    let ff = 2 * d * config.d_ff + config.d_ff + d;
    let directions = if config.bidirectional { 2 } else { 1 };
    Ok(ParameterCounts {
        backbone,
        encoder: config.n_layers * (attention + ff + 2 * norm),
        decoder: config.n_layers * (2 * attention + ff + 3 * norm),
        embeddings: v * d + directions * d,
        head: d * v + v,
    })
}
