use std::fmt::Write as _;

use serde::Serialize;

use super::decode::{greedy_decode, Decoded, ModelScorer};
use crate::autodiff::{no_grad, Tensor};
use crate::data::pgm;
use crate::error::{Error, Result};
use crate::model::{Direction, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    DecoderSelf,
    DecoderCross,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::DecoderSelf => "self",
            AttentionKind::DecoderCross => "cross",
        }
    }
}

/// Row-stochastic `[rows × cols]` weights of one layer and head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub kind: AttentionKind,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    /// Grayscale heatmap, each cell `scale × scale` pixels, brightest at the
    /// map maximum.
    pub fn to_pgm(&self, scale: usize) -> Vec<u8> {
        let scale = scale.max(1);
        let max = self.weights.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let (w, h) = (self.cols * scale, self.rows * scale);
        let mut px = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let v = self.weights[(y / scale) * self.cols + x / scale] / max;
                px[y * w + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        pgm::encode(w, h, &px)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v:.6e}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Mean over heads of maps sharing layer, kind and size.
    pub fn head_average(maps: &[&AttentionMap]) -> Result<AttentionMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Contract("no attention maps to average".into()))?;
        if maps.iter().any(|m| (m.rows, m.cols) != (first.rows, first.cols)) {
            return Err(Error::Shape("attention maps differ in size".into()));
        }
        let mut weights = vec![0.0; first.weights.len()];
        for m in maps {
            for (a, b) in weights.iter_mut().zip(&m.weights) {
                *a += b;
            }
        }
        let n = maps.len() as f64;
        weights.iter_mut().for_each(|w| *w /= n);
        Ok(AttentionMap {
            head: 0,
            weights,
            ..(*first).clone()
        })
    }
}

/// Greedy output for one image with the attention of every layer and head.
#[derive(Clone, Debug)]
pub struct AttentionExtraction {
    pub direction: Direction,
    pub decoded: Decoded,
    /// Self maps of all layers and heads, then cross maps.
    pub maps: Vec<AttentionMap>,
}

impl AttentionExtraction {
    pub fn cross_maps(&self, layer: usize) -> Vec<&AttentionMap> {
        self.maps
            .iter()
            .filter(|m| m.kind == AttentionKind::DecoderCross && m.layer == layer)
            .collect()
    }

    /// Head-averaged cross-attention of `layer`, restricted to the rows of
    /// steps that emitted a character.
    pub fn character_cross_map(&self, layer: usize) -> Result<AttentionMap> {
        let avg = AttentionMap::head_average(&self.cross_maps(layer))?;
        let rows = self.decoded.tokens.chars().len().min(avg.rows);
        Ok(AttentionMap {
            rows,
            weights: avg.weights[..rows * avg.cols].to_vec(),
            ..avg
        })
    }

    /// Direction score of [`Self::character_cross_map`].
    pub fn direction_score(&self, layer: usize) -> Result<DirectionScore> {
        attention_direction_score(&self.character_cross_map(layer)?)
    }
}

fn split_maps(weights: &Tensor, layer: usize, kind: AttentionKind) -> Vec<AttentionMap> {
    // [1, h, L, K]
    let s = weights.shape();
    let (heads, rows, cols) = (s[1], s[2], s[3]);
    (0..heads)
        .map(|head| AttentionMap {
            layer,
            head,
            kind,
            rows,
            cols,
            weights: weights.data()[head * rows * cols..(head + 1) * rows * cols].to_vec(),
        })
        .collect()
}

/// Decodes a single `[H, W]` image, then re-runs the decoder on the
/// decoded steps (`SOS` plus each emitted character) to collect attention.
/// Map row `t` belongs to the step that emitted token `t + 1`.
pub fn extract_attention(model: &Model, image: &Tensor, direction: Direction) -> Result<AttentionExtraction> {
    let (h, w) = (model.config().image_height, model.config().image_width);
    let images = image.reshape(&[1, h, w])?;
    no_grad(|| {
        let memory = model.encode_images(&images)?;
        let scorer = ModelScorer::new(model, memory.clone(), direction);
        let decoded = greedy_decode(&scorer, 1, model.config().max_decode_len)?
            .pop()
            .expect("one item decoded");
        let steps = decoded.step_probs.len();
        let inputs = vec![decoded.tokens.ids()[..steps].to_vec()];
        let out = model.decode(&inputs, &memory, direction)?;
        let mut maps = Vec::new();
        for (layer, t) in out.self_attention.iter().enumerate() {
            maps.extend(split_maps(t, layer, AttentionKind::DecoderSelf));
        }
        for (layer, t) in out.cross_attention.iter().enumerate() {
            maps.extend(split_maps(t, layer, AttentionKind::DecoderCross));
        }
        Ok(AttentionExtraction {
            direction,
            decoded,
            maps,
        })
    })
}

/// Pearson correlation between step index and attention center of mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionScore {
    pub r: f64,
    /// Set when the centers of mass do not vary; `r` is then 0.
    pub degenerate: bool,
}

/// Correlates `t` with `μ_t = Σ_j j·α_t[j]` over the rows of `map`.
pub fn attention_direction_score(map: &AttentionMap) -> Result<DirectionScore> {
    if map.rows < 3 {
        return Err(Error::Contract(format!(
            "direction score needs at least 3 steps, got {}",
            map.rows
        )));
    }
    let mu: Vec<f64> = (0..map.rows)
        .map(|t| map.row(t).iter().enumerate().map(|(j, a)| j as f64 * a).sum())
        .collect();
    let n = map.rows as f64;
    let t_mean = (n - 1.0) / 2.0;
    let mu_mean = mu.iter().sum::<f64>() / n;
    let (mut cov, mut vt, mut vm) = (0.0, 0.0, 0.0);
    for (t, m) in mu.iter().enumerate() {
        let dt = t as f64 - t_mean;
        let dm = m - mu_mean;
        cov += dt * dm;
        vt += dt * dt;
        vm += dm * dm;
    }
    if vm <= 1e-12 * n {
        return Ok(DirectionScore { r: 0.0, degenerate: true });
    }
    Ok(DirectionScore {
        r: cov / (vt * vm).sqrt(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> AttentionMap {
        AttentionMap {
            layer: 0,
            head: 0,
            kind: AttentionKind::DecoderCross,
            rows,
            cols,
            weights: (0..rows * cols).map(|i| f(i / cols, i % cols)).collect(),
        }
    }

    #[test]
    fn monotone_maps() {
        let fwd = map(5, 5, |t, j| f64::from(u8::from(j == t)));
        let s = attention_direction_score(&fwd).unwrap();
        assert!((s.r - 1.0).abs() < 1e-12 && !s.degenerate);
        let back = map(5, 5, |t, j| f64::from(u8::from(j == 4 - t)));
        assert!((attention_direction_score(&back).unwrap().r + 1.0).abs() < 1e-12);
        let uniform = map(4, 6, |_, _| 1.0 / 6.0);
        let s = attention_direction_score(&uniform).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.r, 0.0);
        assert!(attention_direction_score(&map(2, 3, |_, _| 1.0 / 3.0)).is_err());
    }

    #[test]
    fn exports() {
        let m = map(2, 2, |t, j| if t == j { 0.75 } else { 0.25 });
        assert_eq!(m.to_csv(), "7.500000e-1,2.500000e-1\n2.500000e-1,7.500000e-1\n");
        let pgm = m.to_pgm(2);
        let (w, h, px) = pgm::decode(&pgm).unwrap();
        assert_eq!((w, h), (4, 4));
        assert_eq!(px[0], 255);
        assert_eq!(px[2], 85);
    }
}
