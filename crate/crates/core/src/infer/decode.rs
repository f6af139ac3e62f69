use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Tensor};
use rayon::prelude::*;

use crate::data::{LabeledImage, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Direction, Model};
use crate::train::stack_images;

/// Supplies next-token logits for a batch of equal-length prefixes.
pub trait StepScorer {
    fn vocab(&self) -> &Vocabulary;

    /// One logit row of length `V` per prefix, for the position after it.
    fn step_logits(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

/// Scores prefixes with a model against a fixed encoder memory.
pub struct ModelScorer<'a> {
    model: &'a Model,
    memory: Tensor,
    direction: Direction,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, memory: Tensor, direction: Direction) -> Self {
        ModelScorer {
            model,
            memory,
            direction,
        }
    }
}

impl StepScorer for ModelScorer<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.model.vocab()
    }

    fn step_logits(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let out = no_grad(|| self.model.decode(prefixes, &self.memory, self.direction))?;
        let v = self.model.vocab().len();
        let l = prefixes[0].len();
        let data = out.logits.data();
        Ok((0..prefixes.len())
            .map(|b| data[(b * l + l - 1) * v..(b * l + l) * v].to_vec())
            .collect())
    }
}

/// Result of greedy decoding for one item, in model order.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// `[SOS, y_1 … y_k, EOS]`; EOS is appended if decoding hit the limit.
    pub tokens: TokenSequence,
    /// Softmax probability of every chosen token, EOS step included when
    /// EOS was chosen.
    pub step_probs: Vec<f64>,
    pub hit_eos: bool,
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Argmax decoding from SOS until EOS or `max_len` characters. Only
/// characters and EOS are candidates; ties go to the lower id. Items that
/// reach the limit stop without an EOS step.
pub fn greedy_decode(scorer: &dyn StepScorer, batch: usize, max_len: usize) -> Result<Vec<Decoded>> {
    let vocab = scorer.vocab();
    let (sos, eos, pad) = (vocab.sos(), vocab.eos(), vocab.pad());
    let mut prefixes = vec![vec![sos]; batch];
    let mut probs = vec![Vec::new(); batch];
    let mut done = vec![false; batch];
    for _ in 0..max_len {
        if done.iter().all(|&d| d) {
            break;
        }
        let rows = scorer.step_logits(&prefixes)?;
        if rows.len() != batch {
            return Err(Error::Shape(format!("scorer returned {} rows for {batch}", rows.len())));
        }
        for (b, row) in rows.iter().enumerate() {
            if done[b] {
                prefixes[b].push(pad);
                continue;
            }
            if row.len() != vocab.len() || row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("invalid logit row for item {b}")));
            }
            let p = softmax(row);
            let mut best = eos;
            for id in 0..vocab.num_chars() {
                if p[id] > p[best] || (p[id] == p[best] && id < best) {
                    best = id;
                }
            }
            probs[b].push(p[best]);
            prefixes[b].push(best);
            if best == eos {
                done[b] = true;
            }
        }
    }
    prefixes
        .into_iter()
        .zip(probs)
        .map(|(mut ids, step_probs)| {
            let hit_eos = ids.contains(&eos);
            ids.retain(|&i| i != pad);
            if !hit_eos {
                ids.push(eos);
            }
            Ok(Decoded {
                tokens: TokenSequence::from_ids(ids, vocab)?,
                step_probs,
                hit_eos,
            })
        })
        .collect()
}

/// Product of step probabilities, accumulated in log space.
pub fn sequence_probability(step_probs: &[f64]) -> Result<f64> {
    if step_probs.is_empty() {
        return Err(Error::Contract("no decoding steps to score".into()));
    }
    if let Some(p) = step_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Contract(format!("step probability {p} outside (0, 1]")));
    }
    Ok(step_probs.iter().map(|p| p.ln()).sum::<f64>().exp())
}

/// Which directions to decode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Ltr,
    Rtl,
    Bi,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ltr" => Ok(DecodeMode::Ltr),
            "rtl" => Ok(DecodeMode::Rtl),
            "bi" => Ok(DecodeMode::Bi),
            other => Err(Error::Config(format!("unknown direction {other:?}; expected ltr, rtl or bi"))),
        }
    }
}

impl DecodeMode {
    pub fn directions(self) -> &'static [Direction] {
        match self {
            DecodeMode::Ltr => &Direction::BOTH[..1],
            DecodeMode::Rtl => &Direction::BOTH[1..],
            DecodeMode::Bi => &Direction::BOTH,
        }
    }
}

/// One directional hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub direction: Direction,
    /// Reading order (RTL output reversed back).
    pub text: String,
    pub decoded: Decoded,
    pub probability: f64,
}

impl Candidate {
    pub fn new(direction: Direction, decoded: Decoded, vocab: &Vocabulary) -> Result<Self> {
        let mut chars: Vec<char> = vocab.decode(decoded.tokens.chars()).chars().collect();
        if direction == Direction::RightToLeft {
            chars.reverse();
        }
        let probability = sequence_probability(&decoded.step_probs)?;
        Ok(Candidate {
            direction,
            text: chars.into_iter().collect(),
            decoded,
            probability,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    pub text: String,
    pub direction: Direction,
    pub step_probs: Vec<f64>,
    pub probability: f64,
    /// Every directional candidate considered, LTR first.
    pub candidates: Vec<Candidate>,
}

/// Keeps the candidate with the larger sequence probability; equal
/// probabilities resolve to the earlier (left-to-right) candidate.
pub fn select_prediction(candidates: Vec<Candidate>) -> Result<PredictionResult> {
    let mut best: Option<&Candidate> = None;
    for c in &candidates {
        if best.is_none_or(|b| c.probability > b.probability) {
            best = Some(c);
        }
    }
    let best = best.ok_or_else(|| Error::Contract("no candidates to select from".into()))?.clone();
    debug_assert!(candidates.iter().all(|c| c.probability <= best.probability));
    Ok(PredictionResult {
        text: best.text,
        direction: best.direction,
        step_probs: best.decoded.step_probs,
        probability: best.probability,
        candidates,
    })
}

/// Decodes with an arbitrary scorer per direction and selects.
pub fn predict_with(
    scorers: &[(Direction, &dyn StepScorer)],
    batch: usize,
    max_len: usize,
) -> Result<Vec<PredictionResult>> {
    let mut per_dir = Vec::with_capacity(scorers.len());
    for (dir, scorer) in scorers {
        let decoded = greedy_decode(*scorer, batch, max_len)?;
        let cands = decoded
            .into_iter()
            .map(|d| Candidate::new(*dir, d, scorer.vocab()))
            .collect::<Result<Vec<_>>>()?;
        per_dir.push(cands.into_iter());
    }
    (0..batch)
        .map(|_| {
            let cands = per_dir
                .iter_mut()
                .map(|it| it.next().expect("one candidate per item"))
                .collect();
            select_prediction(cands)
        })
        .collect()
}

/// Predicts `[B, H, W]` images with the requested directions.
pub fn predict(model: &Model, images: &Tensor, mode: DecodeMode) -> Result<Vec<PredictionResult>> {
    let memory = no_grad(|| model.encode_images(images))?;
    let scorers: Vec<(Direction, ModelScorer)> = mode
        .directions()
        .iter()
        .map(|&d| (d, ModelScorer::new(model, memory.clone(), d)))
        .collect();
    let refs: Vec<(Direction, &dyn StepScorer)> =
        scorers.iter().map(|(d, s)| (*d, s as &dyn StepScorer)).collect();
    predict_with(&refs, images.shape()[0], model.config().max_decode_len)
}

/// Predicts labeled images in chunks of `chunk`, fanned out over the rayon
/// pool. Output order follows `items`.
pub fn predict_items(
    model: &Model,
    items: &[&LabeledImage],
    mode: DecodeMode,
    chunk: usize,
) -> Result<Vec<PredictionResult>> {
    let per_chunk: Vec<Vec<PredictionResult>> = items
        .par_chunks(chunk.max(1))
        .map(|c| predict(model, &stack_images(c)?, mode))
        .collect::<Result<_>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Decodes each image in both directions and keeps the more probable one.
pub fn bidirectional_predict(model: &Model, images: &Tensor) -> Result<Vec<PredictionResult>> {
    predict(model, images, DecodeMode::Bi)
}
