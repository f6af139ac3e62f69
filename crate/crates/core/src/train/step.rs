use super::loss::smoothed_kl_loss;
use super::optim::{adadelta_step, OptimizerState};
use crate::autodiff::Tensor;
use crate::data::{make_reversed_target, LabeledImage, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Direction, Model};

/// Images stacked as `[B, H, W]` with their encoded transcripts.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub targets: Vec<TokenSequence>,
}

impl Batch {
    pub fn from_items(items: &[&LabeledImage], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("a batch needs at least one image".into()))?;
        let (h, w) = (first.height, first.width);
        let mut pixels = Vec::with_capacity(items.len() * h * w);
        let mut targets = Vec::with_capacity(items.len());
        for item in items {
            if (item.height, item.width) != (h, w) {
                return Err(Error::Shape("images in a batch must share dimensions".into()));
            }
            pixels.extend_from_slice(&item.pixels);
            targets.push(vocab.encode_label(&item.transcript, max_len)?);
        }
        Ok(Batch {
            images: Tensor::new(&[items.len(), h, w], pixels)?,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Teacher-forcing inputs and targets for one direction, padded to the
/// longest sequence in the batch.
pub fn teacher_forcing(targets: &[TokenSequence], direction: Direction, pad: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let seqs: Vec<TokenSequence> = targets
        .iter()
        .map(|t| match direction {
            Direction::LeftToRight => t.clone(),
            Direction::RightToLeft => make_reversed_target(t),
        })
        .collect();
    let l = seqs.iter().map(|s| s.len() + 1).max().unwrap_or(0);
    let mut inputs = Vec::with_capacity(seqs.len());
    let mut flat_targets = Vec::with_capacity(seqs.len() * l);
    for s in &seqs {
        let mut input = s.decoder_input().to_vec();
        input.resize(l, pad);
        inputs.push(input);
        let start = flat_targets.len();
        flat_targets.extend_from_slice(s.decoder_target());
        flat_targets.resize(start + l, pad);
    }
    (inputs, flat_targets)
}

/// Loss of one teacher-forced direction pass over an encoded batch.
pub fn direction_loss(
    model: &Model,
    memory: &Tensor,
    targets: &[TokenSequence],
    direction: Direction,
    label_smoothing: f64,
) -> Result<Tensor> {
    let pad = model.vocab().pad();
    let (inputs, flat) = teacher_forcing(targets, direction, pad);
    let out = model.decode(&inputs, memory, direction)?;
    smoothed_kl_loss(&out.logits, &flat, label_smoothing, pad)
}

/// Clears gradients, encodes the batch once, then runs forward and
/// backward for each direction in turn so the gradients add up on the
/// parameters. Returns the loss of each pass.
pub fn compute_gradients(
    model: &Model,
    batch: &Batch,
    directions: &[Direction],
    label_smoothing: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    model.params().zero_grad();
    let memory = model.encode_images(&batch.images)?;
    let mut losses = Vec::with_capacity(directions.len());
    for &dir in directions {
        let loss = direction_loss(model, &memory, &batch.targets, dir, label_smoothing)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::Diverged(format!("{dir} loss is {value}")));
        }
        loss.backward()?;
        losses.push(value);
    }
    Ok(losses)
}

/// Per-direction losses of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub ltr: f64,
    /// `None` for a single-direction model.
    pub rtl: Option<f64>,
}

impl StepLosses {
    /// Mean over the directions trained.
    pub fn mean(&self) -> f64 {
        match self.rtl {
            Some(r) => (self.ltr + r) / 2.0,
            None => self.ltr,
        }
    }
}

/// Directions a model can be trained on.
pub fn model_directions(model: &Model) -> &'static [Direction] {
    if model.config().bidirectional {
        &Direction::BOTH
    } else {
        &Direction::BOTH[..1]
    }
}

/// Accumulates the left-to-right and right-to-left gradients on the one
/// shared parameter set, then applies a single optimizer update.
pub fn bidirectional_train_step(
    model: &mut Model,
    state: &mut OptimizerState,
    batch: &Batch,
    label_smoothing: f64,
    lr_factor: f64,
) -> Result<StepLosses> {
    let losses = compute_gradients(model, batch, model_directions(model), label_smoothing)?;
    let updated = adadelta_step(model.params(), state, lr_factor)?;
    model.set_params(updated)?;
    Ok(StepLosses {
        ltr: losses[0],
        rtl: losses.get(1).copied(),
    })
}
