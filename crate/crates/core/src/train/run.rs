use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{lr_factor, TrainConfig};
use super::optim::OptimizerState;
use super::step::{bidirectional_train_step, Batch, StepLosses};
use crate::autodiff::Tensor;
use crate::data::{mix_seed, Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::infer::{evaluate_accuracy, predict_items, DecodeMode};
use crate::model::{Model, ModelConfig};

pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const FINAL_CHECKPOINT: &str = "final.bst";

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const EVAL_CHUNK: usize = 64;

/// One line of the training log; losses are averaged over the window
/// since the previous line.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lr_factor: f64,
    pub loss_ltr: f64,
    pub loss_rtl: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

impl LogRow {
    pub const HEADER: &'static str = "iteration\tlr_factor\tloss_ltr\tloss_rtl\teval_accuracy";

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{}\t{}\t{:.6}\t{}\t{}",
            self.iteration,
            self.lr_factor,
            self.loss_ltr,
            opt(self.loss_rtl),
            opt(self.eval_accuracy)
        )
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub state: OptimizerState,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Losses of every step, in order.
    pub step_losses: Vec<StepLosses>,
}

/// Stacks items into a `[B, H, W]` tensor.
pub fn stack_images(items: &[&LabeledImage]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::Contract("no images to stack".into()))?;
    let mut px = Vec::with_capacity(items.len() * first.pixels.len());
    for it in items {
        px.extend_from_slice(&it.pixels);
    }
    Tensor::new(&[items.len(), first.height, first.width], px)
}

/// Accuracy of the model's default decoding on up to `limit` items.
pub fn quick_accuracy(model: &Model, data: &Dataset, limit: usize) -> Result<f64> {
    let mode = if model.config().bidirectional { DecodeMode::Bi } else { DecodeMode::Ltr };
    let items: Vec<&LabeledImage> = data.items.iter().take(limit).collect();
    let preds: Vec<String> = predict_items(model, &items, mode, EVAL_CHUNK)?
        .into_iter()
        .map(|p| p.text)
        .collect();
    let truths: Vec<String> = items.iter().map(|i| i.transcript.clone()).collect();
    Ok(evaluate_accuracy(&preds, &truths, None)?.accuracy())
}

/// Trains from a seeded initialization. When `out_dir` is given, the log,
/// periodic checkpoints and `final.bst` are written there.
pub fn run_training(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train: &Dataset,
    eval: Option<&Dataset>,
    out_dir: Option<&Path>,
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if (train.manifest.spec.image_height, train.manifest.spec.image_width)
        != (model_cfg.image_height, model_cfg.image_width)
    {
        return Err(Error::Config("training images do not match the model input size".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut model = Model::init(model_cfg.clone(), train_cfg.seed)?;
    let mut state = OptimizerState::new(train_cfg.optimizer, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch_size = train_cfg.batch_size.min(train.len());
    let max_len = model_cfg.max_decode_len;

    let mut log = Vec::new();
    let mut log_text = format!("{}\n", LogRow::HEADER);
    let mut step_losses = Vec::with_capacity(train_cfg.total_iterations);
    let mut window: Vec<StepLosses> = Vec::new();

    for it in 0..train_cfg.total_iterations {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let items: Vec<&LabeledImage> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| &train.items[i])
            .collect();
        cursor += batch_size;
        let batch = Batch::from_items(&items, model.vocab(), max_len)?;
        let factor = lr_factor(it, train_cfg);
        let losses = bidirectional_train_step(&mut model, &mut state, &batch, train_cfg.label_smoothing, factor)
            .map_err(|e| match e {
                Error::Diverged(m) | Error::Numeric(m) => Error::Diverged(format!("iteration {it}: {m}")),
                other => other,
            })?;
        step_losses.push(losses);
        window.push(losses);

        let done = it + 1;
        if done % train_cfg.eval_every == 0 || done == train_cfg.total_iterations {
            let eval_accuracy = match eval {
                Some(data) if train_cfg.eval_samples > 0 => Some(quick_accuracy(&model, data, train_cfg.eval_samples)?),
                _ => None,
            };
            let n = window.len() as f64;
            let row = LogRow {
                iteration: done,
                lr_factor: factor,
                loss_ltr: window.iter().map(|l| l.ltr).sum::<f64>() / n,
                loss_rtl: window
                    .iter()
                    .map(|l| l.rtl)
                    .sum::<Option<f64>>()
                    .map(|s| s / n),
                eval_accuracy,
            };
            window.clear();
            on_log(&row);
            let _ = writeln!(log_text, "{}", row.to_tsv());
            log.push(row);
            if let Some(dir) = out_dir {
                let path = dir.join(TRAIN_LOG_FILE);
                fs::write(&path, &log_text).map_err(|e| Error::io(&path, e))?;
            }
        }
        if let Some(dir) = out_dir {
            if train_cfg.checkpoint_every > 0 && done % train_cfg.checkpoint_every == 0 && done != train_cfg.total_iterations {
                let ck = Checkpoint::from_model(&model, done as u64, Some(train.stats), Some(&state));
                save_checkpoint(&dir.join(format!("checkpoint_{done:06}.bst")), &ck)?;
            }
        }
    }

    let checkpoint = Checkpoint::from_model(
        &model,
        train_cfg.total_iterations as u64,
        Some(train.stats),
        Some(&state),
    );
    if let Some(dir) = out_dir {
        let path = dir.join(TRAIN_LOG_FILE);
        fs::write(&path, &log_text).map_err(|e| Error::io(&path, e))?;
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), &checkpoint)?;
    }
    Ok(TrainOutcome {
        model,
        state,
        checkpoint,
        log,
        step_losses,
    })
}
