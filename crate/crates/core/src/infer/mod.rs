//! Greedy decoding, bidirectional selection, lexicon mapping, accuracy
//! reports and attention analysis.

mod attention;
mod decode;
mod metrics;

pub use attention::{
    attention_direction_score, extract_attention, AttentionExtraction, AttentionKind, AttentionMap,
    DirectionScore,
};
pub use decode::{
    bidirectional_predict, greedy_decode, predict, predict_items, predict_with, select_prediction, sequence_probability,
    Candidate, DecodeMode, Decoded, ModelScorer, PredictionResult, StepScorer,
};
pub use metrics::{
    edit_distance, evaluate_accuracy, lexicon_predict, normalize_transcript, AccuracyReport, Tally,
};
