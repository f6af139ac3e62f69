use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{Lexicon, PUNCTUATION};
use crate::error::{Error, Result};

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Closest lexicon word; the earliest entry wins ties.
pub fn lexicon_predict<'a>(prediction: &str, lexicon: &'a Lexicon) -> &'a str {
    let mut best = (usize::MAX, "");
    for w in lexicon.words() {
        let d = edit_distance(prediction, w);
        if d < best.0 {
            best = (d, w.as_str());
            if d == 0 {
                break;
            }
        }
    }
    best.1
}

/// Lower-cases and strips ASCII punctuation.
pub fn normalize_transcript(text: &str) -> String {
    text.chars()
        .filter(|c| !PUNCTUATION.contains(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub count: usize,
    pub correct: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// Exact-match word accuracy, overall and by ground-truth length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyReport {
    pub overall: Tally,
    pub by_length: BTreeMap<usize, Tally>,
}

impl AccuracyReport {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    /// `length  count  accuracy` with an `all` row first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("length\tcount\taccuracy\n");
        let _ = writeln!(out, "all\t{}\t{:.6}", self.overall.count, self.overall.accuracy());
        for (len, t) in &self.by_length {
            let _ = writeln!(out, "{len}\t{}\t{:.6}", t.count, t.accuracy());
        }
        out
    }
}

/// Compares normalized predictions (mapped through `lexicon` if given)
/// with normalized ground truths. No partial credit.
pub fn evaluate_accuracy(
    predictions: &[String],
    ground_truths: &[String],
    lexicon: Option<&Lexicon>,
) -> Result<AccuracyReport> {
    if predictions.len() != ground_truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let mut report = AccuracyReport::default();
    for (p, g) in predictions.iter().zip(ground_truths) {
        let mut p = normalize_transcript(p);
        if let Some(lex) = lexicon {
            p = normalize_transcript(lexicon_predict(&p, lex));
        }
        let g = normalize_transcript(g);
        let hit = usize::from(p == g);
        let slot = report.by_length.entry(g.chars().count()).or_default();
        slot.count += 1;
        slot.correct += hit;
        report.overall.count += 1;
        report.overall.correct += hit;
    }
    Ok(report)
}
