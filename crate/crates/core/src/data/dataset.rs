use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pgm;
use super::render::{render_word_image, Augment, LabeledImage};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

const ENGLISH_WORDS: &str = include_str!("english_words.txt");

/// The bundled list of common English words.
pub fn english_words() -> impl Iterator<Item = &'static str> {
    ENGLISH_WORDS.lines().filter(|l| !l.is_empty())
}

/// Parameters of a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSpec {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub augment: Augment,
    /// Fraction of items drawn from the bundled English word list instead
    /// of uniformly random strings.
    pub english_fraction: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub include_punctuation: bool,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec {
            count: 8000,
            min_len: 1,
            max_len: 8,
            seed: 0,
            augment: Augment::default(),
            english_fraction: 0.25,
            image_height: 16,
            image_width: 96,
            include_punctuation: false,
        }
    }
}

impl GenerateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.english_fraction) {
            return Err(Error::Config("english_fraction must lie in [0, 1]".into()));
        }
        if self.augment.noise_sigma.is_nan() || self.augment.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Dataset-wide pixel statistics over 8-bit-quantized values in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    pub mean: f64,
    pub std: f64,
}

impl PixelStats {
    pub fn identity() -> Self {
        PixelStats { mean: 0.0, std: 1.0 }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: GenerateSpec,
    pub seed: u64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Manifest {
    pub fn stats(&self) -> PixelStats {
        PixelStats {
            mean: self.mean,
            std: self.std,
        }
    }
}

/// A loaded corpus. Pixels are normalized with `stats`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub filenames: Vec<String>,
    pub stats: PixelStats,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_word(rng: &mut ChaCha8Rng, spec: &GenerateSpec, vocab: &Vocabulary, english: &[&str]) -> String {
    if !english.is_empty() && rng.random_bool(spec.english_fraction) {
        return english[rng.random_range(0..english.len())].to_string();
    }
    let len = rng.random_range(spec.min_len..=spec.max_len);
    (0..len)
        .map(|_| vocab.chars()[rng.random_range(0..vocab.num_chars())])
        .collect()
}

/// Renders item `index` of the corpus described by `spec`.
pub fn generate_item(spec: &GenerateSpec, index: usize) -> Result<LabeledImage> {
    let vocab = Vocabulary::new(spec.include_punctuation);
    let english = eligible_english(spec, &vocab);
    generate_item_with(spec, index, &vocab, &english)
}

fn eligible_english(spec: &GenerateSpec, vocab: &Vocabulary) -> Vec<&'static str> {
    english_words()
        .filter(|w| {
            let n = w.chars().count();
            n >= spec.min_len && n <= spec.max_len && w.chars().all(|c| vocab.contains(c))
        })
        .collect()
}

fn generate_item_with(
    spec: &GenerateSpec,
    index: usize,
    vocab: &Vocabulary,
    english: &[&str],
) -> Result<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64));
    let word = sample_word(&mut rng, spec, vocab, english);
    render_word_image(&word, rng.next_u64(), &spec.augment, spec.image_height, spec.image_width)
}

pub fn image_filename(index: usize) -> String {
    format!("img_{index:06}.pgm")
}

/// Writes `labels.tsv`, one P5 PGM per item, and `manifest.json` into
/// `out_dir`. The output bytes depend only on `spec`.
pub fn generate_dataset(spec: &GenerateSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let vocab = Vocabulary::new(spec.include_punctuation);
    let english = eligible_english(spec, &vocab);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let rendered: Vec<(Vec<u8>, String)> = (0..spec.count)
        .into_par_iter()
        .map(|i| generate_item_with(spec, i, &vocab, &english).map(|img| (img.to_bytes(), img.transcript)))
        .collect::<Result<_>>()?;

    let mut labels = String::new();
    for (i, (bytes, text)) in rendered.iter().enumerate() {
        let name = image_filename(i);
        let path = out_dir.join(&name);
        fs::write(&path, pgm::encode(spec.image_width, spec.image_height, bytes))
            .map_err(|e| Error::io(&path, e))?;
        labels.push_str(&name);
        labels.push('\t');
        labels.push_str(text);
        labels.push('\n');
    }
    let labels_path = out_dir.join(LABELS_FILE);
    fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;

    let stats = byte_stats(rendered.iter().flat_map(|(b, _)| b.iter().copied()));
    let manifest = Manifest {
        spec: spec.clone(),
        seed: spec.seed,
        count: spec.count,
        mean: stats.mean,
        std: stats.std,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Same corpus as [`generate_dataset`] followed by [`load_dataset_with`],
/// without touching the filesystem.
pub fn generate_in_memory(spec: &GenerateSpec, stats: Option<PixelStats>) -> Result<Dataset> {
    spec.validate()?;
    let vocab = Vocabulary::new(spec.include_punctuation);
    let english = eligible_english(spec, &vocab);
    let rendered: Vec<(Vec<u8>, String)> = (0..spec.count)
        .into_par_iter()
        .map(|i| generate_item_with(spec, i, &vocab, &english).map(|img| (img.to_bytes(), img.transcript)))
        .collect::<Result<_>>()?;
    let own = byte_stats(rendered.iter().flat_map(|(b, _)| b.iter().copied()));
    let stats = stats.unwrap_or(own);
    let items = rendered
        .into_iter()
        .map(|(bytes, transcript)| LabeledImage {
            height: spec.image_height,
            width: spec.image_width,
            pixels: bytes.iter().map(|&b| stats.normalize(b as f64 / 255.0)).collect(),
            transcript,
        })
        .collect();
    Ok(Dataset {
        items,
        filenames: (0..spec.count).map(image_filename).collect(),
        stats,
        manifest: Manifest {
            spec: spec.clone(),
            seed: spec.seed,
            count: spec.count,
            mean: own.mean,
            std: own.std,
        },
    })
}

fn byte_stats(bytes: impl Iterator<Item = u8>) -> PixelStats {
    let mut hist = [0u64; 256];
    for b in bytes {
        hist[b as usize] += 1;
    }
    let n: u64 = hist.iter().sum();
    let n = n.max(1) as f64;
    let value = |b: usize| b as f64 / 255.0;
    let mean = hist.iter().enumerate().map(|(b, &c)| c as f64 * value(b)).sum::<f64>() / n;
    let var = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| c as f64 * (value(b) - mean).powi(2))
        .sum::<f64>()
        / n;
    PixelStats {
        mean,
        std: var.sqrt().max(1e-12),
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Reads one PGM as raw pixels in [0, 1].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, px) = pgm::decode(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok((w, h, px.into_iter().map(|b| b as f64 / 255.0).collect()))
}

/// Loads a corpus normalized with its own manifest statistics.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_with(dir, None)
}

/// Loads a corpus, normalizing with `stats` when given (for example the
/// statistics of the training corpus) and the manifest's otherwise.
pub fn load_dataset_with(dir: &Path, stats: Option<PixelStats>) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let stats = stats.unwrap_or_else(|| manifest.stats());
    let vocab = Vocabulary::new(manifest.spec.include_punctuation);
    let labels_path = dir.join(LABELS_FILE);
    let labels = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;

    let mut rows = Vec::new();
    for (lineno, line) in labels.lines().enumerate() {
        let row = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let (name, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Load(format!("{LABELS_FILE} row {row}: expected filename<TAB>transcript")))?;
        if text.is_empty() {
            return Err(Error::Load(format!("{LABELS_FILE} row {row}: empty transcript")));
        }
        if let Some(c) = text.chars().find(|&c| !vocab.contains(c)) {
            return Err(Error::Load(format!(
                "{LABELS_FILE} row {row}: character {c:?} is outside the charset"
            )));
        }
        rows.push((row, name.to_string(), text.to_string()));
    }

    let loaded: Vec<(String, LabeledImage)> = rows
        .into_par_iter()
        .map(|(row, name, text)| {
            let path: PathBuf = dir.join(&name);
            let (w, h, raw) =
                read_pgm(&path).map_err(|e| Error::Load(format!("{LABELS_FILE} row {row}: {e}")))?;
            if (h, w) != (manifest.spec.image_height, manifest.spec.image_width) {
                return Err(Error::Load(format!(
                    "{LABELS_FILE} row {row}: {} is {w}x{h}, expected {}x{}",
                    path.display(),
                    manifest.spec.image_width,
                    manifest.spec.image_height
                )));
            }
            let pixels = raw.into_iter().map(|p| stats.normalize(p)).collect();
            Ok((
                name,
                LabeledImage {
                    height: h,
                    width: w,
                    pixels,
                    transcript: text,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (filenames, items) = loaded.into_iter().unzip();
    Ok(Dataset {
        items,
        filenames,
        stats,
        manifest,
    })
}
