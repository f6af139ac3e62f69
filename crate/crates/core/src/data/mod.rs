//! Charset codec, synthetic word rendering, and corpus/lexicon file I/O.

mod dataset;
pub mod font;
mod lexicon;
pub mod pgm;
mod render;
mod vocab;

pub use dataset::{
    english_words, generate_dataset, generate_in_memory, generate_item, image_filename, load_dataset, load_dataset_with,
    mix_seed, read_manifest, read_pgm, Dataset, GenerateSpec, Manifest, PixelStats, LABELS_FILE,
    MANIFEST_FILE,
};
pub use lexicon::{load_lexicon, Lexicon};
pub use render::{glyph_scale, render_word_image, Augment, LabeledImage, LETTER_GAP};
pub use vocab::{make_reversed_target, TokenSequence, Vocabulary, PUNCTUATION};
