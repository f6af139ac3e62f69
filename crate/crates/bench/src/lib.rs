//! Shared fixtures for the benchmarks.

use bistet_core::data::{generate_in_memory, Dataset, GenerateSpec, LabeledImage};
use bistet_core::model::{Model, ModelConfig};
use bistet_core::train::Batch;
use bistet_core::Tensor;

/// Deterministic pseudo-random tensor without pulling in an RNG crate.
pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n as u64)
        .map(|i| {
            let x = (i ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11;
            x as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// A small desk-sized corpus and a freshly initialized desk model.
pub fn desk_fixture(count: usize) -> (Model, Dataset) {
    let data = generate_in_memory(
        &GenerateSpec {
            count,
            seed: 1,
            ..GenerateSpec::default()
        },
        None,
    )
    .expect("corpus generates");
    let model = Model::init(ModelConfig::default(), 0).expect("desk config is valid");
    (model, data)
}

pub fn batch_of(model: &Model, data: &Dataset) -> Batch {
    let items: Vec<&LabeledImage> = data.items.iter().collect();
    Batch::from_items(&items, model.vocab(), model.config().max_decode_len).expect("batch builds")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        let t = filled(&[3, 4], 1);
        assert!(t.data().iter().all(|v| v.abs() <= 0.5));
        let (model, data) = desk_fixture(2);
        assert_eq!(batch_of(&model, &data).len(), 2);
    }
}
