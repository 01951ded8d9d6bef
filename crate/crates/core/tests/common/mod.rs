#![allow(dead_code)]

use dcmr::autograd::Eager;
use dcmr::data::{batch_iter, synth_generate, Batch, Dataset, Split, SynthConfig};
use dcmr::dcm::{DcmConfig, DcmParams};
use dcmr::seeding::rng_for;
use dcmr::tensor::Tensor;
use dcmr::train::{batch_objective, TrainConfig};
use rand::Rng;

pub fn random_tensor(rows: usize, cols: usize, key: &[u64]) -> Tensor {
    let mut rng = rng_for(key);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Largest entrywise gap, relative to the largest entry of either side.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let gap = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a
        .data()
        .iter()
        .chain(b.data())
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        gap
    } else {
        gap / scale
    }
}

pub fn small_synth(n_train: usize, model_dim: usize, frames: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_train,
        n_val: 0,
        n_test: 0,
        latent_dim: 8.min(model_dim),
        model_dim,
        frames_per_video: frames,
        seed,
        ..SynthConfig::default()
    }
}

pub fn dataset(cfg: &SynthConfig) -> Dataset {
    synth_generate(cfg).unwrap().to_dataset().unwrap()
}

pub fn first_batch(ds: &Dataset, batch_size: usize, languages: &[String], seed: u64) -> Batch {
    let split = ds.split_indices(Split::Train);
    batch_iter(&split, batch_size, languages, seed, 0)
        .unwrap()
        .remove(0)
}

/// The training objective of one batch evaluated eagerly, with no tape.
pub fn objective(
    params: &DcmParams,
    ds: &Dataset,
    batch: &Batch,
    dcm: &DcmConfig,
    train: &TrainConfig,
    step_seed: u64,
) -> f64 {
    batch_objective(&mut Eager, params, ds, batch, dcm, train, step_seed)
        .unwrap()
        .scalar()
        .unwrap()
}
