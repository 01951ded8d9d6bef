//! Seeded mini-batch iteration.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// How the multilingual side of a batch picks its language.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageSampling {
    /// Each item draws one non-English language uniformly.
    #[default]
    SampleOne,
    /// Every configured language contributes its own loss term.
    SumAll,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Dataset item indices.
    pub items: Vec<usize>,
    /// Sampled language per item under [`LanguageSampling::SampleOne`]; empty
    /// when no languages were given.
    pub languages: Vec<String>,
}

/// Shuffles `split_items` with a permutation keyed by `(seed, epoch)` and cuts
/// it into batches. A trailing batch smaller than 2 is dropped because the
/// contrastive loss needs in-batch negatives.
pub fn batch_iter(
    split_items: &[usize],
    batch_size: usize,
    languages: &[String],
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if split_items.len() < 2 {
        return Err(Error::Dataset(format!(
            "split has {} items; at least 2 are needed for in-batch negatives",
            split_items.len()
        )));
    }
    if batch_size < 2 {
        return Err(Error::Config(
            "batch_size must be >= 2 for in-batch negatives".into(),
        ));
    }
    let mut order = split_items.to_vec();
    order.shuffle(&mut rng_for(&[seed, epoch, 0xBA7C]));
    let mut out = Vec::new();
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let languages = if languages.is_empty() {
            Vec::new()
        } else {
            let mut rng = rng_for(&[seed, epoch, 0x1A9, b as u64]);
            chunk
                .iter()
                .map(|_| languages[rng.random_range(0..languages.len())].clone())
                .collect()
        };
        out.push(Batch {
            items: chunk.to_vec(),
            languages,
        });
    }
    Ok(out)
}
