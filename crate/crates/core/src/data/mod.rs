//! Embedding archives, manifests, synthetic data and batching.

pub mod archive;
pub mod batch;
pub mod manifest;
pub mod synth;

pub use archive::{read_archive, write_archive, EmbeddingArchive, EmbeddingRecord};
pub use batch::{batch_iter, Batch, LanguageSampling};
pub use manifest::{
    load_manifest, read_manifest, Dataset, DatasetItem, DatasetManifest, ManifestItem, Split,
};
pub use synth::{synth_generate, SynthConfig, SynthDataset, SynthMaps};
