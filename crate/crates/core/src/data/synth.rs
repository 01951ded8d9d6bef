//! Synthetic caption/video embeddings generated from shared Gaussian latents.
//!
//! Item `i` draws `z_i ~ N(0, I)`. Every frame of its video is
//! `A_v z_i + noise · ε` and its caption in language `l` is
//! `A_l z_i + noise · ε`. The caption maps share a common text map, so
//! `A_l = (A_text + spread · B_l) / sqrt(1 + spread²)`; at `spread = 0`
//! every language uses the same map.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::archive::{write_archive, EmbeddingArchive};
use super::manifest::{Dataset, DatasetManifest, ManifestItem, Split};
use crate::dcm::ENGLISH;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::seeding::{rng_for, str_key};
use crate::tensor::{self, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub latent_dim: usize,
    pub model_dim: usize,
    pub frames_per_video: usize,
    pub noise_scale: f64,
    /// How far each language's caption map strays from the shared text map.
    pub language_spread: f64,
    pub languages: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 512,
            n_val: 0,
            n_test: 128,
            latent_dim: 16,
            model_dim: 32,
            frames_per_video: 8,
            noise_scale: 0.1,
            language_spread: 0.5,
            languages: ["en", "fr", "de", "es"].map(String::from).to_vec(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_items(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.model_dim == 0 || self.frames_per_video == 0 {
            return Err(Error::Config("synth dims must be positive".into()));
        }
        if self.frames_per_video > u16::MAX as usize {
            return Err(Error::Config("too many frames per video".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be finite and >= 0".into()));
        }
        if !(self.language_spread >= 0.0 && self.language_spread.is_finite()) {
            return Err(Error::Config(
                "language_spread must be finite and >= 0".into(),
            ));
        }
        if !self.languages.iter().any(|l| l == ENGLISH) {
            return Err(Error::Config("languages must include \"en\"".into()));
        }
        let mut sorted = self.languages.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.languages.len() {
            return Err(Error::Config("duplicate language codes".into()));
        }
        Ok(())
    }
}

/// The linear maps behind a synthetic dataset, `model_dim × latent_dim` each.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthMaps {
    pub video: Tensor,
    pub text: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub manifest: DatasetManifest,
    pub videos: EmbeddingArchive,
    pub texts: BTreeMap<String, EmbeddingArchive>,
    /// English caption id -> pseudo caption text.
    pub english_captions: BTreeMap<String, String>,
    pub maps: SynthMaps,
    pub latents: Vec<Vec<f64>>,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, key: &[u64]) -> Tensor {
    let mut rng = rng_for(key);
    let data = (0..rows * cols)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            scale * e
        })
        .collect::<Vec<f64>>();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Applies `map` (`D × L`) to `z` and adds `noise · ε`.
fn emit(map: &Tensor, z: &Tensor, noise: f64, key: &[u64]) -> Vec<f64> {
    let zt = tensor::transpose(z).expect("row");
    let clean = tensor::matmul(map, &zt).expect("dims");
    let mut rng = rng_for(key);
    clean
        .data()
        .iter()
        .map(|&c| {
            let e: f64 = StandardNormal.sample(&mut rng);
            f32_round(c + noise * e)
        })
        .collect()
}

const WORDS: [&str; 16] = [
    "dog", "car", "street", "kitchen", "guitar", "beach", "crowd", "child", "ball", "river",
    "train", "dancer", "chef", "mountain", "phone", "horse",
];

fn pseudo_caption(i: usize, z: &[f64]) -> String {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
    let w = |k: usize| WORDS[order.get(k).copied().unwrap_or(k) % WORDS.len()];
    format!("a {} and a {} near the {} in scene {i}", w(0), w(1), w(2))
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let (d, l) = (cfg.model_dim, cfg.latent_dim);
    let map_scale = 1.0 / (l as f64).sqrt();
    let video_map = gaussian_matrix(d, l, map_scale, &[cfg.seed, 0xA11, 0]);
    let base_text = gaussian_matrix(d, l, map_scale, &[cfg.seed, 0xA11, 1]);
    let norm = 1.0 / (1.0 + cfg.language_spread * cfg.language_spread).sqrt();
    let mut text_maps = BTreeMap::new();
    for lang in &cfg.languages {
        let own = gaussian_matrix(d, l, map_scale, &[cfg.seed, 0xA11, 2, str_key(lang)]);
        let combined = tensor::scale(
            &tensor::add(&base_text, &tensor::scale(&own, cfg.language_spread)?)?,
            norm,
        )?;
        text_maps.insert(lang.clone(), combined);
    }

    let mut videos = EmbeddingArchive::new(d);
    let mut texts: BTreeMap<String, EmbeddingArchive> = cfg
        .languages
        .iter()
        .map(|lang| (lang.clone(), EmbeddingArchive::new(d)))
        .collect();
    let mut items = Vec::with_capacity(cfg.n_items());
    let mut latents = Vec::with_capacity(cfg.n_items());
    let mut english_captions = BTreeMap::new();

    for i in 0..cfg.n_items() {
        let zv = gaussian_matrix(1, l, 1.0, &[cfg.seed, 0x2A7, i as u64]);
        let video_id = format!("vid{i:05}");
        let frames: Vec<Vec<f64>> = (0..cfg.frames_per_video)
            .map(|k| {
                emit(
                    &video_map,
                    &zv,
                    cfg.noise_scale,
                    &[cfg.seed, 0xF7A, i as u64, k as u64],
                )
            })
            .collect();
        videos.push(video_id.clone(), Tensor::from_rows(&frames)?)?;

        let mut captions = BTreeMap::new();
        for lang in &cfg.languages {
            let cid = format!("cap{i:05}.{lang}");
            let v = emit(
                &text_maps[lang],
                &zv,
                cfg.noise_scale,
                &[cfg.seed, 0xCA9, i as u64, str_key(lang)],
            );
            texts
                .get_mut(lang)
                .unwrap()
                .push(cid.clone(), Tensor::row(v)?)?;
            captions.insert(lang.clone(), cid);
        }
        english_captions.insert(captions[ENGLISH].clone(), pseudo_caption(i, zv.data()));

        let split = if i < cfg.n_train {
            Split::Train
        } else if i < cfg.n_train + cfg.n_val {
            Split::Val
        } else {
            Split::Test
        };
        items.push(ManifestItem {
            video_id,
            split,
            captions,
        });
        latents.push(zv.into_data());
    }

    let manifest = DatasetManifest {
        dim: d,
        video_archive: PathBuf::from("videos.emb"),
        text_archives: cfg
            .languages
            .iter()
            .map(|lang| (lang.clone(), PathBuf::from(format!("text_{lang}.emb"))))
            .collect(),
        items,
        caption_texts: [(ENGLISH.to_string(), PathBuf::from("captions_en.json"))].into(),
        max_caption_tokens: None,
    };
    Ok(SynthDataset {
        config: cfg.clone(),
        manifest,
        videos,
        texts,
        english_captions,
        maps: SynthMaps {
            video: video_map,
            text: text_maps,
        },
        latents,
    })
}

impl SynthDataset {
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::from_parts(&self.manifest, &self.videos, &self.texts)
    }

    /// Writes archives, caption texts and `manifest.json` into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_archive(&self.videos, &dir.join(&self.manifest.video_archive))?;
        for (lang, p) in &self.manifest.text_archives {
            write_archive(&self.texts[lang], &dir.join(p))?;
        }
        let mut captions = serde_json::to_vec_pretty(&self.english_captions)?;
        captions.push(b'\n');
        fsutil::write_atomic(&dir.join(&self.manifest.caption_texts[ENGLISH]), &captions)?;
        let path = dir.join("manifest.json");
        fsutil::write_atomic(&path, &self.manifest.to_json()?)?;
        Ok(path)
    }
}
