//! JSON dataset manifests and the resolved in-memory [`Dataset`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::archive::{read_archive, EmbeddingArchive};
use crate::dcm::{FrameEmbeddings, TextEmbedding, ENGLISH};
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub video_id: String,
    pub split: Split,
    /// language code -> caption id
    pub captions: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dim: usize,
    /// Relative paths resolve against the manifest's directory.
    pub video_archive: PathBuf,
    pub text_archives: BTreeMap<String, PathBuf>,
    pub items: Vec<ManifestItem>,
    /// Optional JSON files mapping caption id -> caption text, per language.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub caption_texts: BTreeMap<String, PathBuf>,
    /// Upstream tokenizer limit; informational only once captions are pooled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_caption_tokens: Option<usize>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut s = serde_json::to_vec_pretty(self)?;
        s.push(b'\n');
        Ok(s)
    }

    pub fn from_json(bytes: &[u8], path: &Path) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("manifest JSON: {e}"),
        })
    }
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub video: FrameEmbeddings,
    pub split: Split,
    /// language code -> caption
    pub captions: BTreeMap<String, TextEmbedding>,
}

/// A manifest with every referenced embedding resolved and validated.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    /// Cross-validates a manifest against its archives, reporting every offender.
    pub fn from_parts(
        manifest: &DatasetManifest,
        videos: &EmbeddingArchive,
        texts: &BTreeMap<String, EmbeddingArchive>,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if videos.dim != manifest.dim {
            problems.push(format!(
                "video archive dim {} != manifest dim {}",
                videos.dim, manifest.dim
            ));
        }
        for (lang, a) in texts {
            if a.dim != manifest.dim {
                problems.push(format!(
                    "text archive {lang:?} dim {} != manifest dim {}",
                    a.dim, manifest.dim
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Dataset(problems.join("; ")));
        }
        let video_index = videos.index();
        let text_index: BTreeMap<&str, _> =
            texts.iter().map(|(l, a)| (l.as_str(), a.index())).collect();

        let mut seen_videos = HashSet::new();
        let mut seen_captions: HashSet<(&str, &str)> = HashSet::new();
        let mut items = Vec::with_capacity(manifest.items.len());
        for item in &manifest.items {
            if !seen_videos.insert(item.video_id.as_str()) {
                problems.push(format!("duplicate video id {:?}", item.video_id));
            }
            if !item.captions.contains_key(ENGLISH) {
                problems.push(format!("video {:?} has no \"en\" caption", item.video_id));
            }
            let video = match video_index.get(item.video_id.as_str()) {
                Some(rec) => FrameEmbeddings::new(rec.id.clone(), rec.vectors.clone())?,
                None => {
                    problems.push(format!("video id {:?} not in video archive", item.video_id));
                    continue;
                }
            };
            let mut captions = BTreeMap::new();
            for (lang, cid) in &item.captions {
                if !seen_captions.insert((lang.as_str(), cid.as_str())) {
                    problems.push(format!("duplicate caption id {cid:?} ({lang})"));
                }
                let Some(idx) = text_index.get(lang.as_str()) else {
                    problems.push(format!(
                        "no text archive for language {lang:?} (caption {cid:?})"
                    ));
                    continue;
                };
                let Some(rec) = idx.get(cid.as_str()) else {
                    problems.push(format!("caption id {cid:?} not in {lang:?} archive"));
                    continue;
                };
                if rec.vectors.dims2()?.0 != 1 {
                    problems.push(format!("caption {cid:?} has more than one vector"));
                    continue;
                }
                captions.insert(
                    lang.clone(),
                    TextEmbedding::new(cid.clone(), lang.clone(), rec.vectors.data().to_vec())?,
                );
            }
            items.push(DatasetItem {
                video,
                split: item.split,
                captions,
            });
        }
        if !problems.is_empty() {
            return Err(Error::Dataset(problems.join("; ")));
        }
        Ok(Self {
            dim: manifest.dim,
            items,
        })
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks that every item of `split` has a caption in each language.
    pub fn require_languages(&self, split: Split, languages: &[String]) -> Result<()> {
        let mut missing = Vec::new();
        for i in self.split_indices(split) {
            let it = &self.items[i];
            for l in languages {
                if !it.captions.contains_key(l) {
                    missing.push(format!("{}:{l}", it.video.video_id));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            let shown: Vec<_> = missing.iter().take(20).cloned().collect();
            Err(Error::Dataset(format!(
                "{} missing {split} captions: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 20 { ", ..." } else { "" }
            )))
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::from_json(&fsutil::read(path)?, path)
}

/// Reads a manifest and every archive it references into a validated [`Dataset`].
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let videos = read_archive(&resolve(base, &manifest.video_archive))?;
    let mut texts = BTreeMap::new();
    for (lang, p) in &manifest.text_archives {
        texts.insert(lang.clone(), read_archive(&resolve(base, p))?);
    }
    Dataset::from_parts(&manifest, &videos, &texts)
}
