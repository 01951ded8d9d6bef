//! Caption translation with a content-addressed disk cache, a deterministic
//! offline mock, an HTTP backend, and dataset augmentation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::manifest::resolve;
use crate::data::{read_manifest, DatasetManifest, EmbeddingArchive};
use crate::dcm::ENGLISH;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

pub const ENDPOINT_ENV: &str = "DCM_MT_ENDPOINT";
pub const TOKEN_ENV: &str = "DCM_MT_TOKEN";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationJob {
    pub source: String,
    pub target: String,
    pub texts: Vec<String>,
}

impl TranslationJob {
    pub fn new(target: impl Into<String>, texts: Vec<String>) -> Self {
        Self {
            source: ENGLISH.to_string(),
            target: target.into(),
            texts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source != ENGLISH {
            return Err(Error::Config(format!(
                "source language must be \"en\", got {:?}",
                self.source
            )));
        }
        if self.target == self.source || self.target.is_empty() {
            return Err(Error::Config(format!(
                "bad target language {:?}",
                self.target
            )));
        }
        if let Some(i) = self.texts.iter().position(|t| t.is_empty()) {
            return Err(Error::Contract(format!("text {i} is empty")));
        }
        Ok(())
    }
}

/// A translation service. Implementations receive batches of distinct texts.
pub trait Translator: Send + Sync {
    fn translate_batch(&self, source: &str, target: &str, texts: &[String]) -> Result<Vec<String>>;
}

fn language_shifts(target: &str) -> [u8; 32] {
    Sha256::digest(format!("mock-mt:{target}").as_bytes()).into()
}

fn shift_char(c: char, k: u8, forward: bool) -> char {
    let rot = |base: u8, span: u8| {
        let off = c as u8 - base;
        let k = k % span;
        let v = if forward {
            (off + k) % span
        } else {
            (off + span - k) % span
        };
        (base + v) as char
    };
    match c {
        'a'..='z' => rot(b'a', 26),
        'A'..='Z' => rot(b'A', 26),
        '0'..='9' => rot(b'0', 10),
        _ => c,
    }
}

fn mock_map(text: &str, target: &str, forward: bool) -> String {
    let shifts = language_shifts(target);
    text.split(' ')
        .enumerate()
        .map(|(w, token)| {
            token
                .chars()
                .enumerate()
                .map(|(i, c)| shift_char(c, shifts[(w * 7 + i) % shifts.len()], forward))
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pseudo-translation: `"<lang>: "` followed by a per-language Vigenère
/// rotation of every ASCII letter and digit. Token boundaries are kept.
pub fn mock_translate(text: &str, target: &str) -> String {
    format!("{target}: {}", mock_map(text, target, true))
}

/// Inverse of [`mock_translate`].
pub fn mock_untranslate(text: &str, target: &str) -> Result<String> {
    let body = text
        .strip_prefix(&format!("{target}: "))
        .ok_or_else(|| Error::Protocol(format!("not a mock {target:?} translation")))?;
    Ok(mock_map(body, target, false))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MockTranslator;

impl Translator for MockTranslator {
    fn translate_batch(
        &self,
        _source: &str,
        target: &str,
        texts: &[String],
    ) -> Result<Vec<String>> {
        Ok(texts.iter().map(|t| mock_translate(t, target)).collect())
    }
}

/// Minimal blocking JSON POST, swappable in tests.
pub trait Transport: Send + Sync {
    /// Returns `(status, body)`; `Err` means no response was received.
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
    ) -> std::result::Result<(u16, String), String>;
}

#[cfg(feature = "http")]
#[derive(Clone, Debug)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

#[cfg(feature = "http")]
impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

#[cfg(feature = "http")]
impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
    ) -> std::result::Result<(u16, String), String> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(t) = bearer {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    src: &'a str,
    tgt: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct TranslateResponse {
    texts: Vec<String>,
}

/// `POST {endpoint}/translate` with `{"src", "tgt", "texts"}`, expecting `{"texts"}`.
pub struct HttpTranslator<T: Transport> {
    pub endpoint: String,
    pub token: Option<String>,
    pub transport: T,
    pub attempts: u32,
    pub backoff: Duration,
}

impl<T: Transport> HttpTranslator<T> {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, transport: T) -> Self {
        Self {
            endpoint: endpoint.into(),
            token,
            transport,
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }

    fn url(&self) -> String {
        format!("{}/translate", self.endpoint.trim_end_matches('/'))
    }
}

#[cfg(feature = "http")]
impl HttpTranslator<UreqTransport> {
    /// Endpoint from `DCM_MT_ENDPOINT`, bearer token from `DCM_MT_TOKEN`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(Self::new(
            endpoint,
            std::env::var(TOKEN_ENV).ok(),
            UreqTransport::default(),
        ))
    }
}

impl<T: Transport> Translator for HttpTranslator<T> {
    fn translate_batch(&self, source: &str, target: &str, texts: &[String]) -> Result<Vec<String>> {
        let body = serde_json::to_string(&TranslateRequest {
            src: source,
            tgt: target,
            texts,
        })?;
        let url = self.url();
        let mut last = String::new();
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.backoff * (1 << (attempt - 1)));
            }
            match self.transport.post_json(&url, self.token.as_deref(), &body) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let resp: TranslateResponse = serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("bad response from {url}: {e}")))?;
                    if resp.texts.len() != texts.len() {
                        return Err(Error::Protocol(format!(
                            "{url} returned {} texts for {} inputs",
                            resp.texts.len(),
                            texts.len()
                        )));
                    }
                    return Ok(resp.texts);
                }
                Ok((status, text)) => {
                    last = format!(
                        "HTTP {status}: {}",
                        text.chars().take(200).collect::<String>()
                    );
                }
                Err(e) => last = e,
            }
            log::warn!("translate attempt {} to {url} failed: {last}", attempt + 1);
        }
        Err(Error::Backend(format!(
            "{url} failed after {} attempts: {last}",
            self.attempts.max(1)
        )))
    }
}

/// SHA-256 of `(source, target, text)`, hex encoded.
pub fn cache_key(source: &str, target: &str, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [source, target, text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Runs jobs through a [`Translator`] behind an optional cache directory,
/// one file per key holding the raw translated text.
pub struct TranslateClient<'a> {
    pub backend: &'a dyn Translator,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
    pub batch_size: usize,
}

impl<'a> TranslateClient<'a> {
    pub fn new(backend: &'a dyn Translator, cache_dir: Option<PathBuf>) -> Self {
        Self {
            backend,
            cache_dir,
            workers: 4,
            batch_size: 16,
        }
    }

    fn cached(&self, key: &str) -> Result<Option<String>> {
        let Some(dir) = &self.cache_dir else {
            return Ok(None);
        };
        let p = dir.join(key);
        match std::fs::read(&p) {
            Ok(b) => String::from_utf8(b).map(Some).map_err(|_| Error::Format {
                path: p,
                offset: 0,
                msg: "cache entry is not UTF-8".into(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(p, e)),
        }
    }

    pub fn translate(&self, job: &TranslationJob) -> Result<Vec<String>> {
        job.validate()?;
        let keys: Vec<String> = job
            .texts
            .iter()
            .map(|t| cache_key(&job.source, &job.target, t))
            .collect();
        let mut done: BTreeMap<&str, String> = BTreeMap::new();
        let mut missing: Vec<(&str, &String)> = Vec::new();
        for (k, t) in keys.iter().zip(&job.texts) {
            if done.contains_key(k.as_str()) || missing.iter().any(|(m, _)| m == k) {
                continue;
            }
            match self.cached(k)? {
                Some(v) => {
                    done.insert(k, v);
                }
                None => missing.push((k, t)),
            }
        }

        if !missing.is_empty() {
            if let Some(dir) = &self.cache_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let chunks: Vec<&[(&str, &String)]> = missing.chunks(self.batch_size.max(1)).collect();
            let next = AtomicUsize::new(0);
            let results: Mutex<Vec<Option<Result<Vec<String>>>>> =
                Mutex::new((0..chunks.len()).map(|_| None).collect());
            let workers = self.workers.clamp(1, chunks.len());
            thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(|| loop {
                        let c = next.fetch_add(1, Ordering::SeqCst);
                        if c >= chunks.len() {
                            break;
                        }
                        let texts: Vec<String> =
                            chunks[c].iter().map(|(_, t)| (*t).clone()).collect();
                        let out = self
                            .backend
                            .translate_batch(&job.source, &job.target, &texts)
                            .and_then(|out| {
                                if let Some(dir) = &self.cache_dir {
                                    for ((k, _), v) in chunks[c].iter().zip(&out) {
                                        fsutil::write_atomic(&dir.join(k), v.as_bytes())?;
                                    }
                                }
                                Ok(out)
                            });
                        results.lock().expect("results lock")[c] = Some(out);
                    });
                }
            });
            for (chunk, out) in chunks
                .iter()
                .zip(results.into_inner().expect("results lock"))
            {
                let out = out.expect("every chunk is processed")?;
                for ((k, _), v) in chunk.iter().zip(out) {
                    done.insert(k, v);
                }
            }
        }
        Ok(keys.iter().map(|k| done[k.as_str()].clone()).collect())
    }
}

/// Offline stand-in for a text encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
}

/// Unit-norm pseudo-random vector seeded by a hash of `(seed, text)`.
pub fn mock_embed(text: &str, embedder: &MockEmbedder) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Err(Error::Contract("cannot embed empty text".into()));
    }
    if embedder.dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    let mut h = Sha256::new();
    h.update(embedder.seed.to_le_bytes());
    h.update(text.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut v: Vec<f64> = (0..embedder.dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

#[derive(Clone, Debug, Default)]
pub struct AugmentOptions {
    /// Directory for the new archives and manifest; defaults to the manifest's.
    pub out_dir: Option<PathBuf>,
    /// Test hook: fail before the n-th file write (0-based).
    pub fail_before_write: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentOutcome {
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
    pub written: Vec<PathBuf>,
}

struct Writer<'a> {
    count: usize,
    fail_before: Option<usize>,
    written: &'a mut Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if self.fail_before == Some(self.count) {
            return Err(Error::io(path, std::io::Error::other("injected failure")));
        }
        self.count += 1;
        fsutil::write_atomic(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

/// Translates every item's English caption into each language, embeds the
/// translations and writes a manifest that references the new archives.
///
/// New files are content-addressed and the manifest is written last, so an
/// interrupted run leaves the previous manifest and everything it references
/// intact. With no languages nothing is written.
pub fn augment_dataset(
    manifest_path: &Path,
    languages: &[String],
    client: &TranslateClient<'_>,
    embedder: &MockEmbedder,
    opts: &AugmentOptions,
) -> Result<AugmentOutcome> {
    let mut manifest = read_manifest(manifest_path)?;
    let base = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    if languages.is_empty() {
        return Ok(AugmentOutcome {
            manifest_path: manifest_path.to_path_buf(),
            manifest,
            written: Vec::new(),
        });
    }
    if let Some(l) = languages.iter().find(|l| l.as_str() == ENGLISH) {
        return Err(Error::Config(format!("cannot augment with language {l:?}")));
    }
    if embedder.dim != manifest.dim {
        return Err(Error::Config(format!(
            "embedder dim {} does not match manifest dim {}",
            embedder.dim, manifest.dim
        )));
    }
    let en_texts_path = manifest.caption_texts.get(ENGLISH).ok_or_else(|| {
        Error::Dataset("manifest has no English caption texts (caption_texts.en)".into())
    })?;
    let en_texts_path = resolve(&base, en_texts_path);
    let en_texts: BTreeMap<String, String> = serde_json::from_slice(&fsutil::read(&en_texts_path)?)
        .map_err(|e| Error::Format {
            path: en_texts_path.clone(),
            offset: 0,
            msg: format!("caption texts JSON: {e}"),
        })?;

    let mut sources = Vec::with_capacity(manifest.items.len());
    let mut problems = Vec::new();
    for it in &manifest.items {
        match it
            .captions
            .get(ENGLISH)
            .and_then(|cid| en_texts.get(cid).map(|t| (cid, t)))
        {
            Some((cid, t)) if !t.is_empty() => sources.push((cid.clone(), t.clone())),
            _ => problems.push(it.video_id.clone()),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(format!(
            "no English caption text for videos: {}",
            problems.join(", ")
        )));
    }

    let out_dir = opts.out_dir.clone().unwrap_or_else(|| base.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    if out_dir != base {
        let abs = |p: &Path| -> Result<PathBuf> {
            let r = resolve(&base, p);
            std::path::absolute(&r).map_err(|e| Error::io(&r, e))
        };
        manifest.video_archive = abs(&manifest.video_archive)?;
        for p in manifest.text_archives.values_mut() {
            *p = abs(p)?;
        }
        for p in manifest.caption_texts.values_mut() {
            *p = abs(p)?;
        }
    }

    let mut written = Vec::new();
    let mut w = Writer {
        count: 0,
        fail_before: opts.fail_before_write,
        written: &mut written,
    };
    for lang in languages {
        let job = TranslationJob::new(
            lang.clone(),
            sources.iter().map(|(_, t)| t.clone()).collect(),
        );
        let translated = client.translate(&job)?;
        let mut archive = EmbeddingArchive::new(manifest.dim);
        let mut texts = BTreeMap::new();
        let mut ids = Vec::with_capacity(sources.len());
        for ((en_cid, _), text) in sources.iter().zip(&translated) {
            let cid = format!("{en_cid}@{lang}");
            archive.push(cid.clone(), Tensor::row(mock_embed(text, embedder)?)?)?;
            texts.insert(cid.clone(), text.clone());
            ids.push(cid);
        }
        let archive_bytes = archive.to_bytes();
        let archive_name =
            PathBuf::from(format!("text_{lang}.mt-{}.emb", short_hash(&archive_bytes)));
        let mut text_bytes = serde_json::to_vec_pretty(&texts)?;
        text_bytes.push(b'\n');
        let texts_name = PathBuf::from(format!(
            "captions_{lang}.mt-{}.json",
            short_hash(&text_bytes)
        ));
        w.write(&out_dir.join(&archive_name), &archive_bytes)?;
        w.write(&out_dir.join(&texts_name), &text_bytes)?;
        manifest.text_archives.insert(lang.clone(), archive_name);
        manifest.caption_texts.insert(lang.clone(), texts_name);
        for (it, cid) in manifest.items.iter_mut().zip(ids) {
            it.captions.insert(lang.clone(), cid);
        }
    }
    let out_manifest = out_dir.join(
        manifest_path
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("manifest.json")),
    );
    w.write(&out_manifest, &manifest.to_json()?)?;
    Ok(AugmentOutcome {
        manifest_path: out_manifest,
        manifest,
        written,
    })
}
