mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use dcmr::data::{load_manifest, synth_generate};
use dcmr::translate::{
    augment_dataset, mock_embed, mock_translate, AugmentOptions, MockEmbedder, TranslateClient,
    TranslationJob, Translator,
};
use dcmr::{Error, Result};

use common::small_synth;

#[derive(Default)]
struct Counting {
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl Translator for Counting {
    fn translate_batch(&self, _: &str, target: &str, texts: &[String]) -> Result<Vec<String>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| mock_translate(t, target)).collect())
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            out.insert(
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            );
        }
    }
    out
}

fn langs(ls: &[&str]) -> Vec<String> {
    ls.iter().map(|s| s.to_string()).collect()
}

#[test]
fn warm_cache_makes_no_backend_calls() {
    let cache = tempfile::tempdir().unwrap();
    let backend = Counting::default();
    let client = TranslateClient::new(&backend, Some(cache.path().to_path_buf()));
    let job = TranslationJob::new(
        "fr",
        (0..40).map(|i| format!("caption number {i}")).collect(),
    );
    let first = client.translate(&job).unwrap();
    assert!(backend.calls.load(Ordering::SeqCst) > 0);
    assert_eq!(backend.texts.load(Ordering::SeqCst), 40);

    let before = backend.calls.load(Ordering::SeqCst);
    let second = client.translate(&job).unwrap();
    assert_eq!(backend.calls.load(Ordering::SeqCst), before);
    assert_eq!(first, second);
}

#[test]
fn duplicate_texts_are_sent_once_and_order_is_kept() {
    let backend = Counting::default();
    let client = TranslateClient::new(&backend, None);
    let texts = langs(&["b", "a", "b", "c", "a"]);
    let out = client
        .translate(&TranslationJob::new("de", texts.clone()))
        .unwrap();
    assert_eq!(backend.texts.load(Ordering::SeqCst), 3);
    let expected: Vec<String> = texts.iter().map(|t| mock_translate(t, "de")).collect();
    assert_eq!(out, expected);
}

#[test]
fn three_items_get_three_translations_per_language() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(3, 8, 2, 0);
    cfg.languages = langs(&["en"]);
    let manifest = synth_generate(&cfg).unwrap().write(dir.path()).unwrap();
    let backend = Counting::default();
    let client = TranslateClient::new(&backend, None);
    let embedder = MockEmbedder { dim: 8, seed: 0 };
    let out = augment_dataset(
        &manifest,
        &langs(&["fr", "de"]),
        &client,
        &embedder,
        &AugmentOptions::default(),
    )
    .unwrap();
    assert_eq!(backend.texts.load(Ordering::SeqCst), 6);
    let ds = load_manifest(&out.manifest_path).unwrap();
    assert_eq!(ds.items.len(), 3);
    for it in &ds.items {
        assert_eq!(
            it.captions.keys().cloned().collect::<Vec<_>>(),
            langs(&["de", "en", "fr"])
        );
    }
}

#[test]
fn augmenting_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&small_synth(5, 8, 2, 1))
        .unwrap()
        .write(dir.path())
        .unwrap();
    let client_backend = Counting::default();
    let client = TranslateClient::new(&client_backend, None);
    let embedder = MockEmbedder { dim: 8, seed: 4 };
    let ls = langs(&["it"]);
    augment_dataset(
        &manifest,
        &ls,
        &client,
        &embedder,
        &AugmentOptions::default(),
    )
    .unwrap();
    let once = snapshot(dir.path());
    augment_dataset(
        &manifest,
        &ls,
        &client,
        &embedder,
        &AugmentOptions::default(),
    )
    .unwrap();
    assert_eq!(snapshot(dir.path()), once);
}

#[test]
fn no_languages_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&small_synth(4, 8, 2, 2))
        .unwrap()
        .write(dir.path())
        .unwrap();
    let before = snapshot(dir.path());
    let backend = Counting::default();
    let client = TranslateClient::new(&backend, None);
    let out = augment_dataset(
        &manifest,
        &[],
        &client,
        &MockEmbedder { dim: 8, seed: 0 },
        &AugmentOptions::default(),
    )
    .unwrap();
    assert!(out.written.is_empty());
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn interrupted_augment_keeps_the_old_manifest_usable() {
    let backend = Counting::default();
    let client = TranslateClient::new(&backend, None);
    let embedder = MockEmbedder { dim: 8, seed: 0 };
    let ls = langs(&["fr", "es"]);
    // Two languages write two files each, then the manifest.
    for fail_at in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_generate(&small_synth(4, 8, 2, 3))
            .unwrap()
            .write(dir.path())
            .unwrap();
        let before_manifest = std::fs::read(&manifest).unwrap();
        let before_files = snapshot(dir.path()).len();
        let opts = AugmentOptions {
            fail_before_write: Some(fail_at),
            ..AugmentOptions::default()
        };
        let err = augment_dataset(&manifest, &ls, &client, &embedder, &opts).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
        assert_eq!(
            std::fs::read(&manifest).unwrap(),
            before_manifest,
            "fail at {fail_at}"
        );
        load_manifest(&manifest).unwrap();
        assert_eq!(snapshot(dir.path()).len(), before_files + fail_at);

        augment_dataset(
            &manifest,
            &ls,
            &client,
            &embedder,
            &AugmentOptions::default(),
        )
        .unwrap();
        let ds = load_manifest(&manifest).unwrap();
        assert!(ds.items.iter().all(|it| it.captions.contains_key("es")));
    }
}

#[test]
fn mock_embeddings_are_nearly_orthogonal() {
    let e = MockEmbedder { dim: 512, seed: 9 };
    let vs: Vec<Vec<f64>> = (0..1000)
        .map(|i| mock_embed(&format!("text {i}"), &e).unwrap())
        .collect();
    let mut worst = 0.0f64;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let c: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
            worst = worst.max(c.abs());
        }
    }
    assert!(worst < 0.5, "max |cos| {worst}");
}
