//! Acceptance run: one line per criterion, `PASS` or `FAIL`, then a nonzero
//! exit if anything failed. Runs without the libtest harness so every line is
//! printed even when all criteria pass.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{dataset, first_batch, max_rel_err, objective, small_synth};
use dcmr::autograd::{finite_diff_gradient, Tape};
use dcmr::data::{
    read_archive, synth_generate, write_archive, Dataset, EmbeddingArchive, Split, SynthConfig,
};
use dcmr::dcm::{init_params, Branch, DcmConfig, DcmParams, FrameEmbeddings};
use dcmr::eval::{
    evaluate_split, metrics_from_ranks, ranks_of_ground_truth, score_matrix, Direction,
    EvalRequest, RankMetrics, RetrievalReport, ScoreMatrix, ScoreOptions,
};
use dcmr::loss::{info_nce, similarity_matrix, total_loss, LossTerm, SimilarityMatrix};
use dcmr::seeding::rng_for;
use dcmr::tensor::Tensor;
use dcmr::train::{
    batch_objective, checkpoint_roundtrip, collect_grads, track_params, train_run, Checkpoint,
    TrainConfig,
};
use dcmr::Error;
use rand::seq::SliceRandom;
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------------------
// 1. gradient fidelity

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for seed in 0..10u64 {
        let ds = dataset(&small_synth(4, 32, 4, seed));
        let dcm = DcmConfig {
            model_dim: 32,
            ..DcmConfig::default()
        };
        let train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let batch = first_batch(&ds, 4, &train.languages, seed);
        let params = init_params(&dcm, seed).unwrap();
        let step_seed = seed ^ 0xABC;

        let mut tape = Tape::new();
        let tracked = track_params(&mut tape, &params);
        let loss =
            batch_objective(&mut tape, &tracked, &ds, &batch, &dcm, &train, step_seed).unwrap();
        let grads = collect_grads(&tape, loss, &tracked, &params).unwrap();

        let mut probe = params.clone();
        for (k, (name, t)) in params.named().into_iter().enumerate() {
            let fd = finite_diff_gradient(
                |x| {
                    *probe.values_mut()[k] = x.clone();
                    Ok(objective(&probe, &ds, &batch, &dcm, &train, step_seed))
                },
                t,
                1e-5,
            )
            .unwrap();
            *probe.values_mut()[k] = t.clone();
            let err = max_rel_err(&grads[k], &fd);
            if err > worst {
                worst = err;
                worst_at = format!("seed {seed} {name}");
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "max rel err {worst:.2e} ({worst_at}), 10 seeds, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. loss identities

fn loss_identities() -> Verdict {
    let mut rng = rng_for(&[2]);
    let mut notes = Vec::new();
    let mut pass = true;

    let t = vec![(0..6)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect::<Vec<f64>>()];
    let v = vec![(0..6)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect::<Vec<f64>>()];
    let s1 = similarity_matrix(&t, &v, false, 1.0).unwrap();
    let b1 = total_loss(&s1, &s1).unwrap();
    pass &= b1 == 0.0;
    notes.push(format!("B=1 total {b1}"));

    let mut worst_uniform = 0.0f64;
    for b in [2usize, 4, 8] {
        let c = rng.random_range(-20.0..20.0);
        let s = SimilarityMatrix::from_scores(&vec![vec![c; b]; b]).unwrap();
        for term in [LossTerm::V2t, LossTerm::T2v] {
            let l = info_nce(&s, term).unwrap();
            worst_uniform = worst_uniform.max((l - (b as f64).ln()).abs());
        }
    }
    pass &= worst_uniform < 1e-9;
    notes.push(format!("uniform |l - ln B| {worst_uniform:.1e}"));

    let mut worst_shift = 0.0f64;
    for _ in 0..200 {
        let b = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..b).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|x| x + c).collect())
            .collect();
        let a = SimilarityMatrix::from_scores(&rows).unwrap();
        let z = SimilarityMatrix::from_scores(&shifted).unwrap();
        for term in [LossTerm::V2t, LossTerm::T2v] {
            let d = (info_nce(&a, term).unwrap() - info_nce(&z, term).unwrap()).abs();
            worst_shift = worst_shift.max(d);
        }
    }
    pass &= worst_shift < 1e-10;
    notes.push(format!("shift |delta| {worst_shift:.1e}"));
    verdict(pass, notes.join(", "))
}

// ---------------------------------------------------------------------------
// 3. metric oracle

/// Rank of `target` among `scores` by sorting: the first sorted position
/// holding a score equal to `target`.
fn sorted_rank(scores: &[f64], target: f64) -> usize {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.iter().position(|&x| x == target).unwrap() + 1
}

fn oracle_metrics(ranks: &[usize]) -> RankMetrics {
    let mut sorted = ranks.to_vec();
    sorted.sort();
    let n = sorted.len();
    let within = |k: usize| sorted.iter().take_while(|&&r| r <= k).count() as f64 / n as f64;
    let medr = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    RankMetrics {
        r1: within(1),
        r5: within(5),
        r10: within(10),
        medr,
        mnr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n as f64,
        n,
    }
}

fn metric_oracle() -> Verdict {
    let start = Instant::now();
    let mut mismatches = 0;
    for case in 0..200u64 {
        let mut rng = rng_for(&[3, case]);
        let n_v = rng.random_range(1..=50);
        let n_t = rng.random_range(n_v..=50);
        // Few distinct levels so ties are common.
        let levels = rng.random_range(2..=12);
        let rows: Vec<Vec<f64>> = (0..n_t)
            .map(|_| {
                (0..n_v)
                    .map(|_| rng.random_range(0..levels) as f64 / 4.0)
                    .collect()
            })
            .collect();
        let mut cols: Vec<usize> = (0..n_v).collect();
        cols.shuffle(&mut rng);
        let gt_col: Vec<usize> = (0..n_t)
            .map(|i| {
                if i < n_v {
                    cols[i]
                } else {
                    rng.random_range(0..n_v)
                }
            })
            .collect();
        let caption_ids: Vec<String> = (0..n_t).map(|i| format!("c{i}")).collect();
        let video_ids: Vec<String> = (0..n_v).map(|j| format!("v{j}")).collect();
        let gt: BTreeMap<String, String> = (0..n_t)
            .map(|i| (caption_ids[i].clone(), video_ids[gt_col[i]].clone()))
            .collect();
        let flat: Vec<f64> = rows.concat();
        let s = ScoreMatrix::new(
            Tensor::new(vec![n_t, n_v], flat).unwrap(),
            caption_ids,
            video_ids,
            Branch::English,
        )
        .unwrap();

        let t2v_oracle: Vec<usize> = (0..n_t)
            .map(|i| sorted_rank(&rows[i], rows[i][gt_col[i]]))
            .collect();
        let v2t_oracle: Vec<usize> = (0..n_v)
            .map(|j| {
                let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                (0..n_t)
                    .filter(|&i| gt_col[i] == j)
                    .map(|i| sorted_rank(&column, rows[i][j]))
                    .min()
                    .unwrap()
            })
            .collect();
        for (dir, want) in [(Direction::T2v, t2v_oracle), (Direction::V2t, v2t_oracle)] {
            let got = ranks_of_ground_truth(&s, &gt, dir).unwrap();
            let m = metrics_from_ranks(&got).unwrap();
            if got != want || m != oracle_metrics(&want) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!(
            "{mismatches} mismatches over 200 matrices x 2 directions, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// Shared synthetic setup for criteria 4 to 7.

fn learning_dcm() -> DcmConfig {
    DcmConfig {
        model_dim: 32,
        ..DcmConfig::default()
    }
}

fn request(split: Split, language: &str, dcm: &DcmConfig, seed: u64) -> EvalRequest {
    EvalRequest {
        split,
        branch: dcm.branch_for(language),
        language: language.to_string(),
        scoring: ScoreOptions::default(),
        seed,
        config_hash: String::new(),
    }
}

fn t2v(
    ds: &Dataset,
    params: &DcmParams,
    dcm: &DcmConfig,
    language: &str,
    seed: u64,
) -> RetrievalReport {
    evaluate_split(
        ds,
        params,
        dcm,
        &request(Split::Test, language, dcm, seed),
        Direction::T2v,
    )
    .unwrap()
}

struct SeedRuns {
    dataset: Dataset,
    dual: DcmParams,
    no_multilingual: DcmParams,
}

/// Five seeds of the default dual-loss run (training language fr) and of the
/// no-multilingual ablation, trained once and shared by criteria 5 to 7 and 9.
fn runs() -> &'static [SeedRuns] {
    static RUNS: OnceLock<Vec<SeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dcm = learning_dcm();
        SEEDS
            .iter()
            .map(|&seed| {
                let dataset = dataset(&SynthConfig {
                    seed,
                    ..SynthConfig::default()
                });
                let train = TrainConfig {
                    epochs: 15,
                    seed,
                    ..TrainConfig::default()
                };
                assert_eq!(train.languages, ["fr"]);
                let dual = train_run(&dataset, &dcm, &train).unwrap().checkpoint.params;
                let ablated = TrainConfig {
                    multilingual_weight: 0.0,
                    ..train
                };
                let no_multilingual = train_run(&dataset, &dcm, &ablated)
                    .unwrap()
                    .checkpoint
                    .params;
                SeedRuns {
                    dataset,
                    dual,
                    no_multilingual,
                }
            })
            .collect()
    })
}

// ---------------------------------------------------------------------------
// 4. chance calibration

fn chance_calibration() -> Verdict {
    let dcm = learning_dcm();
    let mnrs: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let ds = dataset(&SynthConfig {
                n_train: 0,
                n_test: 200,
                seed,
                ..SynthConfig::default()
            });
            let params = init_params(&dcm, seed).unwrap();
            t2v(&ds, &params, &dcm, "en", seed).mnr
        })
        .collect();
    let inside = mnrs.iter().filter(|m| (85.0..=115.0).contains(*m)).count();
    verdict(
        inside == SEEDS.len(),
        format!(
            "MnR per seed {} (expected 100.5), {inside}/5 in [85, 115]",
            fmt_list(&mnrs)
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. learning signal

fn learning_signal() -> Verdict {
    let start = Instant::now();
    let dcm = learning_dcm();
    let r1: Vec<f64> = runs()
        .iter()
        .zip(SEEDS)
        .map(|(r, seed)| t2v(&r.dataset, &r.dual, &dcm, "en", seed).r1)
        .collect();
    let m = median(&r1);
    let elapsed = start.elapsed();
    verdict(
        m >= 0.04 && elapsed < Duration::from_secs(300),
        format!(
            "English R@1 per seed {}, median {m:.4} (need >= 0.04, chance 1/128), {:.1}s incl. training",
            fmt_list(&r1),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. knowledge-transfer direction

fn knowledge_transfer() -> Verdict {
    let dcm = learning_dcm();
    let mut dual = Vec::new();
    let mut ablated = Vec::new();
    for (r, seed) in runs().iter().zip(SEEDS) {
        dual.push(t2v(&r.dataset, &r.dual, &dcm, "en", seed).metrics().r_sum());
        ablated.push(
            t2v(&r.dataset, &r.no_multilingual, &dcm, "en", seed)
                .metrics()
                .r_sum(),
        );
    }
    let (d, a) = (median(&dual), median(&ablated));
    verdict(
        d >= a,
        format!(
            "median English R-sum dual {d:.4} vs no-multilingual {a:.4} (per seed {} vs {})",
            fmt_list(&dual),
            fmt_list(&ablated)
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. zero-shot language transfer

fn zero_shot_transfer() -> Verdict {
    let dcm = learning_dcm();
    let r1: Vec<f64> = runs()
        .iter()
        .zip(SEEDS)
        .map(|(r, seed)| {
            let rep = t2v(&r.dataset, &r.dual, &dcm, "de", seed);
            assert_eq!(rep.branch, Branch::Multilingual);
            rep.r1
        })
        .collect();
    let m = median(&r1);
    let need = 3.0 / 128.0;
    verdict(
        m >= need,
        format!(
            "trained on fr, de R@1 on branch M per seed {}, median {m:.4} (need >= {need:.4})",
            fmt_list(&r1)
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. determinism and formats

fn dcmr(args: &[&str], dir: &Path) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_dcmr"))
        .args(args)
        .current_dir(dir)
        .env_remove("DCMR_SEED")
        .output()
        .expect("spawn dcmr");
    (out.status.success(), out.stdout)
}

/// Runs synth, translate, train and eval in `dir`; returns the eval output.
fn pipeline(dir: &Path) -> Vec<u8> {
    let steps: [&[&str]; 4] = [
        &[
            "synth",
            "--out",
            "data",
            "--n-train",
            "96",
            "--n-test",
            "48",
            "--seed",
            "11",
        ],
        &[
            "translate",
            "--manifest",
            "data/manifest.json",
            "--languages",
            "it",
            "--out",
            "data",
        ],
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--epochs",
            "2",
            "--languages",
            "fr,it",
            "--seed",
            "11",
            "--out",
            "run",
        ],
        &[
            "eval",
            "--manifest",
            "data/manifest.json",
            "--checkpoint",
            "run/checkpoint.dcmc",
            "--language",
            "it",
        ],
    ];
    let mut last = Vec::new();
    for args in steps {
        let (ok, stdout) = dcmr(args, dir);
        assert!(ok, "dcmr {args:?} failed");
        last = stdout;
    }
    last
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn strip_wall_ms(log: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(log)
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

/// Parses every truncation and every single-byte corruption of the header
/// region; returns (files tried, panics, errors that were not format errors
/// or whose offset was past the end).
fn corruption_sweep(
    bytes: &[u8],
    header_len: usize,
    parse: &dyn Fn(&[u8]) -> dcmr::Result<()>,
) -> (usize, usize, usize) {
    let mut tried = 0;
    let mut panics = 0;
    let mut untyped = 0;
    let mut check = |buf: &[u8]| {
        tried += 1;
        match catch_unwind(AssertUnwindSafe(|| parse(buf))) {
            Err(_) => panics += 1,
            Ok(Ok(())) => {}
            Ok(Err(Error::Format { offset, .. })) if offset as usize <= buf.len() => {}
            Ok(Err(_)) => untyped += 1,
        }
    };
    let step = (bytes.len() / 4000).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        check(&bytes[..cut]);
    }
    for i in 0..header_len.min(bytes.len()) {
        for flip in [0x01u8, 0x80, 0xFF] {
            let mut b = bytes.to_vec();
            b[i] ^= flip;
            check(&b);
        }
    }
    (tried, panics, untyped)
}

fn determinism_and_formats() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = pipeline(a.path());
    let out_b = pipeline(b.path());
    let mut fa = files_under(a.path());
    let mut fb = files_under(b.path());
    let log = Path::new("run/train_log.jsonl");
    let logs_equal =
        strip_wall_ms(&fa.remove(log).unwrap()) == strip_wall_ms(&fb.remove(log).unwrap());
    let same = out_a == out_b && fa == fb && logs_equal;
    pass &= same;
    notes.push(format!(
        "two pipeline runs: {} files {}, reports {}",
        fa.len() + 1,
        if fa == fb && logs_equal {
            "identical"
        } else {
            "DIFFER"
        },
        if out_a == out_b {
            "identical"
        } else {
            "DIFFER"
        }
    ));

    // Archive round trip at f32 precision.
    let synth = synth_generate(&SynthConfig {
        n_train: 8,
        n_test: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ap = dir.path().join("v.emb");
    write_archive(&synth.videos, &ap).unwrap();
    let archive_ok = read_archive(&ap).unwrap() == synth.videos;
    let empty = EmbeddingArchive::new(3);
    write_archive(&empty, &dir.path().join("e.emb")).unwrap();
    let empty_ok = read_archive(&dir.path().join("e.emb")).unwrap() == empty;

    // Checkpoint round trip, bit-exact.
    let ds = synth.to_dataset().unwrap();
    let dcm = learning_dcm();
    let train = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let ck = train_run(&ds, &dcm, &train).unwrap().checkpoint;
    let cp = dir.path().join("c.dcmc");
    let back = checkpoint_roundtrip(&ck, &cp).unwrap();
    let ck_ok = back == ck && back.to_bytes().unwrap() == ck.to_bytes().unwrap();
    pass &= archive_ok && empty_ok && ck_ok;
    notes.push(format!(
        "round trips: archive {archive_ok}, empty archive {empty_ok}, checkpoint {ck_ok}"
    ));

    let p = Path::new("corrupt");
    let archive_bytes = synth.videos.to_bytes();
    let (ta, pa, ua) = corruption_sweep(&archive_bytes, 64, &|b| {
        EmbeddingArchive::from_bytes(b, p).map(drop)
    });
    let small = DcmConfig {
        model_dim: 4,
        num_heads: 2,
        ..DcmConfig::default()
    };
    let small_ck = Checkpoint {
        dcm: small.clone(),
        train: TrainConfig::default(),
        params: init_params(&small, 0).unwrap(),
        optimizer: dcmr::train::OptimizerState::new(&init_params(&small, 0).unwrap()),
        epochs_completed: 0,
    };
    let ck_bytes = small_ck.to_bytes().unwrap();
    let (tc, pc, uc) = corruption_sweep(&ck_bytes, 12, &|b| Checkpoint::from_bytes(b, p).map(drop));
    let magic_at = matches!(
        Checkpoint::from_bytes(&[b"XCMC".as_slice(), &ck_bytes[4..]].concat(), p),
        Err(Error::Format { offset: 0, .. })
    );
    let mut bad_version = ck_bytes.clone();
    bad_version[4] = 9;
    let version_at = matches!(
        Checkpoint::from_bytes(&bad_version, p),
        Err(Error::Format { offset: 4, .. })
    );
    pass &= pa + pc + ua + uc == 0 && magic_at && version_at;
    notes.push(format!(
        "corruption: {} files, {} panics, {} untyped errors, magic/version offsets {}",
        ta + tc,
        pa + pc,
        ua + uc,
        magic_at && version_at
    ));
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 9. frame-permutation invariance

fn frame_permutation() -> Verdict {
    let dcm = learning_dcm();
    let mut worst = 0.0f64;
    let mut n_scores = 0;
    let r = &runs()[0];
    let fresh = init_params(&dcm, 99).unwrap();
    for (params, lang) in [(&r.dual, "en"), (&r.dual, "de"), (&fresh, "en")] {
        let idx = r.dataset.split_indices(Split::Test);
        let captions: Vec<_> = idx
            .iter()
            .map(|&i| r.dataset.items[i].captions[lang].clone())
            .collect();
        let videos: Vec<FrameEmbeddings> = idx
            .iter()
            .map(|&i| r.dataset.items[i].video.clone())
            .collect();
        let mut rng = rng_for(&[9, n_scores as u64]);
        let shuffled: Vec<FrameEmbeddings> = videos
            .iter()
            .map(|v| {
                let (n, _) = v.matrix.dims2().unwrap();
                let mut order: Vec<usize> = (0..n).collect();
                while n > 1 && order.iter().enumerate().all(|(a, &b)| a == b) {
                    order.shuffle(&mut rng);
                }
                let rows: Vec<Vec<f64>> = order
                    .iter()
                    .map(|&k| v.matrix.row_slice(k).to_vec())
                    .collect();
                FrameEmbeddings::from_rows(v.video_id.clone(), &rows).unwrap()
            })
            .collect();
        let branch = dcm.branch_for(lang);
        let opts = ScoreOptions::default();
        let s0 = score_matrix(&captions, &videos, params, &dcm, branch, &opts).unwrap();
        let s1 = score_matrix(&captions, &shuffled, params, &dcm, branch, &opts).unwrap();
        for (x, y) in s0.scores.data().iter().zip(s1.scores.data()) {
            worst = worst.max((x - y).abs());
        }
        n_scores += s0.scores.len();
    }
    verdict(
        worst < 1e-9,
        format!("max |score change| {worst:.2e} over {n_scores} scores"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("loss identities", loss_identities),
        ("metric oracle", metric_oracle),
        ("chance calibration", chance_calibration),
        ("learning signal", learning_signal),
        ("knowledge-transfer direction", knowledge_transfer),
        ("zero-shot language transfer", zero_shot_transfer),
        ("determinism and formats", determinism_and_formats),
        ("frame-permutation invariance", frame_permutation),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "acceptance {} {name}: {} ({})",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {}/9 passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
