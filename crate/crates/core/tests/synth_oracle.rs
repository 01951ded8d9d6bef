mod common;

use dcmr::data::{synth_generate, SynthConfig};
use dcmr::dcm::DcmConfig;
use dcmr::tensor::Tensor;
use dcmr::train::{train_run, TrainConfig};
use nalgebra::{DMatrix, DVector};

fn to_na(t: &Tensor) -> DMatrix<f64> {
    let (r, c) = t.dims2().unwrap();
    DMatrix::from_row_slice(r, c, t.data())
}

fn noiseless(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_train: n,
        n_test: 0,
        noise_scale: 0.0,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn noiseless_embeddings_are_the_maps_applied_to_latents() {
    for seed in 0..3 {
        let s = synth_generate(&noiseless(64, seed)).unwrap();
        let video_map = to_na(&s.maps.video);
        let videos = s.videos.index();
        for (i, item) in s.manifest.items.iter().enumerate() {
            let z = DVector::from_column_slice(&s.latents[i]);
            let want = &video_map * &z;
            let frames = &videos[item.video_id.as_str()].vectors;
            let (n, d) = frames.dims2().unwrap();
            assert_eq!(n, s.config.frames_per_video);
            for k in 0..n {
                for j in 0..d {
                    assert_eq!(frames.data()[k * d + j], want[j] as f32 as f64);
                }
            }
            for (lang, cid) in &item.captions {
                let want = to_na(&s.maps.text[lang]) * &z;
                let got = &s.texts[lang].index()[cid.as_str()].vectors;
                for j in 0..d {
                    assert_eq!(got.data()[j], want[j] as f32 as f64);
                }
            }
        }
    }
}

#[test]
fn captions_are_recoverable_from_frames_without_noise() {
    let s = synth_generate(&noiseless(32, 7)).unwrap();
    let video_map = to_na(&s.maps.video);
    let pinv = video_map.clone().pseudo_inverse(1e-12).unwrap();
    let text_map = to_na(&s.maps.text["fr"]);
    let videos = s.videos.index();
    for item in &s.manifest.items {
        let frames = &videos[item.video_id.as_str()].vectors;
        let mean_frame = to_na(&dcmr::tensor::mean_rows(frames).unwrap()).transpose();
        let predicted = &text_map * (&pinv * mean_frame);
        let caption = &s.texts["fr"].index()[item.captions["fr"].as_str()].vectors;
        let actual = DVector::from_column_slice(caption.data());
        let cos = predicted.column(0).dot(&actual) / (predicted.norm() * actual.norm());
        assert!((cos - 1.0).abs() < 1e-9, "cos {cos}");
    }
}

#[test]
fn zero_spread_gives_identical_captions_across_languages() {
    let s = synth_generate(&SynthConfig {
        language_spread: 0.0,
        ..noiseless(8, 1)
    })
    .unwrap();
    for item in &s.manifest.items {
        let en = &s.texts["en"].index()[item.captions["en"].as_str()].vectors;
        for lang in ["fr", "de", "es"] {
            assert_eq!(
                &s.texts[lang].index()[item.captions[lang].as_str()].vectors,
                en
            );
        }
    }
}

#[test]
fn second_epoch_loss_is_lower_in_the_median() {
    let mut drops = Vec::new();
    for seed in 0..5 {
        let ds = common::dataset(&SynthConfig {
            n_train: 64,
            n_test: 0,
            seed,
            ..SynthConfig::default()
        });
        let dcm = DcmConfig {
            model_dim: 32,
            num_heads: 4,
            ..DcmConfig::default()
        };
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 2,
            lr_max: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        let log = train_run(&ds, &dcm, &cfg).unwrap().log;
        drops.push(log[0].mean_loss - log[1].mean_loss);
    }
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] > 0.0, "loss drops {drops:?}");
}
