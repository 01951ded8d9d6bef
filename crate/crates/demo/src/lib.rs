//! Browser demo for the retrieval engine.
//!
//! Three operations, each a pure function returning JSON so the same code
//! runs under native tests and behind the wasm exports.

use dcmr::autograd::Tape;
use dcmr::data::{batch_iter, synth_generate, Split, SynthConfig};
use dcmr::dcm::{attention_weights, init_params, DcmConfig, FrameEmbeddings, TextEmbedding};
use dcmr::loss::{info_nce, similarity_matrix, LossTerm};
use dcmr::seeding::{mix, rng_for};
use dcmr::train::{
    adamw_step, batch_objective, collect_grads, cosine_lr, initial_params, track_params,
    OptimizerState, TrainConfig,
};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DIM: usize = 16;

#[derive(Debug, Serialize, PartialEq)]
pub struct AttentionView {
    pub language: String,
    pub branch: String,
    /// One distribution over frames per head.
    pub heads: Vec<Vec<f64>>,
    /// Cosine between the caption and each frame.
    pub frame_cosine: Vec<f64>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TemperaturePoint {
    pub temperature: f64,
    pub v2t: f64,
    pub t2v: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TrainPoint {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

fn synth(n: usize, frames: usize, noise: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_train: n,
        n_val: 0,
        n_test: 0,
        latent_dim: 8,
        model_dim: DIM,
        frames_per_video: frames,
        noise_scale: noise,
        seed,
        ..SynthConfig::default()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

/// Attention of freshly initialized first-block heads over the frames of one
/// synthetic video, for its caption in `language`.
pub fn attention_view(
    seed: u64,
    frames: usize,
    heads: usize,
    noise: f64,
    language: &str,
) -> dcmr::Result<AttentionView> {
    let ds = synth_generate(&synth(1, frames, noise, seed))?.to_dataset()?;
    let item = &ds.items[0];
    let caption: &TextEmbedding = item
        .captions
        .get(language)
        .ok_or_else(|| dcmr::Error::Config(format!("no caption in {language:?}")))?;
    let cfg = DcmConfig {
        model_dim: DIM,
        num_heads: heads,
        ..DcmConfig::default()
    };
    let params = init_params(&cfg, seed)?;
    let branch = cfg.branch_for(language);
    let video: &FrameEmbeddings = &item.video;
    let weights = attention_weights(caption, video, &params, &cfg, branch)?;
    let frame_cosine = (0..video.num_frames())
        .map(|k| cosine(&caption.vector, video.matrix.row_slice(k)))
        .collect();
    Ok(AttentionView {
        language: language.to_string(),
        branch: branch.tag().to_string(),
        heads: weights,
        frame_cosine,
    })
}

/// Both contrastive terms over a log-spaced temperature grid for a batch of
/// random Gaussian captions whose paired videos are `signal · t + (1 - signal) · r`
/// with `r` random, compared by cosine.
pub fn loss_vs_temperature(
    seed: u64,
    batch: usize,
    signal: f64,
) -> dcmr::Result<Vec<TemperaturePoint>> {
    if !(0.0..=1.0).contains(&signal) {
        return Err(dcmr::Error::Config(format!(
            "signal {signal} not in [0, 1]"
        )));
    }
    let mut rng = rng_for(&[seed, 0x7E3]);
    let mut gaussian =
        || -> Vec<f64> { (0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let texts: Vec<Vec<f64>> = (0..batch).map(|_| gaussian()).collect();
    let videos: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| {
            let r = gaussian();
            t.iter()
                .zip(&r)
                .map(|(a, b)| signal * a + (1.0 - signal) * b)
                .collect()
        })
        .collect();
    (0..25)
        .map(|k| {
            let temperature = 10f64.powf(-2.0 + k as f64 / 8.0);
            let s = similarity_matrix(&texts, &videos, true, temperature)?;
            Ok(TemperaturePoint {
                temperature,
                v2t: info_nce(&s, LossTerm::V2t)?,
                t2v: info_nce(&s, LossTerm::T2v)?,
            })
        })
        .collect()
}

/// A short training run on a small synthetic set; the loss and learning rate
/// of every step.
pub fn train_curve(
    seed: u64,
    epochs: usize,
    lr_max: f64,
    multilingual_weight: f64,
) -> dcmr::Result<Vec<TrainPoint>> {
    let ds = synth_generate(&synth(32, 4, 0.1, seed))?.to_dataset()?;
    let dcm = DcmConfig {
        model_dim: DIM,
        num_heads: 2,
        ..DcmConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: 8,
        epochs,
        lr_max,
        seed,
        multilingual_weight,
        ..TrainConfig::default()
    };
    dcm.validate()?;
    cfg.validate()?;
    let split = ds.split_indices(Split::Train);
    let per_epoch = batch_iter(&split, cfg.batch_size, &cfg.languages, seed, 0)?.len() as u64;
    let total = per_epoch * epochs as u64;
    let mut params = initial_params(&dcm, &cfg)?;
    let mut opt = OptimizerState::new(&params);
    let mut tape = Tape::new();
    let mut out = Vec::new();
    for epoch in 0..epochs {
        for batch in batch_iter(&split, cfg.batch_size, &cfg.languages, seed, epoch as u64)? {
            let step = opt.step;
            let lr = cosine_lr(step, total, cfg.lr_max, cfg.effective_lr_min())?;
            tape.clear();
            let tracked = track_params(&mut tape, &params);
            let loss = batch_objective(
                &mut tape,
                &tracked,
                &ds,
                &batch,
                &dcm,
                &cfg,
                mix(&[seed, step]),
            )?;
            let value = tape.value(loss).scalar()?;
            let grads = collect_grads(&tape, loss, &tracked, &params)?;
            adamw_step(&mut params, &grads, &mut opt, lr, &cfg)?;
            out.push(TrainPoint {
                step,
                lr,
                loss: value,
            });
        }
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: dcmr::Result<T>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(dcmr::Error::from))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = attentionView)]
pub fn attention_view_js(
    seed: u32,
    frames: usize,
    heads: usize,
    noise: f64,
    language: &str,
) -> Result<String, JsValue> {
    to_js(attention_view(seed as u64, frames, heads, noise, language))
}

#[wasm_bindgen(js_name = lossVsTemperature)]
pub fn loss_vs_temperature_js(seed: u32, batch: usize, signal: f64) -> Result<String, JsValue> {
    to_js(loss_vs_temperature(seed as u64, batch, signal))
}

#[wasm_bindgen(js_name = trainCurve)]
pub fn train_curve_js(
    seed: u32,
    epochs: usize,
    lr_max: f64,
    multilingual_weight: f64,
) -> Result<String, JsValue> {
    to_js(train_curve(
        seed as u64,
        epochs,
        lr_max,
        multilingual_weight,
    ))
}
