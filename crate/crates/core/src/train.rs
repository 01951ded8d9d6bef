//! Mini-batch training: AdamW with a cosine learning-rate decay, seeded
//! batching, and `DCMC` checkpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Tape, Var};
use crate::data::{batch_iter, Batch, Dataset, LanguageSampling, Split};
use crate::dcm::{
    encode_video, init_params, video_context, Branch, BranchParams, DcmConfig, DcmParams, Mode,
    Params, VideoContext, ENGLISH,
};
use crate::error::{Error, Result};
use crate::fsutil::{self, ByteReader};
use crate::loss::{branch_loss_on, similarity_on, SimilarityConfig};
use crate::seeding::{mix, str_key};
use crate::tensor::Tensor;

/// How each video is conditioned when building the training score matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Video `j` is encoded against its own caption `j` only.
    #[default]
    Diagonal,
    /// Video `j` is re-encoded against every caption `i` of the batch.
    Cross,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Non-English caption languages for the multilingual branch.
    pub languages: Vec<String>,
    pub language_sampling: LanguageSampling,
    /// Weight of the multilingual loss; 0 trains the English branch alone.
    pub multilingual_weight: f64,
    pub conditioning: Conditioning,
    pub similarity: SimilarityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 15,
            lr_max: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            languages: vec!["fr".to_string()],
            language_sampling: LanguageSampling::SampleOne,
            multilingual_weight: 1.0,
            conditioning: Conditioning::Diagonal,
            similarity: SimilarityConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 for in-batch negatives".into(),
            ));
        }
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) {
            return Err(Error::Config("lr_max must be finite and >= 0".into()));
        }
        if !(self.lr_min >= 0.0 && self.lr_min.is_finite()) {
            return Err(Error::Config("lr_min must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "adam_eps must be > 0 and weight_decay >= 0".into(),
            ));
        }
        if !(self.multilingual_weight >= 0.0 && self.multilingual_weight.is_finite()) {
            return Err(Error::Config(
                "multilingual_weight must be finite and >= 0".into(),
            ));
        }
        if self.languages.iter().any(|l| l == ENGLISH) {
            return Err(Error::Config(
                "languages lists non-English captions only".into(),
            ));
        }
        self.similarity.validate()
    }

    /// The decay floor, clamped so a zero peak rate means no movement at all.
    pub fn effective_lr_min(&self) -> f64 {
        self.lr_min.min(self.lr_max)
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(π step / total)) / 2`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Contract(format!(
            "cosine_lr: step {step} outside [0, {total_steps}]"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Adam moments for every parameter tensor, in [`Params::named`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &DcmParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr (wd θ + m̂ / (sqrt(v̂) + eps))`.
/// Nothing is modified when a gradient is malformed or non-finite.
pub fn adamw_step(
    params: &mut DcmParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = state.m.len();
    if grads.len() != n || state.v.len() != n {
        return Err(Error::dim(format!(
            "adamw: {} gradients for {n} parameters",
            grads.len()
        )));
    }
    let mut values = params.values_mut();
    if values.len() != n {
        return Err(Error::dim("optimizer state does not match parameters"));
    }
    for (i, (g, p)) in grads.iter().zip(&values).enumerate() {
        if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::dim(format!(
                "adamw: shape mismatch for parameter {i}"
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {i}; step aborted"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, p) in values.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, theta) in p.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *theta -= lr * (cfg.weight_decay * *theta + m_hat / (v_hat.sqrt() + cfg.adam_eps));
        }
    }
    Ok(())
}

/// Fresh parameters for a run, including the learned temperature when enabled.
pub fn initial_params(dcm: &DcmConfig, train: &TrainConfig) -> Result<DcmParams> {
    let p = init_params(dcm, train.seed)?;
    Ok(if train.similarity.learnable_temperature {
        p.with_logit_scale((1.0 / train.similarity.temperature).ln())
    } else {
        p
    })
}

/// Contrastive loss of one branch over a batch.
#[allow(clippy::too_many_arguments)]
fn branch_batch_loss<B: Backend>(
    tape: &mut B,
    texts: &[B::T],
    videos: &[B::T],
    bp: &BranchParams<B::T>,
    logit_scale: Option<&B::T>,
    dcm: &DcmConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<B::T> {
    let contexts: Vec<VideoContext<B::T>> = videos
        .iter()
        .map(|f| video_context(tape, f, bp, dcm))
        .collect::<Result<_>>()?;
    let mode = |s: u64| Mode::Train { dropout_seed: s };
    let text_mat = tape.concat_rows(texts)?;
    let scores = match cfg.conditioning {
        Conditioning::Diagonal => {
            let reps = texts
                .iter()
                .zip(&contexts)
                .zip(seeds)
                .map(|((t, ctx), &s)| encode_video(tape, t, ctx, bp, dcm, mode(s)))
                .collect::<Result<Vec<_>>>()?;
            let video_mat = tape.concat_rows(&reps)?;
            similarity_on(tape, &text_mat, &video_mat, &cfg.similarity, logit_scale)?
        }
        Conditioning::Cross => {
            let mut rows = Vec::with_capacity(texts.len());
            for (i, t) in texts.iter().enumerate() {
                let reps = contexts
                    .iter()
                    .enumerate()
                    .map(|(j, ctx)| {
                        encode_video(tape, t, ctx, bp, dcm, mode(mix(&[seeds[j], i as u64])))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let video_mat = tape.concat_rows(&reps)?;
                rows.push(similarity_on(
                    tape,
                    t,
                    &video_mat,
                    &cfg.similarity,
                    logit_scale,
                )?);
            }
            tape.concat_rows(&rows)?
        }
    };
    branch_loss_on(tape, &scores)
}

/// The full training objective for one batch, on any backend.
pub fn batch_objective<B: Backend>(
    tape: &mut B,
    params: &Params<B::T>,
    dataset: &Dataset,
    batch: &Batch,
    dcm: &DcmConfig,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<B::T> {
    let items: Vec<_> = batch.items.iter().map(|&i| &dataset.items[i]).collect();
    let videos: Vec<B::T> = items
        .iter()
        .map(|it| tape.constant(it.video.matrix.clone()))
        .collect();
    let text_vars = |tape: &mut B, langs: &dyn Fn(usize) -> String| -> Result<Vec<B::T>> {
        items
            .iter()
            .enumerate()
            .map(|(k, it)| {
                let lang = langs(k);
                let cap = it.captions.get(&lang).ok_or_else(|| {
                    Error::Dataset(format!(
                        "video {:?} has no {lang:?} caption",
                        it.video.video_id
                    ))
                })?;
                Ok(tape.constant(cap.as_row()?))
            })
            .collect()
    };
    let seeds_for = |branch: Branch, lang: &str| -> Vec<u64> {
        (0..items.len())
            .map(|k| mix(&[step_seed, k as u64, branch.seed_key(), str_key(lang)]))
            .collect()
    };
    let ls = params.logit_scale.as_ref();

    let en_branch = dcm.branch_for(ENGLISH);
    let en_texts = text_vars(tape, &|_| ENGLISH.to_string())?;
    let mut total = branch_batch_loss(
        tape,
        &en_texts,
        &videos,
        params.branch(en_branch),
        ls,
        dcm,
        cfg,
        &seeds_for(Branch::English, ENGLISH),
    )?;

    if cfg.multilingual_weight > 0.0 && !cfg.languages.is_empty() {
        let m_params = params.branch(Branch::Multilingual);
        let mut terms = Vec::new();
        match cfg.language_sampling {
            LanguageSampling::SampleOne => {
                let texts = text_vars(tape, &|k| batch.languages[k].clone())?;
                let seeds = seeds_for(Branch::Multilingual, "*");
                terms.push(branch_batch_loss(
                    tape, &texts, &videos, m_params, ls, dcm, cfg, &seeds,
                )?);
            }
            LanguageSampling::SumAll => {
                for lang in &cfg.languages {
                    let texts = text_vars(tape, &|_| lang.clone())?;
                    let seeds = seeds_for(Branch::Multilingual, lang);
                    terms.push(branch_batch_loss(
                        tape, &texts, &videos, m_params, ls, dcm, cfg, &seeds,
                    )?);
                }
            }
        }
        let mut l_m = terms[0].clone();
        for t in &terms[1..] {
            l_m = tape.add(&l_m, t)?;
        }
        let weighted = if cfg.multilingual_weight == 1.0 {
            l_m
        } else {
            tape.scale(&l_m, cfg.multilingual_weight)?
        };
        total = tape.add(&total, &weighted)?;
    }
    Ok(total)
}

/// Puts every parameter on the tape as a leaf.
pub fn track_params(tape: &mut Tape, params: &DcmParams) -> Params<Var> {
    params.map(|t| tape.leaf(t.clone()))
}

/// Gradients for every parameter in [`Params::named`] order; zeros where no
/// gradient flowed.
pub fn collect_grads(
    tape: &Tape,
    loss: Var,
    tracked: &Params<Var>,
    params: &DcmParams,
) -> Result<Vec<Tensor>> {
    let g = tape.backward(loss)?;
    Ok(tracked
        .named()
        .iter()
        .zip(params.named())
        .map(|((_, v), (_, t))| g.get_or_zeros(**v, t.shape()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dcm: DcmConfig,
    pub train: TrainConfig,
    pub params: DcmParams,
    pub optimizer: OptimizerState,
    pub epochs_completed: usize,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub resume: Option<Checkpoint>,
    /// Stop after this many completed epochs (the schedule still spans `epochs`).
    pub stop_after_epochs: Option<usize>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

pub fn train_run(dataset: &Dataset, dcm: &DcmConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_run_with(dataset, dcm, cfg, TrainOptions::default())
}

pub fn train_run_with(
    dataset: &Dataset,
    dcm: &DcmConfig,
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    dcm.validate()?;
    cfg.validate()?;
    if dataset.dim != dcm.model_dim {
        return Err(Error::Config(format!(
            "dataset dim {} does not match model_dim {}",
            dataset.dim, dcm.model_dim
        )));
    }
    let split = dataset.split_indices(Split::Train);
    let mut needed = vec![ENGLISH.to_string()];
    if cfg.multilingual_weight > 0.0 {
        needed.extend(cfg.languages.iter().cloned());
    }
    dataset.require_languages(Split::Train, &needed)?;

    let (mut params, mut opt, start_epoch) = match opts.resume.take() {
        Some(ck) => {
            if &ck.dcm != dcm || &ck.train != cfg {
                return Err(Error::Config(
                    "checkpoint configuration differs from the requested run".into(),
                ));
            }
            (ck.params, ck.optimizer, ck.epochs_completed)
        }
        None => {
            let p = initial_params(dcm, cfg)?;
            let o = OptimizerState::new(&p);
            (p, o, 0)
        }
    };

    let per_epoch = batch_iter(&split, cfg.batch_size, &cfg.languages, cfg.seed, 0)?.len() as u64;
    let total_steps = per_epoch * cfg.epochs as u64;
    let lr_min = cfg.effective_lr_min();
    let end_epoch = opts
        .stop_after_epochs
        .map_or(cfg.epochs, |s| s.min(cfg.epochs));

    let mut log = Vec::new();
    let mut tape = Tape::new();
    for epoch in start_epoch..end_epoch {
        let started = Instant::now();
        let batches = batch_iter(
            &split,
            cfg.batch_size,
            &cfg.languages,
            cfg.seed,
            epoch as u64,
        )?;
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr_max;
        for batch in &batches {
            let step = opt.step;
            lr = cosine_lr(step, total_steps, cfg.lr_max, lr_min)?;
            tape.clear();
            let tracked = track_params(&mut tape, &params);
            let loss = batch_objective(
                &mut tape,
                &tracked,
                dataset,
                batch,
                dcm,
                cfg,
                mix(&[cfg.seed, 0x57E9, step]),
            )
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {step}: {m}")),
                e => e,
            })?;
            let value = tape.value(loss).scalar()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is {value} at epoch {epoch}, step {step}"
                )));
            }
            loss_sum += value;
            let grads = collect_grads(&tape, loss, &tracked, &params)?;
            adamw_step(&mut params, &grads, &mut opt, lr, cfg)?;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / batches.len().max(1) as f64,
            lr,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {} mean loss {:.6} lr {:.3e}",
            entry.epoch,
            entry.mean_loss,
            entry.lr
        );
        if let Some(cb) = opts.on_epoch.as_deref_mut() {
            cb(&entry);
        }
        log.push(entry);
    }
    let epochs_completed = end_epoch.max(start_epoch);
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            dcm: dcm.clone(),
            train: cfg.clone(),
            params,
            optimizer: opt,
            epochs_completed,
        },
        log,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    dcm: DcmConfig,
    train: TrainConfig,
    step: u64,
    epochs_completed: usize,
    /// Every random stream is derived from (seed, epoch, step).
    rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    epoch: usize,
    step: u64,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            dcm: self.dcm.clone(),
            train: self.train.clone(),
            step: self.optimizer.step,
            epochs_completed: self.epochs_completed,
            rng: RngState {
                seed: self.train.seed,
                epoch: self.epochs_completed,
                step: self.optimizer.step,
            },
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let named = self.params.named();
        for (name, t) in &named {
            push_tensor(&mut out, &format!("param/{name}"), t);
        }
        for ((name, _), t) in named.iter().zip(&self.optimizer.m) {
            push_tensor(&mut out, &format!("adam_m/{name}"), t);
        }
        for ((name, _), t) in named.iter().zip(&self.optimizer.v) {
            push_tensor(&mut out, &format!("adam_v/{name}"), t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, "bad magic, expected \"DCMC\""));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(4, format!("unsupported checkpoint version {version}")));
        }
        let json_len = r.u32("config length")? as usize;
        let json_at = r.pos();
        let json = r.take(json_len, "config block")?;
        let header: CheckpointHeader = serde_json::from_slice(json)
            .map_err(|e| r.error_at(json_at, format!("config block: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(r.error_at(json_at, "config block version mismatch"));
        }
        header
            .dcm
            .validate()
            .and_then(|_| header.train.validate())
            .map_err(|e| r.error_at(json_at, e.to_string()))?;

        let mut tensors: BTreeMap<String, (usize, Tensor)> = BTreeMap::new();
        while r.remaining() > 0 {
            let at = r.pos();
            let name_len = r.u16("tensor name length")? as usize;
            let name = r.utf8(name_len, "tensor name")?;
            let rank = r.u8("rank")? as usize;
            if rank == 0 {
                return Err(r.error_at(at, format!("tensor {name:?} has rank 0")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .unwrap_or(usize::MAX);
            if n == 0 {
                return Err(r.error_at(at, format!("tensor {name:?} has an empty shape")));
            }
            let payload_at = r.pos();
            let raw = r.take(
                n.checked_mul(8).unwrap_or(usize::MAX),
                &format!("payload of {name:?}"),
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| r.error_at(payload_at, e.to_string()))?;
            if !t.is_finite() {
                return Err(
                    r.error_at(payload_at, format!("tensor {name:?} has non-finite values"))
                );
            }
            if tensors.insert(name.clone(), (at, t)).is_some() {
                return Err(r.error_at(at, format!("duplicate tensor {name:?}")));
            }
        }

        let end = r.pos();
        let mut skeleton =
            init_params(&header.dcm, 0).map_err(|e| r.error_at(json_at, e.to_string()))?;
        if header.train.similarity.learnable_temperature {
            skeleton = skeleton.with_logit_scale(0.0);
        }
        let names: Vec<String> = skeleton.named().into_iter().map(|(n, _)| n).collect();
        let mut take = |prefix: &str, name: &str, like: &[usize]| -> Result<Tensor> {
            let key = format!("{prefix}/{name}");
            let (at, t) = tensors
                .remove(&key)
                .ok_or_else(|| r.error_at(end, format!("missing tensor {key:?}")))?;
            if t.shape() != like {
                return Err(r.error_at(
                    at,
                    format!(
                        "tensor {key:?} has shape {:?}, expected {like:?}",
                        t.shape()
                    ),
                ));
            }
            Ok(t)
        };
        let shapes: Vec<Vec<usize>> = skeleton
            .named()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        let mut params = skeleton.clone();
        for ((slot, name), shape) in params.values_mut().into_iter().zip(&names).zip(&shapes) {
            *slot = take("param", name, shape)?;
        }
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (name, shape) in names.iter().zip(&shapes) {
            m.push(take("adam_m", name, shape)?);
        }
        for (name, shape) in names.iter().zip(&shapes) {
            v.push(take("adam_v", name, shape)?);
        }
        if let Some((name, (at, _))) = tensors.iter().next() {
            return Err(r.error_at(*at, format!("unexpected tensor {name:?}")));
        }
        Ok(Checkpoint {
            dcm: header.dcm,
            train: header.train,
            params,
            optimizer: OptimizerState {
                step: header.step,
                m,
                v,
            },
            epochs_completed: header.epochs_completed,
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &ck.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fsutil::read(path)?, path)
}

/// Writes the checkpoint and reads it back.
pub fn checkpoint_roundtrip(ck: &Checkpoint, path: &Path) -> Result<Checkpoint> {
    save_checkpoint(ck, path)?;
    load_checkpoint(path)
}

/// One JSON object per line.
pub fn log_to_jsonl(log: &[EpochLog]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for e in log {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    Ok(out)
}
