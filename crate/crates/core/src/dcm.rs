//! Dual cross-modal encoder.
//!
//! A pooled caption vector is the single attention query over a video's frame
//! embeddings. The attended vector `r` goes through
//! `R = LN(FC(dropout(r)) + r)`. The English and multilingual captions each
//! have their own branch of parameters over the same frames.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Eager};
use crate::error::{Error, Result};
use crate::seeding::{mix, rng_for};
use crate::tensor::Tensor;

pub const ENGLISH: &str = "en";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "E")]
    English,
    #[serde(rename = "M")]
    Multilingual,
}

impl Branch {
    pub fn tag(self) -> &'static str {
        match self {
            Branch::English => "E",
            Branch::Multilingual => "M",
        }
    }

    pub(crate) fn seed_key(self) -> u64 {
        match self {
            Branch::English => 0,
            Branch::Multilingual => 1,
        }
    }
}

/// How frames are turned into a video vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VideoEncoder {
    /// Text-conditioned cross-attention block(s).
    #[default]
    Dcm,
    /// Mean of the frame vectors times the block-0 output projection; ignores the text.
    MeanPool,
}

/// Which branch encodes English captions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextRouting {
    #[default]
    Separate,
    /// English captions also go through the multilingual branch.
    MultilingualOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcmConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    /// `None`: the FC layer is one `model_dim -> model_dim` affine map.
    /// `Some(h)`: `model_dim -> h -> model_dim` with a ReLU in between.
    pub fc_hidden: Option<usize>,
    pub dropout: f64,
    pub ln_eps: f64,
    pub depth: usize,
    /// Both branches use the English branch's parameters.
    pub share_branches: bool,
    pub encoder: VideoEncoder,
    pub text_routing: TextRouting,
}

impl Default for DcmConfig {
    fn default() -> Self {
        Self {
            model_dim: 512,
            num_heads: 8,
            fc_hidden: None,
            dropout: 0.4,
            ln_eps: 1e-5,
            depth: 1,
            share_branches: false,
            encoder: VideoEncoder::Dcm,
            text_routing: TextRouting::Separate,
        }
    }
}

impl DcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim < 2 {
            return Err(Error::Config("model_dim must be >= 2".into()));
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be > 0".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.fc_hidden == Some(0) {
            return Err(Error::Config("fc_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Branch that encodes captions in `language`.
    pub fn branch_for(&self, language: &str) -> Branch {
        if language == ENGLISH && self.text_routing == TextRouting::Separate {
            Branch::English
        } else {
            Branch::Multilingual
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbeddings {
    pub video_id: String,
    /// `N_v × D` frame matrix.
    pub matrix: Tensor,
}

impl FrameEmbeddings {
    pub fn new(video_id: impl Into<String>, matrix: Tensor) -> Result<Self> {
        let video_id = video_id.into();
        matrix.dims2()?;
        if !matrix.is_finite() {
            return Err(Error::Numeric(format!(
                "video {video_id:?} has non-finite frames"
            )));
        }
        Ok(Self { video_id, matrix })
    }

    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let video_id = video_id.into();
        if rows.is_empty() {
            return Err(Error::EmptyVideo(video_id));
        }
        Self::new(video_id, Tensor::from_rows(rows)?)
    }

    pub fn num_frames(&self) -> usize {
        self.matrix.dims2().map(|(r, _)| r).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dims2().map(|(_, c)| c).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub caption_id: String,
    pub language: String,
    pub vector: Vec<f64>,
}

impl TextEmbedding {
    pub fn new(
        caption_id: impl Into<String>,
        language: impl Into<String>,
        vector: Vec<f64>,
    ) -> Result<Self> {
        let caption_id = caption_id.into();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "caption {caption_id:?} is non-finite"
            )));
        }
        Ok(Self {
            caption_id,
            language: language.into(),
            vector,
        })
    }

    pub fn as_row(&self) -> Result<Tensor> {
        Tensor::row(self.vector.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub fc: Vec<Affine<T>>,
    pub ln_gain: T,
    pub ln_bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams<T> {
    pub blocks: Vec<Block<T>>,
}

/// All learnable tensors, generic over storage so the same layout holds plain
/// tensors ([`DcmParams`]) or tape handles during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub english: BranchParams<T>,
    /// Empty when the config shares branches.
    pub multilingual: BranchParams<T>,
    /// Log of the inverse similarity temperature, when it is learned.
    pub logit_scale: Option<T>,
}

pub type DcmParams = Params<Tensor>;

impl<T> Params<T> {
    /// Parameters used by `branch`, honoring branch sharing.
    pub fn branch(&self, branch: Branch) -> &BranchParams<T> {
        match branch {
            Branch::Multilingual if !self.multilingual.blocks.is_empty() => &self.multilingual,
            _ => &self.english,
        }
    }

    pub fn branch_mut(&mut self, branch: Branch) -> &mut BranchParams<T> {
        match branch {
            Branch::Multilingual if !self.multilingual.blocks.is_empty() => &mut self.multilingual,
            _ => &mut self.english,
        }
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (tag, bp) in [("E", &self.english), ("M", &self.multilingual)] {
            for (l, b) in bp.blocks.iter().enumerate() {
                let p = format!("{tag}.{l}");
                out.push((format!("{p}.w_q"), &b.w_q));
                out.push((format!("{p}.w_k"), &b.w_k));
                out.push((format!("{p}.w_v"), &b.w_v));
                out.push((format!("{p}.w_o"), &b.w_o));
                for (k, fc) in b.fc.iter().enumerate() {
                    out.push((format!("{p}.fc{k}.weight"), &fc.weight));
                    out.push((format!("{p}.fc{k}.bias"), &fc.bias));
                }
                out.push((format!("{p}.ln.gain"), &b.ln_gain));
                out.push((format!("{p}.ln.bias"), &b.ln_bias));
            }
        }
        if let Some(s) = &self.logit_scale {
            out.push(("logit_scale".to_string(), s));
        }
        out
    }

    /// Mutable references in the same order as [`Params::named`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for bp in [&mut self.english, &mut self.multilingual] {
            for b in &mut bp.blocks {
                out.push(&mut b.w_q);
                out.push(&mut b.w_k);
                out.push(&mut b.w_v);
                out.push(&mut b.w_o);
                for fc in &mut b.fc {
                    out.push(&mut fc.weight);
                    out.push(&mut fc.bias);
                }
                out.push(&mut b.ln_gain);
                out.push(&mut b.ln_bias);
            }
        }
        if let Some(s) = &mut self.logit_scale {
            out.push(s);
        }
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        let mut map_branch = |bp: &BranchParams<T>| BranchParams {
            blocks: bp
                .blocks
                .iter()
                .map(|b| Block {
                    w_q: f(&b.w_q),
                    w_k: f(&b.w_k),
                    w_v: f(&b.w_v),
                    w_o: f(&b.w_o),
                    fc: b
                        .fc
                        .iter()
                        .map(|a| Affine {
                            weight: f(&a.weight),
                            bias: f(&a.bias),
                        })
                        .collect(),
                    ln_gain: f(&b.ln_gain),
                    ln_bias: f(&b.ln_bias),
                })
                .collect(),
        };
        let english = map_branch(&self.english);
        let multilingual = map_branch(&self.multilingual);
        Params {
            english,
            multilingual,
            logit_scale: self.logit_scale.as_ref().map(f),
        }
    }
}

impl DcmParams {
    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn with_logit_scale(mut self, value: f64) -> Self {
        self.logit_scale = Some(Tensor::filled(&[1], value));
        self
    }
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-a, a).expect("bound is positive");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

fn init_block(cfg: &DcmConfig, rng: &mut impl Rng) -> Block<Tensor> {
    let d = cfg.model_dim;
    let w_q = xavier(rng, d, d);
    let w_k = xavier(rng, d, d);
    let w_v = xavier(rng, d, d);
    let w_o = xavier(rng, d, d);
    let widths: Vec<usize> = match cfg.fc_hidden {
        None => vec![d, d],
        Some(h) => vec![d, h, d],
    };
    let fc = widths
        .windows(2)
        .map(|w| Affine {
            weight: xavier(rng, w[0], w[1]),
            bias: Tensor::zeros(&[1, w[1]]),
        })
        .collect();
    Block {
        w_q,
        w_k,
        w_v,
        w_o,
        fc,
        ln_gain: Tensor::filled(&[d], 1.0),
        ln_bias: Tensor::zeros(&[d]),
    }
}

/// Xavier-uniform projections, zero biases, identity layer norm.
pub fn init_params(cfg: &DcmConfig, seed: u64) -> Result<DcmParams> {
    cfg.validate()?;
    let branch = |b: Branch| {
        let mut rng = rng_for(&[seed, 0x1417, b.seed_key()]);
        BranchParams {
            blocks: (0..cfg.depth).map(|_| init_block(cfg, &mut rng)).collect(),
        }
    };
    let english = branch(Branch::English);
    let multilingual = if cfg.share_branches {
        BranchParams { blocks: Vec::new() }
    } else {
        branch(Branch::Multilingual)
    };
    Ok(Params {
        english,
        multilingual,
        logit_scale: None,
    })
}

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Per-head keys (transposed, `d × N`) and values (`N × d`) of one block.
#[derive(Clone, Debug)]
pub struct FrameKv<T> {
    keys_t: Vec<T>,
    values: Vec<T>,
}

/// Query-independent part of encoding one video: per-block keys and values,
/// or the pooled frame vector for the mean-pool encoder.
#[derive(Clone, Debug)]
pub enum VideoContext<T> {
    Attention(Vec<FrameKv<T>>),
    Pooled(T),
}

pub fn video_context<B: Backend>(
    b: &mut B,
    frames: &B::T,
    branch: &BranchParams<B::T>,
    cfg: &DcmConfig,
) -> Result<VideoContext<B::T>> {
    let (n, d) = b.value(frames).dims2()?;
    if n == 0 {
        return Err(Error::EmptyVideo(String::new()));
    }
    if d != cfg.model_dim {
        return Err(Error::dim(format!(
            "frame dim {d} does not match model_dim {}",
            cfg.model_dim
        )));
    }
    if cfg.encoder == VideoEncoder::MeanPool {
        let first = branch
            .blocks
            .first()
            .ok_or_else(|| Error::Config("no blocks".into()))?;
        let pooled = b.mean_rows(frames)?;
        return Ok(VideoContext::Pooled(b.matmul(&pooled, &first.w_o)?));
    }
    let hd = cfg.head_dim();
    let mut out = Vec::with_capacity(branch.blocks.len());
    for block in &branch.blocks {
        let k = b.matmul(frames, &block.w_k)?;
        let v = b.matmul(frames, &block.w_v)?;
        let mut keys_t = Vec::with_capacity(cfg.num_heads);
        let mut values = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let kh = b.slice_cols(&k, h * hd, hd)?;
            keys_t.push(b.transpose(&kh)?);
            values.push(b.slice_cols(&v, h * hd, hd)?);
        }
        out.push(FrameKv { keys_t, values });
    }
    Ok(VideoContext::Attention(out))
}

/// Single-query multi-head attention of one block. Pushes each head's
/// attention weights into `weights` when given.
fn attend<B: Backend>(
    b: &mut B,
    query: &B::T,
    kv: &FrameKv<B::T>,
    block: &Block<B::T>,
    cfg: &DcmConfig,
    mut weights: Option<&mut Vec<Tensor>>,
) -> Result<B::T> {
    let hd = cfg.head_dim();
    let q = b.matmul(query, &block.w_q)?;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = b.slice_cols(&q, h * hd, hd)?;
        let logits = b.matmul(&qh, &kv.keys_t[h])?;
        let p = b.softmax_rows(&logits, scale)?;
        if let Some(w) = weights.as_deref_mut() {
            w.push(b.value(&p).clone());
        }
        heads.push(b.matmul(&p, &kv.values[h])?);
    }
    let cat = b.concat_cols(&heads)?;
    b.matmul(&cat, &block.w_o)
}

fn dropout_mask(cfg: &DcmConfig, seed: u64, layer: usize) -> Arc<Tensor> {
    let mut rng = rng_for(&[seed, 0xD80, layer as u64]);
    let keep = 1.0 / (1.0 - cfg.dropout);
    let data = (0..cfg.model_dim)
        .map(|_| {
            if rng.random::<f64>() < cfg.dropout {
                0.0
            } else {
                keep
            }
        })
        .collect();
    Arc::new(Tensor::new(vec![1, cfg.model_dim], data).expect("mask shape"))
}

fn fc_forward<B: Backend>(b: &mut B, x: &B::T, fc: &[Affine<B::T>]) -> Result<B::T> {
    let mut h = x.clone();
    for (i, layer) in fc.iter().enumerate() {
        if i > 0 {
            h = b.relu(&h)?;
        }
        let z = b.matmul(&h, &layer.weight)?;
        h = b.add(&z, &layer.bias)?;
    }
    Ok(h)
}

/// Encodes a video for one caption query: `R = LN(FC(dropout(r)) + r)` per block.
pub fn encode_video<B: Backend>(
    b: &mut B,
    text: &B::T,
    ctx: &VideoContext<B::T>,
    branch: &BranchParams<B::T>,
    cfg: &DcmConfig,
    mode: Mode,
) -> Result<B::T> {
    let (_, d) = b.value(text).dims2()?;
    if d != cfg.model_dim {
        return Err(Error::dim(format!(
            "text dim {d} does not match model_dim {}",
            cfg.model_dim
        )));
    }
    let kvs = match ctx {
        VideoContext::Pooled(v) => return Ok(v.clone()),
        VideoContext::Attention(kvs) => kvs,
    };
    let mut query = text.clone();
    for (layer, (block, kv)) in branch.blocks.iter().zip(kvs).enumerate() {
        let r = attend(b, &query, kv, block, cfg, None)?;
        let dropped = match mode {
            Mode::Train { dropout_seed } if cfg.dropout > 0.0 => {
                b.mask_mul(&r, dropout_mask(cfg, dropout_seed, layer))?
            }
            _ => r.clone(),
        };
        let f = fc_forward(b, &dropped, &block.fc)?;
        let res = b.add(&f, &r)?;
        query = b.layer_norm(&res, &block.ln_gain, &block.ln_bias, cfg.ln_eps)?;
    }
    Ok(query)
}

fn check_dims(text: &TextEmbedding, frames: &FrameEmbeddings, cfg: &DcmConfig) -> Result<()> {
    if frames.num_frames() == 0 {
        return Err(Error::EmptyVideo(frames.video_id.clone()));
    }
    if text.vector.len() != cfg.model_dim || frames.dim() != cfg.model_dim {
        return Err(Error::dim(format!(
            "caption {:?} (dim {}) / video {:?} (dim {}) vs model_dim {}",
            text.caption_id,
            text.vector.len(),
            frames.video_id,
            frames.dim(),
            cfg.model_dim
        )));
    }
    Ok(())
}

fn with_video_id<T>(r: Result<T>, frames: &FrameEmbeddings) -> Result<T> {
    r.map_err(|e| match e {
        Error::EmptyVideo(_) => Error::EmptyVideo(frames.video_id.clone()),
        e => e,
    })
}

/// Output `r_v` of the first attention block (before FC and layer norm).
pub fn cross_attend(
    text: &TextEmbedding,
    frames: &FrameEmbeddings,
    params: &DcmParams,
    cfg: &DcmConfig,
    branch: Branch,
) -> Result<Vec<f64>> {
    check_dims(text, frames, cfg)?;
    let bp = params.branch(branch);
    let block = bp
        .blocks
        .first()
        .ok_or_else(|| Error::Config("no blocks".into()))?;
    let mut e = Eager;
    let one = BranchParams {
        blocks: vec![block.clone()],
    };
    let attn_cfg = DcmConfig {
        encoder: VideoEncoder::Dcm,
        ..cfg.clone()
    };
    let ctx = with_video_id(
        video_context(&mut e, &frames.matrix, &one, &attn_cfg),
        frames,
    )?;
    let VideoContext::Attention(kvs) = ctx else {
        unreachable!()
    };
    let r = attend(&mut e, &text.as_row()?, &kvs[0], block, cfg, None)?;
    Ok(r.into_data())
}

/// Per-head attention weights of the first block, each a distribution over frames.
pub fn attention_weights(
    text: &TextEmbedding,
    frames: &FrameEmbeddings,
    params: &DcmParams,
    cfg: &DcmConfig,
    branch: Branch,
) -> Result<Vec<Vec<f64>>> {
    check_dims(text, frames, cfg)?;
    let block = params
        .branch(branch)
        .blocks
        .first()
        .ok_or_else(|| Error::Config("no blocks".into()))?;
    let one = BranchParams {
        blocks: vec![block.clone()],
    };
    let attn_cfg = DcmConfig {
        encoder: VideoEncoder::Dcm,
        ..cfg.clone()
    };
    let mut e = Eager;
    let VideoContext::Attention(kvs) = video_context(&mut e, &frames.matrix, &one, &attn_cfg)?
    else {
        unreachable!()
    };
    let mut weights = Vec::new();
    attend(
        &mut e,
        &text.as_row()?,
        &kvs[0],
        block,
        cfg,
        Some(&mut weights),
    )?;
    Ok(weights.into_iter().map(Tensor::into_data).collect())
}

/// Video representation `R_v` conditioned on `text`.
pub fn dcm_forward(
    text: &TextEmbedding,
    frames: &FrameEmbeddings,
    params: &DcmParams,
    cfg: &DcmConfig,
    branch: Branch,
    mode: Mode,
) -> Result<Vec<f64>> {
    check_dims(text, frames, cfg)?;
    let bp = params.branch(branch);
    let mut e = Eager;
    let ctx = with_video_id(video_context(&mut e, &frames.matrix, bp, cfg), frames)?;
    let out = encode_video(&mut e, &text.as_row()?, &ctx, bp, cfg, mode)?;
    Ok(out.into_data())
}

/// Dropout seed for one branch derived from a shared step seed.
pub fn branch_seed(seed: u64, branch: Branch) -> u64 {
    mix(&[seed, branch.seed_key()])
}

/// Both branch representations of one video for an English caption and a
/// caption in another language.
pub fn dual_forward(
    english: &TextEmbedding,
    multilingual: &TextEmbedding,
    frames: &FrameEmbeddings,
    params: &DcmParams,
    cfg: &DcmConfig,
    mode: Mode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if english.language != ENGLISH {
        return Err(Error::Routing(format!(
            "caption {:?} on the English side has language {:?}",
            english.caption_id, english.language
        )));
    }
    if multilingual.language == ENGLISH {
        return Err(Error::Routing(format!(
            "caption {:?} on the multilingual side is English",
            multilingual.caption_id
        )));
    }
    let mode_for = |b: Branch| match mode {
        Mode::Eval => Mode::Eval,
        Mode::Train { dropout_seed } => Mode::Train {
            dropout_seed: branch_seed(dropout_seed, b),
        },
    };
    let e_branch = cfg.branch_for(ENGLISH);
    let r_e = dcm_forward(
        english,
        frames,
        params,
        cfg,
        e_branch,
        mode_for(Branch::English),
    )?;
    let r_m = dcm_forward(
        multilingual,
        frames,
        params,
        cfg,
        Branch::Multilingual,
        mode_for(Branch::Multilingual),
    )?;
    Ok((r_e, r_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    fn small_cfg() -> DcmConfig {
        DcmConfig {
            model_dim: 8,
            num_heads: 2,
            ..DcmConfig::default()
        }
    }

    fn rand_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_for(&[seed]);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn init_is_deterministic_with_identity_layer_norm() {
        let cfg = small_cfg();
        let a = init_params(&cfg, 9).unwrap();
        assert_eq!(a, init_params(&cfg, 9).unwrap());
        assert_ne!(a, init_params(&cfg, 10).unwrap());
        for bp in [&a.english, &a.multilingual] {
            for b in &bp.blocks {
                assert!(b.ln_gain.data().iter().all(|&v| v == 1.0));
                assert!(b.ln_bias.data().iter().all(|&v| v == 0.0));
                assert!(b.fc[0].bias.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_rejects_indivisible_heads() {
        let cfg = DcmConfig {
            model_dim: 10,
            num_heads: 3,
            ..DcmConfig::default()
        };
        assert!(matches!(init_params(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_weight_mean_is_near_zero() {
        let cfg = DcmConfig::default();
        let p = init_params(&cfg, 3).unwrap();
        let w = &p.english.blocks[0].w_q;
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        // uniform(-a, a) has sigma = a / sqrt(3)
        let a = (6.0f64 / 1024.0).sqrt();
        let sigma = a / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        let max = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= a);
    }

    #[test]
    fn single_frame_attention_passes_value_through() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 1).unwrap();
        let f = rand_rows(2, 1, 8);
        let frames = FrameEmbeddings::from_rows("v", &f).unwrap();
        let text = TextEmbedding::new("c", "en", rand_rows(3, 1, 8).remove(0)).unwrap();
        let w = attention_weights(&text, &frames, &p, &cfg, Branch::English).unwrap();
        for head in &w {
            assert_eq!(head, &vec![1.0]);
        }
        let r = cross_attend(&text, &frames, &p, &cfg, Branch::English).unwrap();
        let b = &p.english.blocks[0];
        let f1 = Tensor::from_rows(&f).unwrap();
        let expect = tensor::matmul(&tensor::matmul(&f1, &b.w_v).unwrap(), &b.w_o).unwrap();
        for (x, y) in r.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_frames_match_single_frame() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 1).unwrap();
        let f = rand_rows(2, 1, 8);
        let one = FrameEmbeddings::from_rows("v", &f).unwrap();
        let many = FrameEmbeddings::from_rows("v", &vec![f[0].clone(); 5]).unwrap();
        let text = TextEmbedding::new("c", "en", rand_rows(3, 1, 8).remove(0)).unwrap();
        let a = cross_attend(&text, &one, &p, &cfg, Branch::English).unwrap();
        let b = cross_attend(&text, &many, &p, &cfg, Branch::English).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_set_two_frame_single_head() {
        // model_dim 2, one head, identity projections: r = softmax(t·Fᵀ/√2)·F
        let cfg = DcmConfig {
            model_dim: 2,
            num_heads: 1,
            ..DcmConfig::default()
        };
        let mut p = init_params(&cfg, 0).unwrap();
        let blk = &mut p.english.blocks[0];
        for t in [&mut blk.w_q, &mut blk.w_k, &mut blk.w_v, &mut blk.w_o] {
            *t = Tensor::identity(2);
        }
        let frames = FrameEmbeddings::from_rows("v", &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let text = TextEmbedding::new("c", "en", vec![0.5, 1.0]).unwrap();
        let r = cross_attend(&text, &frames, &p, &cfg, Branch::English).unwrap();
        let s1 = 0.5 / 2f64.sqrt();
        let s2 = 2.0 / 2f64.sqrt();
        let w1 = s1.exp() / (s1.exp() + s2.exp());
        let w2 = 1.0 - w1;
        assert!((r[0] - w1 * 1.0).abs() < 1e-12);
        assert!((r[1] - w2 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_video_and_dim_errors() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 1).unwrap();
        assert!(matches!(
            FrameEmbeddings::from_rows("v", &[]),
            Err(Error::EmptyVideo(_))
        ));
        let frames = FrameEmbeddings::from_rows("v", &rand_rows(1, 2, 4)).unwrap();
        let text = TextEmbedding::new("c", "en", vec![0.0; 8]).unwrap();
        assert!(matches!(
            dcm_forward(&text, &frames, &p, &cfg, Branch::English, Mode::Eval),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dropout_behaviour() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 4).unwrap();
        let frames = FrameEmbeddings::from_rows("v", &rand_rows(5, 3, 8)).unwrap();
        let text = TextEmbedding::new("c", "en", rand_rows(6, 1, 8).remove(0)).unwrap();
        let e1 = dcm_forward(&text, &frames, &p, &cfg, Branch::English, Mode::Eval).unwrap();
        let e2 = dcm_forward(&text, &frames, &p, &cfg, Branch::English, Mode::Eval).unwrap();
        assert_eq!(e1, e2);

        let train = Mode::Train { dropout_seed: 77 };
        let t = dcm_forward(&text, &frames, &p, &cfg, Branch::English, train).unwrap();
        assert_ne!(t, e1);

        let no_drop = DcmConfig {
            dropout: 0.0,
            ..cfg
        };
        let t0 = dcm_forward(&text, &frames, &p, &no_drop, Branch::English, train).unwrap();
        assert_eq!(t0, e1);
    }

    #[test]
    fn zero_fc_reduces_to_layer_norm_of_attention() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg, 4).unwrap();
        p.english.blocks[0].fc[0].weight = Tensor::zeros(&[8, 8]);
        let frames = FrameEmbeddings::from_rows("v", &rand_rows(5, 3, 8)).unwrap();
        let text = TextEmbedding::new("c", "en", rand_rows(6, 1, 8).remove(0)).unwrap();
        let r = cross_attend(&text, &frames, &p, &cfg, Branch::English).unwrap();
        let out = dcm_forward(&text, &frames, &p, &cfg, Branch::English, Mode::Eval).unwrap();
        let b = &p.english.blocks[0];
        let expect =
            tensor::layer_norm(&Tensor::row(r).unwrap(), &b.ln_gain, &b.ln_bias, cfg.ln_eps)
                .unwrap();
        assert_eq!(out, expect.into_data());
    }

    #[test]
    fn dual_forward_branches_are_independent() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 4).unwrap();
        let frames = FrameEmbeddings::from_rows("v", &rand_rows(5, 3, 8)).unwrap();
        let en = TextEmbedding::new("c", "en", rand_rows(6, 1, 8).remove(0)).unwrap();
        let fr = TextEmbedding::new("c-fr", "fr", rand_rows(7, 1, 8).remove(0)).unwrap();
        let (re, rm) = dual_forward(&en, &fr, &frames, &p, &cfg, Mode::Eval).unwrap();

        let mut zeroed = p.clone();
        for t in zeroed
            .multilingual
            .blocks
            .iter_mut()
            .flat_map(|b| [&mut b.w_q, &mut b.w_v])
        {
            *t = Tensor::zeros(t.shape());
        }
        let (re2, rm2) = dual_forward(&en, &fr, &frames, &zeroed, &cfg, Mode::Eval).unwrap();
        assert_eq!(re, re2);
        assert_ne!(rm, rm2);

        // standalone equivalence
        assert_eq!(
            re,
            dcm_forward(&en, &frames, &p, &cfg, Branch::English, Mode::Eval).unwrap()
        );
        assert_eq!(
            rm,
            dcm_forward(&fr, &frames, &p, &cfg, Branch::Multilingual, Mode::Eval).unwrap()
        );

        // identical branches and texts give identical outputs
        let mut same = p.clone();
        same.multilingual = same.english.clone();
        let fr_same = TextEmbedding::new("c-fr", "fr", en.vector.clone()).unwrap();
        let (a, b) = dual_forward(&en, &fr_same, &frames, &same, &cfg, Mode::Eval).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            dual_forward(&fr, &fr, &frames, &p, &cfg, Mode::Eval),
            Err(Error::Routing(_))
        ));
        assert!(matches!(
            dual_forward(&en, &en, &frames, &p, &cfg, Mode::Eval),
            Err(Error::Routing(_))
        ));
    }

    #[test]
    fn shared_branches_have_one_parameter_set() {
        let cfg = DcmConfig {
            share_branches: true,
            ..small_cfg()
        };
        let p = init_params(&cfg, 1).unwrap();
        assert!(p.multilingual.blocks.is_empty());
        assert!(p.named().iter().all(|(n, _)| n.starts_with("E.")));
        assert_eq!(p.branch(Branch::Multilingual), &p.english);
    }

    #[test]
    fn mean_pool_ignores_text() {
        let cfg = DcmConfig {
            encoder: VideoEncoder::MeanPool,
            ..small_cfg()
        };
        let p = init_params(&cfg, 1).unwrap();
        let frames = FrameEmbeddings::from_rows("v", &rand_rows(5, 3, 8)).unwrap();
        let a = TextEmbedding::new("a", "en", rand_rows(6, 1, 8).remove(0)).unwrap();
        let b = TextEmbedding::new("b", "en", rand_rows(7, 1, 8).remove(0)).unwrap();
        assert_eq!(
            dcm_forward(&a, &frames, &p, &cfg, Branch::English, Mode::Eval).unwrap(),
            dcm_forward(&b, &frames, &p, &cfg, Branch::English, Mode::Eval).unwrap()
        );
    }
}
