//! Symmetric in-batch contrastive loss over caption/video dot products.

use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Eager};
use crate::error::{Error, Result};
use crate::tensor::{NceAxis, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    /// L2-normalize captions and videos before the dot product.
    pub normalize: bool,
    /// Scores are divided by this. Ignored when the temperature is learned.
    pub temperature: f64,
    /// Learn `log(1 / temperature)` as an extra parameter.
    pub learnable_temperature: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            normalize: false,
            temperature: 1.0,
            learnable_temperature: false,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Square caption × video score matrix, `scores[i][j] = <t_i, v_j> / temperature`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Tensor,
    pub normalized: bool,
    pub temperature: f64,
}

impl SimilarityMatrix {
    pub fn batch_size(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores.data()[i * self.batch_size() + j]
    }

    pub fn from_scores(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            scores: Tensor::from_rows(rows)?,
            normalized: false,
            temperature: 1.0,
        })
    }
}

/// Which side of the score matrix holds the softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    /// Softmax over row `i`: caption `i` against every video in the batch.
    V2t,
    /// Softmax over column `i`: video `i` against every caption in the batch.
    T2v,
}

impl LossTerm {
    fn axis(self) -> NceAxis {
        match self {
            LossTerm::V2t => NceAxis::Rows,
            LossTerm::T2v => NceAxis::Cols,
        }
    }
}

/// Builds the score matrix on any backend. `texts` and `videos` are `B × D`.
pub fn similarity_on<B: Backend>(
    b: &mut B,
    texts: &B::T,
    videos: &B::T,
    cfg: &SimilarityConfig,
    logit_scale: Option<&B::T>,
) -> Result<B::T> {
    let (bt, dt) = b.value(texts).dims2()?;
    let (bv, dv) = b.value(videos).dims2()?;
    if dt != dv {
        return Err(Error::dim(format!("caption dim {dt} vs video dim {dv}")));
    }
    if bt == 0 || bv == 0 {
        return Err(Error::dim("empty batch"));
    }
    let (t, v) = if cfg.normalize {
        (b.l2_normalize_rows(texts)?, b.l2_normalize_rows(videos)?)
    } else {
        (texts.clone(), videos.clone())
    };
    let vt = b.transpose(&v)?;
    let s = b.matmul(&t, &vt)?;
    match (cfg.learnable_temperature, logit_scale) {
        (true, Some(ls)) => {
            let k = b.exp(ls)?;
            b.scale_by(&s, &k)
        }
        (true, None) => Err(Error::Config(
            "learnable temperature needs a logit_scale parameter".into(),
        )),
        _ if cfg.temperature == 1.0 => Ok(s),
        _ => b.scale(&s, 1.0 / cfg.temperature),
    }
}

/// `v2t + t2v` for one branch.
pub fn branch_loss_on<B: Backend>(b: &mut B, scores: &B::T) -> Result<B::T> {
    let v2t = b.info_nce(scores, NceAxis::Rows)?;
    let t2v = b.info_nce(scores, NceAxis::Cols)?;
    b.add(&v2t, &t2v)
}

pub fn similarity_matrix(
    texts: &[Vec<f64>],
    videos: &[Vec<f64>],
    normalize: bool,
    temperature: f64,
) -> Result<SimilarityMatrix> {
    if texts.is_empty() || texts.len() != videos.len() {
        return Err(Error::dim(format!(
            "need equal non-empty batches, got {} captions and {} videos",
            texts.len(),
            videos.len()
        )));
    }
    let cfg = SimilarityConfig {
        normalize,
        temperature,
        learnable_temperature: false,
    };
    cfg.validate()?;
    let t = Tensor::from_rows(texts)?;
    let v = Tensor::from_rows(videos)?;
    let scores = similarity_on(&mut Eager, &t, &v, &cfg, None)?;
    Ok(SimilarityMatrix {
        scores,
        normalized: normalize,
        temperature,
    })
}

pub fn info_nce(s: &SimilarityMatrix, term: LossTerm) -> Result<f64> {
    crate::tensor::info_nce(&s.scores, term.axis()).map(|(l, _)| l)
}

/// Sum of all four contrastive terms of the two branches.
pub fn total_loss(s_e: &SimilarityMatrix, s_m: &SimilarityMatrix) -> Result<f64> {
    if s_e.scores.shape() != s_m.scores.shape() {
        return Err(Error::dim(format!(
            "batch sizes differ: {:?} vs {:?}",
            s_e.scores.shape(),
            s_m.scores.shape()
        )));
    }
    Ok(info_nce(s_e, LossTerm::V2t)?
        + info_nce(s_e, LossTerm::T2v)?
        + info_nce(s_m, LossTerm::V2t)?
        + info_nce(s_m, LossTerm::T2v)?)
}
