//! Query-conditioned score matrices, ground-truth ranks and R@K / MedR / MnR.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Eager};
use crate::data::{Dataset, Split};
use crate::dcm::{
    encode_video, video_context, Branch, DcmConfig, DcmParams, FrameEmbeddings, Mode,
    TextEmbedding, VideoContext,
};
use crate::error::{Error, Result};
use crate::loss::{similarity_on, SimilarityConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Caption query, videos ranked along its row.
    T2v,
    /// Video query, captions ranked along its column.
    V2t,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::T2v => "t2v",
            Direction::V2t => "v2t",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Direction::T2v),
            "v2t" => Ok(Direction::V2t),
            _ => Err(Error::Config(format!("unknown direction {s:?}"))),
        }
    }
}

/// `scores[i][j]`: caption `i` against video `j` re-encoded for that caption.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Tensor,
    pub caption_ids: Vec<String>,
    pub video_ids: Vec<String>,
    pub branch: Branch,
}

impl ScoreMatrix {
    /// Wraps a raw matrix; ids must be unique and scores finite.
    pub fn new(
        scores: Tensor,
        caption_ids: Vec<String>,
        video_ids: Vec<String>,
        branch: Branch,
    ) -> Result<Self> {
        let (r, c) = scores.dims2()?;
        if r != caption_ids.len() || c != video_ids.len() {
            return Err(Error::dim(format!(
                "{r}×{c} scores for {} captions and {} videos",
                caption_ids.len(),
                video_ids.len()
            )));
        }
        if !scores.is_finite() {
            return Err(Error::Numeric("score matrix has non-finite entries".into()));
        }
        for (what, ids) in [("caption", &caption_ids), ("video", &video_ids)] {
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(Error::Dataset(format!("duplicate {what} id {dup:?}")));
            }
        }
        Ok(Self {
            scores,
            caption_ids,
            video_ids,
            branch,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores.data()[i * self.video_ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.scores.row_slice(i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOptions {
    pub similarity: SimilarityConfig,
    /// Queries per work unit.
    pub block_size: usize,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::default(),
            block_size: 64,
            threads: 0,
        }
    }
}

fn score_row(
    text: &Tensor,
    contexts: &[VideoContext<Tensor>],
    params: &DcmParams,
    cfg: &DcmConfig,
    branch: Branch,
    sim: &SimilarityConfig,
) -> Result<Vec<f64>> {
    let mut e = Eager;
    let bp = params.branch(branch);
    let reps = contexts
        .iter()
        .map(|ctx| encode_video(&mut e, text, ctx, bp, cfg, Mode::Eval))
        .collect::<Result<Vec<_>>>()?;
    let video_mat = e.concat_rows(&reps)?;
    let s = similarity_on(&mut e, text, &video_mat, sim, params.logit_scale.as_ref())?;
    Ok(s.into_data())
}

/// Full cross-conditioned scores: every video is re-encoded for every caption.
/// Rows are filled in parallel into fixed slots, so the result does not
/// depend on the thread count.
pub fn score_matrix(
    captions: &[TextEmbedding],
    videos: &[FrameEmbeddings],
    params: &DcmParams,
    cfg: &DcmConfig,
    branch: Branch,
    opts: &ScoreOptions,
) -> Result<ScoreMatrix> {
    cfg.validate()?;
    opts.similarity.validate()?;
    if captions.is_empty() || videos.is_empty() {
        return Err(Error::Dataset(
            "score matrix needs captions and videos".into(),
        ));
    }
    if opts.block_size == 0 {
        return Err(Error::Config("block_size must be >= 1".into()));
    }
    for c in captions {
        let routed = cfg.branch_for(&c.language);
        if routed != branch {
            return Err(Error::Routing(format!(
                "caption {:?} ({}) routes to branch {}, not {}",
                c.caption_id,
                c.language,
                routed.tag(),
                branch.tag()
            )));
        }
        if c.vector.len() != cfg.model_dim {
            return Err(Error::dim(format!(
                "caption {:?} has dim {}, model_dim is {}",
                c.caption_id,
                c.vector.len(),
                cfg.model_dim
            )));
        }
    }
    let bp = params.branch(branch);
    let mut e = Eager;
    let contexts = videos
        .iter()
        .map(|v| {
            video_context(&mut e, &v.matrix, bp, cfg).map_err(|err| match err {
                Error::EmptyVideo(_) => Error::EmptyVideo(v.video_id.clone()),
                err => err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let texts = captions
        .iter()
        .map(|c| c.as_row())
        .collect::<Result<Vec<_>>>()?;

    let n_blocks = captions.len().div_ceil(opts.block_size);
    let threads = match opts.threads {
        0 => thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(n_blocks);
    let mut rows: Vec<Option<Result<Vec<f64>>>> = (0..captions.len()).map(|_| None).collect();
    let block = opts.block_size;
    thread::scope(|scope| {
        let mut slots: Vec<&mut [Option<Result<Vec<f64>>>]> = rows.chunks_mut(block).collect();
        let mut per_worker: Vec<Vec<(usize, &mut [Option<Result<Vec<f64>>>])>> =
            (0..threads).map(|_| Vec::new()).collect();
        for (b, chunk) in slots.drain(..).enumerate() {
            per_worker[b % threads].push((b, chunk));
        }
        for work in per_worker {
            let (texts, contexts) = (&texts, &contexts);
            scope.spawn(move || {
                for (b, chunk) in work {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let i = b * block + k;
                        *slot = Some(score_row(
                            &texts[i],
                            contexts,
                            params,
                            cfg,
                            branch,
                            &opts.similarity,
                        ));
                    }
                }
            });
        }
    });
    let mut data = Vec::with_capacity(captions.len() * videos.len());
    for r in rows {
        data.extend(r.expect("every row is assigned")?);
    }
    ScoreMatrix::new(
        Tensor::new(vec![captions.len(), videos.len()], data)?,
        captions.iter().map(|c| c.caption_id.clone()).collect(),
        videos.iter().map(|v| v.video_id.clone()).collect(),
        branch,
    )
}

/// Rank of each query's ground-truth partner, `1 + #{strictly better}`.
///
/// `t2v` yields one rank per caption (row order). `v2t` yields one rank per
/// video (column order) that has at least one caption; a video with several
/// captions takes the best of them.
pub fn ranks_of_ground_truth(
    s: &ScoreMatrix,
    gt: &BTreeMap<String, String>,
    direction: Direction,
) -> Result<Vec<usize>> {
    let col_of: HashMap<&str, usize> = s
        .video_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let mut gt_col = Vec::with_capacity(s.caption_ids.len());
    for cid in &s.caption_ids {
        let vid = gt
            .get(cid)
            .ok_or_else(|| Error::Dataset(format!("no ground-truth video for caption {cid:?}")))?;
        let j = *col_of.get(vid.as_str()).ok_or_else(|| {
            Error::Dataset(format!(
                "ground-truth video {vid:?} of {cid:?} is not a candidate"
            ))
        })?;
        gt_col.push(j);
    }
    let n_rows = s.caption_ids.len();
    match direction {
        Direction::T2v => Ok((0..n_rows)
            .map(|i| {
                let row = s.row(i);
                let target = row[gt_col[i]];
                1 + row.iter().filter(|&&x| x > target).count()
            })
            .collect()),
        Direction::V2t => {
            let mut best: Vec<Option<usize>> = vec![None; s.video_ids.len()];
            for (i, &j) in gt_col.iter().enumerate() {
                let target = s.get(i, j);
                let rank = 1 + (0..n_rows).filter(|&k| s.get(k, j) > target).count();
                best[j] = Some(best[j].map_or(rank, |b| b.min(rank)));
            }
            if let Some(j) = best.iter().position(Option::is_none) {
                return Err(Error::Dataset(format!(
                    "video {:?} has no ground-truth caption",
                    s.video_ids[j]
                )));
            }
            Ok(best.into_iter().flatten().collect())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    pub mnr: f64,
    pub n: usize,
}

impl RankMetrics {
    pub fn r_sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

pub fn metrics_from_ranks(ranks: &[usize]) -> Result<RankMetrics> {
    if ranks.is_empty() {
        return Err(Error::Contract("metrics need at least one rank".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Contract("ranks start at 1".into()));
    }
    let n = ranks.len();
    let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let medr = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let mnr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n as f64;
    Ok(RankMetrics {
        r1: recall(1),
        r5: recall(5),
        r10: recall(10),
        medr,
        mnr,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub branch: Branch,
    pub language: String,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    pub mnr: f64,
    pub n: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl RetrievalReport {
    pub fn metrics(&self) -> RankMetrics {
        RankMetrics {
            r1: self.r1,
            r5: self.r5,
            r10: self.r10,
            medr: self.medr,
            mnr: self.mnr,
            n: self.n,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// What to evaluate and how to label the report.
#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub split: Split,
    pub branch: Branch,
    pub language: String,
    pub scoring: ScoreOptions,
    pub seed: u64,
    pub config_hash: String,
}

/// Scores every `language` caption of `split` against every video of `split`.
pub fn score_split(
    dataset: &Dataset,
    params: &DcmParams,
    cfg: &DcmConfig,
    req: &EvalRequest,
) -> Result<(ScoreMatrix, BTreeMap<String, String>)> {
    let idx = dataset.split_indices(req.split);
    if idx.is_empty() {
        return Err(Error::Dataset(format!("split {} is empty", req.split)));
    }
    dataset.require_languages(req.split, std::slice::from_ref(&req.language))?;
    let routed = cfg.branch_for(&req.language);
    if routed != req.branch {
        return Err(Error::Routing(format!(
            "language {:?} is served by branch {}, not {}",
            req.language,
            routed.tag(),
            req.branch.tag()
        )));
    }
    let mut captions = Vec::with_capacity(idx.len());
    let mut videos = Vec::with_capacity(idx.len());
    let mut gt = BTreeMap::new();
    for &i in &idx {
        let it = &dataset.items[i];
        let cap = it.captions[&req.language].clone();
        gt.insert(cap.caption_id.clone(), it.video.video_id.clone());
        captions.push(cap);
        videos.push(it.video.clone());
    }
    let s = score_matrix(&captions, &videos, params, cfg, req.branch, &req.scoring)?;
    Ok((s, gt))
}

pub fn report_from_scores(
    s: &ScoreMatrix,
    gt: &BTreeMap<String, String>,
    direction: Direction,
    req: &EvalRequest,
) -> Result<RetrievalReport> {
    let m = metrics_from_ranks(&ranks_of_ground_truth(s, gt, direction)?)?;
    Ok(RetrievalReport {
        direction,
        branch: req.branch,
        language: req.language.clone(),
        r1: m.r1,
        r5: m.r5,
        r10: m.r10,
        medr: m.medr,
        mnr: m.mnr,
        n: m.n,
        seed: req.seed,
        config_hash: req.config_hash.clone(),
    })
}

pub fn evaluate_split(
    dataset: &Dataset,
    params: &DcmParams,
    cfg: &DcmConfig,
    req: &EvalRequest,
    direction: Direction,
) -> Result<RetrievalReport> {
    let (s, gt) = score_split(dataset, params, cfg, req)?;
    report_from_scores(&s, &gt, direction, req)
}

/// Both directions from one score matrix, `t2v` first.
pub fn evaluate_split_both(
    dataset: &Dataset,
    params: &DcmParams,
    cfg: &DcmConfig,
    req: &EvalRequest,
) -> Result<[RetrievalReport; 2]> {
    let (s, gt) = score_split(dataset, params, cfg, req)?;
    Ok([
        report_from_scores(&s, &gt, Direction::T2v, req)?,
        report_from_scores(&s, &gt, Direction::V2t, req)?,
    ])
}
