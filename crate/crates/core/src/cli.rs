//! The `dcmr` command line: layered configuration (file < environment <
//! flags) and one subcommand per pipeline stage.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_manifest, read_archive, synth_generate, Dataset, LanguageSampling, Split, SynthConfig,
};
use crate::dcm::{
    Branch, DcmConfig, DcmParams, FrameEmbeddings, TextEmbedding, TextRouting, VideoEncoder,
    ENGLISH,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_split_both, report_from_scores, score_matrix, score_split, Direction, EvalRequest,
    RetrievalReport, ScoreOptions,
};
use crate::fsutil;
use crate::train::{
    initial_params, load_checkpoint, log_to_jsonl, save_checkpoint, train_run_with, Conditioning,
    EpochLog, TrainConfig, TrainOptions,
};
use crate::translate::{
    augment_dataset, AugmentOptions, MockEmbedder, MockTranslator, TranslateClient, Translator,
};

/// Evaluation settings shared by `eval`, `retrieve` and `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub split: Split,
    pub language: String,
    /// `None` evaluates both directions.
    pub direction: Option<Direction>,
    pub block_size: usize,
    pub threads: usize,
    pub top_k: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            split: Split::Test,
            language: ENGLISH.to_string(),
            direction: None,
            block_size: 64,
            threads: 0,
            top_k: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateSettings {
    pub backend: BackendKind,
    pub languages: Vec<String>,
    pub workers: usize,
    pub batch_size: usize,
}

impl Default for TranslateSettings {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            languages: Vec::new(),
            workers: 4,
            batch_size: 16,
        }
    }
}

/// Every setting that affects results. Paths are not part of it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dcm: DcmConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalSettings,
    pub translate: TranslateSettings,
}

impl RunConfig {
    pub fn from_json(bytes: &[u8], path: &Path) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.dcm.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.eval.block_size == 0 || self.eval.top_k == 0 {
            return Err(Error::Config("block_size and top_k must be >= 1".into()));
        }
        if self.translate.workers == 0 || self.translate.batch_size == 0 {
            return Err(Error::Config(
                "translate workers and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON (object keys sorted).
    pub fn config_hash(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "dcmr",
    version,
    about = "Text-to-video retrieval with a dual cross-modal encoder"
)]
struct Cli {
    /// JSON run configuration; environment variables and flags override it.
    #[arg(long, global = true, env = "DCMR_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "DCMR_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "DCMR_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Add machine-translated captions to a dataset.
    Translate(TranslateArgs),
    /// Train and write a checkpoint plus a JSON-lines epoch log.
    Train(TrainCmd),
    /// Print retrieval reports for a split.
    Eval(EvalCmd),
    /// Top-k videos for each query embedding in an archive.
    Retrieve(RetrieveCmd),
    /// Train and evaluate a baseline against a named ablation.
    Ablate(AblateCmd),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, env = "DCMR_N_TRAIN")]
    n_train: Option<usize>,
    #[arg(long, env = "DCMR_N_VAL")]
    n_val: Option<usize>,
    #[arg(long, env = "DCMR_N_TEST")]
    n_test: Option<usize>,
    #[arg(long, env = "DCMR_LATENT_DIM")]
    latent_dim: Option<usize>,
    #[arg(long, env = "DCMR_MODEL_DIM")]
    model_dim: Option<usize>,
    #[arg(long, env = "DCMR_FRAMES_PER_VIDEO")]
    frames_per_video: Option<usize>,
    #[arg(long, env = "DCMR_NOISE_SCALE")]
    noise_scale: Option<f64>,
    #[arg(long, env = "DCMR_LANGUAGE_SPREAD")]
    language_spread: Option<f64>,
    /// Comma-separated language codes; must include en.
    #[arg(long, env = "DCMR_LANGUAGES", value_delimiter = ',')]
    languages: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, env = "DCMR_LANGUAGES", value_delimiter = ',')]
    languages: Option<Vec<String>>,
    /// mock or http
    #[arg(long, env = "DCMR_BACKEND", value_parser = parse_enum::<BackendKind>)]
    backend: Option<BackendKind>,
    #[arg(long, env = "DCMR_WORKERS")]
    workers: Option<usize>,
    /// Defaults to `.mt-cache` next to the manifest.
    #[arg(long, env = "DCMR_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, env = "DCMR_NUM_HEADS")]
    num_heads: Option<usize>,
    #[arg(long, env = "DCMR_DROPOUT")]
    dropout: Option<f64>,
    /// Hidden width of a two-layer FC; omit for a single affine layer.
    #[arg(long, env = "DCMR_FC_HIDDEN")]
    fc_hidden: Option<usize>,
    #[arg(long, env = "DCMR_DEPTH")]
    depth: Option<usize>,
    #[arg(long, env = "DCMR_LN_EPS")]
    ln_eps: Option<f64>,
    #[arg(long, env = "DCMR_SHARE_BRANCHES", num_args = 0..=1, default_missing_value = "true")]
    share_branches: Option<bool>,
    /// dcm or mean-pool
    #[arg(long, env = "DCMR_ENCODER", value_parser = parse_enum::<VideoEncoder>)]
    encoder: Option<VideoEncoder>,
    /// separate or multilingual-only
    #[arg(long, env = "DCMR_TEXT_ROUTING", value_parser = parse_enum::<TextRouting>)]
    text_routing: Option<TextRouting>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, env = "DCMR_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "DCMR_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "DCMR_LR_MAX")]
    lr_max: Option<f64>,
    #[arg(long, env = "DCMR_LR_MIN")]
    lr_min: Option<f64>,
    #[arg(long, env = "DCMR_WEIGHT_DECAY")]
    weight_decay: Option<f64>,
    #[arg(long, env = "DCMR_ADAM_BETA1")]
    adam_beta1: Option<f64>,
    #[arg(long, env = "DCMR_ADAM_BETA2")]
    adam_beta2: Option<f64>,
    #[arg(long, env = "DCMR_ADAM_EPS")]
    adam_eps: Option<f64>,
    /// Comma-separated non-English training languages.
    #[arg(long, env = "DCMR_LANGUAGES", value_delimiter = ',')]
    languages: Option<Vec<String>>,
    /// sample-one or sum-all
    #[arg(long, env = "DCMR_LANGUAGE_SAMPLING", value_parser = parse_enum::<LanguageSampling>)]
    language_sampling: Option<LanguageSampling>,
    #[arg(long, env = "DCMR_MULTILINGUAL_WEIGHT")]
    multilingual_weight: Option<f64>,
    /// diagonal or cross
    #[arg(long, env = "DCMR_CONDITIONING", value_parser = parse_enum::<Conditioning>)]
    conditioning: Option<Conditioning>,
    #[arg(long, env = "DCMR_NORMALIZE", num_args = 0..=1, default_missing_value = "true")]
    normalize: Option<bool>,
    #[arg(long, env = "DCMR_TEMPERATURE")]
    temperature: Option<f64>,
    #[arg(long, env = "DCMR_LEARNABLE_TEMPERATURE", num_args = 0..=1, default_missing_value = "true")]
    learnable_temperature: Option<bool>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// train, val or test
    #[arg(long, env = "DCMR_SPLIT", value_parser = parse_enum::<Split>)]
    split: Option<Split>,
    /// Caption language to evaluate.
    #[arg(long, env = "DCMR_LANGUAGE")]
    language: Option<String>,
    /// t2v or v2t; both when omitted.
    #[arg(long, env = "DCMR_DIRECTION", value_parser = parse_enum::<Direction>)]
    direction: Option<Direction>,
    #[arg(long, env = "DCMR_BLOCK_SIZE")]
    block_size: Option<usize>,
    #[arg(long, env = "DCMR_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    stop_after_epochs: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct EvalCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// Evaluate these parameters; fresh initial parameters when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct RetrieveCmd {
    /// Video archive (EMB1).
    #[arg(long)]
    videos: PathBuf,
    /// Text archive (EMB1) with one vector per query.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, env = "DCMR_LANGUAGE")]
    language: Option<String>,
    #[arg(long, env = "DCMR_TOP_K")]
    top_k: Option<usize>,
    #[arg(long, env = "DCMR_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    NoMultilingual,
    SharedTextEncoder,
    NoDcm,
    Languages,
}

impl Preset {
    /// Rewrites a baseline configuration into the ablated one.
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Preset::NoMultilingual => cfg.train.multilingual_weight = 0.0,
            Preset::SharedTextEncoder => cfg.dcm.text_routing = TextRouting::MultilingualOnly,
            Preset::NoDcm => cfg.dcm.encoder = VideoEncoder::MeanPool,
            Preset::Languages => {
                cfg.train.languages = ["fr", "de", "es"].map(String::from).to_vec();
            }
        }
    }
}

#[derive(Debug, Args)]
struct AblateCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// no-multilingual, shared-text-encoder, no-dcm or languages
    #[arg(long, value_parser = parse_enum::<Preset>)]
    preset: Preset,
    /// Number of seeds, counting up from --seed.
    #[arg(long, default_value_t = 3)]
    runs: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    eval: EvalArgs,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl ModelArgs {
    fn apply(&self, c: &mut DcmConfig) {
        set!(c.num_heads, self.num_heads);
        set!(c.dropout, self.dropout);
        if self.fc_hidden.is_some() {
            c.fc_hidden = self.fc_hidden;
        }
        set!(c.depth, self.depth);
        set!(c.ln_eps, self.ln_eps);
        set!(c.share_branches, self.share_branches);
        set!(c.encoder, self.encoder);
        set!(c.text_routing, self.text_routing);
    }
}

impl TrainArgs {
    fn apply(&self, c: &mut TrainConfig) {
        set!(c.epochs, self.epochs);
        set!(c.batch_size, self.batch_size);
        set!(c.lr_max, self.lr_max);
        set!(c.lr_min, self.lr_min);
        set!(c.weight_decay, self.weight_decay);
        set!(c.adam_beta1, self.adam_beta1);
        set!(c.adam_beta2, self.adam_beta2);
        set!(c.adam_eps, self.adam_eps);
        set!(c.languages, self.languages);
        set!(c.language_sampling, self.language_sampling);
        set!(c.multilingual_weight, self.multilingual_weight);
        set!(c.conditioning, self.conditioning);
        set!(c.similarity.normalize, self.normalize);
        set!(c.similarity.temperature, self.temperature);
        set!(
            c.similarity.learnable_temperature,
            self.learnable_temperature
        );
    }
}

impl EvalArgs {
    fn apply(&self, c: &mut EvalSettings) {
        set!(c.split, self.split);
        set!(c.language, self.language);
        if self.direction.is_some() {
            c.direction = self.direction;
        }
        set!(c.block_size, self.block_size);
        set!(c.threads, self.threads);
    }
}

struct Ctx<'a> {
    out_dir: Option<PathBuf>,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        writeln!(self.stdout, "{line}").map_err(|e| Error::io("<stdout>", e))
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required for this command".into()))
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&fsutil::read(p)?, p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.synth.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn load_dataset_for(cfg: &mut RunConfig, manifest: &Path) -> Result<Dataset> {
    let ds = load_manifest(manifest)?;
    if cfg.dcm.model_dim != ds.dim {
        log::info!("model_dim set to the dataset dim {}", ds.dim);
        cfg.dcm.model_dim = ds.dim;
    }
    Ok(ds)
}

/// Parameters from a checkpoint (whose configs replace the model and training
/// sections) or fresh initial parameters.
fn params_for(cfg: &mut RunConfig, checkpoint: Option<&Path>) -> Result<DcmParams> {
    match checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            cfg.dcm = ck.dcm;
            cfg.train = ck.train;
            Ok(ck.params)
        }
        None => initial_params(&cfg.dcm, &cfg.train),
    }
}

fn eval_request(cfg: &RunConfig, hash: &str) -> EvalRequest {
    EvalRequest {
        split: cfg.eval.split,
        branch: cfg.dcm.branch_for(&cfg.eval.language),
        language: cfg.eval.language.clone(),
        scoring: ScoreOptions {
            similarity: cfg.train.similarity.clone(),
            block_size: cfg.eval.block_size,
            threads: cfg.eval.threads,
        },
        seed: cfg.train.seed,
        config_hash: hash.to_string(),
    }
}

fn reports(
    ds: &Dataset,
    params: &DcmParams,
    cfg: &RunConfig,
    hash: &str,
) -> Result<Vec<RetrievalReport>> {
    let req = eval_request(cfg, hash);
    match cfg.eval.direction {
        Some(d) => {
            let (s, gt) = score_split(ds, params, &cfg.dcm, &req)?;
            Ok(vec![report_from_scores(&s, &gt, d, &req)?])
        }
        None => Ok(evaluate_split_both(ds, params, &cfg.dcm, &req)?.to_vec()),
    }
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    command: &'static str,
    manifest: &'a Path,
    n_items: usize,
    languages: &'a [String],
    seed: u64,
    config_hash: &'a str,
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg = base_config(cli)?;
    let s = &mut cfg.synth;
    set!(s.n_train, a.n_train);
    set!(s.n_val, a.n_val);
    set!(s.n_test, a.n_test);
    set!(s.latent_dim, a.latent_dim);
    set!(s.model_dim, a.model_dim);
    set!(s.frames_per_video, a.frames_per_video);
    set!(s.noise_scale, a.noise_scale);
    set!(s.language_spread, a.language_spread);
    set!(s.languages, a.languages);
    cfg.dcm.model_dim = cfg.synth.model_dim;
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    let out = ctx.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let manifest = synth_generate(&cfg.synth)?.write(&out)?;
    ctx.emit(&SynthSummary {
        command: "synth",
        manifest: &manifest,
        n_items: cfg.synth.n_items(),
        languages: &cfg.synth.languages,
        seed: cfg.synth.seed,
        config_hash: &hash,
    })
}

#[derive(Serialize)]
struct TranslateSummary<'a> {
    command: &'static str,
    manifest: &'a Path,
    languages: &'a [String],
    written: &'a [PathBuf],
    seed: u64,
    config_hash: &'a str,
}

fn cmd_translate(cli: &Cli, a: &TranslateArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg = base_config(cli)?;
    set!(cfg.translate.languages, a.languages);
    set!(cfg.translate.backend, a.backend);
    set!(cfg.translate.workers, a.workers);
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    let manifest = crate::data::read_manifest(&a.manifest)?;
    #[cfg(feature = "http")]
    let http;
    let backend: &dyn Translator = match cfg.translate.backend {
        BackendKind::Mock => &MockTranslator,
        BackendKind::Http => {
            #[cfg(feature = "http")]
            {
                http = crate::translate::HttpTranslator::from_env()?;
                &http
            }
            #[cfg(not(feature = "http"))]
            {
                return Err(Error::Config("built without the http feature".into()));
            }
        }
    };
    let cache_dir = a.cache_dir.clone().unwrap_or_else(|| {
        a.manifest
            .parent()
            .unwrap_or(Path::new("."))
            .join(".mt-cache")
    });
    let mut client = TranslateClient::new(backend, Some(cache_dir));
    client.workers = cfg.translate.workers;
    client.batch_size = cfg.translate.batch_size;
    let embedder = MockEmbedder {
        dim: manifest.dim,
        seed: cfg.train.seed,
    };
    let outcome = augment_dataset(
        &a.manifest,
        &cfg.translate.languages,
        &client,
        &embedder,
        &AugmentOptions {
            out_dir: ctx.out_dir.clone(),
            fail_before_write: None,
        },
    )?;
    ctx.emit(&TranslateSummary {
        command: "translate",
        manifest: &outcome.manifest_path,
        languages: &cfg.translate.languages,
        written: &outcome.written,
        seed: cfg.train.seed,
        config_hash: &hash,
    })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    command: &'static str,
    checkpoint: &'a Path,
    log: &'a Path,
    epochs_completed: usize,
    steps: u64,
    final_mean_loss: Option<f64>,
    seed: u64,
    config_hash: &'a str,
}

fn cmd_train(cli: &Cli, a: &TrainCmd, ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg = base_config(cli)?;
    // A resumed run starts from the checkpoint's own settings; flags that
    // change them are rejected by the trainer.
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    if let Some(ck) = &resume {
        cfg.dcm = ck.dcm.clone();
        cfg.train = ck.train.clone();
        if let Some(s) = cli.seed {
            cfg.train.seed = s;
        }
    }
    a.model.apply(&mut cfg.dcm);
    a.train.apply(&mut cfg.train);
    let ds = load_dataset_for(&mut cfg, &a.manifest)?;
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    let out = ctx.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log: Vec<EpochLog> = Vec::new();
    if resume.is_some() {
        if let Ok(prev) = std::fs::read_to_string(&log_path) {
            for line in prev.lines().filter(|l| !l.trim().is_empty()) {
                log.push(serde_json::from_str(line)?);
            }
        }
    }
    let outcome = train_run_with(
        &ds,
        &cfg.dcm,
        &cfg.train,
        TrainOptions {
            resume,
            stop_after_epochs: a.stop_after_epochs,
            on_epoch: None,
        },
    )?;
    log.retain(|e| e.epoch < outcome.log.first().map_or(usize::MAX, |f| f.epoch));
    log.extend(outcome.log.iter().cloned());
    let ck_path = out.join("checkpoint.dcmc");
    save_checkpoint(&outcome.checkpoint, &ck_path)?;
    fsutil::write_atomic(&log_path, &log_to_jsonl(&log)?)?;
    ctx.emit(&TrainSummary {
        command: "train",
        checkpoint: &ck_path,
        log: &log_path,
        epochs_completed: outcome.checkpoint.epochs_completed,
        steps: outcome.checkpoint.optimizer.step,
        final_mean_loss: log.last().map(|e| e.mean_loss),
        seed: cfg.train.seed,
        config_hash: &hash,
    })
}

fn cmd_eval(cli: &Cli, a: &EvalCmd, ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg = base_config(cli)?;
    a.model.apply(&mut cfg.dcm);
    a.eval.apply(&mut cfg.eval);
    let ds = load_dataset_for(&mut cfg, &a.manifest)?;
    let params = params_for(&mut cfg, a.checkpoint.as_deref())?;
    if cfg.dcm.model_dim != ds.dim {
        return Err(Error::Config(format!(
            "checkpoint model_dim {} does not match dataset dim {}",
            cfg.dcm.model_dim, ds.dim
        )));
    }
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    for r in reports(&ds, &params, &cfg, &hash)? {
        ctx.emit(&r)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Hit {
    video_id: String,
    score: f64,
}

#[derive(Serialize)]
struct RetrieveLine<'a> {
    query: &'a str,
    language: &'a str,
    results: Vec<Hit>,
    seed: u64,
    config_hash: &'a str,
}

fn cmd_retrieve(cli: &Cli, a: &RetrieveCmd, ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg = base_config(cli)?;
    a.model.apply(&mut cfg.dcm);
    set!(cfg.eval.language, a.language);
    set!(cfg.eval.top_k, a.top_k);
    set!(cfg.eval.threads, a.threads);
    let videos = read_archive(&a.videos)?;
    let queries = read_archive(&a.queries)?;
    if videos.dim != queries.dim {
        return Err(Error::Config(format!(
            "video dim {} and query dim {} differ",
            videos.dim, queries.dim
        )));
    }
    cfg.dcm.model_dim = videos.dim;
    let params = params_for(&mut cfg, a.checkpoint.as_deref())?;
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    let frames = videos
        .records
        .iter()
        .map(|r| FrameEmbeddings::new(r.id.clone(), r.vectors.clone()))
        .collect::<Result<Vec<_>>>()?;
    let captions = queries
        .records
        .iter()
        .map(|r| {
            if r.vectors.dims2()?.0 != 1 {
                return Err(Error::Dataset(format!(
                    "query {:?} has more than one vector",
                    r.id
                )));
            }
            TextEmbedding::new(
                r.id.clone(),
                cfg.eval.language.clone(),
                r.vectors.data().to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    if captions.is_empty() || frames.is_empty() {
        return Err(Error::Dataset(
            "need at least one query and one video".into(),
        ));
    }
    let branch: Branch = cfg.dcm.branch_for(&cfg.eval.language);
    let s = score_matrix(
        &captions,
        &frames,
        &params,
        &cfg.dcm,
        branch,
        &ScoreOptions {
            similarity: cfg.train.similarity.clone(),
            block_size: cfg.eval.block_size,
            threads: cfg.eval.threads,
        },
    )?;
    for (i, q) in s.caption_ids.iter().enumerate() {
        let mut order: Vec<usize> = (0..s.video_ids.len()).collect();
        order.sort_by(|&x, &y| s.get(i, y).total_cmp(&s.get(i, x)).then(x.cmp(&y)));
        let results = order
            .into_iter()
            .take(cfg.eval.top_k)
            .map(|j| Hit {
                video_id: s.video_ids[j].clone(),
                score: s.get(i, j),
            })
            .collect();
        ctx.emit(&RetrieveLine {
            query: q,
            language: &cfg.eval.language,
            results,
            seed: cfg.train.seed,
            config_hash: &hash,
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblateLine<'a> {
    preset: Preset,
    variant: &'static str,
    report: &'a RetrievalReport,
}

#[derive(Serialize)]
struct AblateSummary {
    preset: Preset,
    variant: &'static str,
    language: String,
    runs: u64,
    mean_r1: f64,
    mean_r5: f64,
    mean_r10: f64,
    mean_medr: f64,
    mean_mnr: f64,
    seed: u64,
    config_hash: String,
}

fn cmd_ablate(cli: &Cli, a: &AblateCmd, ctx: &mut Ctx<'_>) -> Result<()> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be >= 1".into()));
    }
    let mut base = base_config(cli)?;
    a.model.apply(&mut base.dcm);
    a.train.apply(&mut base.train);
    a.eval.apply(&mut base.eval);
    base.eval.direction = Some(base.eval.direction.unwrap_or(Direction::T2v));
    let ds = load_dataset_for(&mut base, &a.manifest)?;
    let mut ablated = base.clone();
    a.preset.apply(&mut ablated);
    base.validate()?;
    ablated.validate()?;

    let first_seed = base.train.seed;
    for (variant, cfg) in [("baseline", &base), ("ablated", &ablated)] {
        let mut collected = Vec::new();
        for k in 0..a.runs {
            let mut run = cfg.clone();
            run.train.seed = first_seed + k;
            let hash = run.config_hash()?;
            let out = train_run_with(&ds, &run.dcm, &run.train, TrainOptions::default())?;
            for r in reports(&ds, &out.checkpoint.params, &run, &hash)? {
                ctx.emit(&AblateLine {
                    preset: a.preset,
                    variant,
                    report: &r,
                })?;
                collected.push(r);
            }
        }
        let n = collected.len() as f64;
        let mean = |f: fn(&RetrievalReport) -> f64| collected.iter().map(f).sum::<f64>() / n;
        ctx.emit(&AblateSummary {
            preset: a.preset,
            variant,
            language: cfg.eval.language.clone(),
            runs: a.runs,
            mean_r1: mean(|r| r.r1),
            mean_r5: mean(|r| r.r5),
            mean_r10: mean(|r| r.r10),
            mean_medr: mean(|r| r.medr),
            mean_mnr: mean(|r| r.mnr),
            seed: first_seed,
            config_hash: cfg.config_hash()?,
        })?;
    }
    Ok(())
}

/// Exit status for an error: 1 for usage and configuration problems, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Runs the CLI with explicit streams and returns the process exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    return 0;
                }
                _ => 1,
            };
            let _ = write!(stderr, "{e}");
            return code;
        }
    };
    let mut ctx = Ctx {
        out_dir: cli.out.clone(),
        stdout,
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&cli, a, &mut ctx),
        Command::Translate(a) => cmd_translate(&cli, a, &mut ctx),
        Command::Train(a) => cmd_train(&cli, a, &mut ctx),
        Command::Eval(a) => cmd_eval(&cli, a, &mut ctx),
        Command::Retrieve(a) => cmd_retrieve(&cli, a, &mut ctx),
        Command::Ablate(a) => cmd_ablate(&cli, a, &mut ctx),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
