//! Training loop: Adam over the masked-reconstruction objective, a
//! plateau-based learning-rate schedule, per-epoch evaluation, model
//! selection, checkpointing, and multi-seed aggregation.

use std::io::{Read as _, Write as _};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, FeatureFile, Vocabulary};
use crate::eval::{self, percent_perfect};
use crate::model::{
    make_batches, make_eval_batches, map_sentences, DataCtx, ModelConfig, ModelError, Mposm,
    TagAssignment,
};
use crate::nn::{Adam, AdamConfig};

const CHECKPOINT_MAGIC: &[u8; 4] = b"MPCK";
const CHECKPOINT_VERSION: u32 = 1;
const EVAL_RNG_SALT: u64 = 0x6576616c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Select the epoch with the best many-to-one accuracy (needs gold tags).
    Oracle,
    /// Select the epoch with the lowest held-out objective.
    Loss,
}

impl FromStr for SelectionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(SelectionMode::Oracle),
            "loss" => Ok(SelectionMode::Loss),
            other => Err(format!("`{other}` (expected oracle or loss)")),
        }
    }
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMode::Oracle => "oracle",
            SelectionMode::Loss => "loss",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Multiplier applied to the learning rate on stagnation.
    pub lr_decay: f64,
    /// Stagnant epochs tolerated before a decay.
    pub patience: usize,
    /// Minimum relative improvement in the evaluation loss that counts as
    /// progress.
    pub improvement_threshold: f64,
    /// Training stops after this many decays plus one more stagnation round.
    pub max_decays: usize,
    pub seed: u64,
    /// Add a copy of the corpus rechunked at sampled sentence lengths.
    pub rechunk: bool,
    pub selection: SelectionMode,
    /// Epochs of masked-word pretraining before the main objective; 0 skips
    /// the stage. Only honored by [`train_staged`] and [`multi_seed`].
    #[serde(default)]
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 80,
            max_epochs: 50,
            lr_decay: 0.1,
            patience: 3,
            improvement_threshold: 1e-3,
            max_decays: 2,
            seed: 0,
            rechunk: false,
            selection: SelectionMode::Oracle,
            pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut errors = Vec::new();
        if self.lr <= 0.0 || self.lr.is_nan() {
            errors.push(format!("train.lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            errors.push("train.batch_size must be >= 1".to_string());
        }
        if self.max_epochs == 0 {
            errors.push("train.max_epochs must be >= 1".to_string());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            errors.push(format!(
                "train.lr_decay must be in (0, 1), got {}",
                self.lr_decay
            ));
        }
        if self.patience == 0 {
            errors.push("train.patience must be >= 1".to_string());
        }
        if self.improvement_threshold < 0.0 {
            errors.push(format!(
                "train.improvement_threshold must be >= 0, got {}",
                self.improvement_threshold
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(errors.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub lr: f64,
    /// Many-to-one accuracy against gold tags, when available.
    pub m1: Option<f64>,
}

/// Parameter snapshot of the best epoch under the selection criterion.
pub struct BestSnapshot {
    pub epoch: usize,
    /// Higher is better (negated loss for loss selection).
    pub criterion: f64,
    pub params: Vec<Array2<f64>>,
}

/// Everything the loop needs to continue from where it stopped.
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub decays: usize,
    pub stagnant: usize,
    pub best_eval: f64,
    pub done: bool,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<BestSnapshot>,
    pub rng: ChaCha20Rng,
    pub rng_seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> TrainState {
        TrainState {
            epoch: 0,
            lr: cfg.lr,
            decays: 0,
            stagnant: 0,
            best_eval: f64::INFINITY,
            done: false,
            epochs: Vec::new(),
            best: None,
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            rng_seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights the returned model carries.
    pub selected_epoch: usize,
    pub m1: Option<f64>,
    pub eval_loss: f64,
    pub assignment: TagAssignment,
}

/// Read the selected many-to-one accuracy off an epoch history without
/// retraining: oracle takes the best, loss takes the accuracy at the loss
/// minimum.
pub fn selected_m1(epochs: &[EpochRecord], mode: SelectionMode) -> Option<f64> {
    match mode {
        SelectionMode::Oracle => epochs
            .iter()
            .filter_map(|e| e.m1)
            .fold(None, |acc, x| Some(acc.map_or(x, |a: f64| a.max(x)))),
        SelectionMode::Loss => epochs
            .iter()
            .min_by(|a, b| a.eval_loss.total_cmp(&b.eval_loss))
            .and_then(|e| e.m1),
    }
}

/// Train `model` on `corpus` from scratch. The model ends up with the weights
/// of the selected epoch.
pub fn train(
    model: &mut Mposm,
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainResult, ModelError> {
    cfg.validate()?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model.params(),
    );
    let mut state = TrainState::new(cfg);
    run_loop(
        model,
        &mut adam,
        &mut state,
        cfg,
        corpus,
        vocab,
        features,
        &mut on_epoch,
        None,
    )
}

/// [`train`] preceded by `cfg.pretrain_epochs` epochs of masked-word
/// pretraining: the model is switched to the word-prediction head, trained
/// with loss selection (accuracy is meaningless for that stage), then the
/// shared weights carry over into the main objective. This escapes the
/// tag-merging optima that cold starts are prone to.
pub fn train_staged(
    model: &mut Mposm,
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainResult, ModelError> {
    if cfg.pretrain_epochs > 0 {
        let final_variant = match model.config.variant {
            crate::model::ModelVariant::MlmpPretrain => crate::model::ModelVariant::Standard,
            v => v,
        };
        model.set_variant(crate::model::ModelVariant::MlmpPretrain);
        let pre_cfg = TrainConfig {
            max_epochs: cfg.pretrain_epochs,
            selection: SelectionMode::Loss,
            pretrain_epochs: 0,
            ..cfg.clone()
        };
        match on_epoch.as_mut() {
            Some(f) => train(model, &pre_cfg, corpus, vocab, features, Some(&mut **f))?,
            None => train(model, &pre_cfg, corpus, vocab, features, None)?,
        };
        model.set_variant(final_variant);
    }
    let main_cfg = TrainConfig {
        pretrain_epochs: 0,
        ..cfg.clone()
    };
    train(model, &main_cfg, corpus, vocab, features, on_epoch)
}

/// Like [`train`], writing a resumable checkpoint every `every` epochs.
#[allow(clippy::too_many_arguments)]
pub fn train_with_checkpoints(
    model: &mut Mposm,
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
    checkpoint_path: &Path,
    every: usize,
) -> Result<TrainResult, ModelError> {
    cfg.validate()?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model.params(),
    );
    let mut state = TrainState::new(cfg);
    run_loop(
        model,
        &mut adam,
        &mut state,
        cfg,
        corpus,
        vocab,
        features,
        &mut on_epoch,
        Some((checkpoint_path, every.max(1))),
    )
}

/// Continue training from a loaded checkpoint, reproducing the run the
/// checkpoint was taken from exactly.
#[allow(clippy::too_many_arguments)]
pub fn resume(
    model: &mut Mposm,
    adam: &mut Adam,
    state: &mut TrainState,
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainResult, ModelError> {
    cfg.validate()?;
    run_loop(
        model,
        adam,
        state,
        cfg,
        corpus,
        vocab,
        features,
        &mut on_epoch,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    model: &mut Mposm,
    adam: &mut Adam,
    state: &mut TrainState,
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
    on_epoch: &mut Option<&mut dyn FnMut(&EpochRecord)>,
    checkpoint_every: Option<(&Path, usize)>,
) -> Result<TrainResult, ModelError> {
    if cfg.rechunk && features.is_some() {
        return Err(ModelError::InvalidConfig(
            "rechunking cannot be combined with a feature file (token alignment breaks)".into(),
        ));
    }
    if cfg.selection == SelectionMode::Oracle && !corpus.has_gold_tags() {
        return Err(ModelError::InvalidConfig(
            "oracle selection requires gold tags in the corpus".into(),
        ));
    }

    let train_corpus: Corpus = if cfg.rechunk {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x726563686b);
        let rechunked = corpus::rechunk(corpus, &mut rng);
        corpus::combine(corpus, &rechunked).map_err(|e| ModelError::InvalidConfig(e.to_string()))?
    } else {
        corpus.clone()
    };
    let train_sentences = map_sentences(&train_corpus, vocab);
    let ctx = DataCtx::new(vocab, features);
    let has_gold = corpus.has_gold_tags();

    while !state.done && state.epoch < cfg.max_epochs {
        let record = train_epoch(
            model,
            adam,
            state,
            cfg,
            &train_sentences,
            corpus,
            &ctx,
            has_gold,
        )?;
        if let Some((path, every)) = checkpoint_every {
            if state.epoch.is_multiple_of(every) {
                save_checkpoint(path, model, adam, state, cfg)?;
            }
        }
        if let Some(f) = on_epoch.as_mut() {
            f(&record);
        }
    }
    state.done = true;

    // Restore the selected epoch's weights.
    let selected_epoch = match &state.best {
        Some(best) => {
            for ((_, p), saved) in model.params().iter().zip(&best.params) {
                p.set_value(saved.clone());
            }
            best.epoch
        }
        None => state.epoch,
    };
    let assignment = model.predict_tags(corpus, &ctx)?;
    let m1 = if has_gold {
        Some(
            eval::many_to_one(&assignment, corpus)
                .map(|r| r.accuracy)
                .map_err(|e| ModelError::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };
    let eval_loss = evaluate_loss(model, cfg, corpus, vocab, features)?;
    Ok(TrainResult {
        seed: cfg.seed,
        epochs: state.epochs.clone(),
        selected_epoch,
        m1,
        eval_loss,
        assignment,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_epoch(
    model: &Mposm,
    adam: &mut Adam,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train_sentences: &[Vec<usize>],
    eval_corpus: &Corpus,
    ctx: &DataCtx,
    has_gold: bool,
) -> Result<EpochRecord, ModelError> {
    state.epoch += 1;
    adam.config.lr = state.lr;

    let batches = make_batches(train_sentences, cfg.batch_size, &mut state.rng);
    let mut loss_sum = 0.0f64;
    let mut masked_sum = 0usize;
    for batch in &batches {
        adam.zero_grads(model.params());
        let (loss, n_masked) = model.loss_batch(batch, ctx, true, &mut state.rng)?;
        loss.backward();
        adam.step(model.params());
        loss_sum += loss.scalar() * n_masked as f64;
        masked_sum += n_masked;
    }
    let train_loss = loss_sum / masked_sum.max(1) as f64;

    let eval_loss = evaluate_loss_ctx(model, cfg, eval_corpus, ctx)?;
    let m1 = if has_gold {
        let assignment = model.predict_tags(eval_corpus, ctx)?;
        Some(
            eval::many_to_one(&assignment, eval_corpus)
                .map(|r| r.accuracy)
                .map_err(|e| ModelError::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };

    let record = EpochRecord {
        epoch: state.epoch,
        train_loss,
        eval_loss,
        lr: state.lr,
        m1,
    };
    state.epochs.push(record.clone());

    // Selection snapshot (higher criterion is better).
    let criterion = match cfg.selection {
        SelectionMode::Oracle => m1.expect("oracle selection checked gold upfront"),
        SelectionMode::Loss => -eval_loss,
    };
    let improved_selection = state.best.as_ref().is_none_or(|b| criterion > b.criterion);
    if improved_selection {
        state.best = Some(BestSnapshot {
            epoch: state.epoch,
            criterion,
            params: model
                .params()
                .iter()
                .map(|(_, p)| p.value().clone())
                .collect(),
        });
    }

    // Plateau schedule on the evaluation loss.
    let rel_gain = (state.best_eval - eval_loss) / state.best_eval.abs().max(1e-12);
    if eval_loss < state.best_eval
        && (state.best_eval.is_infinite() || rel_gain > cfg.improvement_threshold)
    {
        state.best_eval = eval_loss;
        state.stagnant = 0;
    } else {
        state.stagnant += 1;
        if state.stagnant >= cfg.patience {
            if state.decays >= cfg.max_decays {
                state.done = true;
            } else {
                state.decays += 1;
                state.stagnant = 0;
                state.lr *= cfg.lr_decay;
            }
        }
    }
    Ok(record)
}

/// Deterministic evaluation loss: dropout off, mask and noise draws fixed by
/// a constant seed so values are comparable across epochs and runs.
pub fn evaluate_loss(
    model: &Mposm,
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
) -> Result<f64, ModelError> {
    let ctx = DataCtx::new(vocab, features);
    evaluate_loss_ctx(model, cfg, corpus, &ctx)
}

fn evaluate_loss_ctx(
    model: &Mposm,
    cfg: &TrainConfig,
    corpus: &Corpus,
    ctx: &DataCtx,
) -> Result<f64, ModelError> {
    let sentences = map_sentences(corpus, ctx.vocab);
    let batches = make_eval_batches(&sentences, cfg.batch_size);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ EVAL_RNG_SALT);
    let mut loss_sum = 0.0f64;
    let mut masked_sum = 0usize;
    for batch in &batches {
        let (loss, n_masked) = model.loss_batch(batch, ctx, false, &mut rng)?;
        loss_sum += loss.scalar() * n_masked as f64;
        masked_sum += n_masked;
    }
    Ok(loss_sum / masked_sum.max(1) as f64)
}

// ---- multi-seed runs ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub m1: f64,
    pub eval_loss: f64,
    pub epochs_run: usize,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSeedSummary {
    pub runs: Vec<SeedRun>,
    pub mean_m1: f64,
    pub std_m1: f64,
    pub percent_perfect: f64,
}

impl MultiSeedSummary {
    pub fn from_runs(runs: Vec<SeedRun>) -> MultiSeedSummary {
        let accs: Vec<f64> = runs.iter().map(|r| r.m1).collect();
        let n = accs.len().max(1) as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        MultiSeedSummary {
            percent_perfect: percent_perfect(&accs),
            mean_m1: mean,
            std_m1: var.sqrt(),
            runs,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,m1,eval_loss,epochs_run,selected_epoch\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.seed, r.m1, r.eval_loss, r.epochs_run, r.selected_epoch
            ));
        }
        s
    }
}

/// Callback invoked after each seed finishes, with the seed and its result.
pub type OnRun<'a> = &'a mut dyn FnMut(u64, &TrainResult);

/// Train one model per seed and aggregate. `build_model` lets the caller
/// decide initialization (fresh or transplanted from pretraining).
pub fn multi_seed(
    seeds: &[u64],
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    features: Option<&FeatureFile>,
    build_model: &mut dyn FnMut(u64) -> Result<Mposm, ModelError>,
    mut on_run: Option<OnRun<'_>>,
) -> Result<MultiSeedSummary, ModelError> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut model = build_model(seed)?;
        let run_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let result = train_staged(&mut model, &run_cfg, corpus, vocab, features, None)?;
        let m1 = result.m1.ok_or_else(|| {
            ModelError::InvalidConfig("multi-seed aggregation requires gold tags".into())
        })?;
        runs.push(SeedRun {
            seed,
            m1,
            eval_loss: result.eval_loss,
            epochs_run: result.epochs.len(),
            selected_epoch: result.selected_epoch,
        });
        if let Some(f) = on_run.as_mut() {
            f(seed, &result);
        }
    }
    Ok(MultiSeedSummary::from_runs(runs))
}

// ---- checkpointing ----

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab_hash: u64,
    feature_dim: Option<usize>,
    epoch: usize,
    lr: f64,
    decays: usize,
    stagnant: usize,
    /// Bit pattern so the infinity sentinel survives JSON.
    best_eval_bits: u64,
    done: bool,
    epochs: Vec<EpochRecord>,
    rng_seed: u64,
    /// ChaCha word position, too wide for a JSON number.
    rng_word_pos: String,
    adam_t: u64,
    params: Vec<TensorMeta>,
    best: Option<(usize, f64)>,
}

fn write_tensor(out: &mut Vec<u8>, tensor: &Array2<f64>) {
    for &x in tensor.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_tensor(
    data: &[u8],
    offset: &mut usize,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>, ModelError> {
    let n = rows * cols * 8;
    let slice = data
        .get(*offset..*offset + n)
        .ok_or_else(|| ModelError::Checkpoint("truncated tensor data".into()))?;
    *offset += n;
    let floats: Vec<f64> = slice
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), floats).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(
    path: &Path,
    model: &Mposm,
    adam: &Adam,
    state: &TrainState,
    cfg: &TrainConfig,
) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        model_config: model.config.clone(),
        train_config: cfg.clone(),
        vocab_hash: model.vocab_hash,
        feature_dim: model.feature_dim(),
        epoch: state.epoch,
        lr: state.lr,
        decays: state.decays,
        stagnant: state.stagnant,
        best_eval_bits: state.best_eval.to_bits(),
        done: state.done,
        epochs: state.epochs.clone(),
        rng_seed: state.rng_seed,
        rng_word_pos: state.rng.get_word_pos().to_string(),
        adam_t: adam.t,
        params: model
            .params()
            .iter()
            .map(|(name, p)| {
                let (rows, cols) = p.shape();
                TensorMeta {
                    name: name.clone(),
                    rows,
                    cols,
                }
            })
            .collect(),
        best: state.best.as_ref().map(|b| (b.epoch, b.criterion)),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut blob = Vec::new();
    for (_, p) in model.params() {
        write_tensor(&mut blob, &p.value());
    }
    for m in &adam.m {
        write_tensor(&mut blob, m);
    }
    for v in &adam.v {
        write_tensor(&mut blob, v);
    }
    if let Some(best) = &state.best {
        for p in &best.params {
            write_tensor(&mut blob, p);
        }
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let write = |file: &mut std::fs::File, bytes: &[u8]| {
        file.write_all(bytes)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))
    };
    write(&mut file, CHECKPOINT_MAGIC)?;
    write(&mut file, &CHECKPOINT_VERSION.to_le_bytes())?;
    write(&mut file, &(header_json.len() as u32).to_le_bytes())?;
    write(&mut file, &header_json)?;
    write(&mut file, &blob)?;
    Ok(())
}

/// Rebuild the model, optimizer, and loop state from a checkpoint. The vocab
/// must hash to the value recorded at save time.
pub fn load_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<(Mposm, Adam, TrainState, TrainConfig), ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if bytes.len() < 12 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(
        bytes
            .get(12..12 + header_len)
            .ok_or_else(|| ModelError::Checkpoint("truncated header".into()))?,
    )
    .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.vocab_hash != vocab.hash64() {
        return Err(ModelError::Checkpoint(
            "vocabulary does not match the checkpoint".into(),
        ));
    }

    let mut init_rng = ChaCha20Rng::seed_from_u64(0);
    let model = Mposm::new(
        header.model_config.clone(),
        vocab,
        None,
        header.feature_dim,
        &mut init_rng,
    )?;
    if model.params().len() != header.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "parameter count mismatch: file has {}, model has {}",
            header.params.len(),
            model.params().len()
        )));
    }
    let mut offset = 12 + header_len;
    let n_params = header.params.len();
    let mut param_values = Vec::with_capacity(n_params);
    for ((name, p), meta) in model.params().iter().zip(&header.params) {
        if name != &meta.name {
            return Err(ModelError::Checkpoint(format!(
                "parameter name mismatch: file has `{}`, model expects `{name}`",
                meta.name
            )));
        }
        let (rows, cols) = p.shape();
        if (rows, cols) != (meta.rows, meta.cols) {
            return Err(ModelError::Checkpoint(format!(
                "shape mismatch for `{name}`: file has {}x{}, model expects {rows}x{cols}",
                meta.rows, meta.cols
            )));
        }
        param_values.push(read_tensor(&bytes, &mut offset, rows, cols)?);
    }
    let mut adam = Adam::new(AdamConfig::default(), model.params());
    adam.t = header.adam_t;
    for i in 0..n_params {
        let meta = &header.params[i];
        adam.m[i] = read_tensor(&bytes, &mut offset, meta.rows, meta.cols)?;
    }
    for i in 0..n_params {
        let meta = &header.params[i];
        adam.v[i] = read_tensor(&bytes, &mut offset, meta.rows, meta.cols)?;
    }
    let best = match header.best {
        Some((epoch, criterion)) => {
            let mut params = Vec::with_capacity(n_params);
            for meta in &header.params {
                params.push(read_tensor(&bytes, &mut offset, meta.rows, meta.cols)?);
            }
            Some(BestSnapshot {
                epoch,
                criterion,
                params,
            })
        }
        None => None,
    };
    for ((_, p), value) in model.params().iter().zip(param_values) {
        p.set_value(value);
    }

    let word_pos: u128 = header
        .rng_word_pos
        .parse()
        .map_err(|_| ModelError::Checkpoint("bad rng position".into()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(header.rng_seed);
    rng.set_word_pos(word_pos);

    let state = TrainState {
        epoch: header.epoch,
        lr: header.lr,
        decays: header.decays,
        stagnant: header.stagnant,
        best_eval: f64::from_bits(header.best_eval_bits),
        done: header.done,
        epochs: header.epochs,
        best,
        rng,
        rng_seed: header.rng_seed,
    };
    Ok((model, adam, state, header.train_config))
}
