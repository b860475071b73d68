//! The masked part-of-speech model: a context-independent local tag
//! predictor (word + character encoder, straight-through Gumbel-Softmax)
//! trained through masked tag reconstruction — mask predicted tags, run a
//! dependency network over the tag embeddings, and maximize the probability
//! of each masked word marginalized over its latent tag.

pub mod batch;
pub mod gumbel;
mod types;

pub use batch::{make_batches, make_eval_batches, map_sentences, Batch};
pub use gumbel::{gumbel_st_sample, gumbel_st_with_noise, sample_mask};
pub use types::{
    ContextKind, EmissionKind, MaskPattern, ModelConfig, ModelError, ModelVariant, TagAssignment,
    TagSource,
};

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Corpus, FeatureFile, Vocabulary, UNK_TOKEN};
use crate::nn::{BiLstm, Embedding, Linear, Var};

/// Read-only data context threaded through forward passes.
pub struct DataCtx<'a> {
    pub vocab: &'a Vocabulary,
    pub features: Option<&'a FeatureFile>,
    /// ln of the empirical word frequency, per type id.
    pub log_px: Vec<f64>,
}

impl<'a> DataCtx<'a> {
    pub fn new(vocab: &'a Vocabulary, features: Option<&'a FeatureFile>) -> Self {
        let log_px = vocab.empirical_p().iter().map(|&p| p.ln()).collect();
        DataCtx {
            vocab,
            features,
            log_px,
        }
    }
}

enum DepNet {
    Full(BiLstm),
    Width { k: usize, l1: Linear, l2: Linear },
}

enum EmissionHead {
    /// Linear map from tag embeddings to vocabulary logits.
    Untied(Linear),
    /// Projection into word-embedding space, output weights tied to the
    /// input word embeddings.
    Tied { proj: Linear, bias: Var },
    /// Derived from P(z|x) and P(x) by Bayes' rule; no parameters.
    Bayes,
}

enum WordHead {
    Untied(Linear),
    Tied { proj: Linear, bias: Var },
}

pub struct Mposm {
    pub config: ModelConfig,
    pub vocab_hash: u64,
    vocab_size: usize,
    word_channel_dim: usize,
    word_emb: Embedding,
    char_emb: Embedding,
    char_lstm: BiLstm,
    local_ff1: Linear,
    local_ff2: Option<Linear>,
    tag_emb: Embedding,
    dep: DepNet,
    recon_head: Linear,
    emission: EmissionHead,
    mlmp_head: WordHead,
    word_variant_mlp: (Linear, Linear),
    params: Vec<(String, Var)>,
    /// Straight-through (hard one-hot) sampling. Gradient checks flip this
    /// off, because the hard forward pass makes the true derivative of the
    /// loss differ from the relaxed surrogate by construction.
    gumbel_hard: bool,
}

struct MaskedToken {
    batch_row: usize,
    time: usize,
    word_id: usize,
}

impl Mposm {
    pub fn new<R: Rng>(
        config: ModelConfig,
        vocab: &Vocabulary,
        pretrained_emb: Option<Array2<f64>>,
        feature_dim: Option<usize>,
        rng: &mut R,
    ) -> Result<Mposm, ModelError> {
        config.validate()?;
        if config.use_feature_file != feature_dim.is_some() {
            return Err(ModelError::InvalidConfig(
                "feature_dim must be given exactly when use_feature_file is set".into(),
            ));
        }
        let vocab_size = vocab.size();
        let word_channel_dim = feature_dim.unwrap_or(config.word_emb_dim);
        let repr_dim = word_channel_dim + config.hidden_dim;
        let word_emb = match pretrained_emb {
            Some(matrix) => {
                if matrix.nrows() != vocab.n_rows() || matrix.ncols() != config.word_emb_dim {
                    return Err(ModelError::Shape(format!(
                        "pretrained embedding is {}x{}, expected {}x{}",
                        matrix.nrows(),
                        matrix.ncols(),
                        vocab.n_rows(),
                        config.word_emb_dim
                    )));
                }
                Embedding::from_matrix(matrix)
            }
            None => Embedding::new(vocab.n_rows(), config.word_emb_dim, rng),
        };
        let char_emb = Embedding::new(vocab.n_chars(), config.char_emb_dim, rng);
        let char_lstm = BiLstm::new(config.char_emb_dim, config.hidden_dim / 2, rng);
        let (local_ff1, local_ff2) = if config.local_predictor_layers == 2 {
            (
                Linear::new(repr_dim, config.hidden_dim, rng),
                Some(Linear::new(config.hidden_dim, config.n_tags, rng)),
            )
        } else {
            (Linear::new(repr_dim, config.n_tags, rng), None)
        };
        let tag_emb = Embedding::new(config.n_tags + 1, config.pos_emb_dim, rng);
        let dep = match config.context {
            ContextKind::Full => {
                DepNet::Full(BiLstm::new(config.pos_emb_dim, config.hidden_dim, rng))
            }
            ContextKind::WidthK(k) => DepNet::Width {
                k,
                l1: Linear::new(2 * k * config.pos_emb_dim, config.hidden_dim, rng),
                l2: Linear::new(config.hidden_dim, 2 * config.hidden_dim, rng),
            },
        };
        let recon_head = Linear::new(2 * config.hidden_dim, config.n_tags, rng);
        let emission = match config.emission {
            EmissionKind::BayesTied => EmissionHead::Bayes,
            EmissionKind::Feedforward if config.use_pretrained_emb => EmissionHead::Tied {
                proj: Linear::new(config.pos_emb_dim, config.word_emb_dim, rng),
                bias: Var::param(Array2::zeros((1, vocab_size))),
            },
            EmissionKind::Feedforward => {
                EmissionHead::Untied(Linear::new(config.pos_emb_dim, vocab_size, rng))
            }
        };
        let mlmp_head = if config.use_pretrained_emb {
            WordHead::Tied {
                proj: Linear::new(2 * config.hidden_dim, config.word_emb_dim, rng),
                bias: Var::param(Array2::zeros((1, vocab_size))),
            }
        } else {
            WordHead::Untied(Linear::new(2 * config.hidden_dim, vocab_size, rng))
        };
        let word_variant_mlp = (
            Linear::new(repr_dim, config.hidden_dim, rng),
            Linear::new(config.hidden_dim, config.pos_emb_dim, rng),
        );

        let mut params = Vec::new();
        word_emb.collect_params("word_emb", &mut params);
        char_emb.collect_params("char_emb", &mut params);
        char_lstm.collect_params("char_lstm", &mut params);
        local_ff1.collect_params("local_ff1", &mut params);
        if let Some(ff2) = &local_ff2 {
            ff2.collect_params("local_ff2", &mut params);
        }
        tag_emb.collect_params("tag_emb", &mut params);
        match &dep {
            DepNet::Full(net) => net.collect_params("dep_bilstm", &mut params),
            DepNet::Width { l1, l2, .. } => {
                l1.collect_params("dep_mlp.l1", &mut params);
                l2.collect_params("dep_mlp.l2", &mut params);
            }
        }
        recon_head.collect_params("recon_head", &mut params);
        match &emission {
            EmissionHead::Untied(l) => l.collect_params("emission_head", &mut params),
            EmissionHead::Tied { proj, bias } => {
                proj.collect_params("emission_proj", &mut params);
                params.push(("emission_bias".to_string(), bias.clone()));
            }
            EmissionHead::Bayes => {}
        }
        match &mlmp_head {
            WordHead::Untied(l) => l.collect_params("mlmp_head", &mut params),
            WordHead::Tied { proj, bias } => {
                proj.collect_params("mlmp_proj", &mut params);
                params.push(("mlmp_bias".to_string(), bias.clone()));
            }
        }
        word_variant_mlp
            .0
            .collect_params("word_variant_mlp.l1", &mut params);
        word_variant_mlp
            .1
            .collect_params("word_variant_mlp.l2", &mut params);

        Ok(Mposm {
            config,
            vocab_hash: vocab.hash64(),
            vocab_size,
            word_channel_dim,
            word_emb,
            char_emb,
            char_lstm,
            local_ff1,
            local_ff2,
            tag_emb,
            dep,
            recon_head,
            emission,
            mlmp_head,
            word_variant_mlp,
            params,
            gumbel_hard: true,
        })
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Width of the external word channel, when a feature file drives it.
    pub fn feature_dim(&self) -> Option<usize> {
        self.config
            .use_feature_file
            .then_some(self.word_channel_dim)
    }

    /// Switch variant in place (MLMP pretraining -> standard training keeps
    /// every shared tensor bit-identical because they are the same tensors).
    pub fn set_variant(&mut self, variant: ModelVariant) {
        self.config.variant = variant;
    }

    /// Replace hard straight-through samples with their relaxed softmax so
    /// the loss becomes differentiable end to end (gradient checks only).
    pub fn set_gumbel_hard(&mut self, hard: bool) {
        self.gumbel_hard = hard;
    }

    // ---- encoders ----

    /// Character-level representation of the given words: final states of a
    /// bidirectional recurrence over the character embeddings, [n, hidden].
    fn encode_chars(&self, words: &[&str], vocab: &Vocabulary) -> Var {
        let n = words.len();
        let max_len = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        let mut char_ids = vec![vec![0usize; n]; max_len];
        let mut masks = vec![Array2::<f64>::zeros((n, 1)); max_len];
        for (i, word) in words.iter().enumerate() {
            for (t, c) in word.chars().enumerate() {
                char_ids[t][i] = vocab.char_id(c);
                masks[t][[i, 0]] = 1.0;
            }
        }
        let xs: Vec<Var> = char_ids
            .iter()
            .map(|ids| self.char_emb.lookup(ids))
            .collect();
        self.char_lstm.final_states(&xs, Some(&masks))
    }

    /// Context-independent representation of word types: word embedding (or
    /// feature vector) concatenated with the character-encoder states.
    pub fn encode_word_types<R: Rng>(
        &self,
        type_ids: &[usize],
        ctx: &DataCtx,
        train: bool,
        rng: &mut R,
    ) -> Var {
        let words: Vec<&str> = type_ids
            .iter()
            .map(|&id| {
                if id == ctx.vocab.unk_id {
                    UNK_TOKEN
                } else {
                    ctx.vocab.id_to_word[id].as_str()
                }
            })
            .collect();
        let chars = self.encode_chars(&words, ctx.vocab);
        let word_channel = self.word_emb.lookup(type_ids);
        let repr = Var::concat_cols(&[word_channel, chars]);
        self.apply_dropout(repr, train, rng)
    }

    /// Per-token representation when a feature file supplies the word channel.
    fn encode_feature_tokens<R: Rng>(
        &self,
        batch: &Batch,
        tokens: &[(usize, usize)],
        ctx: &DataCtx,
        train: bool,
        rng: &mut R,
    ) -> Var {
        let features = ctx.features.expect("feature mode");
        let vocab = ctx.vocab;
        let words: Vec<&str> = tokens
            .iter()
            .map(|&(b, t)| {
                let id = batch.word_ids[b][t];
                if id == vocab.unk_id {
                    UNK_TOKEN
                } else {
                    vocab.id_to_word[id].as_str()
                }
            })
            .collect();
        let chars = self.encode_chars(&words, vocab);
        let mut feats = Array2::zeros((tokens.len(), self.word_channel_dim));
        for (i, &(b, t)) in tokens.iter().enumerate() {
            feats
                .row_mut(i)
                .assign(&features.vectors.row(batch.token_offsets[b] + t));
        }
        let repr = Var::concat_cols(&[Var::constant(feats), chars]);
        self.apply_dropout(repr, train, rng)
    }

    fn apply_dropout<R: Rng>(&self, x: Var, train: bool, rng: &mut R) -> Var {
        let p = self.config.dropout;
        if !train || p == 0.0 {
            return x;
        }
        let (rows, cols) = x.shape();
        let keep = 1.0 - p;
        let mask = Array2::from_shape_fn((rows, cols), |_| {
            if rng.random_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        });
        x.mul_const(&mask)
    }

    /// Unnormalized local tag scores; softmax over them is P(z|x).
    pub fn local_pos_logits(&self, repr: &Var) -> Var {
        match &self.local_ff2 {
            Some(ff2) => ff2.forward(&self.local_ff1.forward(repr).relu()),
            None => self.local_ff1.forward(repr),
        }
    }

    /// Local logits for every vocabulary type (unk included, last row),
    /// computed without dropout or noise.
    pub fn local_logits_table(&self, ctx: &DataCtx) -> Array2<f64> {
        let ids: Vec<usize> = (0..=self.vocab_size).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let repr = self.encode_word_types(&ids, ctx, false, &mut rng);
        let logits = self.local_pos_logits(&repr);
        let out = logits.value().clone();
        out
    }

    /// Log P(x|z) as an [n_tags, vocab] row-log-normalized table.
    ///
    /// `local_log_pzx`: log-softmaxed local logits for type ids 0..vocab
    /// (required for the Bayes-tied emission; gradient flows through it).
    pub fn emission_log_table(
        &self,
        ctx: &DataCtx,
        local_log_pzx: Option<&Var>,
    ) -> Result<Var, ModelError> {
        match &self.emission {
            EmissionHead::Bayes => {
                let log_pzx = local_log_pzx.ok_or_else(|| {
                    ModelError::Shape("bayes emission needs the local P(z|x) table".into())
                })?;
                let log_px = Array2::from_shape_vec((self.vocab_size, 1), ctx.log_px.clone())
                    .expect("log_px shape");
                // log P(z|x) + log P(x), renormalized over x per tag row.
                let joint = log_pzx.add_col_const(&log_px).t();
                Ok(joint.log_softmax_rows())
            }
            EmissionHead::Untied(head) => {
                let tag_rows = self.main_tag_rows();
                Ok(head.forward(&tag_rows).log_softmax_rows())
            }
            EmissionHead::Tied { proj, bias } => {
                let tag_rows = self.main_tag_rows();
                let projected = proj.forward(&tag_rows);
                let logits = projected
                    .matmul(&self.word_emb.table.t())
                    .slice_cols(0..self.vocab_size)
                    .add_bias(bias);
                Ok(logits.log_softmax_rows())
            }
        }
    }

    /// Tag-embedding rows for the real tags (MASK row excluded).
    fn main_tag_rows(&self) -> Var {
        let ids: Vec<usize> = (0..self.config.n_tags).collect();
        self.tag_emb.lookup(&ids)
    }

    fn mask_row_for_batch(&self, batch_size: usize) -> Var {
        let ids = vec![self.config.mask_tag_id(); batch_size];
        self.tag_emb.lookup(&ids)
    }

    /// Dependency-network outputs at the masked positions, [n_masked, 2*hidden].
    /// `inputs[t]` are the (masked-substituted) per-position tag inputs.
    fn context_reprs_at(
        &self,
        inputs: &[Var],
        valid_masks: &[Array2<f64>],
        masked: &[MaskedToken],
        batch_size: usize,
    ) -> Var {
        let max_len = inputs.len();
        let mut per_time: Vec<Vec<usize>> = vec![Vec::new(); max_len];
        for tok in masked {
            per_time[tok.time].push(tok.batch_row);
        }
        match &self.dep {
            DepNet::Full(net) => {
                let states = net.run(inputs, Some(valid_masks));
                let parts: Vec<Var> = (0..max_len)
                    .filter(|&t| !per_time[t].is_empty())
                    .map(|t| states[t].gather_rows(&per_time[t]))
                    .collect();
                Var::concat_rows(&parts)
            }
            DepNet::Width { k, l1, l2 } => {
                let mask_row = self.mask_row_for_batch(batch_size);
                let mut parts: Vec<Var> = Vec::new();
                #[allow(clippy::needless_range_loop)]
                for t in 0..max_len {
                    if per_time[t].is_empty() {
                        continue;
                    }
                    let mut ctx_parts: Vec<Var> = Vec::with_capacity(2 * k);
                    for off in (1..=*k).rev() {
                        ctx_parts.push(neighbor_or_mask(inputs, t as i64 - off as i64, &mask_row));
                    }
                    for off in 1..=*k {
                        ctx_parts.push(neighbor_or_mask(inputs, t as i64 + off as i64, &mask_row));
                    }
                    let ctx_cat = Var::concat_cols(&ctx_parts).gather_rows(&per_time[t]);
                    parts.push(ctx_cat);
                }
                let gathered = Var::concat_rows(&parts);
                l2.forward(&l1.forward(&gathered).tanh())
            }
        }
    }

    /// One training/evaluation forward pass over a batch; returns the mean
    /// negative log-probability of the masked words and the masked count.
    pub fn loss_batch(
        &self,
        batch: &Batch,
        ctx: &DataCtx,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Var, usize), ModelError> {
        let (dep_out, masked, local_log_pzx) =
            self.masked_context_outputs(batch, ctx, train, rng)?;
        let n_masked = masked.len();
        let masked_word_ids: Vec<usize> = masked.iter().map(|m| m.word_id).collect();

        let loss = match self.config.variant {
            ModelVariant::MlmpPretrain => {
                let log_words = self.mlmp_word_log_probs(&dep_out);
                log_words
                    .select_cols_per_row(&masked_word_ids)
                    .mean_all()
                    .neg()
            }
            _ => {
                let log_pz = self.recon_head.forward(&dep_out).log_softmax_rows();
                let emission = self.emission_log_table(ctx, local_log_pzx.as_ref())?;
                let emis_cols = emission.gather_cols_t(&masked_word_ids);
                emis_cols.add(&log_pz).logsumexp_rows().mean_all().neg()
            }
        };
        if !loss.scalar().is_finite() {
            return Err(ModelError::NonFinite {
                context: "batch loss".into(),
                sentence: batch.sentence_ids[0],
            });
        }
        Ok((loss, n_masked))
    }

    /// Full predictive distribution at the sampled masked positions:
    /// log P(x|C) over every vocabulary word, one row per masked token
    /// (time-major over the batch, matching the internal masking order).
    pub fn masked_predictive_log_probs(
        &self,
        batch: &Batch,
        ctx: &DataCtx,
        rng: &mut ChaCha20Rng,
    ) -> Result<Array2<f64>, ModelError> {
        let (dep_out, masked, local_log_pzx) =
            self.masked_context_outputs(batch, ctx, false, rng)?;
        let n_masked = masked.len();
        if let ModelVariant::MlmpPretrain = self.config.variant {
            return Ok(self.mlmp_word_log_probs(&dep_out).value().clone());
        }
        let log_pz = self.recon_head.forward(&dep_out).log_softmax_rows();
        let emission = self.emission_log_table(ctx, local_log_pzx.as_ref())?;
        let pz = log_pz.value();
        let em = emission.value();
        let mut out = Array2::zeros((n_masked, self.vocab_size));
        for i in 0..n_masked {
            for x in 0..self.vocab_size {
                let mut max = f64::NEG_INFINITY;
                for z in 0..self.config.n_tags {
                    max = max.max(pz[[i, z]] + em[[z, x]]);
                }
                let sum: f64 = (0..self.config.n_tags)
                    .map(|z| (pz[[i, z]] + em[[z, x]] - max).exp())
                    .sum();
                out[[i, x]] = max + sum.ln();
            }
        }
        Ok(out)
    }

    /// Shared forward pass: dependency-network outputs at freshly sampled
    /// masked positions, the masked tokens themselves, and (for the
    /// Bayes-tied emission) the differentiable log P(z|x) table.
    fn masked_context_outputs(
        &self,
        batch: &Batch,
        ctx: &DataCtx,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Var, Vec<MaskedToken>, Option<Var>), ModelError> {
        let b = batch.size();
        let max_len = batch.max_len;
        let n_tags = self.config.n_tags;

        // Per-sentence mask patterns over valid positions.
        let mut masked_flags = vec![vec![false; max_len]; b];
        for row in 0..b {
            let flags = sample_mask(batch.lengths[row], self.config.mask_rate, rng);
            masked_flags[row][..batch.lengths[row]].copy_from_slice(&flags);
        }
        let mut masked: Vec<MaskedToken> = Vec::new();
        #[allow(clippy::needless_range_loop)]
        for t in 0..max_len {
            for row in 0..b {
                if masked_flags[row][t] {
                    masked.push(MaskedToken {
                        batch_row: row,
                        time: t,
                        word_id: batch.word_ids[row][t],
                    });
                }
            }
        }
        // Per-position column masks. keep = valid and not masked.
        let mut keep_masks = Vec::with_capacity(max_len);
        let mut valid_masks = Vec::with_capacity(max_len);
        #[allow(clippy::needless_range_loop)]
        for t in 0..max_len {
            let mut keep = Array2::zeros((b, 1));
            let mut valid = Array2::zeros((b, 1));
            for row in 0..b {
                if t < batch.lengths[row] {
                    valid[[row, 0]] = 1.0;
                    if !masked_flags[row][t] {
                        keep[[row, 0]] = 1.0;
                    }
                }
            }
            keep_masks.push(keep);
            valid_masks.push(valid);
        }

        // Inputs to the dependency network, per position.
        let mask_row = self.mask_row_for_batch(b);
        let (inputs, local_log_pzx) = match self.config.variant {
            ModelVariant::WordVariant => {
                let (token_reprs, row_of) = self.token_local_stage(batch, ctx, train, rng)?;
                let projected = self
                    .word_variant_mlp
                    .1
                    .forward(&self.word_variant_mlp.0.forward(&token_reprs).tanh());
                let mut inputs = Vec::with_capacity(max_len);
                for t in 0..max_len {
                    let rows: Vec<usize> = (0..b).map(|row| row_of[row][t]).collect();
                    let proj_t = projected.gather_rows(&rows);
                    inputs.push(
                        proj_t
                            .mul_col(&keep_masks[t])
                            .add(&mask_row.mul_col(&inv(&keep_masks[t]))),
                    );
                }
                (inputs, None)
            }
            _ => {
                let (token_logits, row_of, log_pzx) =
                    self.local_logits_stage(batch, ctx, train, rng)?;
                let main_rows = self.main_tag_rows();
                let mut inputs = Vec::with_capacity(max_len);
                for t in 0..max_len {
                    let rows: Vec<usize> = (0..b).map(|row| row_of[row][t]).collect();
                    let logits_t = token_logits.gather_rows(&rows);
                    let noise = gumbel::gumbel_noise(b, n_tags, rng);
                    let st = if self.gumbel_hard {
                        gumbel_st_with_noise(&logits_t, self.config.gumbel_tau, &noise)
                    } else {
                        gumbel::gumbel_soft_with_noise(&logits_t, self.config.gumbel_tau, &noise)
                    };
                    let emb_t = st.matmul(&main_rows);
                    inputs.push(
                        emb_t
                            .mul_col(&keep_masks[t])
                            .add(&mask_row.mul_col(&inv(&keep_masks[t]))),
                    );
                }
                (inputs, log_pzx)
            }
        };

        let dep_out = self.context_reprs_at(&inputs, &valid_masks, &masked, b);
        let dep_out = self.apply_dropout(dep_out, train, rng);
        Ok((dep_out, masked, local_log_pzx))
    }

    /// Normalized vocabulary distribution from context representations
    /// (masked-language-model pretraining head).
    pub fn mlmp_word_log_probs(&self, dep_out: &Var) -> Var {
        let logits = match &self.mlmp_head {
            WordHead::Untied(head) => head.forward(dep_out),
            WordHead::Tied { proj, bias } => proj
                .forward(dep_out)
                .matmul(&self.word_emb.table.t())
                .slice_cols(0..self.vocab_size)
                .add_bias(bias),
        };
        logits.log_softmax_rows()
    }

    /// Shared local stage for the standard and MLMP variants: logits per
    /// word type, token -> type-row mapping, and (for bayes emission) the
    /// differentiable full-vocabulary log P(z|x) table.
    #[allow(clippy::type_complexity)]
    fn local_logits_stage(
        &self,
        batch: &Batch,
        ctx: &DataCtx,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Var, Vec<Vec<usize>>, Option<Var>), ModelError> {
        if self.config.use_feature_file {
            // Feature vectors are per token; every valid token is its own row.
            let tokens: Vec<(usize, usize)> = (0..batch.size())
                .flat_map(|row| (0..batch.lengths[row]).map(move |t| (row, t)))
                .collect();
            let reprs = self.encode_feature_tokens(batch, &tokens, ctx, train, rng);
            let logits = self.local_pos_logits(&reprs);
            let mut row_of = vec![vec![0usize; batch.max_len]; batch.size()];
            for (i, &(row, t)) in tokens.iter().enumerate() {
                row_of[row][t] = i;
            }
            return Ok((logits, row_of, None));
        }
        let needs_full_vocab = matches!(self.emission, EmissionHead::Bayes);
        let type_ids: Vec<usize> = if needs_full_vocab {
            (0..=self.vocab_size).collect()
        } else {
            let mut ids: Vec<usize> = batch.word_ids.iter().flatten().copied().collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        let index_of: HashMap<usize, usize> = type_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let reprs = self.encode_word_types(&type_ids, ctx, train, rng);
        let logits = self.local_pos_logits(&reprs);
        let row_of: Vec<Vec<usize>> = batch
            .word_ids
            .iter()
            .map(|ids| ids.iter().map(|id| index_of[id]).collect())
            .collect();
        let log_pzx = if needs_full_vocab {
            // Rows 0..vocab (unk excluded) feed the Bayes emission.
            let vocab_rows: Vec<usize> = (0..self.vocab_size).collect();
            Some(logits.gather_rows(&vocab_rows).log_softmax_rows())
        } else {
            None
        };
        Ok((logits, row_of, log_pzx))
    }

    /// Word-variant local stage: per-token context-independent representations.
    fn token_local_stage(
        &self,
        batch: &Batch,
        ctx: &DataCtx,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Var, Vec<Vec<usize>>), ModelError> {
        let (reprs, row_of, _) = {
            if self.config.use_feature_file {
                let tokens: Vec<(usize, usize)> = (0..batch.size())
                    .flat_map(|row| (0..batch.lengths[row]).map(move |t| (row, t)))
                    .collect();
                let reprs = self.encode_feature_tokens(batch, &tokens, ctx, train, rng);
                let mut row_of = vec![vec![0usize; batch.max_len]; batch.size()];
                for (i, &(row, t)) in tokens.iter().enumerate() {
                    row_of[row][t] = i;
                }
                (reprs, row_of, ())
            } else {
                let mut ids: Vec<usize> = batch.word_ids.iter().flatten().copied().collect();
                ids.sort_unstable();
                ids.dedup();
                let index_of: HashMap<usize, usize> =
                    ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
                let reprs = self.encode_word_types(&ids, ctx, train, rng);
                let row_of: Vec<Vec<usize>> = batch
                    .word_ids
                    .iter()
                    .map(|ids| ids.iter().map(|id| index_of[id]).collect())
                    .collect();
                (reprs, row_of, ())
            }
        };
        Ok((reprs, row_of))
    }

    /// Deterministic tag prediction: no Gumbel noise, no dropout, no masking.
    pub fn predict_tags(
        &self,
        corpus: &Corpus,
        ctx: &DataCtx,
    ) -> Result<TagAssignment, ModelError> {
        match self.config.variant {
            ModelVariant::WordVariant => self.predict_tags_reconstruction(corpus, ctx),
            _ if self.config.use_feature_file => self.predict_tags_per_token(corpus, ctx),
            _ => self.predict_tags_local(corpus, ctx),
        }
    }

    fn predict_tags_local(
        &self,
        corpus: &Corpus,
        ctx: &DataCtx,
    ) -> Result<TagAssignment, ModelError> {
        let table = self.local_logits_table(ctx);
        let type_tag: Vec<usize> = table.rows().into_iter().map(|r| argmax(&r)).collect();
        let tags = corpus
            .sentences
            .iter()
            .map(|s| {
                s.words
                    .iter()
                    .map(|w| type_tag[ctx.vocab.word_id(w)])
                    .collect()
            })
            .collect();
        Ok(TagAssignment {
            tags,
            source: TagSource::LocalArgmax,
        })
    }

    fn predict_tags_per_token(
        &self,
        corpus: &Corpus,
        ctx: &DataCtx,
    ) -> Result<TagAssignment, ModelError> {
        let sentences = map_sentences(corpus, ctx.vocab);
        let batches = make_eval_batches(&sentences, 256);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut tags: Vec<Vec<usize>> = vec![Vec::new(); corpus.sentences.len()];
        for batch in &batches {
            let tokens: Vec<(usize, usize)> = (0..batch.size())
                .flat_map(|row| (0..batch.lengths[row]).map(move |t| (row, t)))
                .collect();
            let reprs = self.encode_feature_tokens(batch, &tokens, ctx, false, &mut rng);
            let logits = self.local_pos_logits(&reprs);
            let values = logits.value();
            for (i, &(row, _)) in tokens.iter().enumerate() {
                tags[batch.sentence_ids[row]].push(argmax(&values.row(i)));
            }
        }
        Ok(TagAssignment {
            tags,
            source: TagSource::LocalArgmax,
        })
    }

    /// Word-variant inference: tags are the argmax of the reconstruction
    /// head's distribution at every position, computed with no masking.
    fn predict_tags_reconstruction(
        &self,
        corpus: &Corpus,
        ctx: &DataCtx,
    ) -> Result<TagAssignment, ModelError> {
        let sentences = map_sentences(corpus, ctx.vocab);
        let batches = make_eval_batches(&sentences, 256);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut tags: Vec<Vec<usize>> = vec![Vec::new(); corpus.sentences.len()];
        for batch in &batches {
            let b = batch.size();
            let max_len = batch.max_len;
            let (token_reprs, row_of) = self.token_local_stage(batch, ctx, false, &mut rng)?;
            let projected = self
                .word_variant_mlp
                .1
                .forward(&self.word_variant_mlp.0.forward(&token_reprs).tanh());
            let mut valid_masks = Vec::with_capacity(max_len);
            let mut inputs = Vec::with_capacity(max_len);
            #[allow(clippy::needless_range_loop)]
            for t in 0..max_len {
                let mut valid = Array2::zeros((b, 1));
                for row in 0..b {
                    if t < batch.lengths[row] {
                        valid[[row, 0]] = 1.0;
                    }
                }
                let rows: Vec<usize> = (0..b).map(|row| row_of[row][t]).collect();
                inputs.push(
                    projected
                        .gather_rows(&rows)
                        .mul_col(&valid)
                        .add(&self.mask_row_for_batch(b).mul_col(&inv(&valid))),
                );
                valid_masks.push(valid);
            }
            // every valid position is a prediction target
            let mut all_positions: Vec<MaskedToken> = Vec::new();
            for t in 0..max_len {
                for row in 0..b {
                    if t < batch.lengths[row] {
                        all_positions.push(MaskedToken {
                            batch_row: row,
                            time: t,
                            word_id: 0,
                        });
                    }
                }
            }
            let dep_out = self.context_reprs_at(&inputs, &valid_masks, &all_positions, b);
            let log_pz = self.recon_head.forward(&dep_out).log_softmax_rows();
            let values = log_pz.value();
            let mut per_sentence: Vec<Vec<(usize, usize)>> = vec![Vec::new(); b];
            for (i, tok) in all_positions.iter().enumerate() {
                per_sentence[tok.batch_row].push((tok.time, argmax(&values.row(i))));
            }
            for (row, mut pairs) in per_sentence.into_iter().enumerate() {
                pairs.sort_by_key(|&(t, _)| t);
                tags[batch.sentence_ids[row]] = pairs.into_iter().map(|(_, tag)| tag).collect();
            }
        }
        Ok(TagAssignment {
            tags,
            source: TagSource::ReconstructionArgmax,
        })
    }
}

fn neighbor_or_mask(inputs: &[Var], pos: i64, mask_row: &Var) -> Var {
    if pos >= 0 && (pos as usize) < inputs.len() {
        inputs[pos as usize].clone()
    } else {
        mask_row.clone()
    }
}

/// 1 - keep: positions that are masked targets or padding both read the MASK
/// embedding, so sentence boundaries inside a padded batch look like masks.
fn inv(mask: &Array2<f64>) -> Array2<f64> {
    mask.mapv(|m| 1.0 - m)
}

/// Argmax with ties broken by the lowest index.
pub fn argmax(row: &ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
