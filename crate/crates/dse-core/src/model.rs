//! Model assembly: configuration, parameter registration, and the
//! forward passes that turn packed batches into sentence representations
//! and task losses.
//!
//! A [`DseModel`] owns its vocabularies plus one [`ParamStore`]. Each
//! forward pass binds the store onto a fresh tape, encodes every token as
//! (word, relation, head) per the configured fusion, runs the BiLSTM, and
//! hands the final representation to a task head. Both heads are always
//! registered so one checkpoint format serves both tasks.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::DepSentence;
use crate::encoders::{
    bilm_embed_batch, bilstm_encode, fuse_concat, fuse_gate, step_masks, BiLmError, BiLmSpec,
    EmbeddingSpec, LstmSpec, LstmVariant,
};
use crate::expand::{
    batch_pack, expand, PackError, PackedBatch, RelationVocab, WordVocab, ROOT_POS, WORD_ROOT,
};
use crate::heads::{
    argmax_lowest, completion_loss, relation_logits, relation_loss, score, ClozeQuestion,
    HeadError, RelationInstance, RelationLabel,
};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, TensorError, Var};

/// Where per-token vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Randomly initialized, trainable word table.
    RandomEmbed,
    /// Frozen (or jointly trained) contextual vectors from the toy biLM.
    Bilm,
    /// Word table seeded from an external vector file.
    ExternalFile,
}

/// How a token combines with its relation and head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// `w ⊕ r ⊕ w_head` — the full triple.
    Concat,
    /// `w + σ(r) ⊙ w_head`.
    Gate,
    /// `w ⊕ w_head` — relation dropped.
    HeadOnly,
    /// `w` alone — fusion bypassed.
    WordOnly,
}

/// Which optimizer drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Full training/model configuration. The on-disk form is a flat
/// `key = value` text file using these exact field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub fusion: FusionKind,
    /// Word embedding dim d.
    pub dim_word: usize,
    /// Relation embedding dim d_r (gate fusion overrides this to the
    /// encoder output dim at validation).
    pub dim_rel: usize,
    /// BiLSTM hidden size H per direction.
    pub hidden: usize,
    /// biLM hidden size per direction (bilm encoder only).
    pub bilm_hidden: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lstm_variant: LstmVariant,
    pub freeze_bilm: bool,
    /// biLM pretraining epochs before the main loop (bilm encoder only).
    pub bilm_epochs: usize,
    /// Learning rate for biLM pretraining.
    pub bilm_lr: f64,
    pub optimizer: OptimizerKind,
    /// Fraction of total steps spent on the linear warmup ramp (adam).
    pub warmup: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Vector file for the external-file encoder.
    pub external_path: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::RandomEmbed,
            fusion: FusionKind::Concat,
            dim_word: 32,
            dim_rel: 200,
            hidden: 64,
            bilm_hidden: 16,
            margin: 0.5,
            lr: 0.1,
            batch_size: 16,
            max_len: 40,
            epochs: 20,
            seed: 42,
            lstm_variant: LstmVariant::AsWritten,
            freeze_bilm: true,
            bilm_epochs: 3,
            bilm_lr: 0.5,
            optimizer: OptimizerKind::Sgd,
            warmup: 0.05,
            clip_norm: 5.0,
            external_path: None,
        }
    }
}

/// Configuration failure, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config field {field}: {problem}")]
pub struct ConfigError {
    pub field: &'static str,
    pub problem: String,
}

fn bad(field: &'static str, problem: impl fmt::Display) -> ConfigError {
    ConfigError {
        field,
        problem: problem.to_string(),
    }
}

impl ModelConfig {
    /// Output dim of the encoding layer (what w, w_head live in).
    pub fn enc_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::RandomEmbed | EncoderKind::ExternalFile => self.dim_word,
            EncoderKind::Bilm => 2 * self.bilm_hidden,
        }
    }

    /// Input dim of the BiLSTM after fusion.
    pub fn fused_dim(&self) -> usize {
        let de = self.enc_dim();
        match self.fusion {
            FusionKind::Concat => 2 * de + self.dim_rel,
            FusionKind::Gate => de,
            FusionKind::HeadOnly => 2 * de,
            FusionKind::WordOnly => de,
        }
    }

    /// Dim of the final sentence representation.
    pub fn rep_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Check invariants and resolve derived fields (gate fusion forces
    /// the relation dim to the encoder output dim).
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        if self.fusion == FusionKind::Gate {
            self.dim_rel = self.enc_dim();
        }
        for (field, value) in [
            ("dim_word", self.dim_word),
            ("dim_rel", self.dim_rel),
            ("hidden", self.hidden),
            ("bilm_hidden", self.bilm_hidden),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
        ] {
            if value == 0 {
                return Err(bad(field, "must be positive"));
            }
        }
        if !(self.margin >= 0.0) {
            return Err(bad("margin", "must be ≥ 0"));
        }
        if !(self.lr >= 0.0) {
            return Err(bad("lr", "must be ≥ 0"));
        }
        if !(self.bilm_lr >= 0.0) {
            return Err(bad("bilm_lr", "must be ≥ 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(bad("clip_norm", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return Err(bad("warmup", "must be in [0, 1]"));
        }
        if self.encoder == EncoderKind::ExternalFile && self.external_path.is_none() {
            return Err(bad("external_path", "required for the external-file encoder"));
        }
        Ok(self)
    }

    /// Parse the flat `key = value` config format. Unknown keys and
    /// unparseable values are errors; omitted keys take defaults.
    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = ModelConfig::default();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("line", format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            config.set_field(key, value)?;
        }
        config.validated()
    }

    fn set_field(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            field: &'static str,
            value: &str,
        ) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| bad(field, format!("unparseable value {value:?}")))
        }
        match key {
            "encoder" => {
                self.encoder = match value {
                    "random-embed" => EncoderKind::RandomEmbed,
                    "bilm" => EncoderKind::Bilm,
                    "external-file" => EncoderKind::ExternalFile,
                    other => return Err(bad("encoder", format!("unknown encoder {other:?}"))),
                }
            }
            "fusion" => {
                self.fusion = match value {
                    "concat" => FusionKind::Concat,
                    "gate" => FusionKind::Gate,
                    "head-only" => FusionKind::HeadOnly,
                    "word-only" => FusionKind::WordOnly,
                    other => return Err(bad("fusion", format!("unknown fusion {other:?}"))),
                }
            }
            "lstm_variant" => {
                self.lstm_variant = match value {
                    "as-written" => LstmVariant::AsWritten,
                    "standard" => LstmVariant::Standard,
                    other => {
                        return Err(bad("lstm_variant", format!("unknown variant {other:?}")))
                    }
                }
            }
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => return Err(bad("optimizer", format!("unknown optimizer {other:?}"))),
                }
            }
            "dim_word" => self.dim_word = parse("dim_word", value)?,
            "dim_rel" => self.dim_rel = parse("dim_rel", value)?,
            "hidden" => self.hidden = parse("hidden", value)?,
            "bilm_hidden" => self.bilm_hidden = parse("bilm_hidden", value)?,
            "margin" => self.margin = parse("margin", value)?,
            "lr" => self.lr = parse("lr", value)?,
            "batch_size" => self.batch_size = parse("batch_size", value)?,
            "max_len" => self.max_len = parse("max_len", value)?,
            "epochs" => self.epochs = parse("epochs", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "freeze_bilm" => self.freeze_bilm = parse("freeze_bilm", value)?,
            "bilm_epochs" => self.bilm_epochs = parse("bilm_epochs", value)?,
            "bilm_lr" => self.bilm_lr = parse("bilm_lr", value)?,
            "warmup" => self.warmup = parse("warmup", value)?,
            "clip_norm" => self.clip_norm = parse("clip_norm", value)?,
            "external_path" => self.external_path = Some(value.to_string()),
            other => {
                return Err(ConfigError {
                    field: "unknown",
                    problem: format!("unknown config key {other:?}"),
                })
            }
        }
        Ok(())
    }
}

/// Model-level failure.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    BiLm(#[from] BiLmError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// The dependency-syntax-expansion model.
#[derive(Debug, Clone)]
pub struct DseModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub words: WordVocab,
    pub rels: RelationVocab,
}

impl DseModel {
    /// Build and initialize a model. `external` supplies pretrained
    /// vectors for the external-file encoder (already parsed).
    pub fn new(
        config: ModelConfig,
        words: WordVocab,
        rels: RelationVocab,
        external: Option<&[(String, Vec<f64>)]>,
    ) -> Result<Self, ModelError> {
        let config = config.validated()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        match config.encoder {
            EncoderKind::RandomEmbed | EncoderKind::ExternalFile => {
                EmbeddingSpec { rows: words.len(), dim: config.dim_word }
                    .register(&mut store, "embed.word", &mut rng);
                if config.encoder == EncoderKind::ExternalFile {
                    let entries = external.unwrap_or(&[]);
                    crate::encoders::apply_external(
                        store.get_mut("embed.word"),
                        |form| {
                            let id = words.id(form);
                            (words.form(id) == form).then_some(id)
                        },
                        entries,
                    );
                }
            }
            EncoderKind::Bilm => {
                self::bilm_spec_for(&config, words.len()).register(&mut store, &mut rng);
                store.insert(
                    "root_vec",
                    crate::params::init_normal(&mut rng, 1, config.enc_dim(), 0.1),
                );
            }
        }
        if matches!(config.fusion, FusionKind::Concat | FusionKind::Gate) {
            EmbeddingSpec { rows: rels.len(), dim: config.dim_rel }
                .register(&mut store, "rel.table", &mut rng);
        }
        let lstm = LstmSpec {
            input: config.fused_dim(),
            hidden: config.hidden,
            variant: config.lstm_variant,
        };
        lstm.register(&mut store, "bilstm.fwd", &mut rng);
        lstm.register(&mut store, "bilstm.bwd", &mut rng);
        store.insert(
            "u",
            crate::params::init_normal(&mut rng, config.rep_dim(), 1, 0.1),
        );
        store.insert(
            "rel_out.w",
            crate::params::init_normal(&mut rng, config.rep_dim(), RelationLabel::COUNT, 0.1),
        );
        store.insert(
            "rel_out.b",
            crate::tensor::Tensor::zeros(1, RelationLabel::COUNT),
        );

        Ok(DseModel { config, store, words, rels })
    }

    /// Expand and pack sentences at the configured max length.
    pub fn pack(&self, sentences: &[&DepSentence]) -> Result<PackedBatch, ModelError> {
        let expanded: Vec<_> = sentences.iter().map(|s| expand(s, &self.rels)).collect();
        Ok(batch_pack(&expanded, &self.words, self.config.max_len)?)
    }

    /// Encode a packed batch into final representations `[B × 2H]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        packed: &PackedBatch,
    ) -> Result<Var, ModelError> {
        let (b, l) = (packed.batch, packed.max_len);
        let cells = b * l;

        // Encoding layer: one vector per cell, rows ordered b·L + t.
        let enc_flat = match self.config.encoder {
            EncoderKind::RandomEmbed | EncoderKind::ExternalFile => {
                tape.gather_rows(bound.var("embed.word"), &packed.word_ids)?
            }
            EncoderKind::Bilm => bilm_embed_batch(
                tape,
                bound,
                &bilm_spec_for(&self.config, self.words.len()),
                &packed.word_ids,
                &packed.lengths,
                l,
                self.config.freeze_bilm,
            )?,
        };

        // Head vectors: gather from the encoding plus a ROOT row at
        // index B·L (the word table's ROOT row, or the dedicated root
        // vector when the encoder output has a different width).
        let root_row = match self.config.encoder {
            EncoderKind::RandomEmbed | EncoderKind::ExternalFile => {
                tape.gather_rows(bound.var("embed.word"), &[WORD_ROOT])?
            }
            EncoderKind::Bilm => bound.var("root_vec"),
        };
        let fused_flat = match self.config.fusion {
            FusionKind::WordOnly => enc_flat,
            fusion => {
                let with_root = tape.concat_rows(&[enc_flat, root_row])?;
                let head_idx: Vec<usize> = (0..cells)
                    .map(|i| match packed.head_pos[i] {
                        ROOT_POS => cells,
                        h => (i / l) * l + h as usize,
                    })
                    .collect();
                let head_flat = tape.gather_rows(with_root, &head_idx)?;
                match fusion {
                    FusionKind::HeadOnly => tape.concat_cols(&[enc_flat, head_flat])?,
                    FusionKind::Concat | FusionKind::Gate => {
                        let rel_flat = tape.gather_rows(bound.var("rel.table"), &packed.rel_ids)?;
                        if fusion == FusionKind::Concat {
                            fuse_concat(tape, enc_flat, rel_flat, head_flat)?
                        } else {
                            fuse_gate(tape, enc_flat, rel_flat, head_flat)?
                        }
                    }
                    FusionKind::WordOnly => unreachable!("handled above"),
                }
            }
        };

        // Per-step views for the BiLSTM.
        let xs: Vec<Var> = (0..l)
            .map(|t| {
                let rows: Vec<usize> = (0..b).map(|row| row * l + t).collect();
                tape.gather_rows(fused_flat, &rows)
            })
            .collect::<Result<_, _>>()?;
        let (keep, carry) = step_masks(tape, &packed.mask, b, l, self.config.hidden);
        let lstm = LstmSpec {
            input: self.config.fused_dim(),
            hidden: self.config.hidden,
            variant: self.config.lstm_variant,
        };
        let fwd = lstm.bind(bound, "bilstm.fwd");
        let bwd = lstm.bind(bound, "bilstm.bwd");
        let out = bilstm_encode(tape, &fwd, &bwd, &xs, &keep, &carry, b, self.config.hidden)?;
        Ok(out.final_rep)
    }

    /// Margin ranking loss summed over a batch of questions.
    pub fn cloze_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        questions: &[&ClozeQuestion],
    ) -> Result<Var, ModelError> {
        // One packed batch holds all 4Q option sentences, question-major.
        let sentences: Vec<&DepSentence> = questions
            .iter()
            .flat_map(|q| q.parsed.iter())
            .collect();
        let packed = self.pack(&sentences)?;
        let reps = self.encode(tape, bound, &packed)?;
        let mut true_rows = Vec::with_capacity(questions.len());
        let mut false_rows: [Vec<usize>; 3] = std::array::from_fn(|_| Vec::new());
        for (qi, q) in questions.iter().enumerate() {
            true_rows.push(4 * qi + q.answer);
            for (slot, opt) in (0..4).filter(|&o| o != q.answer).enumerate() {
                false_rows[slot].push(4 * qi + opt);
            }
        }
        let true_rep = tape.gather_rows(reps, &true_rows)?;
        let f0 = tape.gather_rows(reps, &false_rows[0])?;
        let f1 = tape.gather_rows(reps, &false_rows[1])?;
        let f2 = tape.gather_rows(reps, &false_rows[2])?;
        Ok(completion_loss(
            tape,
            true_rep,
            &[f0, f1, f2],
            bound.var("u"),
            self.config.margin,
        )?)
    }

    /// Option scores for one question, option order.
    pub fn cloze_scores(&self, question: &ClozeQuestion) -> Result<[f64; 4], ModelError> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let sentences: Vec<&DepSentence> = question.parsed.iter().collect();
        let packed = self.pack(&sentences)?;
        let reps = self.encode(&mut tape, &bound, &packed)?;
        let scores = score(&mut tape, reps, bound.var("u"))?;
        let data = tape.value(scores).data();
        Ok([data[0], data[1], data[2], data[3]])
    }

    /// Argmax option index, ties to the lowest index.
    pub fn predict_completion(&self, question: &ClozeQuestion) -> Result<usize, ModelError> {
        Ok(argmax_lowest(&self.cloze_scores(question)?))
    }

    /// 5-class NLL summed over a batch of anonymized instances.
    pub fn relation_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        instances: &[&RelationInstance],
    ) -> Result<Var, ModelError> {
        let sentences: Vec<&DepSentence> = instances.iter().map(|i| &i.sentence).collect();
        let packed = self.pack(&sentences)?;
        let reps = self.encode(tape, bound, &packed)?;
        let labels: Vec<usize> = instances.iter().map(|i| i.label.index()).collect();
        Ok(relation_loss(
            tape,
            reps,
            &labels,
            bound.var("rel_out.w"),
            bound.var("rel_out.b"),
        )?)
    }

    /// Predicted labels for a batch of instances.
    pub fn predict_relations(
        &self,
        instances: &[&RelationInstance],
    ) -> Result<Vec<RelationLabel>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let sentences: Vec<&DepSentence> = instances.iter().map(|i| &i.sentence).collect();
        let packed = self.pack(&sentences)?;
        let reps = self.encode(&mut tape, &bound, &packed)?;
        let logits = relation_logits(&mut tape, reps, bound.var("rel_out.w"), bound.var("rel_out.b"))?;
        let values = tape.value(logits);
        Ok((0..instances.len())
            .map(|row| {
                RelationLabel::from_index(argmax_lowest(values.row_slice(row)))
                    .expect("argmax over 5 columns")
            })
            .collect())
    }
}

fn bilm_spec_for(config: &ModelConfig, vocab: usize) -> BiLmSpec {
    BiLmSpec {
        vocab,
        embed_dim: config.dim_word,
        hidden: config.bilm_hidden,
    }
}

/// Metadata serialized next to the parameters in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub words: WordVocab,
    pub rels: RelationVocab,
    pub task: TaskKind,
}

/// Which task a checkpoint was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Cloze,
    Relation,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Cloze => "cloze",
            TaskKind::Relation => "relation",
        })
    }
}

/// Rebuild a model from checkpoint pieces, checking that the parameter
/// set matches what the config would register.
pub fn model_from_parts(
    meta: CheckpointMeta,
    entries: Vec<(String, crate::tensor::Tensor)>,
) -> Result<DseModel, ModelError> {
    let fresh = DseModel::new(meta.config, meta.words, meta.rels, None)?;
    let loaded = ParamStore::from_entries(entries);
    let fresh_names: Vec<&str> = fresh.store.names().collect();
    let loaded_names: Vec<&str> = loaded.names().collect();
    if fresh_names != loaded_names {
        return Err(ModelError::Config(ConfigError {
            field: "checkpoint",
            problem: format!(
                "parameter set mismatch: config registers {fresh_names:?}, file holds {loaded_names:?}"
            ),
        }));
    }
    Ok(DseModel { store: loaded, ..fresh })
}

/// Fixed ≤4-token sentences used by [`pipeline_gradcheck`].
fn gradcheck_corpus() -> Vec<DepSentence> {
    let mk = |rows: &[(&str, usize, &str)]| DepSentence {
        tokens: rows
            .iter()
            .enumerate()
            .map(|(i, (form, head, deprel))| crate::conllu::Token {
                index: i + 1,
                form: (*form).to_string(),
                upos: "X".to_string(),
                head: *head,
                deprel: (*deprel).to_string(),
            })
            .collect(),
        sent_id: None,
        comments: vec![],
    };
    vec![
        mk(&[("the", 2, "det"), ("cat", 3, "nsubj"), ("sleeps", 0, "root")]),
        mk(&[
            ("dogs", 2, "nsubj"),
            ("bark", 0, "root"),
            ("loudly", 2, "advmod"),
            ("now", 2, "advmod"),
        ]),
        mk(&[("birds", 2, "nsubj"), ("sing", 0, "root"), ("songs", 2, "obj")]),
        mk(&[("fish", 2, "nsubj"), ("swim", 0, "root"), ("fast", 2, "advmod")]),
    ]
}

/// Finite-difference checks of both task losses across every fusion ×
/// gate-variant combination, each over every parameter of a small model
/// (d = 3, H = 2, ≤4-token sentences). Training-scale init leaves some
/// gradients at the noise floor of finite differences, so parameters are
/// rescaled to ±0.6 before checking. Returns one named report per combo;
/// the caller decides what a failure means.
pub fn pipeline_gradcheck(
    tolerance: f64,
) -> Result<Vec<(String, crate::tensor::GradcheckReport)>, ModelError> {
    use rand::Rng;

    let corpus = gradcheck_corpus();
    let relation_instances = [
        RelationInstance {
            sentence: corpus[1].clone(),
            e1_index: 0,
            e2_index: 2,
            label: RelationLabel::Advice,
        },
        RelationInstance {
            sentence: corpus[2].clone(),
            e1_index: 0,
            e2_index: 2,
            label: RelationLabel::Effect,
        },
    ];
    let cloze_question = ClozeQuestion {
        stem: "the ___ sleeps".to_string(),
        options: [
            "cat".to_string(),
            "dogs".to_string(),
            "birds".to_string(),
            "fish".to_string(),
        ],
        answer: 0,
        parsed: [
            corpus[0].clone(),
            corpus[1].clone(),
            corpus[2].clone(),
            corpus[3].clone(),
        ],
    };

    let mut reports = Vec::new();
    for fusion in [FusionKind::Concat, FusionKind::Gate] {
        for variant in [LstmVariant::AsWritten, LstmVariant::Standard] {
            let config = ModelConfig {
                fusion,
                lstm_variant: variant,
                dim_word: 3,
                dim_rel: 2,
                hidden: 2,
                max_len: 4,
                seed: 13,
                ..ModelConfig::default()
            };
            let mut model = DseModel::new(
                config,
                WordVocab::build(&corpus),
                RelationVocab::build(&corpus),
                None,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            for (_, t) in model.store.tensors_mut() {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.6..0.6);
                }
            }
            let params: Vec<(&str, crate::tensor::Tensor)> =
                model.store.entries().map(|(n, t)| (n, t.clone())).collect();

            for loss_name in ["relation", "cloze"] {
                let report = crate::tensor::gradcheck(&params, 1e-5, tolerance, |tape, vars| {
                    let bound = model.store.bound_with(vars.to_vec());
                    let result = match loss_name {
                        "relation" => {
                            let refs: Vec<&RelationInstance> = relation_instances.iter().collect();
                            model.relation_loss(tape, &bound, &refs)
                        }
                        _ => model.cloze_loss(tape, &bound, &[&cloze_question]),
                    };
                    result.map_err(|e| match e {
                        ModelError::Tensor(t) => t,
                        other => panic!("non-tensor failure inside gradcheck: {other}"),
                    })
                })?;
                reports.push((
                    format!("pipeline {fusion:?}/{variant:?}/{loss_name}").to_lowercase(),
                    report,
                ));
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::Token;

    fn tiny_corpus() -> Vec<DepSentence> {
        let mk = |rows: &[(&str, usize, &str)]| DepSentence {
            tokens: rows
                .iter()
                .enumerate()
                .map(|(i, (form, head, deprel))| Token {
                    index: i + 1,
                    form: (*form).to_string(),
                    upos: "X".to_string(),
                    head: *head,
                    deprel: (*deprel).to_string(),
                })
                .collect(),
            sent_id: None,
            comments: vec![],
        };
        vec![
            mk(&[("the", 2, "det"), ("cat", 3, "nsubj"), ("sleeps", 0, "root")]),
            mk(&[("dogs", 2, "nsubj"), ("bark", 0, "root"), ("loudly", 2, "advmod"), ("now", 2, "advmod")]),
        ]
    }

    fn tiny_model(fusion: FusionKind, encoder: EncoderKind) -> DseModel {
        let corpus = tiny_corpus();
        let config = ModelConfig {
            encoder,
            fusion,
            dim_word: 3,
            dim_rel: 2,
            hidden: 2,
            bilm_hidden: 2,
            max_len: 5,
            seed: 7,
            ..ModelConfig::default()
        };
        DseModel::new(
            config,
            WordVocab::build(&corpus),
            RelationVocab::build(&corpus),
            None,
        )
        .unwrap()
    }

    #[test]
    fn kv_config_parses_and_defaults() {
        let text = "\
# training setup
fusion = gate
hidden = 8
lr = 0.25
lstm_variant = standard
";
        let config = ModelConfig::from_kv_text(text).unwrap();
        assert_eq!(config.fusion, FusionKind::Gate);
        assert_eq!(config.hidden, 8);
        assert_eq!(config.lr, 0.25);
        assert_eq!(config.lstm_variant, LstmVariant::Standard);
        // Untouched fields keep defaults.
        assert_eq!(config.batch_size, 16);
        // Gate fusion pins the relation dim to the encoder output dim.
        assert_eq!(config.dim_rel, config.dim_word);
    }

    #[test]
    fn unknown_key_and_bad_value_name_the_problem() {
        let err = ModelConfig::from_kv_text("warp_drive = on\n").unwrap_err();
        assert!(err.to_string().contains("warp_drive"), "{err}");
        let err = ModelConfig::from_kv_text("hidden = many\n").unwrap_err();
        assert!(err.to_string().contains("hidden"), "{err}");
    }

    #[test]
    fn zero_dims_and_missing_external_path_are_rejected() {
        let err = ModelConfig { hidden: 0, ..ModelConfig::default() }
            .validated()
            .unwrap_err();
        assert_eq!(err.field, "hidden");
        let err = ModelConfig {
            encoder: EncoderKind::ExternalFile,
            external_path: None,
            ..ModelConfig::default()
        }
        .validated()
        .unwrap_err();
        assert_eq!(err.field, "external_path");
    }

    #[test]
    fn fused_dims_follow_the_fusion_mode() {
        let base = ModelConfig { dim_word: 3, dim_rel: 2, ..ModelConfig::default() };
        let dims: Vec<usize> = [
            FusionKind::Concat,
            FusionKind::Gate,
            FusionKind::HeadOnly,
            FusionKind::WordOnly,
        ]
        .into_iter()
        .map(|fusion| {
            ModelConfig { fusion, ..base.clone() }
                .validated()
                .unwrap()
                .fused_dim()
        })
        .collect();
        assert_eq!(dims, vec![8, 3, 6, 3]);
    }

    #[test]
    fn encode_produces_rep_of_twice_hidden() {
        for encoder in [EncoderKind::RandomEmbed, EncoderKind::Bilm] {
            for fusion in [
                FusionKind::Concat,
                FusionKind::Gate,
                FusionKind::HeadOnly,
                FusionKind::WordOnly,
            ] {
                let model = tiny_model(fusion, encoder);
                let corpus = tiny_corpus();
                let refs: Vec<&DepSentence> = corpus.iter().collect();
                let packed = model.pack(&refs).unwrap();
                let mut tape = Tape::new();
                let bound = model.store.bind(&mut tape);
                let rep = model.encode(&mut tape, &bound, &packed).unwrap();
                assert_eq!(
                    tape.value(rep).shape(),
                    &[2, 4],
                    "{encoder:?}/{fusion:?}"
                );
                assert!(tape.value(rep).all_finite());
            }
        }
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a = tiny_model(FusionKind::Concat, EncoderKind::RandomEmbed);
        let b = tiny_model(FusionKind::Concat, EncoderKind::RandomEmbed);
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn padding_is_invisible_to_the_representation() {
        // The same sentences packed at max_len 5 and 9 encode identically.
        let model = tiny_model(FusionKind::Concat, EncoderKind::RandomEmbed);
        let corpus = tiny_corpus();
        let refs: Vec<&DepSentence> = corpus.iter().collect();
        let encode_at = |max_len: usize| {
            let expanded: Vec<_> = refs.iter().map(|s| expand(s, &model.rels)).collect();
            let packed = batch_pack(&expanded, &model.words, max_len).unwrap();
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let rep = model.encode(&mut tape, &bound, &packed).unwrap();
            tape.value(rep).data().to_vec()
        };
        let (short, long) = (encode_at(5), encode_at(9));
        for (a, b) in short.iter().zip(&long) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_pipeline_gradcheck_over_all_fusion_variant_and_loss_combos() {
        let reports = pipeline_gradcheck(1e-4).unwrap();
        assert_eq!(reports.len(), 8, "2 fusions × 2 variants × 2 losses");
        for (name, report) in &reports {
            assert!(report.passed(), "{name}:\n{report}");
        }
    }

    #[test]
    fn cloze_loss_and_prediction_run_end_to_end() {
        let model = tiny_model(FusionKind::Concat, EncoderKind::RandomEmbed);
        let conllu_a = "1\tcat\t_\tNOUN\t_\t_\t0\troot\t_\t_\n\n".to_string();
        let question = ClozeQuestion::from_record(crate::heads::ClozeRecord {
            stem: "the ___".into(),
            options: ["cat".into(), "cats".into(), "dog".into(), "dogs".into()],
            answer: 0,
            conllu: [conllu_a.clone(), conllu_a.clone(), conllu_a.clone(), conllu_a],
        })
        .unwrap();
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let loss = model.cloze_loss(&mut tape, &bound, &[&question]).unwrap();
        assert!(tape.value(loss).item().is_finite());
        // Identical options give identical scores, so the tie-break
        // must choose index 0.
        assert_eq!(model.predict_completion(&question).unwrap(), 0);
    }

    #[test]
    fn checkpoint_parts_round_trip() {
        let model = tiny_model(FusionKind::Gate, EncoderKind::RandomEmbed);
        let meta = CheckpointMeta {
            config: model.config.clone(),
            words: model.words.clone(),
            rels: model.rels.clone(),
            task: TaskKind::Relation,
        };
        let rebuilt = model_from_parts(meta, model.store.to_entries()).unwrap();
        assert_eq!(rebuilt.store, model.store);

        let bad_meta = CheckpointMeta {
            config: ModelConfig { fusion: FusionKind::WordOnly, ..model.config.clone() },
            words: model.words.clone(),
            rels: model.rels.clone(),
            task: TaskKind::Relation,
        };
        assert!(model_from_parts(bad_meta, model.store.to_entries()).is_err());
    }
}
