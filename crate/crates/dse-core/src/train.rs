//! Mini-batch training loop, optimizer, metrics, checkpointing, and the
//! ablation runner.
//!
//! Training is deterministic given the config seed: one ChaCha8 stream
//! drives shuffling, and parameter updates follow store insertion order.
//! Checkpoints never embed timestamps, so identical runs produce
//! byte-identical files.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::DepSentence;
use crate::encoders::{bilm_loss, BiLmSpec};
use crate::expand::{RelationVocab, WordVocab};
use crate::heads::{ClozeQuestion, ClozeRecord, RecordError, RelationInstance, RelationLabel, RelationRecord};
use crate::model::{
    CheckpointMeta, ConfigError, DseModel, EncoderKind, FusionKind, ModelConfig, ModelError,
    OptimizerKind, TaskKind,
};
use crate::par::ExecMode;
use crate::params::ParamStore;
use crate::tensor::{Gradients, StoreError, Tensor};

/// A loaded dataset for one of the two tasks.
#[derive(Debug, Clone)]
pub enum TaskData {
    Cloze(Vec<ClozeQuestion>),
    Relation(Vec<RelationInstance>),
}

impl TaskData {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskData::Cloze(_) => TaskKind::Cloze,
            TaskData::Relation(_) => TaskKind::Relation,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskData::Cloze(q) => q.len(),
            TaskData::Relation(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All dependency sentences in the set (vocabulary source). For the
    /// cloze task every option variant contributes, so distractor forms
    /// are in-vocabulary too.
    pub fn sentences(&self) -> Vec<&DepSentence> {
        match self {
            TaskData::Cloze(qs) => qs.iter().flat_map(|q| q.parsed.iter()).collect(),
            TaskData::Relation(rs) => rs.iter().map(|r| &r.sentence).collect(),
        }
    }

    /// Keep only the indexed items (shuffling/splitting support).
    pub fn subset(&self, indices: &[usize]) -> TaskData {
        match self {
            TaskData::Cloze(qs) => {
                TaskData::Cloze(indices.iter().map(|&i| qs[i].clone()).collect())
            }
            TaskData::Relation(rs) => {
                TaskData::Relation(indices.iter().map(|&i| rs[i].clone()).collect())
            }
        }
    }
}

/// Dataset loading failure.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("line {line}: not a recognizable task record: {problem}")]
    UnknownShape { line: usize, problem: String },
}

/// Parse a JSONL task file; the task is inferred from the record shape.
pub fn parse_task_jsonl(text: &str) -> Result<TaskData, DataError> {
    let mut cloze: Vec<ClozeQuestion> = Vec::new();
    let mut relation: Vec<RelationInstance> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Ok(record) = serde_json::from_str::<ClozeRecord>(trimmed) {
            cloze.push(
                ClozeQuestion::from_record(record)
                    .map_err(|source| DataError::Record { line, source })?,
            );
        } else if let Ok(record) = serde_json::from_str::<RelationRecord>(trimmed) {
            relation.push(
                RelationInstance::from_record(record)
                    .map_err(|source| DataError::Record { line, source })?,
            );
        } else {
            return Err(DataError::UnknownShape {
                line,
                problem: "neither a cloze nor a relation record".to_string(),
            });
        }
    }
    match (cloze.is_empty(), relation.is_empty()) {
        (false, true) => Ok(TaskData::Cloze(cloze)),
        (true, false) => Ok(TaskData::Relation(relation)),
        (true, true) => Err(DataError::Empty),
        (false, false) => Err(DataError::UnknownShape {
            line: 0,
            problem: "file mixes cloze and relation records".to_string(),
        }),
    }
}

/// Precision/recall/F1 triple; all zero when there are no predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Build a [`Prf`] from confusion counts, zero-safe.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Per-class relation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub label: RelationLabel,
    pub prf: Prf,
    pub support: usize,
}

/// Evaluation result for either task. `per_class`/`micro` are filled for
/// the relation task only; micro pools the four positive classes and
/// excludes `negative` entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_class: Vec<ClassPrf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro: Option<Prf>,
}

/// Metrics from gold/predicted relation labels.
pub fn relation_metrics(gold: &[RelationLabel], pred: &[RelationLabel]) -> Metrics {
    assert_eq!(gold.len(), pred.len());
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let mut tp = [0usize; 5];
    let mut fp = [0usize; 5];
    let mut fn_ = [0usize; 5];
    let mut support = [0usize; 5];
    for (&g, &p) in gold.iter().zip(pred) {
        support[g.index()] += 1;
        if g == p {
            tp[g.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fn_[g.index()] += 1;
        }
    }
    let per_class: Vec<ClassPrf> = RelationLabel::ALL
        .iter()
        .map(|&label| ClassPrf {
            label,
            prf: prf(tp[label.index()], fp[label.index()], fn_[label.index()]),
            support: support[label.index()],
        })
        .collect();
    let positives = RelationLabel::ALL
        .iter()
        .filter(|&&l| l != RelationLabel::Negative);
    let (mut ptp, mut pfp, mut pfn) = (0, 0, 0);
    for &label in positives {
        ptp += tp[label.index()];
        pfp += fp[label.index()];
        pfn += fn_[label.index()];
    }
    Metrics {
        accuracy: if gold.is_empty() { 0.0 } else { correct as f64 / gold.len() as f64 },
        per_class,
        micro: Some(prf(ptp, pfp, pfn)),
    }
}

/// Evaluate a model on a dataset.
pub fn evaluate(model: &DseModel, data: &TaskData, mode: ExecMode) -> Result<Metrics, ModelError> {
    match data {
        TaskData::Cloze(questions) => {
            let results = mode.map(questions, |q| model.predict_completion(q));
            let mut correct = 0usize;
            for (q, r) in questions.iter().zip(results) {
                if r? == q.answer {
                    correct += 1;
                }
            }
            Ok(Metrics {
                accuracy: correct as f64 / questions.len().max(1) as f64,
                per_class: Vec::new(),
                micro: None,
            })
        }
        TaskData::Relation(instances) => {
            let batch = model.config.batch_size.max(1);
            let chunks: Vec<&[RelationInstance]> = instances.chunks(batch).collect();
            let results = mode.map(&chunks, |chunk| {
                let refs: Vec<&RelationInstance> = chunk.iter().collect();
                model.predict_relations(&refs)
            });
            let mut pred = Vec::with_capacity(instances.len());
            for r in results {
                pred.extend(r?);
            }
            let gold: Vec<RelationLabel> = instances.iter().map(|i| i.label).collect();
            Ok(relation_metrics(&gold, &pred))
        }
    }
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Metrics,
}

/// Result of a training run: the best-dev model plus the full history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DseModel,
    pub task: TaskKind,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Training failure.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty {which} set")]
    EmptyData { which: &'static str },
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {param_norms}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norms: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Optimizer state shared across steps.
enum OptState {
    Sgd,
    Adam {
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        t: usize,
    },
}

impl OptState {
    fn new(config: &ModelConfig, store: &ParamStore) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adam => OptState::Adam {
                m: store
                    .entries()
                    .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                    .collect(),
                v: store
                    .entries()
                    .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                    .collect(),
                t: 0,
            },
        }
    }
}

/// Clip gradients to a global norm, then apply one optimizer step.
/// `grads[i]` aligns with store insertion order; `None` means the
/// parameter did not participate in this loss.
fn apply_step(
    store: &mut ParamStore,
    grads: &mut [Option<Tensor>],
    state: &mut OptState,
    lr: f64,
    clip_norm: f64,
) {
    let total_sq: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total_sq.sqrt();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };

    match state {
        OptState::Sgd => {
            for ((_, tensor), grad) in store.tensors_mut().zip(grads.iter()) {
                if let Some(g) = grad {
                    for (p, gv) in tensor.data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * scale * gv;
                    }
                }
            }
        }
        OptState::Adam { m, v, t } => {
            *t += 1;
            let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
            let bc1 = 1.0 - b1.powi(*t as i32);
            let bc2 = 1.0 - b2.powi(*t as i32);
            for (i, ((_, tensor), grad)) in store.tensors_mut().zip(grads.iter()).enumerate() {
                if let Some(g) = grad {
                    let mi = m[i].data_mut();
                    let vi = v[i].data_mut();
                    for (k, (p, gv)) in tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.data().iter().map(|x| x * scale))
                        .enumerate()
                    {
                        mi[k] = b1 * mi[k] + (1.0 - b1) * gv;
                        vi[k] = b2 * vi[k] + (1.0 - b2) * gv * gv;
                        let m_hat = mi[k] / bc1;
                        let v_hat = vi[k] / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn param_norms(store: &ParamStore) -> String {
    store
        .entries()
        .map(|(name, t)| format!("{name}={:.3e}", t.l2_norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Collect per-parameter gradients in store order.
fn collect_grads(grads: &Gradients, bound_vars: &[crate::tensor::Var]) -> Vec<Option<Tensor>> {
    bound_vars
        .iter()
        .map(|&v| grads.get(v).cloned())
        .collect()
}

/// Linear warmup factor for step `t` of `total` (1-based step).
fn warmup_factor(t: usize, total: usize, fraction: f64) -> f64 {
    let ramp = (total as f64 * fraction).ceil();
    if ramp <= 0.0 {
        1.0
    } else {
        ((t as f64) / ramp).min(1.0)
    }
}

/// Pretrain the biLM parameters on the training sentences.
fn pretrain_bilm(
    model: &mut DseModel,
    sentences: &[&DepSentence],
    rng: &mut ChaCha8Rng,
) -> Result<(), TrainError> {
    let spec = BiLmSpec {
        vocab: model.words.len(),
        embed_dim: model.config.dim_word,
        hidden: model.config.bilm_hidden,
    };
    let ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| model.words.id(&t.form)).collect())
        .collect();
    let batch = model.config.batch_size.max(1);
    let mut state = OptState::Sgd;
    for epoch in 1..=model.config.bilm_epochs {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(rng);
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let sents: Vec<Vec<usize>> = chunk.iter().map(|&i| ids[i].clone()).collect();
            let mut tape = crate::tensor::Tape::new();
            let bound = model.store.bind(&mut tape);
            let loss = bilm_loss(&mut tape, &bound, &spec, &sents)
                .map_err(ModelError::from)?;
            if !tape.value(loss).item().is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    param_norms: param_norms(&model.store),
                });
            }
            let grads = tape.backward(loss).map_err(ModelError::from)?;
            let mut by_param = collect_grads(&grads, bound.vars());
            apply_step(
                &mut model.store,
                &mut by_param,
                &mut state,
                model.config.bilm_lr,
                model.config.clip_norm,
            );
        }
    }
    Ok(())
}

/// Train a model. The best-dev checkpoint (dev accuracy for cloze, dev
/// micro-F1 for relation) is returned along with per-epoch metrics.
pub fn train(
    config: &ModelConfig,
    train_set: &TaskData,
    dev_set: &TaskData,
    external: Option<&[(String, Vec<f64>)]>,
    mode: ExecMode,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyData { which: "train" });
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptyData { which: "dev" });
    }
    let config = config.clone().validated()?;
    let task = train_set.kind();
    let sentences = train_set.sentences();
    let words = WordVocab::build_refs(&sentences);
    let rels = RelationVocab::build_refs(&sentences);
    let mut model = DseModel::new(config.clone(), words, rels, external)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));

    if config.encoder == EncoderKind::Bilm && config.bilm_epochs > 0 {
        pretrain_bilm(&mut model, &sentences, &mut rng)?;
    }

    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs.max(1);
    let mut state = OptState::new(&config, &model.store);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            step += 1;
            let mut tape = crate::tensor::Tape::new();
            let bound = model.store.bind(&mut tape);
            let loss = match train_set {
                TaskData::Cloze(qs) => {
                    let batch: Vec<&ClozeQuestion> = chunk.iter().map(|&i| &qs[i]).collect();
                    model.cloze_loss(&mut tape, &bound, &batch)
                }
                TaskData::Relation(rs) => {
                    let batch: Vec<&RelationInstance> = chunk.iter().map(|&i| &rs[i]).collect();
                    model.relation_loss(&mut tape, &bound, &batch)
                }
            };
            // Overflow inside the forward surfaces as a non-finite op
            // error; fold it into the same diagnostic as a NaN loss.
            let loss = match loss {
                Ok(l) => l,
                Err(ModelError::Tensor(crate::tensor::TensorError::NonFinite { .. })) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        param_norms: param_norms(&model.store),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    param_norms: param_norms(&model.store),
                });
            }
            epoch_loss += loss_value;
            let grads = tape.backward(loss).map_err(ModelError::from)?;
            let mut by_param = collect_grads(&grads, bound.vars());
            let lr = match config.optimizer {
                OptimizerKind::Sgd => config.lr,
                OptimizerKind::Adam => {
                    config.lr * warmup_factor(step, total_steps, config.warmup)
                }
            };
            apply_step(&mut model.store, &mut by_param, &mut state, lr, config.clip_norm);
        }

        let dev = evaluate(&model, dev_set, mode)?;
        let metric = match task {
            TaskKind::Cloze => dev.accuracy,
            TaskKind::Relation => dev.micro.as_ref().map(|m| m.f1).unwrap_or(0.0),
        };
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            dev,
        });
        let improved = best.as_ref().map(|(_, m, _)| metric > *m).unwrap_or(true);
        if improved {
            best = Some((epoch, metric, model.store.clone()));
        }
    }

    let (best_epoch, best_metric, best_store) = best.unwrap_or((0, 0.0, model.store.clone()));
    model.store = best_store;
    Ok(TrainOutcome {
        model,
        task,
        history,
        best_epoch,
        best_metric,
    })
}

const CKPT_MAGIC: &[u8; 4] = b"DSEK";
const CKPT_VERSION: u32 = 1;

/// Checkpoint loading failure.
#[derive(Debug, thiserror::Error)]
pub enum CkptError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint metadata: {0}")]
    BadMeta(#[from] serde_json::Error),
    #[error(transparent)]
    Params(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Serialize a checkpoint: magic, version, JSON metadata, parameters.
/// Contains no timestamps, so identical runs write identical bytes.
pub fn save_checkpoint<W: Write>(
    writer: &mut W,
    meta: &CheckpointMeta,
    store: &ParamStore,
) -> Result<(), CkptError> {
    writer.write_all(CKPT_MAGIC)?;
    writer.write_all(&CKPT_VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta).expect("meta serializes");
    writer.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    writer.write_all(&meta_bytes)?;
    crate::tensor::save_params(writer, &store.to_entries())?;
    Ok(())
}

/// Read back a checkpoint and rebuild the model.
pub fn load_checkpoint<R: Read>(reader: &mut R) -> Result<(DseModel, TaskKind), CkptError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(CkptError::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CKPT_VERSION {
        return Err(CkptError::BadVersion(version));
    }
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes)?;
    let meta_len = u64::from_le_bytes(len_bytes) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    reader.read_exact(&mut meta_bytes)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
    let entries = crate::tensor::load_params(reader)?;
    let task = meta.task;
    let model = crate::model::model_from_parts(meta, entries)?;
    Ok((model, task))
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fusion: FusionKind,
    pub per_seed: Vec<SeedResult>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test: Metrics,
}

/// The three input-composition rows, trained per seed and evaluated on
/// the test set. Runs are independent, so rows × seeds parallelize.
pub fn run_ablation(
    base: &ModelConfig,
    train_set: &TaskData,
    dev_set: &TaskData,
    test_set: &TaskData,
    seeds: &[u64],
    mode: ExecMode,
) -> Result<Vec<AblationRow>, TrainError> {
    const ROWS: [FusionKind; 3] = [FusionKind::Concat, FusionKind::HeadOnly, FusionKind::WordOnly];
    let jobs: Vec<(FusionKind, u64)> = ROWS
        .iter()
        .flat_map(|&fusion| seeds.iter().map(move |&seed| (fusion, seed)))
        .collect();
    let results = mode.map(&jobs, |&(fusion, seed)| -> Result<SeedResult, TrainError> {
        let config = ModelConfig {
            fusion,
            seed,
            ..base.clone()
        };
        // Each run evaluates its own batches sequentially; parallelism
        // lives at the job level.
        let outcome = train(&config, train_set, dev_set, None, ExecMode::Sequential)?;
        let test = evaluate(&outcome.model, test_set, ExecMode::Sequential)?;
        Ok(SeedResult { seed, test })
    });

    let mut rows = Vec::new();
    let mut iter = results.into_iter();
    for fusion in ROWS {
        let mut per_seed = Vec::new();
        for _ in seeds {
            per_seed.push(iter.next().expect("one result per job")?);
        }
        let mean_accuracy =
            per_seed.iter().map(|r| r.test.accuracy).sum::<f64>() / per_seed.len().max(1) as f64;
        rows.push(AblationRow {
            fusion,
            per_seed,
            mean_accuracy,
        });
    }
    Ok(rows)
}
