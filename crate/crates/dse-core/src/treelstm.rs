//! Child-sum Tree-LSTM reference encoder and the training-time
//! benchmark comparing it against the linearized expansion encoder.
//!
//! The tree encoder recurses bottom-up over each sentence's dependency
//! tree: children's hidden states are summed into the parent's gate
//! inputs, with one forget gate per child. Recursion is inherently
//! per-sentence — different tree shapes cannot share a batched matmul —
//! which is exactly what the benchmark measures against the
//! batch-packed BiLSTM over linearized triples.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::DepSentence;
use crate::encoders::LstmVariant;
use crate::expand::{RelationVocab, WordVocab};
use crate::model::{DseModel, FusionKind, ModelConfig, ModelError};
use crate::par::ExecMode;
use crate::params::{init_normal, init_uniform, Bound, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Shapes for one child-sum Tree-LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLstmSpec {
    pub input: usize,
    pub hidden: usize,
}

/// Gate weights: `w_*` take the node's input, `u_*` take (summed)
/// child hidden state. The forget gate applies per child.
#[derive(Debug, Clone, Copy)]
pub struct TreeLstmVars {
    pub w_i: Var,
    pub u_i: Var,
    pub b_i: Var,
    pub w_f: Var,
    pub u_f: Var,
    pub b_f: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub b_o: Var,
    pub w_u: Var,
    pub u_u: Var,
    pub b_u: Var,
}

impl TreeLstmSpec {
    /// Register all twelve tensors under `prefix`, matching the
    /// sequential LSTM's init scheme (uniform ±0.08, forget bias +1).
    pub fn register(&self, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) {
        let (d, h) = (self.input, self.hidden);
        for gate in ["i", "f", "o", "u"] {
            store.insert(
                &format!("{prefix}.w_{gate}"),
                init_uniform(rng, d, h, -0.08, 0.08),
            );
            store.insert(
                &format!("{prefix}.u_{gate}"),
                init_uniform(rng, h, h, -0.08, 0.08),
            );
            let bias = if gate == "f" {
                Tensor::filled(1, h, 1.0)
            } else {
                Tensor::zeros(1, h)
            };
            store.insert(&format!("{prefix}.b_{gate}"), bias);
        }
    }

    pub fn bind(&self, bound: &Bound, prefix: &str) -> TreeLstmVars {
        let v = |name: &str| bound.var(&format!("{prefix}.{name}"));
        TreeLstmVars {
            w_i: v("w_i"),
            u_i: v("u_i"),
            b_i: v("b_i"),
            w_f: v("w_f"),
            u_f: v("u_f"),
            b_f: v("b_f"),
            w_o: v("w_o"),
            u_o: v("u_o"),
            b_o: v("b_o"),
            w_u: v("w_u"),
            u_u: v("u_u"),
            b_u: v("b_u"),
        }
    }
}

/// Children lists (0-based) and the root's 0-based index.
fn tree_shape(sentence: &DepSentence) -> (Vec<Vec<usize>>, usize) {
    let n = sentence.tokens.len();
    let mut children = vec![Vec::new(); n];
    let mut root = 0;
    for (i, token) in sentence.tokens.iter().enumerate() {
        match token.head {
            0 => root = i,
            h => children[h - 1].push(i),
        }
    }
    (children, root)
}

/// Bottom-up child-sum encoding; returns the root's hidden state
/// `[1 × H]`. `xs` holds one input row per token.
pub fn treelstm_root(
    tape: &mut Tape,
    vars: &TreeLstmVars,
    xs: Var,
    sentence: &DepSentence,
    hidden: usize,
) -> Result<Var, TensorError> {
    let (children, root) = tree_shape(sentence);
    let n = sentence.tokens.len();
    let zero = tape.constant(Tensor::zeros(1, hidden));

    // Post-order walk assigning (h, c) to every node.
    let mut states: Vec<Option<(Var, Var)>> = vec![None; n];
    let mut stack = vec![(root, false)];
    while let Some((node, expanded)) = stack.pop() {
        if !expanded {
            stack.push((node, true));
            for &child in &children[node] {
                stack.push((child, false));
            }
            continue;
        }
        let x = tape.slice_rows(xs, node, 1)?;
        // h̃ = Σ children h (zero at leaves).
        let mut h_sum = zero;
        for &child in &children[node] {
            let (h_child, _) = states[child].expect("post-order");
            h_sum = tape.add(h_sum, h_child)?;
        }
        let gate = |tape: &mut Tape, w, u, b| -> Result<Var, TensorError> {
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h_sum, u)?;
            let s = tape.add(xw, hu)?;
            tape.add(s, b)
        };
        let i_pre = gate(tape, vars.w_i, vars.u_i, vars.b_i)?;
        let i = tape.sigmoid(i_pre)?;
        let o_pre = gate(tape, vars.w_o, vars.u_o, vars.b_o)?;
        let o = tape.sigmoid(o_pre)?;
        let u_pre = gate(tape, vars.w_u, vars.u_u, vars.b_u)?;
        let u = tape.tanh(u_pre)?;
        let mut c = tape.mul(i, u)?;
        // One forget gate per child, applied to that child's cell.
        for &child in &children[node] {
            let (h_child, c_child) = states[child].expect("post-order");
            let xw = tape.matmul(x, vars.w_f)?;
            let hu = tape.matmul(h_child, vars.u_f)?;
            let s = tape.add(xw, hu)?;
            let f_pre = tape.add(s, vars.b_f)?;
            let f = tape.sigmoid(f_pre)?;
            let fc = tape.mul(f, c_child)?;
            c = tape.add(c, fc)?;
        }
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        states[node] = Some((h, c));
    }
    Ok(states[root].expect("root visited").0)
}

/// One benchmark row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    /// Median wall-clock seconds per epoch.
    pub seconds_per_epoch: f64,
    /// Seconds for every timed epoch.
    pub epoch_seconds: Vec<f64>,
    /// Tokens processed per epoch (identical across rows).
    pub tokens: usize,
}

/// Full benchmark result. The ratio is reported, not asserted, except
/// for its direction at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub hidden: usize,
    pub epochs: usize,
    /// Whether chunk gradients were computed across threads.
    #[serde(default)]
    pub parallel: bool,
    /// Tree-LSTM seconds over expansion seconds.
    pub tree_over_expansion: f64,
}

fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    sorted[sorted.len() / 2]
}

struct TreeDriver {
    store: ParamStore,
    spec: TreeLstmSpec,
    words: WordVocab,
}

impl TreeDriver {
    fn new(words: WordVocab, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        store.insert("tree.embed", init_normal(rng, words.len(), dim, 0.1));
        let spec = TreeLstmSpec { input: dim, hidden };
        spec.register(&mut store, "tree", rng);
        store.insert("tree.u", init_normal(rng, hidden, 1, 0.1));
        TreeDriver { store, spec, words }
    }

    /// Root hidden states for a batch of sentences (one recursion each).
    fn roots(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&DepSentence],
    ) -> Result<Vec<Var>, TensorError> {
        let vars = self.spec.bind(bound, "tree");
        batch
            .iter()
            .map(|sentence| {
                let ids: Vec<usize> = sentence
                    .tokens
                    .iter()
                    .map(|t| self.words.id(&t.form))
                    .collect();
                let xs = tape.gather_rows(bound.var("tree.embed"), &ids)?;
                treelstm_root(tape, &vars, xs, sentence, self.spec.hidden)
            })
            .collect()
    }
}

/// Per-parameter gradients in the store's entry order.
type StoreGrads = Vec<Option<Tensor>>;

fn extract_grads(grads: &crate::tensor::Gradients, bound: &Bound) -> StoreGrads {
    bound.vars().iter().map(|&v| grads.get(v).cloned()).collect()
}

fn apply_grads(store: &mut ParamStore, grads: &StoreGrads, lr: f64) {
    for ((_, tensor), update) in store.tensors_mut().zip(grads) {
        if let Some(g) = update {
            for (p, gv) in tensor.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * gv;
            }
        }
    }
}

fn tree_chunk_grads(tree: &TreeDriver, chunk: &[&DepSentence]) -> Result<StoreGrads, ModelError> {
    let mut tape = Tape::new();
    let bound = tree.store.bind(&mut tape);
    let roots = tree.roots(&mut tape, &bound, chunk)?;
    let stacked = tape.concat_rows(&roots)?;
    let scores = tape.matmul(stacked, bound.var("tree.u"))?;
    let probs = tape.sigmoid(scores)?;
    let loss = tape.sum(probs)?;
    let grads = tape.backward(loss)?;
    Ok(extract_grads(&grads, &bound))
}

fn exp_chunk_grads(model: &DseModel, chunk: &[&DepSentence]) -> Result<StoreGrads, ModelError> {
    let packed = model.pack(chunk)?;
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let reps = model.encode(&mut tape, &bound, &packed)?;
    let scores = tape.matmul(reps, bound.var("u"))?;
    let probs = tape.sigmoid(scores)?;
    let loss = tape.sum(probs)?;
    let grads = tape.backward(loss)?;
    Ok(extract_grads(&grads, &bound))
}

fn combo_chunk_grads(
    model: &DseModel,
    tree: &TreeDriver,
    chunk: &[&DepSentence],
) -> Result<(StoreGrads, StoreGrads), ModelError> {
    let packed = model.pack(chunk)?;
    let mut tape = Tape::new();
    // Two stores on one tape: model params then tree params.
    let bound_model = model.store.bind(&mut tape);
    let bound_tree = tree.store.bind(&mut tape);
    let reps = model.encode(&mut tape, &bound_model, &packed)?;
    let roots = tree.roots(&mut tape, &bound_tree, chunk)?;
    let tree_reps = tape.concat_rows(&roots)?;
    let joint = tape.concat_cols(&[reps, tree_reps])?;
    let scores = tape.matmul(joint, bound_tree.var("combo.u"))?;
    let probs = tape.sigmoid(scores)?;
    let loss = tape.sum(probs)?;
    let grads = tape.backward(loss)?;
    Ok((extract_grads(&grads, &bound_model), extract_grads(&grads, &bound_tree)))
}

/// Time one full train epoch (forward, backward, SGD update) for the
/// three encoder configurations over the same sentences. Both encoders
/// produce an `hidden`-wide sentence representation: the tree cell uses
/// `hidden` directly, the bidirectional expansion encoder uses
/// `hidden/2` per direction. Sentences are grouped by length so packed
/// batches carry minimal padding; the same order is used for every row.
/// Single threaded by construction; callers wanting parallel numbers
/// time their own harness.
pub fn bench_encoders(
    sentences: &[DepSentence],
    dim: usize,
    hidden: usize,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<BenchReport, ModelError> {
    assert!(!sentences.is_empty(), "benchmark needs sentences");
    assert!(epochs >= 1);
    assert!(hidden % 2 == 0, "representation width must split across directions");
    let total_tokens: usize = sentences.iter().map(|s| s.tokens.len()).sum();
    let mut by_len: Vec<&DepSentence> = sentences.iter().collect();
    by_len.sort_by_key(|s| s.tokens.len());
    let chunks: Vec<&[&DepSentence]> = by_len.chunks(batch_size).collect();
    let chunk_tokens: usize = chunks
        .iter()
        .flat_map(|c| c.iter())
        .map(|s| s.tokens.len())
        .sum();
    assert_eq!(chunk_tokens, total_tokens, "chunking must cover every token");
    let words = WordVocab::build(sentences);
    let rels = RelationVocab::build(sentences);
    let max_len = sentences.iter().map(|s| s.tokens.len()).max().unwrap_or(1);

    let config = ModelConfig {
        fusion: FusionKind::Concat,
        dim_word: dim,
        dim_rel: dim,
        hidden: hidden / 2,
        lstm_variant: LstmVariant::Standard,
        batch_size,
        max_len,
        seed,
        ..ModelConfig::default()
    };
    let lr = 0.01;

    // Sequential mode updates after every chunk (plain SGD order).
    // Parallel mode computes the whole epoch's chunk gradients on a frozen
    // parameter snapshot across threads, then applies them in chunk order:
    // a throughput measurement, reported separately from the sequential
    // rows rather than compared against them.

    // Row 1: Tree-LSTM, per-sentence recursion.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = TreeDriver::new(words.clone(), dim, hidden, &mut rng);
    let mut tree_secs = Vec::new();
    for _ in 0..epochs {
        let started = Instant::now();
        match mode {
            ExecMode::Sequential => {
                for chunk in &chunks {
                    let grads = tree_chunk_grads(&tree, chunk)?;
                    apply_grads(&mut tree.store, &grads, lr);
                }
            }
            ExecMode::Parallel => {
                let wave = mode.map(&chunks, |chunk| tree_chunk_grads(&tree, chunk));
                for grads in wave {
                    apply_grads(&mut tree.store, &grads?, lr);
                }
            }
        }
        tree_secs.push(started.elapsed().as_secs_f64());
    }

    // Row 2: expansion encoder (batched BiLSTM over packed triples).
    let model_template = DseModel::new(config.clone(), words.clone(), rels.clone(), None)?;
    let mut exp_model = model_template.clone();
    let mut exp_secs = Vec::new();
    for _ in 0..epochs {
        let started = Instant::now();
        match mode {
            ExecMode::Sequential => {
                for chunk in &chunks {
                    let grads = exp_chunk_grads(&exp_model, chunk)?;
                    apply_grads(&mut exp_model.store, &grads, lr);
                }
            }
            ExecMode::Parallel => {
                let wave = mode.map(&chunks, |chunk| exp_chunk_grads(&exp_model, chunk));
                for grads in wave {
                    apply_grads(&mut exp_model.store, &grads?, lr);
                }
            }
        }
        exp_secs.push(started.elapsed().as_secs_f64());
    }

    // Row 3: both encoders, concatenated representations.
    let mut combo_model = model_template.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut combo_tree = TreeDriver::new(words.clone(), dim, hidden, &mut rng);
    combo_tree
        .store
        .insert("combo.u", init_normal(&mut rng, 2 * hidden, 1, 0.1));
    let mut combo_secs = Vec::new();
    for _ in 0..epochs {
        let started = Instant::now();
        match mode {
            ExecMode::Sequential => {
                for chunk in &chunks {
                    let (gm, gt) = combo_chunk_grads(&combo_model, &combo_tree, chunk)?;
                    apply_grads(&mut combo_model.store, &gm, lr);
                    apply_grads(&mut combo_tree.store, &gt, lr);
                }
            }
            ExecMode::Parallel => {
                let wave =
                    mode.map(&chunks, |chunk| combo_chunk_grads(&combo_model, &combo_tree, chunk));
                for pair in wave {
                    let (gm, gt) = pair?;
                    apply_grads(&mut combo_model.store, &gm, lr);
                    apply_grads(&mut combo_tree.store, &gt, lr);
                }
            }
        }
        combo_secs.push(started.elapsed().as_secs_f64());
    }

    let rows = vec![
        BenchRow {
            name: "tree-lstm".to_string(),
            seconds_per_epoch: median(&tree_secs),
            epoch_seconds: tree_secs,
            tokens: total_tokens,
        },
        BenchRow {
            name: "expansion-lstm".to_string(),
            seconds_per_epoch: median(&exp_secs),
            epoch_seconds: exp_secs,
            tokens: total_tokens,
        },
        BenchRow {
            name: "expansion+tree".to_string(),
            seconds_per_epoch: median(&combo_secs),
            epoch_seconds: combo_secs,
            tokens: total_tokens,
        },
    ];
    let tree_over_expansion = rows[0].seconds_per_epoch / rows[1].seconds_per_epoch;
    Ok(BenchReport {
        rows,
        hidden,
        epochs,
        parallel: mode == ExecMode::Parallel,
        tree_over_expansion,
    })
}
