//! Toy bidirectional language model.
//!
//! Two textbook LSTMs share one word table and one output projection:
//! the forward direction maximizes log p(w_k | w_1..w_{k−1}) starting
//! from BOS, the backward direction log p(w_k | w_{k+1}..w_n) starting
//! from EOS, and the joint loss is the negated sum of both directions'
//! log-likelihoods averaged over real tokens. Once trained, the frozen
//! per-token states (forward ⊕ backward) serve as contextual word
//! vectors for the main model.

use rand_chacha::ChaCha8Rng;

use super::embedding::EmbeddingSpec;
use super::lstm::{flatten_steps, lstm_run, step_masks, LstmSpec, LstmVariant, LstmVars};
use crate::expand::{WORD_BOS, WORD_EOS, WORD_PAD};
use crate::params::{init_uniform, Bound, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Dimensions of the language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BiLmSpec {
    /// Word vocabulary size, including the reserved rows.
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

/// biLM failure.
#[derive(Debug, thiserror::Error)]
pub enum BiLmError {
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl BiLmSpec {
    fn lstm(&self) -> LstmSpec {
        LstmSpec {
            input: self.embed_dim,
            hidden: self.hidden,
            variant: LstmVariant::Standard,
        }
    }

    /// Per-token output dimension of [`bilm_embed`].
    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Register the word table, both directions, and the shared
    /// projection under the `bilm.` prefix.
    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        EmbeddingSpec { rows: self.vocab, dim: self.embed_dim }.register(store, "bilm.word", rng);
        self.lstm().register(store, "bilm.fwd", rng);
        self.lstm().register(store, "bilm.bwd", rng);
        store.insert(
            "bilm.w_out",
            init_uniform(rng, self.hidden, self.vocab, -0.08, 0.08),
        );
        store.insert("bilm.b_out", Tensor::zeros(1, self.vocab));
    }
}

struct Dir {
    vars: LstmVars,
    /// Sentinel consumed before the first real token.
    start_id: usize,
}

/// Run one direction over already-oriented token ids and return the
/// summed log-likelihood of its targets plus the per-position states.
///
/// `ids[b]` holds the row's tokens in reading order for this direction;
/// step t consumes the sentinel (t = 0) or token t−1 and predicts token t.
fn direction_states(
    tape: &mut Tape,
    bound: &Bound,
    spec: &BiLmSpec,
    dir: &Dir,
    ids: &[Vec<usize>],
    max_len: usize,
) -> Result<Vec<Var>, TensorError> {
    let batch = ids.len();
    let table = bound.var("bilm.word");
    // Step masks: the sentinel step is real for every row, then each
    // row's own token mask shifted right by one.
    let mut mask = vec![0.0; batch * (max_len + 1)];
    for (b, row) in ids.iter().enumerate() {
        for t in 0..=row.len().min(max_len) {
            mask[b * (max_len + 1) + t] = 1.0;
        }
    }
    let (keep, carry) = step_masks(tape, &mask, batch, max_len + 1, spec.hidden);
    let mut xs = Vec::with_capacity(max_len + 1);
    for t in 0..=max_len {
        let step_ids: Vec<usize> = ids
            .iter()
            .map(|row| {
                if t == 0 {
                    dir.start_id
                } else {
                    row.get(t - 1).copied().unwrap_or(WORD_PAD)
                }
            })
            .collect();
        xs.push(tape.gather_rows(table, &step_ids)?);
    }
    let (hs, _, _) = lstm_run(tape, &dir.vars, &xs, &keep, &carry, false, batch, spec.hidden)?;
    Ok(hs)
}

/// Summed log-likelihood of each step's target under the shared
/// projection; `targets[b][t]` pairs with the state after step t.
fn targets_loglik(
    tape: &mut Tape,
    bound: &Bound,
    spec: &BiLmSpec,
    states: &[Var],
    targets: &[Vec<usize>],
    max_len: usize,
) -> Result<Var, TensorError> {
    let batch = targets.len();
    let w_out = bound.var("bilm.w_out");
    let b_out = bound.var("bilm.b_out");
    let mut total: Option<Var> = None;
    for t in 0..max_len {
        // states[t] is the hidden state after consuming input t, i.e.
        // after [sentinel, tok_0..tok_{t−1}]; it predicts tok_t.
        let proj = tape.matmul(states[t], w_out)?;
        let logits = tape.add_row(proj, b_out)?;
        let logp = tape.log_softmax_rows(logits)?;
        let mut onehot = Tensor::zeros(batch, spec.vocab);
        for (b, row) in targets.iter().enumerate() {
            if let Some(&target) = row.get(t) {
                onehot.set(b, target, 1.0);
            }
        }
        let picker = tape.constant(onehot);
        let picked = tape.mul(logp, picker)?;
        let step_sum = tape.sum(picked)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, step_sum)?,
            None => step_sum,
        });
    }
    Ok(total.expect("max_len ≥ 1"))
}

fn directions(bound: &Bound, spec: &BiLmSpec) -> (Dir, Dir) {
    (
        Dir { vars: spec.lstm().bind(bound, "bilm.fwd"), start_id: WORD_BOS },
        Dir { vars: spec.lstm().bind(bound, "bilm.bwd"), start_id: WORD_EOS },
    )
}

/// Joint LM loss: `−(Σ log p_fwd + Σ log p_bwd) / token count`.
///
/// With untrained all-zero parameters both directions predict uniformly,
/// so the loss sits at exactly `2·ln(vocab)` per token.
pub fn bilm_loss(
    tape: &mut Tape,
    bound: &Bound,
    spec: &BiLmSpec,
    sentences: &[Vec<usize>],
) -> Result<Var, BiLmError> {
    let token_count: usize = sentences.iter().map(Vec::len).sum();
    if token_count == 0 {
        return Err(BiLmError::EmptyBatch);
    }
    let max_len = sentences.iter().map(Vec::len).max().unwrap();
    let reversed: Vec<Vec<usize>> = sentences
        .iter()
        .map(|row| row.iter().rev().copied().collect())
        .collect();
    let (fwd, bwd) = directions(bound, spec);

    let fwd_states = direction_states(tape, bound, spec, &fwd, sentences, max_len)?;
    let fwd_ll = targets_loglik(tape, bound, spec, &fwd_states, sentences, max_len)?;
    let bwd_states = direction_states(tape, bound, spec, &bwd, &reversed, max_len)?;
    let bwd_ll = targets_loglik(tape, bound, spec, &bwd_states, &reversed, max_len)?;

    let joint = tape.add(fwd_ll, bwd_ll)?;
    Ok(tape.scale(joint, -1.0 / token_count as f64)?)
}

/// Contextual vectors for a whole packed batch, laid out `[B·L × 2H]`
/// with row `b·L + t` holding sentence b's token t (forward ⊕ backward
/// state). Padded rows are zero-state garbage that the batch mask hides.
pub fn bilm_embed_batch(
    tape: &mut Tape,
    bound: &Bound,
    spec: &BiLmSpec,
    word_ids: &[usize],
    lengths: &[usize],
    max_len: usize,
    frozen: bool,
) -> Result<Var, BiLmError> {
    let batch = lengths.len();
    if batch == 0 || max_len == 0 {
        return Err(BiLmError::EmptyBatch);
    }
    let rows: Vec<Vec<usize>> = (0..batch)
        .map(|b| word_ids[b * max_len..b * max_len + lengths[b]].to_vec())
        .collect();
    let reversed: Vec<Vec<usize>> = rows
        .iter()
        .map(|row| row.iter().rev().copied().collect())
        .collect();
    let (fwd, bwd) = directions(bound, spec);

    // States after consuming each real token, in that direction's order.
    let fwd_states = direction_states(tape, bound, spec, &fwd, &rows, max_len)?;
    let bwd_states = direction_states(tape, bound, spec, &bwd, &reversed, max_len)?;
    let fwd_flat = flatten_steps(tape, &fwd_states[1..], batch)?;
    let bwd_flat = flatten_steps(tape, &bwd_states[1..], batch)?;

    // Token (b, k) sits at forward row b·L + k directly; in the backward
    // sweep it was consumed at step n_b − 1 − k.
    let bwd_perm: Vec<usize> = (0..batch * max_len)
        .map(|i| {
            let (b, k) = (i / max_len, i % max_len);
            if k < lengths[b] {
                b * max_len + (lengths[b] - 1 - k)
            } else {
                i
            }
        })
        .collect();
    let bwd_aligned = tape.gather_rows(bwd_flat, &bwd_perm)?;
    let enc = tape.concat_cols(&[fwd_flat, bwd_aligned])?;
    Ok(if frozen { tape.stop_gradient(enc)? } else { enc })
}

/// Contextual vectors for one sentence: `[n × 2H]`, row k = token k.
pub fn bilm_embed(
    tape: &mut Tape,
    bound: &Bound,
    spec: &BiLmSpec,
    sentence: &[usize],
    frozen: bool,
) -> Result<Var, BiLmError> {
    bilm_embed_batch(
        tape,
        bound,
        spec,
        sentence,
        &[sentence.len()],
        sentence.len(),
        frozen,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zeroed_store(spec: &BiLmSpec) -> ParamStore {
        let mut store = ParamStore::new();
        spec.register(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, t) in store.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        store
    }

    fn random_store(spec: &BiLmSpec, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        spec.register(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        store
    }

    #[test]
    fn untrained_uniform_loss_is_twice_log_vocab() {
        let spec = BiLmSpec { vocab: 12, embed_dim: 3, hidden: 4 };
        let store = zeroed_store(&spec);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let sentences = vec![vec![5, 6, 7], vec![8, 9]];
        let loss = bilm_loss(&mut tape, &bound, &spec, &sentences).unwrap();
        let expected = 2.0 * (12.0f64).ln();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_token_sentence_conditions_on_the_sentinels() {
        let spec = BiLmSpec { vocab: 9, embed_dim: 2, hidden: 3 };
        let store = zeroed_store(&spec);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = bilm_loss(&mut tape, &bound, &spec, &[vec![5]]).unwrap();
        // One token, predicted once from BOS and once from EOS.
        assert!((tape.value(loss).item() - 2.0 * (9.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let spec = BiLmSpec { vocab: 9, embed_dim: 2, hidden: 3 };
        let store = random_store(&spec, 1);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        assert!(matches!(
            bilm_loss(&mut tape, &bound, &spec, &[]),
            Err(BiLmError::EmptyBatch)
        ));
        assert!(matches!(
            bilm_loss(&mut tape, &bound, &spec, &[vec![], vec![]]),
            Err(BiLmError::EmptyBatch)
        ));
    }

    #[test]
    fn embed_shape_is_tokens_by_twice_hidden() {
        let spec = BiLmSpec { vocab: 9, embed_dim: 2, hidden: 3 };
        let store = random_store(&spec, 2);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = bilm_embed(&mut tape, &bound, &spec, &[5, 6, 7, 8], false).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 6]);
    }

    #[test]
    fn embedding_the_same_sentence_twice_is_identical() {
        let spec = BiLmSpec { vocab: 9, embed_dim: 2, hidden: 3 };
        let store = random_store(&spec, 3);
        let embed = || {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let out = bilm_embed(&mut tape, &bound, &spec, &[5, 8, 6], false).unwrap();
            tape.value(out).data().to_vec()
        };
        let (a, b) = (embed(), embed());
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_embeddings_leak_no_gradient_into_the_lm() {
        let spec = BiLmSpec { vocab: 9, embed_dim: 2, hidden: 3 };
        let mut store = random_store(&spec, 4);
        store.insert("probe", Tensor::col(&[0.5; 6]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let emb = bilm_embed(&mut tape, &bound, &spec, &[5, 6], true).unwrap();
        let scored = tape.matmul(emb, bound.var("probe")).unwrap();
        let loss = tape.sum(scored).unwrap();
        let grads = tape.backward(loss).unwrap();
        for name in store.names() {
            if name.starts_with("bilm.") {
                assert!(grads.get(bound.var(name)).is_none(), "gradient on {name}");
            }
        }
        assert!(grads.get(bound.var("probe")).is_some());
    }

    #[test]
    fn unfrozen_embeddings_do_reach_the_lm() {
        let spec = BiLmSpec { vocab: 9, embed_dim: 2, hidden: 3 };
        let mut store = random_store(&spec, 4);
        store.insert("probe", Tensor::col(&[0.5; 6]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let emb = bilm_embed(&mut tape, &bound, &spec, &[5, 6], false).unwrap();
        let scored = tape.matmul(emb, bound.var("probe")).unwrap();
        let loss = tape.sum(scored).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(bound.var("bilm.fwd.w_xc")).is_some());
        assert!(grads.get(bound.var("bilm.word")).is_some());
    }

    #[test]
    fn batch_embed_agrees_with_single_sentence_embed() {
        let spec = BiLmSpec { vocab: 10, embed_dim: 3, hidden: 2 };
        let store = random_store(&spec, 5);
        let rows = [vec![5usize, 7, 6], vec![8, 9]];

        // Batched at L = 3 with a padded second row.
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let word_ids = vec![5, 7, 6, 8, 9, WORD_PAD];
        let flat = bilm_embed_batch(&mut tape, &bound, &spec, &word_ids, &[3, 2], 3, false)
            .unwrap();
        let flat_vals = tape.value(flat).clone();

        for (b, row) in rows.iter().enumerate() {
            let mut solo_tape = Tape::new();
            let solo_bound = store.bind(&mut solo_tape);
            let solo = bilm_embed(&mut solo_tape, &solo_bound, &spec, row, false).unwrap();
            let solo_vals = solo_tape.value(solo);
            for k in 0..row.len() {
                let got = flat_vals.row_slice(b * 3 + k);
                for (g, e) in got.iter().zip(solo_vals.row_slice(k)) {
                    assert!((g - e).abs() < 1e-12, "sentence {b} token {k}");
                }
            }
        }
    }
}
