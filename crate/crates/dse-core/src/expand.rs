//! Dependency expansion: linearize a validated tree into one
//! (dependent, relation, head) triple per token, in surface order, plus
//! the vocabularies and rectangular batch packing the encoders consume.
//!
//! The root token has no head word; its triple carries `None` and the
//! encoders substitute a dedicated learned ROOT vector, which keeps the
//! fusion step total over all tokens and differentiable.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::conllu::DepSentence;

/// Reserved word-vocabulary rows, in fixed order.
pub const WORD_PAD: usize = 0;
pub const WORD_UNK: usize = 1;
pub const WORD_ROOT: usize = 2;
pub const WORD_BOS: usize = 3;
pub const WORD_EOS: usize = 4;
const WORD_RESERVED: [&str; 5] = ["<pad>", "<unk>", "<root>", "<bos>", "<eos>"];

/// Reserved relation-vocabulary rows.
pub const REL_PAD: usize = 0;
pub const REL_UNK: usize = 1;
const REL_RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Interned, ordered symbol table. Entry order is first-seen order over
/// the build corpus, so identical corpora produce identical tables.
/// Lookup is verbatim (case-sensitive); unseen symbols map to UNK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    entries: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    unk: usize,
}

impl Vocab {
    fn with_reserved(reserved: &[&str], unk: usize) -> Self {
        let mut vocab = Vocab {
            entries: Vec::new(),
            index: HashMap::new(),
            unk,
        };
        for &symbol in reserved {
            vocab.intern(symbol);
        }
        vocab
    }

    fn intern(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.entries.len();
        self.entries.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    /// Id of `symbol`, or the UNK id when unseen.
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(self.unk)
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(entries: Vec<String>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        // Reserved layouts place UNK at index 1 in both vocabularies.
        Vocab { entries, index, unk: 1 }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Self {
        vocab.entries
    }
}

/// Word symbol table with PAD/UNK/ROOT/BOS/EOS reserved at rows 0–4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocab(pub Vocab);

impl WordVocab {
    /// Intern every surface form in corpus order.
    pub fn build(sentences: &[DepSentence]) -> Self {
        let refs: Vec<&DepSentence> = sentences.iter().collect();
        Self::build_refs(&refs)
    }

    /// [`WordVocab::build`] over borrowed sentences.
    pub fn build_refs(sentences: &[&DepSentence]) -> Self {
        let mut vocab = Vocab::with_reserved(&WORD_RESERVED, WORD_UNK);
        for sentence in sentences {
            for token in &sentence.tokens {
                vocab.intern(&token.form);
            }
        }
        WordVocab(vocab)
    }

    pub fn id(&self, form: &str) -> usize {
        self.0.id(form)
    }

    pub fn form(&self, id: usize) -> &str {
        self.0.symbol(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Relation symbol table with PAD/UNK reserved at rows 0–1. Built from
/// the training split only; relations first seen at test time become UNK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocab(pub Vocab);

impl RelationVocab {
    pub fn build(sentences: &[DepSentence]) -> Self {
        let refs: Vec<&DepSentence> = sentences.iter().collect();
        Self::build_refs(&refs)
    }

    /// [`RelationVocab::build`] over borrowed sentences.
    pub fn build_refs(sentences: &[&DepSentence]) -> Self {
        let mut vocab = Vocab::with_reserved(&REL_RESERVED, REL_UNK);
        for sentence in sentences {
            for token in &sentence.tokens {
                vocab.intern(&token.deprel);
            }
        }
        RelationVocab(vocab)
    }

    pub fn id(&self, deprel: &str) -> usize {
        self.0.id(deprel)
    }

    pub fn label(&self, id: usize) -> &str {
        self.0.symbol(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// One (dependent, relation, head) triple. `head_index` is `None` exactly
/// for the root token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionTriple {
    /// 0-based surface position of the dependent.
    pub dep_index: usize,
    /// Id into the relation vocabulary.
    pub rel_id: usize,
    /// 0-based surface position of the head; `None` for the root.
    pub head_index: Option<usize>,
}

/// A sentence together with its triples, positionally aligned: the triple
/// at position `i` always has `dep_index == i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedSentence {
    pub sentence: DepSentence,
    pub triples: Vec<ExpansionTriple>,
}

/// Linearize a validated tree. Token `i` (0-based) yields
/// `(i, rel_id(deprel_i), head_i − 1)`; the root yields `(i, rel_id, None)`.
pub fn expand(sentence: &DepSentence, relvocab: &RelationVocab) -> ExpandedSentence {
    let triples = sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(i, token)| ExpansionTriple {
            dep_index: i,
            rel_id: relvocab.id(&token.deprel),
            head_index: token.head.checked_sub(1),
        })
        .collect();
    ExpandedSentence {
        sentence: sentence.clone(),
        triples,
    }
}

/// Position sentinel marking the ROOT slot inside [`PackedBatch::head_pos`];
/// also fills padded positions, which never reach a real gather thanks to
/// the mask.
pub const ROOT_POS: u32 = u32::MAX;

/// Rectangular `[batch × max_len]` index arrays, row-major. PAD rows of
/// the vocabularies fill unused positions; `mask` is 1.0 on real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    pub batch: usize,
    pub max_len: usize,
    /// Word id of each dependent; `WORD_PAD` on padding.
    pub word_ids: Vec<usize>,
    /// Relation id of each dependent; `REL_PAD` on padding.
    pub rel_ids: Vec<usize>,
    /// Within-sentence position of each dependent's head; `ROOT_POS` for
    /// the root token and on padding.
    pub head_pos: Vec<u32>,
    /// 1.0 on real positions, 0.0 on padding.
    pub mask: Vec<f64>,
    /// Real (possibly truncated) length of each sentence.
    pub lengths: Vec<usize>,
    /// Number of sentences that lost tokens to `max_len`.
    pub truncated: usize,
}

/// Batch packing failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PackError {
    #[error("empty batch")]
    EmptyBatch,
}

/// Pack sentences into rectangular arrays. Sentences longer than
/// `max_len` are truncated (head positions beyond the cut become ROOT)
/// and counted in [`PackedBatch::truncated`].
pub fn batch_pack(
    expanded: &[ExpandedSentence],
    wordvocab: &WordVocab,
    max_len: usize,
) -> Result<PackedBatch, PackError> {
    if expanded.is_empty() || max_len == 0 {
        return Err(PackError::EmptyBatch);
    }
    let batch = expanded.len();
    let mut packed = PackedBatch {
        batch,
        max_len,
        word_ids: vec![WORD_PAD; batch * max_len],
        rel_ids: vec![REL_PAD; batch * max_len],
        head_pos: vec![ROOT_POS; batch * max_len],
        mask: vec![0.0; batch * max_len],
        lengths: Vec::with_capacity(batch),
        truncated: 0,
    };
    for (b, exp) in expanded.iter().enumerate() {
        let full = exp.triples.len();
        let len = full.min(max_len);
        if full > max_len {
            packed.truncated += 1;
        }
        packed.lengths.push(len);
        for (t, triple) in exp.triples[..len].iter().enumerate() {
            let cell = b * max_len + t;
            packed.word_ids[cell] = wordvocab.id(&exp.sentence.tokens[t].form);
            packed.rel_ids[cell] = triple.rel_id;
            packed.head_pos[cell] = match triple.head_index {
                Some(h) if h < len => h as u32,
                // Root, or a head that fell past the truncation point.
                _ => ROOT_POS,
            };
            packed.mask[cell] = 1.0;
        }
    }
    Ok(packed)
}

impl PackedBatch {
    /// Rebuild each sentence's triples from the arrays alone. Together
    /// with [`PackedBatch::word_ids`] this recovers everything the pack
    /// encoded; the test suite asserts it matches the input exactly for
    /// untruncated batches.
    pub fn unpack(&self) -> Vec<Vec<ExpansionTriple>> {
        (0..self.batch)
            .map(|b| {
                (0..self.lengths[b])
                    .map(|t| {
                        let cell = b * self.max_len + t;
                        ExpansionTriple {
                            dep_index: t,
                            rel_id: self.rel_ids[cell],
                            head_index: match self.head_pos[cell] {
                                ROOT_POS => None,
                                h => Some(h as usize),
                            },
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
