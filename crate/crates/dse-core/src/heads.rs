//! Output layer: candidate scoring with pairwise margin ranking for the
//! sentence-completion task, 5-class softmax classification for the
//! relation-extraction task, and entity anonymization preprocessing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conllu::{parse_conllu, validate_tree, ConlluError, DepSentence, Token, TreeViolation};
use crate::tensor::{Tape, TensorError, Var};

/// The five relation classes, in label-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Advice,
    Effect,
    Mechanism,
    Int,
    Negative,
}

impl RelationLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [RelationLabel; 5] = [
        RelationLabel::Advice,
        RelationLabel::Effect,
        RelationLabel::Mechanism,
        RelationLabel::Int,
        RelationLabel::Negative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::Advice => "advice",
            RelationLabel::Effect => "effect",
            RelationLabel::Mechanism => "mechanism",
            RelationLabel::Int => "int",
            RelationLabel::Negative => "negative",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown relation label {s:?}"))
    }
}

/// Task-head failure.
#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("label index {0} out of range (5 classes)")]
    LabelOutOfRange(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `f(x) = σ(uᵀx)` per row: `rep` is `[B×k]`, `u` is `[k×1]`, the result
/// `[B×1]` with every entry in (0, 1).
pub fn score(tape: &mut Tape, rep: Var, u: Var) -> Result<Var, TensorError> {
    let raw = tape.matmul(rep, u)?;
    tape.sigmoid(raw)
}

/// Margin ranking loss summed over the batch:
/// `Σ_{i=1..3} max(0, −f(true) + f(false_i) + margin)` per question.
pub fn completion_loss(
    tape: &mut Tape,
    true_rep: Var,
    false_reps: &[Var; 3],
    u: Var,
    margin: f64,
) -> Result<Var, TensorError> {
    let s_true = score(tape, true_rep, u)?;
    let mut total: Option<Var> = None;
    for &false_rep in false_reps {
        let s_false = score(tape, false_rep, u)?;
        let gap = tape.sub(s_false, s_true)?;
        let shifted = tape.add_scalar(gap, margin)?;
        let hinge = tape.relu(shifted)?;
        let summed = tape.sum(hinge)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, summed)?,
            None => summed,
        });
    }
    Ok(total.expect("three false options"))
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// 5-class negative log-likelihood summed over the batch, via fused
/// log-softmax: `rep` is `[B×k]`, `w_out` `[k×5]`, `b_out` `[1×5]`.
pub fn relation_loss(
    tape: &mut Tape,
    rep: Var,
    labels: &[usize],
    w_out: Var,
    b_out: Var,
) -> Result<Var, HeadError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= RelationLabel::COUNT) {
        return Err(HeadError::LabelOutOfRange(bad));
    }
    let logits = relation_logits(tape, rep, w_out, b_out)?;
    let logp = tape.log_softmax_rows(logits)?;
    let mut onehot = crate::tensor::Tensor::zeros(labels.len(), RelationLabel::COUNT);
    for (b, &label) in labels.iter().enumerate() {
        onehot.set(b, label, 1.0);
    }
    let picker = tape.constant(onehot);
    let picked = tape.mul(logp, picker)?;
    let ll = tape.sum(picked)?;
    Ok(tape.scale(ll, -1.0)?)
}

/// Raw class logits `[B×5]`.
pub fn relation_logits(
    tape: &mut Tape,
    rep: Var,
    w_out: Var,
    b_out: Var,
) -> Result<Var, TensorError> {
    let proj = tape.matmul(rep, w_out)?;
    tape.add_row(proj, b_out)
}

/// 1-based inclusive token span `(start, end)`.
pub type Span = (usize, usize);

/// Anonymization failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnonymizeError {
    #[error("span ({0}, {1}) out of range or inverted")]
    SpanOutOfRange(usize, usize),
    #[error("spans ({0}, {1}) and ({2}, {3}) overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("anonymization broke the tree: {0}")]
    BrokenTree(TreeViolation),
}

/// Anonymized sentence plus the 1-based positions of the two entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anonymized {
    pub sentence: DepSentence,
    pub e1_index: usize,
    pub e2_index: usize,
}

/// Replace the e1 span with a single `drug1` token, e2 with `drug2`, and
/// every other drug span with `drug0`, remapping heads and deprels of the
/// surviving tokens. A multi-token span collapses to one token that
/// inherits the span head's head and deprel, where the span head is the
/// last span member on the walk from the span's first token to the root.
pub fn anonymize(
    sentence: &DepSentence,
    e1: Span,
    e2: Span,
    others: &[Span],
) -> Result<Anonymized, AnonymizeError> {
    let n = sentence.tokens.len();
    let mut spans: Vec<(Span, &'static str)> = vec![(e1, "drug1"), (e2, "drug2")];
    spans.extend(others.iter().map(|&s| (s, "drug0")));
    for &((start, end), _) in &spans {
        if start == 0 || start > end || end > n {
            return Err(AnonymizeError::SpanOutOfRange(start, end));
        }
    }
    spans.sort_by_key(|&((start, _), _)| start);
    for pair in spans.windows(2) {
        let ((s1, e1_), _) = pair[0];
        let ((s2, e2_), _) = pair[1];
        if s2 <= e1_ {
            return Err(AnonymizeError::Overlap(s1, e1_, s2, e2_));
        }
    }

    // Which span (if any) covers each old 1-based index.
    let span_of = |index: usize| spans.iter().position(|&((s, e), _)| s <= index && index <= e);
    let span_head = |span_idx: usize| {
        let (start, end) = spans[span_idx].0;
        let mut at = start;
        let mut last_inside = start;
        while at != 0 {
            if (start..=end).contains(&at) {
                last_inside = at;
            } else {
                break;
            }
            at = sentence.tokens[at - 1].head;
        }
        last_inside
    };

    // New 1-based index of each old token (span members share their
    // span's collapsed position).
    let mut new_index = vec![0usize; n + 1];
    let mut next = 0usize;
    let mut old_of_new: Vec<OldSlot> = Vec::new();
    let mut at = 1;
    while at <= n {
        next += 1;
        if let Some(si) = span_of(at) {
            let (start, end) = spans[si].0;
            for covered in start..=end {
                new_index[covered] = next;
            }
            old_of_new.push(OldSlot::Collapsed(si));
            at = end + 1;
        } else {
            new_index[at] = next;
            old_of_new.push(OldSlot::Kept(at));
            at += 1;
        }
    }

    let tokens: Vec<Token> = old_of_new
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let (form, upos, source_old) = match *slot {
                OldSlot::Kept(old) => {
                    let t = &sentence.tokens[old - 1];
                    (t.form.clone(), t.upos.clone(), old)
                }
                OldSlot::Collapsed(si) => {
                    (spans[si].1.to_string(), "NOUN".to_string(), span_head(si))
                }
            };
            let source = &sentence.tokens[source_old - 1];
            Token {
                index: i + 1,
                form,
                upos,
                head: if source.head == 0 { 0 } else { new_index[source.head] },
                deprel: source.deprel.clone(),
            }
        })
        .collect();

    let rewritten = DepSentence {
        tokens,
        sent_id: sentence.sent_id.clone(),
        comments: sentence.comments.clone(),
    };
    validate_tree(&rewritten).map_err(AnonymizeError::BrokenTree)?;
    Ok(Anonymized {
        e1_index: new_index[e1.0],
        e2_index: new_index[e2.0],
        sentence: rewritten,
    })
}

#[derive(Clone, Copy)]
enum OldSlot {
    Kept(usize),
    Collapsed(usize),
}

/// On-disk cloze record: the line format of cloze task files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeRecord {
    /// Question sentence with `___` gap markers.
    pub stem: String,
    /// The four candidate fills (multi-gap options separate their pieces
    /// with ` / `).
    pub options: [String; 4],
    /// Index of the correct option, 0–3.
    pub answer: usize,
    /// CoNLL-U text of each fully completed sentence, option order.
    pub conllu: [String; 4],
}

/// A cloze question with its four completed parses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeQuestion {
    pub stem: String,
    pub options: [String; 4],
    pub answer: usize,
    pub parsed: [DepSentence; 4],
}

/// Record decoding failure.
#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("answer index {0} out of range 0..4")]
    AnswerOutOfRange(usize),
    #[error("option {index}: {source}")]
    BadParse { index: usize, source: ConlluError },
    #[error("option {index}: expected exactly one sentence, found {found}")]
    NotOneSentence { index: usize, found: usize },
    #[error("unknown relation label {0:?}")]
    BadLabel(String),
    #[error(transparent)]
    Anonymize(#[from] AnonymizeError),
}

fn parse_one(text: &str, index: usize) -> Result<DepSentence, RecordError> {
    let outcome = parse_conllu(text).map_err(|source| RecordError::BadParse { index, source })?;
    if outcome.sentences.len() != 1 {
        return Err(RecordError::NotOneSentence {
            index,
            found: outcome.sentences.len(),
        });
    }
    Ok(outcome.sentences.into_iter().next().unwrap())
}

impl ClozeQuestion {
    pub fn from_record(record: ClozeRecord) -> Result<Self, RecordError> {
        if record.answer >= 4 {
            return Err(RecordError::AnswerOutOfRange(record.answer));
        }
        let mut parsed = Vec::with_capacity(4);
        for (i, text) in record.conllu.iter().enumerate() {
            parsed.push(parse_one(text, i)?);
        }
        Ok(ClozeQuestion {
            stem: record.stem,
            options: record.options,
            answer: record.answer,
            parsed: parsed.try_into().expect("exactly four options"),
        })
    }
}

/// On-disk relation record: the line format of relation task files.
/// Spans are 1-based inclusive `[start, end]` token ranges in `conllu`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    /// CoNLL-U text of the raw (pre-anonymization) sentence.
    pub conllu: String,
    pub e1: Span,
    pub e2: Span,
    /// Other drug mentions, to be rewritten as `drug0`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub others: Vec<Span>,
    pub label: String,
}

/// A relation instance ready for the classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInstance {
    /// Anonymized sentence (`drug1`/`drug2`/`drug0` in place).
    pub sentence: DepSentence,
    pub e1_index: usize,
    pub e2_index: usize,
    pub label: RelationLabel,
}

impl RelationInstance {
    pub fn from_record(record: RelationRecord) -> Result<Self, RecordError> {
        let label: RelationLabel = record
            .label
            .parse()
            .map_err(|_| RecordError::BadLabel(record.label.clone()))?;
        let sentence = parse_one(&record.conllu, 0)?;
        let anon = anonymize(&sentence, record.e1, record.e2, &record.others)?;
        Ok(RelationInstance {
            sentence: anon.sentence,
            e1_index: anon.e1_index,
            e2_index: anon.e2_index,
            label,
        })
    }
}
