//! CoNLL-U ingestion: parse, validate, and re-serialize dependency trees.
//!
//! Only the columns the model consumes are retained: ID, FORM, UPOS, HEAD,
//! DEPREL. Multiword-token ranges (`3-4`) and empty nodes (`5.1`) are
//! skipped and counted rather than rejected, so parser output from
//! real-world pipelines stays usable. Splitting is strict on tabs; no
//! whitespace normalization happens anywhere.

use std::fmt;

/// One syntactic word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position within the sentence.
    pub index: usize,
    /// Surface form.
    pub form: String,
    /// Universal part-of-speech tag (kept verbatim, `_` allowed).
    pub upos: String,
    /// 1-based index of the head token; 0 means the root.
    pub head: usize,
    /// Dependency relation label to the head.
    pub deprel: String,
}

/// One dependency-annotated sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepSentence {
    pub tokens: Vec<Token>,
    /// Value of a `# sent_id = …` comment, when present.
    pub sent_id: Option<String>,
    /// All comment lines, verbatim including the leading `#`.
    pub comments: Vec<String>,
}

/// Parsed file plus counts of the line kinds that were skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub sentences: Vec<DepSentence>,
    /// Multiword-token range lines (IDs like `3-4`).
    pub skipped_multiword: usize,
    /// Empty-node lines (IDs like `5.1`).
    pub skipped_empty_nodes: usize,
}

/// First invariant a sentence violates, with the offending token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    EmptySentence,
    /// Token at `index` has an empty FORM.
    EmptyForm { index: usize },
    /// Token at `index` is its own head.
    SelfLoop { index: usize },
    /// Token at `index` points at a head outside 0..=n.
    HeadOutOfRange { index: usize, head: usize },
    /// Following heads from `index` never reaches the root.
    Cycle { index: usize },
    /// More than one token has head 0; `second` is the extra one.
    MultipleRoots { first: usize, second: usize },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::EmptySentence => write!(f, "empty sentence"),
            TreeViolation::EmptyForm { index } => write!(f, "empty form at token {index}"),
            TreeViolation::SelfLoop { index } => write!(f, "self-loop at token {index}"),
            TreeViolation::HeadOutOfRange { index, head } => {
                write!(f, "head {head} out of range at token {index}")
            }
            TreeViolation::Cycle { index } => write!(f, "cycle through token {index}"),
            TreeViolation::MultipleRoots { first, second } => {
                write!(f, "multiple roots: tokens {first} and {second}")
            }
        }
    }
}

/// Parse or validation failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConlluError {
    #[error("line {line}: {problem}")]
    Line { line: usize, problem: String },
    #[error("sentence {sentence}: {violation}")]
    InvalidTree {
        /// `sent_id` when available, otherwise the 1-based ordinal.
        sentence: String,
        violation: TreeViolation,
    },
}

/// Parse a whole CoNLL-U stream. Every returned sentence has already
/// passed [`validate_tree`].
pub fn parse_conllu(input: &str) -> Result<ParseOutcome, ConlluError> {
    let mut outcome = ParseOutcome {
        sentences: Vec::new(),
        skipped_multiword: 0,
        skipped_empty_nodes: 0,
    };
    let mut current = BlockState::default();

    for (line_no, line) in input.lines().enumerate() {
        let line_no = line_no + 1;
        if line.is_empty() {
            current.finish(&mut outcome.sentences)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("sent_id") {
                if let Some(id) = value.trim_start().strip_prefix('=') {
                    current.sent_id = Some(id.trim().to_string());
                }
            }
            current.comments.push(line.to_string());
            continue;
        }

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 10 {
            return Err(ConlluError::Line {
                line: line_no,
                problem: format!("expected 10 tab-separated fields, found {}", fields.len()),
            });
        }
        let id_field = fields[0];
        if id_field.contains('-') {
            outcome.skipped_multiword += 1;
            continue;
        }
        if id_field.contains('.') {
            outcome.skipped_empty_nodes += 1;
            continue;
        }
        let index: usize = id_field.parse().map_err(|_| ConlluError::Line {
            line: line_no,
            problem: format!("unparseable token id {id_field:?}"),
        })?;
        if index != current.tokens.len() + 1 {
            return Err(ConlluError::Line {
                line: line_no,
                problem: format!(
                    "token id {index} out of sequence (expected {})",
                    current.tokens.len() + 1
                ),
            });
        }
        let head: usize = fields[6].parse().map_err(|_| ConlluError::Line {
            line: line_no,
            problem: format!("unparseable head {:?}", fields[6]),
        })?;
        current.tokens.push(Token {
            index,
            form: fields[1].to_string(),
            upos: fields[3].to_string(),
            head,
            deprel: fields[7].to_string(),
        });
    }
    current.finish(&mut outcome.sentences)?;
    Ok(outcome)
}

#[derive(Default)]
struct BlockState {
    tokens: Vec<Token>,
    sent_id: Option<String>,
    comments: Vec<String>,
}

impl BlockState {
    /// Close the current block, validating and appending its sentence.
    fn finish(&mut self, sentences: &mut Vec<DepSentence>) -> Result<(), ConlluError> {
        if self.tokens.is_empty() {
            // Blank run or comment-only block: nothing to emit.
            self.comments.clear();
            self.sent_id = None;
            return Ok(());
        }
        let sentence = DepSentence {
            tokens: std::mem::take(&mut self.tokens),
            sent_id: self.sent_id.take(),
            comments: std::mem::take(&mut self.comments),
        };
        if let Err(violation) = validate_tree(&sentence) {
            let name = sentence
                .sent_id
                .clone()
                .unwrap_or_else(|| format!("{}", sentences.len() + 1));
            return Err(ConlluError::InvalidTree {
                sentence: name,
                violation,
            });
        }
        sentences.push(sentence);
        Ok(())
    }
}

/// Check all structural invariants, reporting the first violation found.
///
/// Everything that points nowhere rootward is a cycle: a sentence with no
/// head-0 token necessarily contains one, so "no root" surfaces as
/// [`TreeViolation::Cycle`] rather than a separate variant.
pub fn validate_tree(sentence: &DepSentence) -> Result<(), TreeViolation> {
    let n = sentence.tokens.len();
    if n == 0 {
        return Err(TreeViolation::EmptySentence);
    }
    for token in &sentence.tokens {
        if token.form.is_empty() {
            return Err(TreeViolation::EmptyForm { index: token.index });
        }
        if token.head == token.index {
            return Err(TreeViolation::SelfLoop { index: token.index });
        }
        if token.head > n {
            return Err(TreeViolation::HeadOutOfRange {
                index: token.index,
                head: token.head,
            });
        }
    }
    // Walk each token's head chain; 0 = unvisited, 1 = on current path,
    // 2 = known to reach the root.
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut at = start;
        while state[at] == 0 {
            state[at] = 1;
            path.push(at);
            at = sentence.tokens[at - 1].head;
        }
        if state[at] == 1 {
            return Err(TreeViolation::Cycle { index: at });
        }
        for visited in path {
            state[visited] = 2;
        }
    }
    let mut roots = sentence.tokens.iter().filter(|t| t.head == 0);
    let first = roots.next().expect("acyclic head chains end at the root");
    if let Some(second) = roots.next() {
        return Err(TreeViolation::MultipleRoots {
            first: first.index,
            second: second.index,
        });
    }
    Ok(())
}

/// Serialize back to CoNLL-U. Columns we do not retain are written as `_`,
/// comments (including any `sent_id`) come out verbatim, and the sentence
/// ends with the standard blank line.
pub fn to_conllu(sentence: &DepSentence) -> String {
    let mut out = String::new();
    for comment in &sentence.comments {
        out.push_str(comment);
        out.push('\n');
    }
    for t in &sentence.tokens {
        out.push_str(&format!(
            "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
            t.index, t.form, t.upos, t.head, t.deprel
        ));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(rows: &[(&str, &str, usize, &str)]) -> String {
        let mut s = String::new();
        for (i, (form, upos, head, deprel)) in rows.iter().enumerate() {
            s.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                form,
                upos,
                head,
                deprel
            ));
        }
        s.push('\n');
        s
    }

    #[test]
    fn five_token_sentence_parses_with_is_as_root() {
        let text = block(&[
            ("my", "PRON", 3, "nmod:poss"),
            ("favorite", "ADJ", 3, "amod"),
            ("fruit", "NOUN", 4, "nsubj"),
            ("is", "AUX", 0, "root"),
            ("apple", "NOUN", 4, "attr"),
        ]);
        let outcome = parse_conllu(&text).unwrap();
        assert_eq!(outcome.sentences.len(), 1);
        let sentence = &outcome.sentences[0];
        let root = sentence.tokens.iter().find(|t| t.head == 0).unwrap();
        assert_eq!(root.form, "is");
        assert_eq!(sentence.tokens[2].head, 4); // fruit → is
    }

    #[test]
    fn single_root_token_is_a_valid_tree() {
        let outcome = parse_conllu(&block(&[("yes", "INTJ", 0, "root")])).unwrap();
        assert_eq!(outcome.sentences[0].tokens.len(), 1);
    }

    #[test]
    fn self_loop_is_rejected() {
        let err = parse_conllu(&block(&[("a", "DET", 1, "det")])).unwrap_err();
        assert!(matches!(
            err,
            ConlluError::InvalidTree {
                violation: TreeViolation::SelfLoop { index: 1 },
                ..
            }
        ));
    }

    #[test]
    fn two_roots_are_rejected_as_multiple_roots() {
        let sentence = DepSentence {
            tokens: vec![
                Token { index: 1, form: "a".into(), upos: "X".into(), head: 0, deprel: "root".into() },
                Token { index: 2, form: "b".into(), upos: "X".into(), head: 0, deprel: "root".into() },
            ],
            sent_id: None,
            comments: vec![],
        };
        assert_eq!(
            validate_tree(&sentence),
            Err(TreeViolation::MultipleRoots { first: 1, second: 2 })
        );
    }

    #[test]
    fn mutual_heads_are_rejected_as_a_cycle() {
        let sentence = DepSentence {
            tokens: vec![
                Token { index: 1, form: "a".into(), upos: "X".into(), head: 2, deprel: "dep".into() },
                Token { index: 2, form: "b".into(), upos: "X".into(), head: 1, deprel: "dep".into() },
            ],
            sent_id: None,
            comments: vec![],
        };
        assert!(matches!(
            validate_tree(&sentence),
            Err(TreeViolation::Cycle { .. })
        ));
    }

    #[test]
    fn head_out_of_range_is_rejected() {
        let err = parse_conllu(&block(&[("a", "X", 7, "dep")])).unwrap_err();
        assert!(matches!(
            err,
            ConlluError::InvalidTree {
                violation: TreeViolation::HeadOutOfRange { index: 1, head: 7 },
                ..
            }
        ));
    }

    #[test]
    fn multiword_and_empty_node_lines_are_skipped_and_counted() {
        let text = "\
1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_
1\tdo\t_\tAUX\t_\t_\t0\troot\t_\t_
2\tnot\t_\tPART\t_\t_\t1\tadvmod\t_\t_
2.1\telided\t_\t_\t_\t_\t_\t_\t_\t_

";
        let outcome = parse_conllu(text).unwrap();
        assert_eq!(outcome.skipped_multiword, 1);
        assert_eq!(outcome.skipped_empty_nodes, 1);
        assert_eq!(outcome.sentences[0].tokens.len(), 2);
    }

    #[test]
    fn wrong_column_count_names_the_line() {
        let text = "1\tword\tonly\tfour\tcolumns\n";
        let err = parse_conllu(text).unwrap_err();
        assert_eq!(
            err,
            ConlluError::Line {
                line: 1,
                problem: "expected 10 tab-separated fields, found 5".into()
            }
        );
    }

    #[test]
    fn out_of_sequence_id_names_the_line() {
        let text = "\
1\ta\t_\tX\t_\t_\t0\troot\t_\t_
3\tb\t_\tX\t_\t_\t1\tdep\t_\t_
";
        let err = parse_conllu(text).unwrap_err();
        assert!(matches!(err, ConlluError::Line { line: 2, .. }), "{err}");
    }

    #[test]
    fn sent_id_comment_is_extracted_and_named_in_errors() {
        let text = format!(
            "# sent_id = train-042\n{}",
            block(&[("a", "X", 1, "det")])
        );
        let err = parse_conllu(&text).unwrap_err();
        assert!(matches!(
            err,
            ConlluError::InvalidTree { ref sentence, .. } if sentence == "train-042"
        ));
    }

    #[test]
    fn round_trip_preserves_retained_fields() {
        let text = format!(
            "# sent_id = rt-1\n# text = más vale tarde\n{}",
            block(&[
                ("más", "ADV", 2, "advmod"),
                ("vale", "VERB", 0, "root"),
                ("tarde", "ADV", 2, "advmod"),
            ])
        );
        let first = parse_conllu(&text).unwrap();
        let serialized = to_conllu(&first.sentences[0]);
        let second = parse_conllu(&serialized).unwrap();
        assert_eq!(first.sentences, second.sentences);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_sentence() -> impl Strategy<Value = DepSentence> {
            // Token 1 is the root; each later token attaches to some
            // earlier one, which guarantees a valid tree.
            (1usize..9)
                .prop_flat_map(|n| {
                    let heads: Vec<BoxedStrategy<usize>> = (1..=n)
                        .map(|i| {
                            if i == 1 {
                                Just(0).boxed()
                            } else {
                                (1..i).boxed()
                            }
                        })
                        .collect();
                    (
                        heads,
                        proptest::collection::vec("[a-zA-Zéü]{1,6}", n),
                        proptest::collection::vec("[A-Z]{1,4}", n),
                        proptest::collection::vec("[a-z:]{1,6}", n),
                    )
                })
                .prop_map(|(heads, forms, upos, deprels)| DepSentence {
                    tokens: heads
                        .iter()
                        .enumerate()
                        .map(|(i, &head)| Token {
                            index: i + 1,
                            form: forms[i].clone(),
                            upos: upos[i].clone(),
                            head,
                            deprel: deprels[i].clone(),
                        })
                        .collect(),
                    sent_id: None,
                    comments: vec![],
                })
        }

        proptest! {
            #[test]
            fn serialize_then_parse_is_identity(sentence in arb_sentence()) {
                let text = to_conllu(&sentence);
                let outcome = parse_conllu(&text).unwrap();
                prop_assert_eq!(&outcome.sentences[..], &[sentence][..]);
            }

            #[test]
            fn generated_trees_validate(sentence in arb_sentence()) {
                prop_assert_eq!(validate_tree(&sentence), Ok(()));
            }
        }
    }
}
