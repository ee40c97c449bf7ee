//! Embedding tables and the external-vector file loader.
//!
//! Tables are plain parameters looked up with `gather_rows`. The PAD row
//! is zero-initialized and every downstream use sits behind the batch
//! mask, so padding contributes neither values nor gradients. Externally
//! trained vectors can overwrite table rows at build time — the seam
//! through which pretrained features enter without further code.

use rand_chacha::ChaCha8Rng;

use crate::params::{init_normal, ParamStore};
use crate::tensor::Tensor;

/// Shape of one embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingSpec {
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingSpec {
    /// Register the table under `name`: `normal(0, 0.1)` everywhere
    /// except the PAD row, which starts at zero.
    pub fn register(&self, store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng) {
        let mut table = init_normal(rng, self.rows, self.dim, 0.1);
        for v in &mut table.data_mut()[..self.dim] {
            *v = 0.0;
        }
        store.insert(name, table);
    }
}

/// Error while reading an external embedding file.
#[derive(Debug, thiserror::Error)]
pub enum EmbedFileError {
    #[error("line {line}: expected form + {expected} floats, found {found} floats")]
    WrongDim {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unparseable float {value:?}")]
    BadFloat { line: usize, value: String },
    #[error("line {line}: missing tab between form and vector")]
    MissingTab { line: usize },
}

/// Parse `form \t v1 v2 … vd` lines. Blank lines are skipped.
pub fn parse_embedding_file(
    text: &str,
    dim: usize,
) -> Result<Vec<(String, Vec<f64>)>, EmbedFileError> {
    let mut entries = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.is_empty() {
            continue;
        }
        let (form, rest) = line
            .split_once('\t')
            .ok_or(EmbedFileError::MissingTab { line: line_no })?;
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|v| {
                v.parse().map_err(|_| EmbedFileError::BadFloat {
                    line: line_no,
                    value: v.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(EmbedFileError::WrongDim {
                line: line_no,
                expected: dim,
                found: values.len(),
            });
        }
        entries.push((form.to_string(), values));
    }
    Ok(entries)
}

/// Overwrite table rows with external vectors for every form the vocab
/// knows. Returns how many rows were applied; unknown forms are ignored.
pub fn apply_external(
    table: &mut Tensor,
    ids_of: impl Fn(&str) -> Option<usize>,
    entries: &[(String, Vec<f64>)],
) -> usize {
    let dim = table.cols();
    let mut applied = 0;
    for (form, values) in entries {
        if let Some(row) = ids_of(form) {
            table.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(values);
            applied += 1;
        }
    }
    applied
}
