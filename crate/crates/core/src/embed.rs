//! Token embedding tables: pretrained text-format loading, double-embedding
//! composition, and a small trainable table for self-contained experiments.
//!
//! Lookup is case-sensitive with a lowercase fallback. Out-of-vocabulary
//! tokens map to the zero vector in frozen tables and to the shared UNK row
//! in trainable tables.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where a token resolves inside a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRef {
    Row(usize),
    /// Out of vocabulary in a frozen table.
    Zero,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor,
    trainable: bool,
    unk_row: Option<usize>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn unk_row(&self) -> Option<usize> {
        self.unk_row
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Case-sensitive lookup with a lowercase fallback; unresolved tokens
    /// fall to the UNK row (trainable) or the zero vector (frozen).
    pub fn resolve(&self, token: &str) -> RowRef {
        if let Some(&row) = self.index.get(token) {
            return RowRef::Row(row);
        }
        let lower = token.to_lowercase();
        if lower != token {
            if let Some(&row) = self.index.get(&lower) {
                return RowRef::Row(row);
            }
        }
        match self.unk_row {
            Some(row) => RowRef::Row(row),
            None => RowRef::Zero,
        }
    }

    fn from_rows(words: Vec<String>, rows: Vec<Vec<f64>>, trainable: bool) -> Self {
        debug_assert_eq!(words.len(), rows.len());
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let matrix = Tensor::from_nested(&rows).expect("consistent row widths");
        EmbeddingTable {
            words,
            index,
            matrix,
            trainable,
            unk_row: None,
        }
    }

    /// Rebuild a table from checkpointed pieces.
    pub fn from_parts(
        words: Vec<String>,
        matrix: Tensor,
        trainable: bool,
        unk_row: Option<usize>,
    ) -> Result<Self> {
        let expected_rows = words.len() + usize::from(unk_row.is_some());
        if matrix.rows() != expected_rows {
            return Err(Error::ShapeMismatch(format!(
                "embedding matrix has {} rows for {} words",
                matrix.rows(),
                expected_rows
            )));
        }
        let offset = usize::from(unk_row.is_some());
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + offset))
            .collect();
        Ok(EmbeddingTable {
            words,
            index,
            matrix,
            trainable,
            unk_row,
        })
    }
}

/// Load a frozen table from whitespace-separated text: `word v1 ... vd` per
/// line. Duplicate words keep their first occurrence (with a warning).
pub fn load_pretrained(path: &Path, expected_d: usize) -> Result<EmbeddingTable> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut words = Vec::new();
    let mut rows = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "empty embedding line".into(),
        })?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad value {p:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != expected_d {
            return Err(Error::Dimension(format!(
                "line {}: expected {} values for {:?}, found {}",
                lineno + 1,
                expected_d,
                word,
                values.len()
            )));
        }
        if index.contains_key(word) {
            log::warn!("duplicate embedding for {word:?} at line {}; keeping first", lineno + 1);
            continue;
        }
        index.insert(word.to_string(), words.len());
        words.push(word.to_string());
        rows.push(values);
    }
    if words.is_empty() {
        return Err(Error::Empty("embedding file"));
    }
    Ok(EmbeddingTable::from_rows(words, rows, false))
}

/// Concatenate a general and a domain table over the union vocabulary,
/// zero-filling the side a word is missing from.
pub fn compose_double(general: &EmbeddingTable, domain: &EmbeddingTable) -> EmbeddingTable {
    let mut words = general.words.clone();
    for w in &domain.words {
        if !general.index.contains_key(w) {
            words.push(w.clone());
        }
    }
    let d = general.dim() + domain.dim();
    let rows: Vec<Vec<f64>> = words
        .iter()
        .map(|w| {
            let mut row = Vec::with_capacity(d);
            match general.row_of(w) {
                Some(r) => row.extend_from_slice(general.matrix.row(r)),
                None => row.extend(std::iter::repeat(0.0).take(general.dim())),
            }
            match domain.row_of(w) {
                Some(r) => row.extend_from_slice(domain.matrix.row(r)),
                None => row.extend(std::iter::repeat(0.0).take(domain.dim())),
            }
            row
        })
        .collect();
    EmbeddingTable::from_rows(words, rows, false)
}

/// Trainable table over `vocab` plus a reserved UNK row at index 0, entries
/// i.i.d. uniform on [-0.1, 0.1].
pub fn init_toy(vocab: &[String], d: usize, seed: u64) -> EmbeddingTable {
    assert!(d >= 1, "embedding dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = Tensor::uniform(vocab.len() + 1, d, -0.1, 0.1, &mut rng);
    let index = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i + 1))
        .collect();
    EmbeddingTable {
        words: vocab.to_vec(),
        index,
        matrix,
        trainable: true,
        unk_row: Some(0),
    }
}

/// Stack embedding rows for a sentence into an n x d matrix.
pub fn lookup(table: &EmbeddingTable, sentence: &Sentence) -> Vec<Vec<f64>> {
    sentence
        .tokens
        .iter()
        .map(|tok| match table.resolve(tok) {
            RowRef::Row(r) => table.matrix.row(r).to_vec(),
            RowRef::Zero => vec![0.0; table.dim()],
        })
        .collect()
}
