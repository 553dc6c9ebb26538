//! Annotated-sentence data model, validation, and JSON-lines ingestion.
//!
//! One dataset record per line:
//! `{"tokens":[...],"deps":[[head,dep,label],...],"triplets":[{"aspect":[s,e],"opinion":[s,e],"sentiment":"POS"},...]}`
//!
//! All types are immutable after construction and safe to share across
//! threads. Spans are inclusive `[start, end]` token index ranges.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pre-tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Self {
        Sentence { tokens }
    }

    pub fn from_words(words: &[&str]) -> Self {
        Sentence {
            tokens: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    /// Token count.
    pub fn n(&self) -> usize {
        self.tokens.len()
    }
}

/// A syntactic relation between two tokens, consumed as input data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String)", into = "(usize, usize, String)")]
pub struct DependencyArc {
    pub head: usize,
    pub dependent: usize,
    pub label: String,
}

impl From<(usize, usize, String)> for DependencyArc {
    fn from((head, dependent, label): (usize, usize, String)) -> Self {
        DependencyArc {
            head,
            dependent,
            label,
        }
    }
}

impl From<DependencyArc> for (usize, usize, String) {
    fn from(arc: DependencyArc) -> Self {
        (arc.head, arc.dependent, arc.label)
    }
}

/// Inclusive token index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.start <= idx && idx <= self.end
    }

    pub fn tokens(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// Sentiment polarity attached to an (aspect, opinion) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    #[serde(rename = "NEG")]
    Negative,
    #[serde(rename = "NEU")]
    Neutral,
    #[serde(rename = "POS")]
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn as_str(&self) -> &'static str {
        match self {
            Sentiment::Negative => "NEG",
            Sentiment::Neutral => "NEU",
            Sentiment::Positive => "POS",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An (aspect, opinion, sentiment) annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub aspect: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
}

impl Triplet {
    pub fn new(aspect: Span, opinion: Span, sentiment: Sentiment) -> Self {
        Triplet {
            aspect,
            opinion,
            sentiment,
        }
    }
}

/// A sentence together with its dependency arcs and gold triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub sentence: Sentence,
    pub deps: Vec<DependencyArc>,
    pub triplets: Vec<Triplet>,
}

impl AnnotatedSentence {
    pub fn n(&self) -> usize {
        self.sentence.n()
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    deps: Vec<DependencyArc>,
    triplets: Vec<Triplet>,
}

impl From<Record> for AnnotatedSentence {
    fn from(r: Record) -> Self {
        AnnotatedSentence {
            sentence: Sentence::new(r.tokens),
            deps: r.deps,
            triplets: r.triplets,
        }
    }
}

impl From<&AnnotatedSentence> for Record {
    fn from(s: &AnnotatedSentence) -> Self {
        Record {
            tokens: s.sentence.tokens.clone(),
            deps: s.deps.clone(),
            triplets: s.triplets.clone(),
        }
    }
}

/// Train/val/test portions of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedSentence>,
    pub val: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

/// Check every invariant of an annotated sentence. An empty list means ok.
pub fn validate(s: &AnnotatedSentence) -> Vec<String> {
    let mut violations = Vec::new();
    let n = s.n();

    if n == 0 {
        violations.push("sentence has no tokens".to_string());
        return violations;
    }
    for (k, tok) in s.sentence.tokens.iter().enumerate() {
        if tok.is_empty() {
            violations.push(format!("token {k} is empty"));
        }
    }

    for (k, arc) in s.deps.iter().enumerate() {
        if arc.head >= n || arc.dependent >= n {
            violations.push(format!(
                "arc {k}: arc index out of range (head {}, dependent {}, n {n})",
                arc.head, arc.dependent
            ));
        } else if arc.head == arc.dependent {
            violations.push(format!("arc {k}: head equals dependent ({})", arc.head));
        }
    }

    // role = which side of a triplet a token sits on; each token may serve
    // one role with one span extent across the whole sentence.
    let mut roles: HashMap<usize, (&'static str, Span)> = HashMap::new();
    for (m, t) in s.triplets.iter().enumerate() {
        for (role, span) in [("aspect", t.aspect), ("opinion", t.opinion)] {
            if span.start > span.end || span.end >= n {
                violations.push(format!(
                    "triplet {m}: {role} span [{}, {}] out of range for n {n}",
                    span.start, span.end
                ));
                continue;
            }
            for tok in span.tokens() {
                match roles.get(&tok) {
                    None => {
                        roles.insert(tok, (role, span));
                    }
                    Some((prev_role, prev_span)) => {
                        if *prev_role != role || *prev_span != span {
                            violations.push(format!(
                                "triplet {m}: overlapping span roles at token {tok} \
                                 ({prev_role} [{}, {}] vs {role} [{}, {}])",
                                prev_span.start, prev_span.end, span.start, span.end
                            ));
                        }
                    }
                }
            }
        }
        if t.aspect.end < n && t.opinion.end < n && t.aspect.overlaps(&t.opinion) {
            violations.push(format!("triplet {m}: aspect and opinion spans overlap"));
        }
    }

    let mut pairs: HashMap<(Span, Span), Sentiment> = HashMap::new();
    for (m, t) in s.triplets.iter().enumerate() {
        match pairs.get(&(t.aspect, t.opinion)) {
            None => {
                pairs.insert((t.aspect, t.opinion), t.sentiment);
            }
            Some(prev) if *prev != t.sentiment => {
                violations.push(format!(
                    "triplet {m}: conflicting sentiment for duplicated (aspect, opinion) pair"
                ));
            }
            Some(_) => {
                violations.push(format!("triplet {m}: duplicate triplet"));
            }
        }
    }

    violations
}

/// Parse one JSON-lines file of annotated sentences, validating each record.
pub fn load_sentences(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let sentence = AnnotatedSentence::from(record);
        let violations = validate(&sentence);
        if !violations.is_empty() {
            return Err(Error::Validation {
                index: idx + 1,
                violation: violations.join("; "),
            });
        }
        out.push(sentence);
    }
    Ok(out)
}

/// Write sentences in the dataset format, one JSON object per line.
pub fn save_sentences(path: &Path, sentences: &[AnnotatedSentence]) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for s in sentences {
        let record = Record::from(s);
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Load `train.jsonl`, `val.jsonl`, and `test.jsonl` from a directory.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        train: load_sentences(&dir.join("train.jsonl"))?,
        val: load_sentences(&dir.join("val.jsonl"))?,
        test: load_sentences(&dir.join("test.jsonl"))?,
    })
}

/// Save all three splits into a directory using the conventional names.
pub fn save_dataset(dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_sentences(&dir.join("train.jsonl"), &split.train)?;
    save_sentences(&dir.join("val.jsonl"), &split.val)?;
    save_sentences(&dir.join("test.jsonl"), &split.test)?;
    Ok(())
}

/// Sentence/triplet counts broken down by polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub num_sentences: usize,
    pub num_triplets: usize,
    pub num_neg: usize,
    pub num_neu: usize,
    pub num_pos: usize,
}

pub fn dataset_stats(sentences: &[AnnotatedSentence]) -> Stats {
    let mut stats = Stats {
        num_sentences: sentences.len(),
        num_triplets: 0,
        num_neg: 0,
        num_neu: 0,
        num_pos: 0,
    };
    for s in sentences {
        stats.num_triplets += s.triplets.len();
        for t in &s.triplets {
            match t.sentiment {
                Sentiment::Negative => stats.num_neg += 1,
                Sentiment::Neutral => stats.num_neu += 1,
                Sentiment::Positive => stats.num_pos += 1,
            }
        }
    }
    stats
}
