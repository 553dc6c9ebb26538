//! Full model assembly: embeddings feeding the bidirectional encoder, the
//! graph stack over the sentence's text graph, and the pair scorer; plus the
//! JSON checkpoint format.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::AnnotatedSentence;
use crate::embed::{self, EmbeddingTable, RowRef};
use crate::encoder::{bilstm_encode_tape, BiLstmParams};
use crate::error::{Error, Result};
use crate::grid::encode_grid;
use crate::pairscorer::{score_pairs_tape, PairGrid, PairTensors, ScoredPairs, ScorerParams};
use crate::tape::{Tape, VarId};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::textgraph::{build_graph, gnn_encode_tape, GnnStack, Mode};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// How tokens become input vectors.
#[derive(Debug, Clone)]
pub enum EmbeddingMode {
    /// Trainable table held in the parameter store; row 0 is UNK.
    Toy {
        param: ParamId,
        words: Vec<String>,
        index: HashMap<String, usize>,
    },
    /// Frozen pretrained table outside the parameter store.
    Frozen(EmbeddingTable),
}

impl EmbeddingMode {
    fn dim(&self, store: &ParamStore) -> usize {
        match self {
            EmbeddingMode::Toy { param, .. } => store.get(*param).cols(),
            EmbeddingMode::Frozen(table) => table.dim(),
        }
    }

    /// Case-sensitive with lowercase fallback; see the embed module.
    fn resolve(&self, token: &str) -> TokenSource {
        match self {
            EmbeddingMode::Toy { index, .. } => {
                if let Some(&row) = index.get(token) {
                    return TokenSource::ParamRow(row);
                }
                let lower = token.to_lowercase();
                if lower != token {
                    if let Some(&row) = index.get(&lower) {
                        return TokenSource::ParamRow(row);
                    }
                }
                TokenSource::ParamRow(0)
            }
            EmbeddingMode::Frozen(table) => match table.resolve(token) {
                RowRef::Row(r) => TokenSource::FrozenRow(r),
                RowRef::Zero => TokenSource::Zero,
            },
        }
    }
}

enum TokenSource {
    ParamRow(usize),
    FrozenRow(usize),
    Zero,
}

/// Every trainable tensor of the model plus the shape configuration.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub embedding: EmbeddingMode,
    pub bilstm: BiLstmParams,
    pub gnn: GnnStack,
    pub scorer: ScorerParams,
}

impl ModelParams {
    /// Build a model with a trainable embedding table over `vocab`.
    pub fn new_toy(config: TrainConfig, vocab: &[String]) -> Result<Self> {
        config.validate()?;
        let table = embed::init_toy(vocab, config.embed_dim, config.seed);
        let mut store = ParamStore::new();
        let param = store.alloc("embed.table", table.matrix().clone());
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 1))
            .collect();
        let embedding = EmbeddingMode::Toy {
            param,
            words: vocab.to_vec(),
            index,
        };
        Self::assemble(config, store, embedding)
    }

    /// Build a model over a frozen pretrained table.
    pub fn new_frozen(config: TrainConfig, table: EmbeddingTable) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new();
        Self::assemble(config, store, EmbeddingMode::Frozen(table))
    }

    fn assemble(
        config: TrainConfig,
        mut store: ParamStore,
        embedding: EmbeddingMode,
    ) -> Result<Self> {
        let input_dim = embedding.dim(&store);
        if input_dim == 0 {
            return Err(Error::Dimension("embedding width is zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bilstm = BiLstmParams::init(&mut store, input_dim, config.hidden, &mut rng);
        let gnn = GnnStack::init(
            &mut store,
            config.aggregator,
            config.layers,
            bilstm.output_dim(),
            config.gnn_dim,
            &mut rng,
        );
        let scorer = ScorerParams::init(&mut store, config.gnn_dim, config.pair_hidden, &mut rng);
        Ok(ModelParams {
            config,
            store,
            embedding,
            bilstm,
            gnn,
            scorer,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.dim(&self.store)
    }

    /// Zero every trainable tensor (useful as an analytic baseline).
    pub fn set_all_zero(&mut self) {
        self.store.set_all_zero();
    }

    /// Run the full pipeline on one sentence, recording the computation.
    pub(crate) fn forward_tape(
        &self,
        s: &AnnotatedSentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TapeForward<'_>> {
        let n = s.n();
        if n == 0 {
            return Err(Error::Empty("sentence"));
        }
        let gold = encode_grid(s)?;
        let graph = build_graph(&s.sentence, &s.deps)?;
        let mut tape = Tape::new(&self.store);

        let dropout = self.config.dropout;
        let apply_dropout = mode == Mode::Train && dropout > 0.0;
        let keep = 1.0 - dropout;

        let mut inputs = Vec::with_capacity(n);
        for token in &s.sentence.tokens {
            let mut var = match self.embedding.resolve(token) {
                TokenSource::ParamRow(row) => {
                    let EmbeddingMode::Toy { param, .. } = &self.embedding else {
                        unreachable!("param rows only come from toy tables");
                    };
                    tape.param_row(*param, row)
                }
                TokenSource::FrozenRow(row) => {
                    let EmbeddingMode::Frozen(table) = &self.embedding else {
                        unreachable!("frozen rows only come from frozen tables");
                    };
                    tape.constant(table.matrix().row(row).to_vec())
                }
                TokenSource::Zero => tape.constant(vec![0.0; self.embed_dim()]),
            };
            if apply_dropout {
                let mask = draw_mask(rng, tape.val(var).len(), keep);
                var = tape.mul_const(var, mask);
            }
            inputs.push(var);
        }

        let contextual = bilstm_encode_tape(&mut tape, &self.bilstm, &inputs);
        let nodes = gnn_encode_tape(&mut tape, &self.gnn, &graph, &contextual, mode, rng);

        let scored = if apply_dropout {
            let mut mask_fn = |len: usize| draw_mask(rng, len, keep);
            score_pairs_tape(&mut tape, &self.scorer, &nodes, &gold, Some(&mut mask_fn))
        } else {
            score_pairs_tape(&mut tape, &self.scorer, &nodes, &gold, None)
        };

        Ok(TapeForward { tape, scored, n })
    }

    /// Forward pass returning the per-cell tensors and the summed
    /// cross-entropy loss against the sentence's gold grid.
    pub fn forward(
        &self,
        s: &AnnotatedSentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PairTensors, f64)> {
        let fwd = self.forward_tape(s, mode, rng)?;
        let loss = fwd.loss();
        Ok((fwd.pair_tensors(), loss))
    }

    /// Forward pass returning only the loss.
    pub fn forward_loss(
        &self,
        s: &AnnotatedSentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        Ok(self.forward_tape(s, mode, rng)?.loss())
    }
}

fn draw_mask(rng: &mut ChaCha8Rng, len: usize, keep: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

/// A recorded forward pass, ready for value extraction or backpropagation.
pub(crate) struct TapeForward<'m> {
    pub tape: Tape<'m>,
    pub scored: ScoredPairs,
    pub n: usize,
}

impl TapeForward<'_> {
    pub fn loss(&self) -> f64 {
        self.tape.val(self.scored.loss)[0]
    }

    pub fn pair_tensors(&self) -> PairTensors {
        let grid = |ids: &[VarId]| {
            PairGrid::new(
                self.n,
                ids.iter().map(|&id| self.tape.val(id).to_vec()).collect(),
            )
        };
        let probs = PairGrid::new(
            self.n,
            self.scored
                .cell_loss
                .iter()
                .map(|&id| self.tape.softmax_probs(id).expect("nll node").to_vec())
                .collect(),
        );
        PairTensors {
            pair: grid(&self.scored.pair),
            scores: grid(&self.scored.scores),
            refined_input: grid(&self.scored.refined_input),
            refined: grid(&self.scored.refined),
            probs,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum EmbeddingSection {
    Toy {
        vocab: Vec<String>,
    },
    Frozen {
        vocab: Vec<String>,
        dim: usize,
        matrix: Vec<Vec<f64>>,
    },
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: TrainConfig,
    embedding: EmbeddingSection,
    params: BTreeMap<String, Vec<Vec<f64>>>,
}

impl ModelParams {
    /// Write the whole model as one JSON document.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let embedding = match &self.embedding {
            EmbeddingMode::Toy { words, .. } => EmbeddingSection::Toy {
                vocab: words.clone(),
            },
            EmbeddingMode::Frozen(table) => EmbeddingSection::Frozen {
                vocab: table.words().to_vec(),
                dim: table.dim(),
                matrix: table.matrix().to_nested(),
            },
        };
        let params = self
            .store
            .iter()
            .map(|(_, name, tensor)| (name.to_string(), tensor.to_nested()))
            .collect();
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            embedding,
            params,
        };
        let out = File::create(path)?;
        let mut writer = BufWriter::new(out);
        serde_json::to_writer(&mut writer, &file)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint, rejecting format mismatches.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let parsed: CheckpointFile = serde_json::from_reader(BufReader::new(file))?;
        if parsed.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: parsed.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let mut model = match parsed.embedding {
            EmbeddingSection::Toy { vocab } => ModelParams::new_toy(parsed.config, &vocab)?,
            EmbeddingSection::Frozen { vocab, dim, matrix } => {
                let tensor = Tensor::from_nested(&matrix)
                    .ok_or_else(|| Error::ShapeMismatch("ragged embedding matrix".into()))?;
                if tensor.cols() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "embedding dim {} vs declared {dim}",
                        tensor.cols()
                    )));
                }
                let table = EmbeddingTable::from_parts(vocab, tensor, false, None)?;
                ModelParams::new_frozen(parsed.config, table)?
            }
        };
        let mut seen = 0usize;
        for (name, rows) in &parsed.params {
            let id = model.store.find(name).ok_or_else(|| {
                Error::ShapeMismatch(format!("checkpoint has unknown parameter {name:?}"))
            })?;
            let tensor = Tensor::from_nested(rows)
                .ok_or_else(|| Error::ShapeMismatch(format!("ragged tensor for {name:?}")))?;
            let current = model.store.get(id);
            if tensor.rows() != current.rows() || tensor.cols() != current.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "{name:?}: checkpoint {}x{} vs model {}x{}",
                    tensor.rows(),
                    tensor.cols(),
                    current.rows(),
                    current.cols()
                )));
            }
            *model.store.get_mut(id) = tensor;
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {seen} tensors, model needs {}",
                model.store.len()
            )));
        }
        Ok(model)
    }
}
