//! Optimization and evaluation: exact batch gradients via the tape, Adam
//! updates, the early-stopped training loop, triplet evaluation, and a
//! central-finite-difference gradient checker.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::{AnnotatedSentence, DatasetSplit, Triplet};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grid::{decode_grid, triplet_metrics, EvalMetrics};
use crate::model::ModelParams;
use crate::pairscorer::predict_grid;
use crate::tensor::{Gradients, ParamStore};
use crate::textgraph::Mode;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators shaped like the parameter store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            t: 0,
            m: Gradients::zeros_like(store),
            v: Gradients::zeros_like(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    state: &mut AdamState,
    store: &mut ParamStore,
    grads: &Gradients,
    lr: f64,
) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (id, grad) in grads.iter() {
        let param = store.get_mut(id);
        if param.len() != grad.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for {id:?} has {} coords, parameter has {}",
                grad.len(),
                param.len()
            )));
        }
        let m = state.m.get_mut(id);
        let v = state.v.get_mut(id);
        for k in 0..grad.len() {
            let g = grad.data()[k];
            m.data_mut()[k] = ADAM_BETA1 * m.data()[k] + (1.0 - ADAM_BETA1) * g;
            v.data_mut()[k] = ADAM_BETA2 * v.data()[k] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m.data()[k] / bc1;
            let v_hat = v.data()[k] / bc2;
            param.data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Exact gradients of the mean per-sentence loss over a batch.
pub fn gradients(
    model: &ModelParams,
    batch: &[AnnotatedSentence],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grads = Gradients::zeros_like(&model.store);
    let mut total_loss = 0.0;
    for s in batch {
        let fwd = model.forward_tape(s, mode, rng)?;
        total_loss += fwd.loss();
        fwd.tape.backward(fwd.scored.loss, 1.0, &mut grads);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((grads, total_loss * scale))
}

/// Run the model over sentences (eval mode) and score the decoded triplets
/// against gold.
pub fn evaluate(model: &ModelParams, sentences: &[AnnotatedSentence]) -> Result<EvalMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // untouched in eval mode
    let mut pred: Vec<Vec<Triplet>> = Vec::with_capacity(sentences.len());
    let mut gold: Vec<Vec<Triplet>> = Vec::with_capacity(sentences.len());
    for s in sentences {
        let (tensors, _) = model.forward(s, Mode::Eval, &mut rng)?;
        pred.push(decode_grid(&predict_grid(&tensors.probs)));
        let mut g = s.triplets.clone();
        g.sort_by_key(|t| (t.aspect.start, t.opinion.start));
        gold.push(g);
    }
    triplet_metrics(&pred, &gold)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

/// Where input vectors come from during training.
pub enum EmbeddingSource {
    /// Trainable table over the train-split vocabulary.
    Toy,
    /// Frozen pretrained table.
    Pretrained(EmbeddingTable),
}

fn train_vocab(sentences: &[AnnotatedSentence]) -> Vec<String> {
    let mut words: Vec<String> = sentences
        .iter()
        .flat_map(|s| s.sentence.tokens.iter().cloned())
        .collect();
    words.sort();
    words.dedup();
    words
}

/// Mini-batch training with per-epoch validation and best-F1 early stopping.
///
/// Returns the parameters of the best validation epoch (not the last one)
/// together with the full history. Deterministic for a fixed
/// (config, data, source).
pub fn train_loop(
    config: &TrainConfig,
    split: &DatasetSplit,
    source: EmbeddingSource,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("train split"));
    }

    let mut model = match source {
        EmbeddingSource::Toy => {
            let vocab = train_vocab(&split.train);
            ModelParams::new_toy(config.clone(), &vocab)?
        }
        EmbeddingSource::Pretrained(table) => ModelParams::new_frozen(config.clone(), table)?,
    };

    let mut adam = AdamState::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_f1: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best_params: Option<ModelParams> = None;
    let mut epochs_since_best = 0usize;

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<AnnotatedSentence> =
                chunk.iter().map(|&i| split.train[i].clone()).collect();
            let (grads, loss) = gradients(&model, &batch, Mode::Train, &mut rng)?;
            adam_step(&mut adam, &mut model.store, &grads, config.lr)?;
            epoch_loss += loss * batch.len() as f64;
        }
        epoch_loss /= split.train.len() as f64;

        let val = evaluate(&model, &split.val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_precision: val.precision,
            val_recall: val.recall,
            val_f1: val.f1,
        });

        if val.f1 > history.best_val_f1 {
            history.best_val_f1 = val.f1;
            history.best_epoch = epoch;
            best_params = Some(model.clone());
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best > config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }

    let best = best_params.expect("at least one epoch ran");
    Ok((best, history))
}

/// Compare analytic gradients against central finite differences on
/// `sample_size` randomly chosen parameter coordinates. Runs the forward
/// pass in eval mode (no dropout, fixed neighbor order) at 64-bit precision
/// and returns the worst relative error.
pub fn grad_check(
    model: &mut ModelParams,
    s: &AnnotatedSentence,
    eps: f64,
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let batch = [s.clone()];
    let (grads, _) = gradients(model, &batch, Mode::Eval, &mut dummy)?;

    let total = model.store.total_coords();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sample_size {
        let k = rng.gen_range(0..total);
        let (id, off) = model.store.coord(k);
        let original = model.store.get(id).data()[off];

        model.store.get_mut(id).data_mut()[off] = original + eps;
        let up = model.forward_loss(s, Mode::Eval, &mut dummy)?;
        model.store.get_mut(id).data_mut()[off] = original - eps;
        let down = model.forward_loss(s, Mode::Eval, &mut dummy)?;
        model.store.get_mut(id).data_mut()[off] = original;

        let fd = (up - down) / (2.0 * eps);
        let analytic = grads.get(id).data()[off];
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate_synthetic;
    use crate::tensor::Tensor;
    use crate::textgraph::Aggregator;

    fn tiny_config(aggregator: Aggregator, layers: usize) -> TrainConfig {
        TrainConfig {
            embed_dim: 6,
            hidden: 4,
            gnn_dim: 8,
            pair_hidden: 5,
            layers,
            aggregator,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.alloc("w", Tensor::uniform(2, 2, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
        let before = store.get(store.find("w").unwrap()).clone();
        let grads = Gradients::zeros_like(&store);
        let mut adam = AdamState::new(&store);
        adam_step(&mut adam, &mut store, &grads, 0.01).unwrap();
        assert_eq!(store.get(store.find("w").unwrap()), &before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_matches_hand_oracle() {
        let mut store = ParamStore::new();
        let id = store.alloc("w", Tensor::zeros(1, 1));
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).data_mut()[0] = 1.0;
        let mut adam = AdamState::new(&store);
        let lr = 0.001;
        adam_step(&mut adam, &mut store, &grads, lr).unwrap();

        // hand oracle for t = 1, g = 1
        let g = 1.0f64;
        let delta = -lr * (g * (1.0 - ADAM_BETA1) / (1.0 - ADAM_BETA1))
            / ((g * g * (1.0 - ADAM_BETA2) / (1.0 - ADAM_BETA2)).sqrt() + ADAM_EPS);
        let got = store.get(id).data()[0];
        assert!((got - delta).abs() < 1e-15, "{got} vs {delta}");
        assert!((got + lr).abs() < 1e-6); // approximately -lr

        // second identical gradient, hand-tracked moments
        adam_step(&mut adam, &mut store, &grads, lr).unwrap();
        let m2 = 0.9 * 0.1 + 0.1; // beta1 m1 + (1-beta1) g
        let v2 = 0.999 * 0.001 + 0.001;
        let bc1 = 1.0 - ADAM_BETA1.powi(2);
        let bc2 = 1.0 - ADAM_BETA2.powi(2);
        let delta2 = -lr * (m2 / bc1) / ((v2 / bc2).sqrt() + ADAM_EPS);
        let got2 = store.get(id).data()[0];
        assert!((got2 - (delta + delta2)).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut store = ParamStore::new();
        store.alloc("w", Tensor::zeros(2, 2));
        let mut other = ParamStore::new();
        other.alloc("w", Tensor::zeros(3, 3));
        let grads = Gradients::zeros_like(&other);
        let mut adam = AdamState::new(&store);
        assert!(matches!(
            adam_step(&mut adam, &mut store, &grads, 0.1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gradients_reject_empty_batch() {
        let model =
            ModelParams::new_toy(tiny_config(Aggregator::Mean, 1), &["a".to_string()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            gradients(&model, &[], Mode::Train, &mut rng),
            Err(Error::Empty("batch"))
        ));
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let vocab: Vec<String> = ["the", "food", "was", "great", "spare"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let model = ModelParams::new_toy(tiny_config(Aggregator::Mean, 1), &vocab).unwrap();
        let s = generate_synthetic(1, 1).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (grads, _) = gradients(&model, &[s.clone()], Mode::Eval, &mut rng).unwrap();
        let embed = model.store.find("embed.table").unwrap();
        let g = grads.get(embed);

        // rows of words absent from the sentence stay zero; the sentence's
        // tokens are OOV for this vocab, so only UNK gets gradient
        assert!(g.row(0).iter().any(|&v| v != 0.0), "UNK row should learn");
        for row in 1..g.rows() {
            let word = &vocab[row - 1];
            if !s.sentence.tokens.contains(word) {
                assert!(g.row(row).iter().all(|&v| v == 0.0), "row {word} nonzero");
            }
        }
    }

    #[test]
    fn grad_check_passes_for_both_aggregators_and_depths() {
        let s = generate_synthetic(5, 3).remove(0);
        for aggregator in [Aggregator::Mean, Aggregator::Lstm] {
            for layers in [1, 2, 3] {
                let vocab = train_vocab(&[s.clone()]);
                let mut model =
                    ModelParams::new_toy(tiny_config(aggregator, layers), &vocab).unwrap();
                let err = grad_check(&mut model, &s, 1e-4, 60, 7).unwrap();
                assert!(
                    err < 1e-4,
                    "{aggregator:?} x {layers} layers: max rel err {err}"
                );
            }
        }
    }

    #[test]
    fn train_loop_smoke_is_deterministic_and_early_stops() {
        let sentences = generate_synthetic(2, 6);
        let split = DatasetSplit {
            train: sentences.clone(),
            val: sentences.clone(),
            test: sentences,
        };
        let config = TrainConfig {
            max_epochs: 4,
            patience: 20,
            batch_size: 3,
            ..tiny_config(Aggregator::Mean, 1)
        };
        let (_, h1) = train_loop(&config, &split, EmbeddingSource::Toy).unwrap();
        let (_, h2) = train_loop(&config, &split, EmbeddingSource::Toy).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.epochs.len(), 4);

        // patience 0 stops right after the first epoch without improvement
        let config = TrainConfig {
            max_epochs: 50,
            patience: 0,
            ..config
        };
        let (_, h) = train_loop(&config, &split, EmbeddingSource::Toy).unwrap();
        assert!(h.stopped_early);
        let best = h.best_epoch;
        assert_eq!(h.epochs.len(), best + 1);
    }

    #[test]
    fn train_loop_rejects_empty_train_split() {
        let split = DatasetSplit {
            train: vec![],
            val: vec![],
            test: vec![],
        };
        assert!(matches!(
            train_loop(&TrainConfig::default(), &split, EmbeddingSource::Toy),
            Err(Error::Empty("train split"))
        ));
    }

    #[test]
    fn zero_model_predicts_nothing() {
        let sentences = generate_synthetic(3, 5);
        let vocab = train_vocab(&sentences);
        let mut model = ModelParams::new_toy(tiny_config(Aggregator::Mean, 1), &vocab).unwrap();
        model.set_all_zero();
        let metrics = evaluate(&model, &sentences).unwrap();
        assert_eq!(metrics.predicted, 0);
        assert_eq!(metrics.precision, 0.0);
        assert_eq!(metrics.recall, 0.0);
        assert_eq!(metrics.f1, 0.0);
    }
}
