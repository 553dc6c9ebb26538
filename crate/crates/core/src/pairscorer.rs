//! Word-pair scoring: pair representations, initial six-way scores, the
//! single-pass max-pool inference step, final classification, and the
//! summed cross-entropy grid loss.
//!
//! The inference step runs exactly once per forward pass; a process-wide
//! counter records every execution so tests can assert the single-pass
//! property.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::grid::{GridTag, TagGrid};
use crate::error::{Error, Result};
use crate::tape::{stable_softmax, Tape, VarId};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::tri;

static INFERENCE_PASSES: AtomicU64 = AtomicU64::new(0);

/// Total number of inference passes executed by this process.
pub fn inference_pass_count() -> u64 {
    INFERENCE_PASSES.load(Ordering::Relaxed)
}

fn count_inference_pass() {
    INFERENCE_PASSES.fetch_add(1, Ordering::Relaxed);
}

/// Scoring parameters: the initial six-way scorer, the refinement map over
/// `[r_ij ; pooled_i ; pooled_j ; z_ij]`, and the final classifier.
#[derive(Debug, Clone)]
pub struct ScorerParams {
    pub score_w: ParamId,
    pub score_b: ParamId,
    pub refine_w: ParamId,
    pub refine_b: ParamId,
    pub classify_w: ParamId,
    pub classify_b: ParamId,
    /// Node representation width; pairs are twice this.
    pub node_dim: usize,
    /// Refined feature width.
    pub pair_hidden: usize,
}

impl ScorerParams {
    pub fn init(
        store: &mut ParamStore,
        node_dim: usize,
        pair_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let pair_dim = 2 * node_dim;
        let refined_in = pair_dim + 3 * GridTag::COUNT;
        ScorerParams {
            score_w: store.alloc(
                "scorer.score.w",
                Tensor::uniform(GridTag::COUNT, pair_dim, -0.08, 0.08, rng),
            ),
            score_b: store.alloc("scorer.score.b", Tensor::vector(GridTag::COUNT)),
            refine_w: store.alloc(
                "scorer.refine.w",
                Tensor::uniform(pair_hidden, refined_in, -0.08, 0.08, rng),
            ),
            refine_b: store.alloc("scorer.refine.b", Tensor::vector(pair_hidden)),
            classify_w: store.alloc(
                "scorer.classify.w",
                Tensor::uniform(GridTag::COUNT, pair_hidden, -0.08, 0.08, rng),
            ),
            classify_b: store.alloc("scorer.classify.b", Tensor::vector(GridTag::COUNT)),
            node_dim,
            pair_hidden,
        }
    }
}

/// Upper-triangular grid of per-cell vectors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrid {
    n: usize,
    cells: Vec<Vec<f64>>,
}

impl PairGrid {
    pub fn new(n: usize, cells: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(cells.len(), tri::cell_count(n));
        PairGrid { n, cells }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        &self.cells[tri::index(self.n, i, j)]
    }

    pub fn cells(&self) -> &[Vec<f64>] {
        &self.cells
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[f64])> {
        tri::cells(self.n).zip(self.cells.iter().map(Vec::as_slice))
    }
}

/// All per-sentence grids produced by one forward pass.
#[derive(Debug, Clone)]
pub struct PairTensors {
    /// Pair representations `[node_i ; node_j]`.
    pub pair: PairGrid,
    /// Initial six-way scores.
    pub scores: PairGrid,
    /// Refined inputs `[pair ; pooled_i ; pooled_j ; scores]`.
    pub refined_input: PairGrid,
    /// Refined features.
    pub refined: PairGrid,
    /// Final six-way probabilities.
    pub probs: PairGrid,
}

/// Pair representation: concatenate the node vectors of each cell.
pub fn pair_repr(nodes: &[Vec<f64>]) -> PairGrid {
    let n = nodes.len();
    let cells = tri::cells(n)
        .map(|(i, j)| {
            let mut v = Vec::with_capacity(nodes[i].len() * 2);
            v.extend_from_slice(&nodes[i]);
            v.extend_from_slice(&nodes[j]);
            v
        })
        .collect();
    PairGrid::new(n, cells)
}

/// Initial scores: one affine map per cell, no normalization.
pub fn initial_scores(store: &ParamStore, p: &ScorerParams, pairs: &PairGrid) -> PairGrid {
    let w = store.get(p.score_w);
    let b = store.get(p.score_b);
    let cells = pairs
        .cells()
        .iter()
        .map(|r| {
            let mut z = w.matvec(r);
            for (v, bias) in z.iter_mut().zip(b.data()) {
                *v += bias;
            }
            z
        })
        .collect();
    PairGrid::new(pairs.n(), cells)
}

/// The cell set pooled for token `i`: its column above the diagonal and its
/// row from the diagonal rightwards.
pub fn rowcol_cells(n: usize, i: usize) -> Vec<(usize, usize)> {
    debug_assert!(i < n);
    let mut cells: Vec<(usize, usize)> = (0..=i).map(|k| (k, i)).collect();
    cells.extend((i + 1..n).map(|k| (i, k)));
    cells
}

/// Elementwise maximum of the scores over token `i`'s row/column cell set.
pub fn rowcol_maxpool(scores: &PairGrid, i: usize) -> Vec<f64> {
    let cells = rowcol_cells(scores.n(), i);
    let mut out = scores.get(cells[0].0, cells[0].1).to_vec();
    for &(a, b) in &cells[1..] {
        for (acc, v) in out.iter_mut().zip(scores.get(a, b)) {
            if *v > *acc {
                *acc = *v;
            }
        }
    }
    out
}

/// One inference iteration: pool row/column maxima, refine every cell, and
/// classify with a softmax. Returns the refined features and probabilities.
pub fn inference_pass(
    store: &ParamStore,
    p: &ScorerParams,
    pairs: &PairGrid,
    scores: &PairGrid,
) -> (PairGrid, PairGrid) {
    count_inference_pass();
    let n = pairs.n();
    let pooled: Vec<Vec<f64>> = (0..n).map(|i| rowcol_maxpool(scores, i)).collect();
    let refine_w = store.get(p.refine_w);
    let refine_b = store.get(p.refine_b);
    let classify_w = store.get(p.classify_w);
    let classify_b = store.get(p.classify_b);

    let mut refined = Vec::with_capacity(tri::cell_count(n));
    let mut probs = Vec::with_capacity(tri::cell_count(n));
    for (i, j) in tri::cells(n) {
        let mut input = Vec::new();
        input.extend_from_slice(pairs.get(i, j));
        input.extend_from_slice(&pooled[i]);
        input.extend_from_slice(&pooled[j]);
        input.extend_from_slice(scores.get(i, j));

        let mut g = refine_w.matvec(&input);
        for (v, bias) in g.iter_mut().zip(refine_b.data()) {
            *v += bias;
        }
        let mut logits = classify_w.matvec(&g);
        for (v, bias) in logits.iter_mut().zip(classify_b.data()) {
            *v += bias;
        }
        probs.push(stable_softmax(&logits));
        refined.push(g);
    }
    (PairGrid::new(n, refined), PairGrid::new(n, probs))
}

/// Per-cell argmax readout; exact ties fall to the lowest canonical tag
/// index, so an all-tied cell reads N.
pub fn predict_grid(probs: &PairGrid) -> TagGrid {
    let mut grid = TagGrid::all_n(probs.n());
    for ((i, j), p) in probs.iter() {
        let mut best = 0;
        for (k, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = k;
            }
        }
        grid.set(i, j, GridTag::from_index(best).expect("six-way cell"));
    }
    grid
}

/// Summed cross-entropy over all cells: `-sum log p[gold]`.
pub fn grid_loss(probs: &PairGrid, gold: &TagGrid) -> Result<f64> {
    if probs.n() != gold.n() {
        return Err(Error::Dimension(format!(
            "probability grid over {} tokens vs gold grid over {}",
            probs.n(),
            gold.n()
        )));
    }
    let mut loss = 0.0;
    for ((i, j), p) in probs.iter() {
        loss -= p[gold.get(i, j).index()].ln();
    }
    Ok(loss)
}

/// Recorded pair pipeline for one sentence.
pub struct ScoredPairs {
    pub pair: Vec<VarId>,
    pub scores: Vec<VarId>,
    pub refined_input: Vec<VarId>,
    pub refined: Vec<VarId>,
    /// Per-cell loss nodes (hold the softmax probabilities).
    pub cell_loss: Vec<VarId>,
    pub loss: VarId,
}

/// Record pair scoring, the single inference pass, and the per-cell loss
/// against `gold`. `pair_dropout` multiplies each pair representation with a
/// pre-drawn mask (training only).
pub fn score_pairs_tape(
    tape: &mut Tape,
    p: &ScorerParams,
    nodes: &[VarId],
    gold: &TagGrid,
    mut pair_dropout: Option<&mut dyn FnMut(usize) -> Vec<f64>>,
) -> ScoredPairs {
    let n = nodes.len();
    debug_assert_eq!(gold.n(), n);

    let mut pair = Vec::with_capacity(tri::cell_count(n));
    let mut scores = Vec::with_capacity(tri::cell_count(n));
    for (i, j) in tri::cells(n) {
        let mut r = tape.concat(&[nodes[i], nodes[j]]);
        if let Some(mask) = pair_dropout.as_mut() {
            let m = mask(tape.val(r).len());
            r = tape.mul_const(r, m);
        }
        let wx = tape.matvec(p.score_w, r);
        let b = tape.param_vec(p.score_b);
        let z = tape.add(wx, b);
        pair.push(r);
        scores.push(z);
    }

    // single inference pass
    count_inference_pass();
    let pooled: Vec<VarId> = (0..n)
        .map(|i| {
            let members: Vec<VarId> = rowcol_cells(n, i)
                .into_iter()
                .map(|(a, b)| scores[tri::index(n, a, b)])
                .collect();
            tape.max_elem(&members)
        })
        .collect();

    let mut refined_input = Vec::with_capacity(tri::cell_count(n));
    let mut refined = Vec::with_capacity(tri::cell_count(n));
    let mut cell_loss = Vec::with_capacity(tri::cell_count(n));
    for (k, (i, j)) in tri::cells(n).enumerate() {
        let rt = tape.concat(&[pair[k], pooled[i], pooled[j], scores[k]]);
        let wx = tape.matvec(p.refine_w, rt);
        let b = tape.param_vec(p.refine_b);
        let g = tape.add(wx, b);
        let cx = tape.matvec(p.classify_w, g);
        let cb = tape.param_vec(p.classify_b);
        let logits = tape.add(cx, cb);
        let nll = tape.nll(logits, gold.get(i, j).index());
        refined_input.push(rt);
        refined.push(g);
        cell_loss.push(nll);
    }
    let loss = tape.sum_scalars(&cell_loss);
    ScoredPairs {
        pair,
        scores,
        refined_input,
        refined,
        cell_loss,
        loss,
    }
}
