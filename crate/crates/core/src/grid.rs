//! Word-pair grid tagging: encoding triplets into an upper-triangular tag
//! grid, decoding tags back into triplets, an exhaustive decoding oracle for
//! small grids, and exact-match triplet metrics.
//!
//! Cells are stored at normalized coordinates `(i, j)` with `i <= j`; the
//! cell for an unordered word pair always lives at (min, max).

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Sentiment, Span, Triplet};
use crate::error::{Error, Result};
use crate::tri;

/// The six word-pair tags in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridTag {
    /// No relation.
    N,
    /// Both words belong to the same aspect span.
    A,
    /// Both words belong to the same opinion span.
    O,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "NEU")]
    Neu,
    #[serde(rename = "POS")]
    Pos,
}

impl GridTag {
    pub const COUNT: usize = 6;
    pub const ALL: [GridTag; 6] = [
        GridTag::N,
        GridTag::A,
        GridTag::O,
        GridTag::Neg,
        GridTag::Neu,
        GridTag::Pos,
    ];

    pub fn index(self) -> usize {
        match self {
            GridTag::N => 0,
            GridTag::A => 1,
            GridTag::O => 2,
            GridTag::Neg => 3,
            GridTag::Neu => 4,
            GridTag::Pos => 5,
        }
    }

    pub fn from_index(idx: usize) -> Option<GridTag> {
        GridTag::ALL.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GridTag::N => "N",
            GridTag::A => "A",
            GridTag::O => "O",
            GridTag::Neg => "NEG",
            GridTag::Neu => "NEU",
            GridTag::Pos => "POS",
        }
    }

    pub fn parse(s: &str) -> Option<GridTag> {
        GridTag::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    pub fn sentiment(self) -> Option<Sentiment> {
        match self {
            GridTag::Neg => Some(Sentiment::Negative),
            GridTag::Neu => Some(Sentiment::Neutral),
            GridTag::Pos => Some(Sentiment::Positive),
            _ => None,
        }
    }
}

impl From<Sentiment> for GridTag {
    fn from(s: Sentiment) -> Self {
        match s {
            Sentiment::Negative => GridTag::Neg,
            Sentiment::Neutral => GridTag::Neu,
            Sentiment::Positive => GridTag::Pos,
        }
    }
}

/// Upper-triangular grid of tags over the word pairs of one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagGrid {
    n: usize,
    cells: Vec<GridTag>,
}

impl TagGrid {
    /// All-N grid over `n` tokens.
    pub fn all_n(n: usize) -> Self {
        assert!(n >= 1, "grid needs at least one token");
        TagGrid {
            n,
            cells: vec![GridTag::N; tri::cell_count(n)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> GridTag {
        self.cells[tri::index(self.n, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, tag: GridTag) {
        self.cells[tri::index(self.n, i, j)] = tag;
    }

    /// Cells in canonical order, paired with their coordinates.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), GridTag)> + '_ {
        tri::cells(self.n).zip(self.cells.iter().copied())
    }
}

#[derive(Serialize, Deserialize)]
struct GridWire {
    n: usize,
    cells: Vec<(usize, usize, String)>,
}

impl TagGrid {
    /// JSON wire form: `{"n":..,"cells":[[i,j,"TAG"],...]}` listing only
    /// non-N cells in canonical order.
    pub fn to_json(&self) -> String {
        let cells = self
            .iter()
            .filter(|(_, tag)| *tag != GridTag::N)
            .map(|((i, j), tag)| (i, j, tag.as_str().to_string()))
            .collect();
        serde_json::to_string(&GridWire { n: self.n, cells }).expect("grid serialization")
    }

    pub fn from_json(text: &str) -> Result<TagGrid> {
        let wire: GridWire = serde_json::from_str(text)?;
        if wire.n == 0 {
            return Err(Error::Validation {
                index: 0,
                violation: "grid with n = 0".into(),
            });
        }
        let mut grid = TagGrid::all_n(wire.n);
        for (i, j, name) in &wire.cells {
            if *i > *j || *j >= wire.n {
                return Err(Error::Index(format!("grid cell ({i}, {j}) for n {}", wire.n)));
            }
            let tag = GridTag::parse(name)
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    msg: format!("unknown tag {name:?}"),
                })?;
            grid.set(*i, *j, tag);
        }
        Ok(grid)
    }
}

/// Micro-averaged precision/recall/F1 with the raw match counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

impl EvalMetrics {
    fn from_counts(predicted: usize, gold: usize, correct: usize) -> Self {
        let precision = if predicted > 0 {
            correct as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if gold > 0 {
            correct as f64 / gold as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalMetrics {
            precision,
            recall,
            f1,
            predicted,
            gold,
            correct,
        }
    }
}

/// Encode gold triplets into a tag grid.
///
/// Word pairs within one aspect span get A, within one opinion span get O,
/// and every (aspect token, opinion token) pair of a triplet gets the
/// triplet's sentiment tag at normalized coordinates. Everything else is N.
pub fn encode_grid(s: &AnnotatedSentence) -> Result<TagGrid> {
    let n = s.n();
    let mut grid = TagGrid::all_n(n);
    let mut put = |i: usize, j: usize, tag: GridTag| -> Result<()> {
        let (i, j) = (i.min(j), i.max(j));
        let existing = grid.get(i, j);
        if existing != GridTag::N && existing != tag {
            return Err(Error::Conflict {
                i,
                j,
                existing: existing.as_str(),
                incoming: tag.as_str(),
            });
        }
        grid.set(i, j, tag);
        Ok(())
    };

    for t in &s.triplets {
        for p in t.aspect.tokens() {
            for q in t.aspect.tokens() {
                if p <= q {
                    put(p, q, GridTag::A)?;
                }
            }
        }
        for p in t.opinion.tokens() {
            for q in t.opinion.tokens() {
                if p <= q {
                    put(p, q, GridTag::O)?;
                }
            }
        }
        for p in t.aspect.tokens() {
            for q in t.opinion.tokens() {
                put(p, q, GridTag::from(t.sentiment))?;
            }
        }
    }
    Ok(grid)
}

/// Maximal runs of `tag` on the diagonal.
fn diagonal_runs(grid: &TagGrid, tag: GridTag) -> Vec<Span> {
    let n = grid.n();
    let mut runs = Vec::new();
    let mut start = None;
    for i in 0..n {
        if grid.get(i, i) == tag {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            runs.push(Span::new(s, i - 1));
        }
    }
    if let Some(s) = start {
        runs.push(Span::new(s, n - 1));
    }
    runs
}

/// Count sentiment tags inside the (aspect, opinion) rectangle and pick a
/// winner, or `None` when the rectangle holds no sentiment evidence.
fn rectangle_sentiment(grid: &TagGrid, aspect: Span, opinion: Span) -> Option<Sentiment> {
    let mut counts = [0usize; 3]; // NEG, NEU, POS
    for p in aspect.tokens() {
        for q in opinion.tokens() {
            let (i, j) = (p.min(q), p.max(q));
            match grid.get(i, j) {
                GridTag::Neg => counts[0] += 1,
                GridTag::Neu => counts[1] += 1,
                GridTag::Pos => counts[2] += 1,
                _ => {}
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return None;
    }
    // Most frequent sentiment; ties fall to the earlier entry in the
    // positive > neutral > negative order.
    let ordered = [
        (Sentiment::Positive, counts[2]),
        (Sentiment::Neutral, counts[1]),
        (Sentiment::Negative, counts[0]),
    ];
    let mut winner = ordered[0];
    for cand in &ordered[1..] {
        if cand.1 > winner.1 {
            winner = *cand;
        }
    }
    Some(winner.0)
}

fn sort_triplets(triplets: &mut [Triplet]) {
    triplets.sort_by_key(|t| (t.aspect.start, t.opinion.start));
}

/// Decode a tag grid into triplets.
///
/// Aspects are maximal diagonal runs of A, opinions maximal runs of O; each
/// (aspect, opinion) pair whose rectangle contains at least one sentiment tag
/// yields a triplet with the majority sentiment. Output is sorted by
/// (aspect start, opinion start).
pub fn decode_grid(grid: &TagGrid) -> Vec<Triplet> {
    let aspects = diagonal_runs(grid, GridTag::A);
    let opinions = diagonal_runs(grid, GridTag::O);
    let mut out = Vec::new();
    for &aspect in &aspects {
        for &opinion in &opinions {
            if let Some(sentiment) = rectangle_sentiment(grid, aspect, opinion) {
                out.push(Triplet::new(aspect, opinion, sentiment));
            }
        }
    }
    sort_triplets(&mut out);
    out
}

/// Exhaustive decoding oracle: enumerate every span pair, qualify spans by
/// scanning their diagonal cells and the flanking cells for maximality, and
/// apply the same sentiment rule. Only for grids with `n <= 10`.
pub fn oracle_decode(grid: &TagGrid) -> Result<Vec<Triplet>> {
    let n = grid.n();
    if n > 10 {
        return Err(Error::Size(n));
    }
    let qualifies = |span: Span, tag: GridTag| {
        for i in span.tokens() {
            if grid.get(i, i) != tag {
                return false;
            }
        }
        if span.start > 0 && grid.get(span.start - 1, span.start - 1) == tag {
            return false;
        }
        if span.end + 1 < n && grid.get(span.end + 1, span.end + 1) == tag {
            return false;
        }
        true
    };

    let mut out = Vec::new();
    for a_start in 0..n {
        for a_end in a_start..n {
            let aspect = Span::new(a_start, a_end);
            if !qualifies(aspect, GridTag::A) {
                continue;
            }
            for o_start in 0..n {
                for o_end in o_start..n {
                    let opinion = Span::new(o_start, o_end);
                    if !qualifies(opinion, GridTag::O) {
                        continue;
                    }
                    if let Some(sentiment) = rectangle_sentiment(grid, aspect, opinion) {
                        out.push(Triplet::new(aspect, opinion, sentiment));
                    }
                }
            }
        }
    }
    sort_triplets(&mut out);
    Ok(out)
}

/// Micro-averaged exact-match triplet metrics over aligned sentence lists.
///
/// A predicted triplet is correct only when a not-yet-matched gold triplet
/// has the same aspect span, opinion span, and sentiment.
pub fn triplet_metrics(pred: &[Vec<Triplet>], gold: &[Vec<Triplet>]) -> Result<EvalMetrics> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut predicted = 0;
    let mut gold_total = 0;
    let mut correct = 0;
    for (p_list, g_list) in pred.iter().zip(gold) {
        predicted += p_list.len();
        gold_total += g_list.len();
        let mut matched = vec![false; g_list.len()];
        for p in p_list {
            if let Some(k) = g_list
                .iter()
                .enumerate()
                .position(|(k, g)| !matched[k] && g == p)
            {
                matched[k] = true;
                correct += 1;
            }
        }
    }
    Ok(EvalMetrics::from_counts(predicted, gold_total, correct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annotated(words: &[&str], triplets: Vec<Triplet>) -> AnnotatedSentence {
        AnnotatedSentence {
            sentence: Sentence::from_words(words),
            deps: vec![],
            triplets,
        }
    }

    /// The worked example: a 10-token review with one single-token pair and
    /// one multi-word pair.
    fn waiters_sentence() -> AnnotatedSentence {
        annotated(
            &[
                "waiters", "are", "friendly", "and", "the", "fruit", "salad", "is", "so", "so",
            ],
            vec![
                Triplet::new(Span::new(0, 0), Span::new(2, 2), Sentiment::Positive),
                Triplet::new(Span::new(5, 6), Span::new(8, 9), Sentiment::Neutral),
            ],
        )
    }

    #[test]
    fn encode_worked_example_cells() {
        let grid = encode_grid(&waiters_sentence()).unwrap();
        assert_eq!(grid.get(5, 5), GridTag::A);
        assert_eq!(grid.get(6, 6), GridTag::A);
        assert_eq!(grid.get(5, 6), GridTag::A);
        assert_eq!(grid.get(0, 2), GridTag::Pos);
        assert_eq!(grid.get(0, 0), GridTag::A);
        assert_eq!(grid.get(2, 2), GridTag::O);
        assert_eq!(grid.get(8, 9), GridTag::O);
        assert_eq!(grid.get(5, 8), GridTag::Neu);
        assert_eq!(grid.get(6, 9), GridTag::Neu);
        assert_eq!(grid.get(0, 1), GridTag::N);
    }

    #[test]
    fn encode_no_triplets_is_all_n() {
        let grid = encode_grid(&annotated(&["just", "words"], vec![])).unwrap();
        assert!(grid.iter().all(|(_, tag)| tag == GridTag::N));
    }

    #[test]
    fn encode_one_to_many_shares_opinion_column() {
        // "we love the food and drinks": one opinion, two aspects.
        let s = annotated(
            &["we", "love", "the", "food", "and", "drinks"],
            vec![
                Triplet::new(Span::new(3, 3), Span::new(1, 1), Sentiment::Positive),
                Triplet::new(Span::new(5, 5), Span::new(1, 1), Sentiment::Positive),
            ],
        );
        let grid = encode_grid(&s).unwrap();
        assert_eq!(grid.get(1, 3), GridTag::Pos);
        assert_eq!(grid.get(1, 5), GridTag::Pos);
        assert_eq!(grid.get(3, 3), GridTag::A);
        assert_eq!(grid.get(5, 5), GridTag::A);
        assert_eq!(grid.get(1, 1), GridTag::O);
        // every other cell is N
        let tagged = grid.iter().filter(|(_, t)| *t != GridTag::N).count();
        assert_eq!(tagged, 5);
    }

    #[test]
    fn decode_all_n_is_empty() {
        assert!(decode_grid(&TagGrid::all_n(4)).is_empty());
        assert_eq!(oracle_decode(&TagGrid::all_n(4)).unwrap(), vec![]);
    }

    #[test]
    fn decode_recovers_worked_example() {
        let s = waiters_sentence();
        let grid = encode_grid(&s).unwrap();
        let decoded = decode_grid(&grid);
        assert_eq!(decoded, s.triplets);
    }

    #[test]
    fn decode_tie_prefers_positive_then_neutral() {
        // Aspect [0,0], opinion [2,3]; rectangle holds one POS and one NEU.
        let mut grid = TagGrid::all_n(4);
        grid.set(0, 0, GridTag::A);
        grid.set(2, 2, GridTag::O);
        grid.set(3, 3, GridTag::O);
        grid.set(0, 2, GridTag::Pos);
        grid.set(0, 3, GridTag::Neu);
        let decoded = decode_grid(&grid);
        assert_eq!(decoded.len(), 1);
        assert_eq!(decoded[0].sentiment, Sentiment::Positive);

        // NEU vs NEG tie goes to NEU.
        grid.set(0, 2, GridTag::Neg);
        let decoded = decode_grid(&grid);
        assert_eq!(decoded[0].sentiment, Sentiment::Neutral);
    }

    #[test]
    fn rectangle_without_sentiment_yields_nothing() {
        let mut grid = TagGrid::all_n(3);
        grid.set(0, 0, GridTag::A);
        grid.set(2, 2, GridTag::O);
        // rectangle cell (0,2) stays N
        assert!(decode_grid(&grid).is_empty());
        // even when the rectangle carries a stray A
        grid.set(0, 2, GridTag::A);
        assert!(decode_grid(&grid).is_empty());
    }

    #[test]
    fn oracle_hand_case() {
        let mut grid = TagGrid::all_n(3);
        grid.set(0, 0, GridTag::A);
        grid.set(1, 1, GridTag::A);
        grid.set(2, 2, GridTag::O);
        grid.set(0, 2, GridTag::Pos);
        grid.set(1, 2, GridTag::Pos);
        let expected = vec![Triplet::new(
            Span::new(0, 1),
            Span::new(2, 2),
            Sentiment::Positive,
        )];
        assert_eq!(oracle_decode(&grid).unwrap(), expected);
        assert_eq!(decode_grid(&grid), expected);
    }

    #[test]
    fn oracle_rejects_large_grids() {
        assert!(matches!(
            oracle_decode(&TagGrid::all_n(11)),
            Err(Error::Size(11))
        ));
    }

    pub(crate) fn random_grid(n: usize, rng: &mut ChaCha8Rng) -> TagGrid {
        let mut grid = TagGrid::all_n(n);
        for (i, j) in tri::cells(n).collect::<Vec<_>>() {
            let tag = GridTag::from_index(rng.gen_range(0..GridTag::COUNT)).unwrap();
            grid.set(i, j, tag);
        }
        grid
    }

    #[test]
    fn decoder_matches_oracle_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..2_000 {
            let n = rng.gen_range(1..=8);
            let grid = random_grid(n, &mut rng);
            assert_eq!(decode_grid(&grid), oracle_decode(&grid).unwrap());
        }
    }

    #[test]
    fn decoded_aspects_and_opinions_never_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..500 {
            let n = rng.gen_range(1..=8);
            let grid = random_grid(n, &mut rng);
            let triplets = decode_grid(&grid);
            for t in &triplets {
                for u in &triplets {
                    assert!(!t.aspect.overlaps(&u.opinion));
                }
            }
        }
    }

    #[test]
    fn roundtrip_over_synthetic_corpus() {
        for s in crate::synthetic::generate_synthetic(7, 120) {
            let grid = encode_grid(&s).unwrap();
            let mut gold = s.triplets.clone();
            gold.sort_by_key(|t| (t.aspect.start, t.opinion.start));
            assert_eq!(decode_grid(&grid), gold, "tokens {:?}", s.sentence.tokens);
        }
    }

    #[test]
    fn sentiment_tiebreak_is_total() {
        // Every count profile yields exactly one deterministic winner.
        for neg in 0..3 {
            for neu in 0..3 {
                for pos in 0..3 {
                    if neg + neu + pos == 0 {
                        continue;
                    }
                    let mut grid = TagGrid::all_n(8);
                    grid.set(0, 0, GridTag::A);
                    for k in 0..(neg + neu + pos) {
                        grid.set(2 + k, 2 + k, GridTag::O);
                    }
                    let mut col = 2;
                    for _ in 0..neg {
                        grid.set(0, col, GridTag::Neg);
                        col += 1;
                    }
                    for _ in 0..neu {
                        grid.set(0, col, GridTag::Neu);
                        col += 1;
                    }
                    for _ in 0..pos {
                        grid.set(0, col, GridTag::Pos);
                        col += 1;
                    }
                    // opinion runs are contiguous, so this is one opinion span
                    let triplets = decode_grid(&grid);
                    assert_eq!(triplets.len(), 1);
                    let max = neg.max(neu).max(pos);
                    let expected = if pos == max {
                        Sentiment::Positive
                    } else if neu == max {
                        Sentiment::Neutral
                    } else {
                        Sentiment::Negative
                    };
                    assert_eq!(triplets[0].sentiment, expected, "{neg}/{neu}/{pos}");
                }
            }
        }
    }

    #[test]
    fn grid_json_roundtrip() {
        let grid = encode_grid(&waiters_sentence()).unwrap();
        let json = grid.to_json();
        let back = TagGrid::from_json(&json).unwrap();
        assert_eq!(grid, back);
        assert!(json.contains("\"POS\""));
        assert!(!json.contains("\"N\""));
    }

    #[test]
    fn metrics_identity_and_degenerate_cases() {
        let t = Triplet::new(Span::new(0, 0), Span::new(2, 2), Sentiment::Positive);
        let m = triplet_metrics(&[vec![t]], &[vec![t]]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let m = triplet_metrics(&[vec![]], &[vec![t]]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));

        // 2 predicted, 1 correct, 2 gold.
        let other = Triplet::new(Span::new(1, 1), Span::new(3, 3), Sentiment::Negative);
        let wrong = Triplet::new(Span::new(1, 1), Span::new(3, 3), Sentiment::Positive);
        let m = triplet_metrics(&[vec![t, wrong]], &[vec![t, other]]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn metrics_match_each_gold_once_and_ignore_order() {
        let t = Triplet::new(Span::new(0, 0), Span::new(2, 2), Sentiment::Positive);
        let u = Triplet::new(Span::new(1, 1), Span::new(3, 3), Sentiment::Negative);
        // duplicate prediction only counts once
        let m = triplet_metrics(&[vec![t, t]], &[vec![t]]).unwrap();
        assert_eq!(m.correct, 1);
        assert_eq!(m.predicted, 2);

        let a = triplet_metrics(&[vec![t, u]], &[vec![u, t]]).unwrap();
        let b = triplet_metrics(&[vec![u, t]], &[vec![t, u]]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.f1, 1.0);
    }

    #[test]
    fn metrics_reject_misaligned_lists() {
        assert!(matches!(
            triplet_metrics(&[vec![]], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
