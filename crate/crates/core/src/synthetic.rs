//! Deterministic synthetic review corpus for tests and overfit experiments.
//!
//! Sentences are built from small word pools with template structures that
//! cover the phenomena the model must handle: single and multiple triplets,
//! one-to-many aspect/opinion sharing, zero-triplet sentences, and multi-word
//! spans. Every gold aspect head is connected to its opinion head by a
//! dependency arc.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, DependencyArc, Sentence, Sentiment, Span, Triplet};

const ASPECTS: &[&str] = &[
    "waiters", "food", "pizza", "service", "screen", "battery", "keyboard", "staff", "wine",
    "menu", "price", "coffee",
];
const ASPECTS_MULTI: &[&[&str]] = &[
    &["fruit", "salad"],
    &["wine", "list"],
    &["battery", "life"],
    &["hard", "drive"],
];

const POS_OPINIONS: &[&str] = &[
    "great", "friendly", "tasty", "excellent", "fast", "fresh", "amazing",
];
const POS_OPINIONS_MULTI: &[&[&str]] = &[&["top", "notch"], &["really", "good"]];
const NEG_OPINIONS: &[&str] = &["terrible", "rude", "slow", "awful", "bland", "noisy"];
const NEG_OPINIONS_MULTI: &[&[&str]] = &[&["too", "salty"], &["not", "good"]];
const NEU_OPINIONS: &[&str] = &["okay", "average", "decent", "ordinary"];
const NEU_OPINIONS_MULTI: &[&[&str]] = &[&["so", "so"], &["just", "fine"]];

const ADVERBS: &[&str] = &["very", "quite"];

const NO_TRIPLET_SENTENCES: &[&[&str]] = &[
    &["we", "went", "there", "yesterday"],
    &["i", "will", "come", "back", "soon"],
    &["they", "opened", "last", "month"],
    &["it", "is", "on", "main", "street"],
    &["we", "ordered", "at", "noon"],
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Simple,
    SimpleMultiword,
    SharedOpinion,
    SharedAspect,
    TwoIndependent,
    NoTriplet,
}

/// Generate `count` annotated sentences, deterministic per `seed`.
pub fn generate_synthetic(seed: u64, count: usize) -> Vec<AnnotatedSentence> {
    assert!(count >= 1, "count must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Fixed quotas keep the corpus composition stable for every seed:
    // the two shared kinds make up ~44% so the one-to-many share stays
    // comfortably above 30%.
    let quota = |frac: f64| ((count as f64) * frac).round() as usize;
    let mut kinds = Vec::with_capacity(count);
    for _ in 0..quota(0.22) {
        kinds.push(Kind::SharedOpinion);
    }
    for _ in 0..quota(0.22) {
        kinds.push(Kind::SharedAspect);
    }
    for _ in 0..quota(0.14) {
        kinds.push(Kind::TwoIndependent);
    }
    for _ in 0..quota(0.14) {
        kinds.push(Kind::NoTriplet);
    }
    for _ in 0..quota(0.10) {
        kinds.push(Kind::SimpleMultiword);
    }
    while kinds.len() > count {
        kinds.pop();
    }
    while kinds.len() < count {
        kinds.push(Kind::Simple);
    }
    kinds.shuffle(&mut rng);

    kinds.iter().map(|&kind| build(kind, &mut rng)).collect()
}

/// True when at least two triplets share an aspect span or an opinion span.
pub fn is_one_to_many(s: &AnnotatedSentence) -> bool {
    for (i, a) in s.triplets.iter().enumerate() {
        for b in s.triplets.iter().skip(i + 1) {
            if a.aspect == b.aspect || a.opinion == b.opinion {
                return true;
            }
        }
    }
    false
}

struct Builder {
    tokens: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Builder { tokens: Vec::new() }
    }

    fn word(&mut self, w: &str) -> usize {
        self.tokens.push(w.to_string());
        self.tokens.len() - 1
    }

    /// Append a phrase and return its span.
    fn phrase(&mut self, words: &[&str]) -> Span {
        let start = self.tokens.len();
        for w in words {
            self.word(w);
        }
        Span::new(start, self.tokens.len() - 1)
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn pick_aspect(rng: &mut ChaCha8Rng, multiword: bool) -> Vec<&'static str> {
    if multiword {
        ASPECTS_MULTI[rng.gen_range(0..ASPECTS_MULTI.len())].to_vec()
    } else {
        vec![pick(rng, ASPECTS)]
    }
}

fn pick_opinion(rng: &mut ChaCha8Rng, multiword: bool) -> (Vec<&'static str>, Sentiment) {
    let sentiment = Sentiment::ALL[rng.gen_range(0..3)];
    let words = match (sentiment, multiword) {
        (Sentiment::Positive, false) => vec![pick(rng, POS_OPINIONS)],
        (Sentiment::Positive, true) => POS_OPINIONS_MULTI[rng.gen_range(0..2)].to_vec(),
        (Sentiment::Negative, false) => vec![pick(rng, NEG_OPINIONS)],
        (Sentiment::Negative, true) => NEG_OPINIONS_MULTI[rng.gen_range(0..2)].to_vec(),
        (Sentiment::Neutral, false) => vec![pick(rng, NEU_OPINIONS)],
        (Sentiment::Neutral, true) => NEU_OPINIONS_MULTI[rng.gen_range(0..2)].to_vec(),
    };
    (words, sentiment)
}

fn singular_link(rng: &mut ChaCha8Rng) -> &'static str {
    if rng.gen_bool(0.5) {
        "was"
    } else {
        "is"
    }
}

fn plural_link(rng: &mut ChaCha8Rng) -> &'static str {
    if rng.gen_bool(0.5) {
        "were"
    } else {
        "are"
    }
}

fn nsubj(opinion: Span, aspect: Span) -> DependencyArc {
    DependencyArc {
        head: opinion.end,
        dependent: aspect.end,
        label: "nsubj".into(),
    }
}

fn det(aspect: Span, article: usize) -> DependencyArc {
    DependencyArc {
        head: aspect.end,
        dependent: article,
        label: "det".into(),
    }
}

fn conj(a: Span, b: Span) -> DependencyArc {
    DependencyArc {
        head: a.end,
        dependent: b.end,
        label: "conj".into(),
    }
}

fn build(kind: Kind, rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    match kind {
        Kind::Simple => simple(rng, rng.gen_bool(0.2), rng.gen_bool(0.15)),
        Kind::SimpleMultiword => simple(rng, true, true),
        Kind::SharedOpinion => shared_opinion(rng),
        Kind::SharedAspect => shared_aspect(rng),
        Kind::TwoIndependent => two_independent(rng),
        Kind::NoTriplet => no_triplet(rng),
    }
}

fn simple(rng: &mut ChaCha8Rng, multi_aspect: bool, multi_opinion: bool) -> AnnotatedSentence {
    let mut b = Builder::new();
    let article = b.word("the");
    let aspect = b.phrase(&pick_aspect(rng, multi_aspect));
    b.word(singular_link(rng));
    if rng.gen_bool(0.3) {
        b.word(pick(rng, ADVERBS));
    }
    let (words, sentiment) = pick_opinion(rng, multi_opinion);
    let opinion = b.phrase(&words);

    AnnotatedSentence {
        sentence: Sentence::new(b.tokens),
        deps: vec![nsubj(opinion, aspect), det(aspect, article)],
        triplets: vec![Triplet::new(aspect, opinion, sentiment)],
    }
}

fn shared_opinion(rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let mut b = Builder::new();
    let article = b.word("the");
    let first = b.phrase(&pick_aspect(rng, rng.gen_bool(0.15)));
    b.word("and");
    let second = b.phrase(&pick_aspect(rng, rng.gen_bool(0.15)));
    b.word(plural_link(rng));
    let (words, sentiment) = pick_opinion(rng, rng.gen_bool(0.15));
    let opinion = b.phrase(&words);

    AnnotatedSentence {
        sentence: Sentence::new(b.tokens),
        deps: vec![
            nsubj(opinion, first),
            nsubj(opinion, second),
            conj(first, second),
            det(first, article),
        ],
        triplets: vec![
            Triplet::new(first, opinion, sentiment),
            Triplet::new(second, opinion, sentiment),
        ],
    }
}

fn shared_aspect(rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let mut b = Builder::new();
    let article = b.word("the");
    let aspect = b.phrase(&pick_aspect(rng, rng.gen_bool(0.15)));
    b.word(singular_link(rng));
    let (first_words, first_sent) = pick_opinion(rng, rng.gen_bool(0.15));
    let first = b.phrase(&first_words);
    b.word("and");
    let (second_words, second_sent) = pick_opinion(rng, rng.gen_bool(0.15));
    let second = b.phrase(&second_words);

    AnnotatedSentence {
        sentence: Sentence::new(b.tokens),
        deps: vec![
            nsubj(first, aspect),
            nsubj(second, aspect),
            conj(first, second),
            det(aspect, article),
        ],
        triplets: vec![
            Triplet::new(aspect, first, first_sent),
            Triplet::new(aspect, second, second_sent),
        ],
    }
}

fn two_independent(rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let mut b = Builder::new();
    let first_article = b.word("the");
    let first_aspect = b.phrase(&pick_aspect(rng, rng.gen_bool(0.15)));
    b.word(singular_link(rng));
    let (first_words, first_sent) = pick_opinion(rng, false);
    let first_opinion = b.phrase(&first_words);
    b.word("but");
    let second_article = b.word("the");
    let second_aspect = b.phrase(&pick_aspect(rng, rng.gen_bool(0.15)));
    b.word(singular_link(rng));
    let (second_words, second_sent) = pick_opinion(rng, false);
    let second_opinion = b.phrase(&second_words);

    AnnotatedSentence {
        sentence: Sentence::new(b.tokens),
        deps: vec![
            nsubj(first_opinion, first_aspect),
            nsubj(second_opinion, second_aspect),
            det(first_aspect, first_article),
            det(second_aspect, second_article),
        ],
        triplets: vec![
            Triplet::new(first_aspect, first_opinion, first_sent),
            Triplet::new(second_aspect, second_opinion, second_sent),
        ],
    }
}

fn no_triplet(rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let words = NO_TRIPLET_SENTENCES[rng.gen_range(0..NO_TRIPLET_SENTENCES.len())];
    let mut deps = vec![DependencyArc {
        head: 1,
        dependent: 0,
        label: "dep".into(),
    }];
    if words.len() > 2 && rng.gen_bool(0.5) {
        deps.push(DependencyArc {
            head: 2,
            dependent: 1,
            label: "dep".into(),
        });
    }
    AnnotatedSentence {
        sentence: Sentence::from_words(words),
        deps,
        triplets: vec![],
    }
}
