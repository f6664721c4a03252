//! Seeded synthetic corpora for smoke tests and desk-scale experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, LabeledExample, Part};

const FILLER: &[&str] = &[
    "the",
    "a",
    "film",
    "movie",
    "story",
    "plot",
    "it",
    "is",
    "was",
    "this",
    "that",
    "with",
    "and",
    "of",
    "to",
    "director",
    "actors",
    "scene",
    "script",
    "characters",
    "ending",
    "music",
    "camera",
    "screen",
    "time",
    "one",
    "its",
    "about",
    "as",
    "for",
    "an",
    "on",
    "by",
    "some",
    "very",
    "quite",
    "rather",
    "just",
    "into",
    "through",
    "audience",
    "cast",
    "role",
    "performance",
    "picture",
    "drama",
    "comedy",
    "thriller",
    "moments",
    "minutes",
];

const KEYWORDS: [&[&str]; 2] = [&["awful", "dreadful", "boring"], &["brilliant", "delightful", "superb"]];

const NEGATIVE: &[&str] = &[
    "bad",
    "dull",
    "boring",
    "worst",
    "mess",
    "tedious",
    "flat",
    "weak",
    "stupid",
    "lame",
    "awful",
    "bland",
    "clumsy",
    "tired",
    "pointless",
    "forgettable",
    "annoying",
    "predictable",
    "shallow",
    "waste",
];

const POSITIVE: &[&str] = &[
    "good",
    "fun",
    "best",
    "moving",
    "charming",
    "fresh",
    "smart",
    "funny",
    "beautiful",
    "uplifting",
    "great",
    "witty",
    "vivid",
    "touching",
    "gripping",
    "lovely",
    "clever",
    "engaging",
    "solid",
    "rich",
];

fn sentence(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| FILLER.choose(rng).expect("non-empty").to_string())
        .collect()
}

fn finish(mut examples: Vec<LabeledExample>, rng: &mut ChaCha8Rng) -> Corpus {
    examples.shuffle(rng);
    for (i, e) in examples.iter_mut().enumerate() {
        e.line = i + 1;
    }
    Corpus {
        examples,
        class_names: vec!["0".into(), "1".into()],
    }
}

/// Balanced binary corpus in which every sentence carries one keyword of its
/// class among 5 to 11 filler words.
pub fn keyword_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let len = rng.gen_range(5..=11);
            let mut tokens = sentence(&mut rng, len);
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, KEYWORDS[label].choose(&mut rng).expect("non-empty").to_string());
            LabeledExample {
                tokens,
                label,
                line: 0,
                part: Part::Train,
            }
        })
        .collect();
    finish(examples, &mut rng)
}

/// Balanced binary sentiment-style corpus with a noisy signal: each sentence
/// holds one to three polar words, each drawn from its own class's lexicon
/// with probability `agreement` and from the opposite one otherwise.
pub fn sentiment_corpus(n: usize, agreement: f64, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicons = [NEGATIVE, POSITIVE];
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let len = rng.gen_range(6..=18);
            let mut tokens = sentence(&mut rng, len);
            for _ in 0..rng.gen_range(1..=3) {
                let side = if rng.gen_bool(agreement) { label } else { 1 - label };
                let word = lexicons[side].choose(&mut rng).expect("non-empty").to_string();
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, word);
            }
            LabeledExample {
                tokens,
                label,
                line: 0,
                part: Part::Train,
            }
        })
        .collect();
    finish(examples, &mut rng)
}

/// `label<TAB>text` rendering of a corpus.
pub fn to_tsv(corpus: &Corpus) -> String {
    corpus
        .examples
        .iter()
        .map(|e| format!("{}\t{}\n", e.label, e.tokens.join(" ")))
        .collect()
}
