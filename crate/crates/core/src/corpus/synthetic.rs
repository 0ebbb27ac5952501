//! Seeded generator of parliamentary-debate style English sentences.
//!
//! Used for desk-scale experiments and tests when no real corpus is at
//! hand. Output is plain text, one sentence per line, already lowercased
//! with punctuation separated so that `tokenize` is the identity split.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SUBJECTS: &[&str] = &[
    "the commission", "the council", "parliament", "this house", "the presidency",
    "the rapporteur", "the committee", "the member states", "our group", "the union",
    "the government", "the european union", "the commissioner", "my colleagues", "the citizens",
    "the authorities", "the industry", "the farmers", "the workers", "the court",
];

const NOUNS: &[&str] = &[
    "report", "proposal", "budget", "policy", "agreement", "market", "directive", "regulation",
    "debate", "question", "amendment", "issue", "programme", "strategy", "framework", "treaty",
    "dialogue", "cooperation", "development", "growth", "employment", "crisis", "reform",
    "system", "region", "objective", "priority", "decision", "resolution", "measure", "action",
    "initiative", "procedure", "fund", "project", "sector", "trade", "competition", "research",
    "education", "culture", "climate", "agriculture", "transport", "energy", "safety", "health",
    "security", "justice", "enlargement", "convention", "charter", "mandate", "situation",
    "crisis", "principle", "position", "solution", "approach", "responsibility", "legislation",
];

const PLURALS: &[&str] = &[
    "resources", "rights", "citizens", "consumers", "workers", "refugees", "companies",
    "products", "services", "taxes", "costs", "borders", "minorities", "women", "children",
    "regions", "countries", "institutions", "values", "standards", "conditions", "results",
    "amendments", "measures", "funds", "jobs", "markets", "emissions", "subsidies", "negotiations",
];

const ADJECTIVES: &[&str] = &[
    "clear", "strategic", "important", "european", "national", "common", "new", "economic",
    "social", "political", "public", "financial", "fundamental", "serious", "effective",
    "sustainable", "legal", "democratic", "human", "environmental", "strong", "fair",
    "necessary", "difficult", "urgent", "open", "better", "responsible", "transparent", "global",
];

const VERBS: &[&str] = &[
    "support", "reject", "welcome", "adopt", "improve", "strengthen", "protect", "examine",
    "consider", "implement", "finance", "defend", "review", "reform", "promote", "guarantee",
    "respect", "develop", "simplify", "monitor",
];

const VERBS_3SG: &[&str] = &[
    "supports", "rejects", "welcomes", "adopts", "improves", "strengthens", "protects",
    "examines", "considers", "implements", "finances", "defends", "reviews", "promotes",
    "guarantees", "respects", "develops", "monitors",
];

const PREPOSITIONS: &[&str] = &["of", "for", "in", "on", "with", "between", "against", "within"];

const OPENERS: &[&str] = &[
    "mr president ,", "madam president ,", "ladies and gentlemen ,", "commissioner ,",
    "in my opinion ,", "first of all ,", "finally ,", "however ,", "therefore ,", "of course ,",
];

const MODALS: &[&str] = &["must", "should", "will", "cannot", "can", "would"];

const ADVERBS: &[&str] = &["also", "now", "clearly", "therefore", "really", "already", "still"];

fn pick<'a>(rng: &mut impl Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or_default()
}

fn noun_phrase(rng: &mut impl Rng, out: &mut Vec<String>) {
    let roll: f64 = rng.gen();
    if roll < 0.45 {
        out.push("the".into());
        if rng.gen_bool(0.5) {
            out.push(pick(rng, ADJECTIVES).into());
        }
        out.push(pick(rng, NOUNS).into());
    } else if roll < 0.75 {
        if rng.gen_bool(0.4) {
            out.push(pick(rng, ADJECTIVES).into());
        }
        out.push(pick(rng, PLURALS).into());
    } else {
        out.push(if rng.gen_bool(0.5) { "a" } else { "this" }.into());
        out.push(pick(rng, ADJECTIVES).into());
        out.push(pick(rng, NOUNS).into());
    }
}

fn push_words(out: &mut Vec<String>, phrase: &str) {
    out.extend(phrase.split(' ').map(String::from));
}

fn sentence(rng: &mut impl Rng, depth: usize) -> Vec<String> {
    let mut s = Vec::new();
    if depth == 0 && rng.gen_bool(0.25) {
        push_words(&mut s, pick(rng, OPENERS));
    }
    match rng.gen_range(0..6) {
        0 => {
            push_words(&mut s, pick(rng, SUBJECTS));
            s.push(pick(rng, VERBS_3SG).into());
            noun_phrase(rng, &mut s);
        }
        1 => {
            s.push("we".into());
            s.push(pick(rng, MODALS).into());
            s.push(pick(rng, VERBS).into());
            noun_phrase(rng, &mut s);
            if rng.gen_bool(0.6) {
                s.push(pick(rng, PREPOSITIONS).into());
                noun_phrase(rng, &mut s);
            }
        }
        2 => {
            s.push("the".into());
            s.push(pick(rng, NOUNS).into());
            s.push(pick(rng, PREPOSITIONS).into());
            noun_phrase(rng, &mut s);
            s.push("is".into());
            if rng.gen_bool(0.3) {
                s.push(pick(rng, ADVERBS).into());
            }
            s.push(pick(rng, ADJECTIVES).into());
        }
        3 if depth < 2 => {
            s.push("i".into());
            s.push(if rng.gen_bool(0.5) { "believe" } else { "think" }.into());
            s.push("that".into());
            s.extend(sentence(rng, depth + 1));
        }
        4 => {
            s.push("this".into());
            s.push(pick(rng, NOUNS).into());
            s.push(pick(rng, MODALS).into());
            s.push(pick(rng, VERBS).into());
            noun_phrase(rng, &mut s);
        }
        _ => {
            push_words(&mut s, pick(rng, SUBJECTS));
            s.push(pick(rng, MODALS).into());
            if rng.gen_bool(0.3) {
                s.push(pick(rng, ADVERBS).into());
            }
            s.push(pick(rng, VERBS).into());
            noun_phrase(rng, &mut s);
            if rng.gen_bool(0.3) {
                s.push("and".into());
                noun_phrase(rng, &mut s);
            }
        }
    }
    s
}

/// `n` sentences, each terminated by `.` or `?`.
pub fn generate(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut s = sentence(&mut rng, 0);
            s.push(if rng.gen_bool(0.9) { "." } else { "?" }.into());
            s.join(" ")
        })
        .collect()
}
