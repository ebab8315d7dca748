#![allow(dead_code)]

use std::collections::BTreeMap;

use opportune_core::trace::tokenize;
use opportune_core::{Hypothesis, IncrementalModel, LookaheadTransducerModel, Token};
use proptest::prelude::*;

pub fn toks(s: &str) -> Vec<Token> {
    tokenize(s).unwrap()
}

pub fn tok(s: &str) -> Token {
    Token::new(s).unwrap()
}

pub const ALPHABET: [&str; 4] = ["a", "b", "c", "d"];

/// `a -> A`, `b -> B`, ... over the first `size` letters.
pub fn upper_table(size: usize) -> BTreeMap<Token, Token> {
    ALPHABET[..size]
        .iter()
        .map(|a| (tok(a), tok(&a.to_uppercase())))
        .collect()
}

pub fn lookahead(size: usize, d: usize, q: f64) -> LookaheadTransducerModel {
    LookaheadTransducerModel::new(upper_table(size), d, tok("<unk>"), q).unwrap()
}

/// A lookahead model over a random permutation table.
pub fn arb_model() -> impl Strategy<Value = LookaheadTransducerModel> {
    (
        Just(ALPHABET.to_vec()).prop_shuffle(),
        0usize..=3,
        prop_oneof![Just(1.0), Just(0.7), 0.51f64..1.0],
    )
        .prop_map(|(perm, d, q)| {
            let table = ALPHABET
                .iter()
                .zip(perm)
                .map(|(a, b)| (tok(a), tok(&b.to_uppercase())))
                .collect();
            LookaheadTransducerModel::new(table, d, tok("<unk>"), q).unwrap()
        })
}

pub fn arb_source(max_len: usize) -> impl Strategy<Value = Vec<Token>> {
    prop::collection::vec(prop::sample::select(ALPHABET.to_vec()), 1..=max_len)
        .prop_map(|v| v.into_iter().map(tok).collect())
}

pub fn all_sequences(alphabet: &[Token], max_len: usize) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for a in alphabet {
                let mut s: Vec<Token> = seq.clone();
                s.push(a.clone());
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Every hypothesis reachable in `steps` transitions from `start`,
/// enumerated without pruning.
pub fn enumerate(
    model: &dyn IncrementalModel,
    src: &[Token],
    start: Hypothesis,
    steps: usize,
) -> Vec<Hypothesis> {
    if steps == 0 || start.finished {
        return vec![start];
    }
    let dist = model.next_distribution(src, &start.tokens).unwrap();
    let mut out = Vec::new();
    for (token, p) in dist.iter() {
        let mut tokens = start.tokens.clone();
        let finished = token.is_eos();
        if !finished {
            tokens.push(token.clone());
        }
        let child = Hypothesis {
            tokens,
            logprob: start.logprob + p.ln(),
            finished,
        };
        out.extend(enumerate(model, src, child, steps - 1));
    }
    out
}

pub fn oracle_best(mut all: Vec<Hypothesis>) -> Hypothesis {
    all.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then_with(|| a.tokens.cmp(&b.tokens))
            .then_with(|| a.finished.cmp(&b.finished))
    });
    all.swap_remove(0)
}

