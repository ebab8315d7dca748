mod common;

use std::collections::BTreeMap;

use common::*;
use opportune_core::beam::rank;
use opportune_core::metrics::ral;
use opportune_core::models::complete_source;
use opportune_core::{
    beam_advance, decode_retranslation, decode_simultaneous, full_sentence_decode, Beam,
    DecoderConfig, Hypothesis, IncrementalModel, LookaheadTransducerModel, Policy, Token,
};
use proptest::prelude::*;

/// Independent restatement of the lookahead transducer's distribution.
fn oracle_distribution(
    table: &BTreeMap<Token, Token>,
    d: usize,
    anticipation: usize,
    q: f64,
    src: &[Token],
    complete: bool,
    tgt: &[Token],
) -> BTreeMap<String, f64> {
    let s = src.len();
    let t = tgt.len() + 1;
    let tr = |i: usize| table[&src[i - 1]].as_str().to_string();
    let (preferred, alt) = if complete {
        (if t <= s { tr(t) } else { "<eos>".into() }, None)
    } else if t + d <= s {
        (tr(t), None)
    } else if t <= s {
        ("<unk>".to_string(), Some(tr(t)))
    } else if t <= s + anticipation {
        (if s == 0 { "<unk>".into() } else { tr(s) }, None)
    } else {
        ("<eos>".into(), None)
    };
    let off = (1..=tgt.len().min(s)).any(|i| tgt[i - 1].as_str() != tr(i));
    let conf = if off { q * q } else { q };
    let mut out = BTreeMap::new();
    out.insert(preferred.clone(), conf);
    match alt {
        Some(a) if !off && a != preferred => {
            out.insert(a, 1.0 - conf);
        }
        _ => {
            let mut outcomes: Vec<String> =
                table.values().map(|v| v.as_str().to_string()).collect();
            outcomes.push("<unk>".into());
            if !(complete && t <= s) {
                outcomes.push("<eos>".into());
            }
            outcomes.sort();
            outcomes.dedup();
            outcomes.retain(|o| *o != preferred);
            let share = (1.0 - conf) / outcomes.len() as f64;
            for o in outcomes {
                *out.entry(o).or_insert(0.0) += share;
            }
        }
    }
    out.retain(|_, p| *p > 0.0);
    out
}

#[test]
fn lookahead_matches_oracle_exhaustively() {
    let alphabet = toks("a b c");
    let targets = all_sequences(&toks("A B C <unk>"), 3);
    for (d, q) in [(0, 1.0), (1, 0.9), (2, 0.7)] {
        let model = lookahead(3, d, q);
        let table = model.table().clone();
        for src in all_sequences(&alphabet, 6) {
            for complete in [false, true] {
                if src.is_empty() && complete {
                    continue;
                }
                let prefix = if complete { complete_source(&src) } else { src.clone() };
                for tgt in &targets {
                    let got = model.next_distribution(&prefix, tgt).unwrap();
                    assert!(got.is_normalized());
                    let want = oracle_distribution(&table, d, d + 1, q, &src, complete, tgt);
                    let got_map: BTreeMap<String, f64> =
                        got.iter().map(|(t, p)| (t.as_str().to_string(), p)).collect();
                    assert_eq!(
                        got_map.keys().collect::<Vec<_>>(),
                        want.keys().collect::<Vec<_>>(),
                        "support at src={src:?} complete={complete} tgt={tgt:?}"
                    );
                    for (k, p) in &want {
                        assert!((got_map[k] - p).abs() < 1e-12, "{k} at {src:?} {tgt:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn beam_top1_matches_enumeration() {
    let alphabet = toks("a b c");
    for (d, q) in [(0, 1.0), (1, 0.7), (2, 0.7), (2, 0.55)] {
        let model = lookahead(3, d, q);
        for src in all_sequences(&alphabet, 4).into_iter().filter(|s| !s.is_empty()) {
            for prefix in [src.clone(), complete_source(&src)] {
                for steps in 1..=3 {
                    for start in [Vec::new(), model.translate(&src[..1]).unwrap()] {
                        let all = enumerate(&model, &prefix, Hypothesis::new(start.clone()), steps);
                        let width = all.len();
                        let want = oracle_best(all);
                        let got =
                            beam_advance(&Beam::initial(start), steps, width, &model, &prefix)
                                .unwrap();
                        assert_eq!(got.best(), &want, "src={prefix:?} steps={steps}");
                    }
                }
            }
        }
    }
}

#[test]
fn width_one_is_greedy_rollout() {
    let model = lookahead(3, 2, 0.7);
    let src = toks("a b c a");
    let mut prefix: Vec<Token> = Vec::new();
    for _ in 0..5 {
        let dist = model.next_distribution(&src, &prefix).unwrap();
        let (t, _) = dist.top();
        if t.is_eos() {
            break;
        }
        prefix.push(t.clone());
    }
    let got = beam_advance(&Beam::initial(vec![]), 5, 1, &model, &src).unwrap();
    assert_eq!(got.best().tokens, prefix);
    assert!(got.items().windows(2).all(|w| rank(&w[0], &w[1]).is_le()));
}

#[test]
fn full_sentence_decode_is_table_image() {
    for (d, q) in [(0, 1.0), (2, 0.7), (3, 0.55)] {
        let model = lookahead(4, d, q);
        for src in ["a", "a b c d", "d d c b a a b"] {
            let src = toks(src);
            for b in [1, 3, 5] {
                assert_eq!(
                    full_sentence_decode(&model, &src, b).unwrap(),
                    model.translate(&src).unwrap()
                );
            }
        }
    }
}

fn wait_k_trace(
    model: &LookaheadTransducerModel,
    src: &[Token],
    k: usize,
    w: usize,
    b: usize,
) -> opportune_core::CommitTrace {
    decode_simultaneous(model, &Policy::wait_k(k).unwrap(), src, &DecoderConfig::new(w, b))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn traces_are_valid(
        model in arb_model(),
        src in arb_source(9),
        k in 1usize..5,
        rho in 0.0f64..1.0,
        w in 0usize..4,
        b in 1usize..4,
    ) {
        for policy in [Policy::wait_k(k).unwrap(), Policy::threshold(rho).unwrap()] {
            let trace = decode_simultaneous(&model, &policy, &src, &DecoderConfig::new(w, b)).unwrap();
            prop_assert_eq!(trace.validate_with_window(w), Ok(()));
            prop_assert_eq!(trace.snapshots.len(), src.len());
            let last = trace.snapshots.last().unwrap();
            prop_assert_eq!(last.committed_len, last.displayed.len());
        }
    }

    #[test]
    fn greedy_output_ignores_window(
        model in arb_model(),
        src in arb_source(9),
        k in 1usize..6,
        w in 1usize..5,
    ) {
        let base = wait_k_trace(&model, &src, k, 0, 1);
        let wide = wait_k_trace(&model, &src, k, w, 1);
        prop_assert_eq!(&base.final_output, &wide.final_output);
        prop_assert!(ral(&wide) <= ral(&base) + 1e-12);
    }

    #[test]
    fn greedy_threshold_output_ignores_window(
        model in arb_model(),
        src in arb_source(9),
        rho in 0.0f64..1.0,
        w in 1usize..5,
    ) {
        let policy = Policy::threshold(rho).unwrap();
        let base = decode_simultaneous(&model, &policy, &src, &DecoderConfig::new(0, 1)).unwrap();
        let wide = decode_simultaneous(&model, &policy, &src, &DecoderConfig::new(w, 1)).unwrap();
        prop_assert_eq!(base.final_output, wide.final_output);
    }

    #[test]
    fn window_zero_never_revises(model in arb_model(), src in arb_source(9), k in 1usize..5, b in 1usize..4) {
        let trace = wait_k_trace(&model, &src, k, 0, b);
        for pair in trace.snapshots.windows(2) {
            prop_assert!(pair[1].displayed.starts_with(&pair[0].displayed));
        }
    }

    #[test]
    fn wait_k_commits_follow_schedule(model in arb_model(), src in arb_source(9), k in 1usize..5, w in 0usize..4) {
        let trace = wait_k_trace(&model, &src, k, w, 1);
        let n = src.len();
        for snap in &trace.snapshots[..n - 1] {
            let s = snap.source_step;
            prop_assert_eq!(snap.committed_len, (s + 1).saturating_sub(k));
        }
    }

    #[test]
    fn distributions_are_normalized(
        model in arb_model(),
        src in arb_source(7),
        cut in 0usize..8,
        complete in any::<bool>(),
        tgt in prop::collection::vec(prop::sample::select(vec!["A", "B", "C", "D", "<unk>"]), 0..8),
    ) {
        let mut prefix = src[..cut.min(src.len())].to_vec();
        if complete {
            prefix = complete_source(&prefix);
        }
        let tgt: Vec<Token> = tgt.into_iter().map(tok).collect();
        let dist = model.next_distribution(&prefix, &tgt).unwrap();
        prop_assert!(dist.is_normalized());
        prop_assert!(dist.iter().all(|(_, p)| p > 0.0));
    }

    #[test]
    fn retranslation_traces_are_valid(model in arb_model(), src in arb_source(8), b in 1usize..4) {
        let trace = decode_retranslation(&model, &src, b, 3.0).unwrap();
        prop_assert_eq!(trace.validate(), Ok(()));
        prop_assert_eq!(trace.final_output.tokens(), &model.translate(&src).unwrap()[..]);
    }
}
