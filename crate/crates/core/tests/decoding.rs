mod common;

use proptest::prelude::*;

use common::{all_sequences, oracle_system, pin_length_delta, random_sequence, random_sources, random_system, reference_beam, rng};
use nonar_mmi::data::vocab::NUM_RESERVED;
use nonar_mmi::decoding::{
    ar_beam_search, ar_greedy, ar_mmi_rerank, kbest_separable, nonar_greedy_decode, nonar_mmi_decode, nonar_nbest,
    npd_mmi_select, NonArDecoder, TieBreak,
};
use nonar_mmi::oracle::{brute_force_kbest, brute_force_mmi_argmax, enumerate_scores, oracle_suite};
use nonar_mmi::params::Init;
use nonar_mmi::transformer::BlockConfig;

const LAMBDAS: [f64; 5] = [0.0, 0.3, 0.5, 0.8, 1.0];

#[test]
fn mmi_decode_is_the_exhaustive_optimum() {
    let sys = oracle_system(5, 11);
    for x in random_sources(&sys.vocab, 8, 1, 3, 1) {
        for &lambda in &LAMBDAS {
            let got = nonar_mmi_decode(&sys.nonar, &sys.store, &x, lambda).unwrap();
            let want = brute_force_mmi_argmax(&sys.nonar, &sys.store, &x, x.len(), lambda).unwrap();
            assert_eq!(got.tokens, want.tokens, "x={x:?} λ={lambda}");
            assert!((got.score() - want.score).abs() < 1e-9);
        }
    }
}

#[test]
fn score_table_argmax_is_optimal_at_every_length() {
    let sys = random_system(4, &BlockConfig::tiny(), 1.0, 12);
    let dec = NonArDecoder::new(&sys.nonar, &sys.store);
    for x in random_sources(&sys.vocab, 4, 1, 4, 2) {
        for l_y in 1..=4 {
            let table = dec.score_table(&x, l_y).unwrap();
            for &lambda in &LAMBDAS {
                let got = table.argmax(lambda, TieBreak::LowestId);
                let want = brute_force_mmi_argmax(&sys.nonar, &sys.store, &x, l_y, lambda).unwrap();
                assert_eq!(got, want.tokens);
            }
        }
    }
}

#[test]
fn lambda_zero_is_forward_argmax() {
    for seed in 0..4 {
        let sys = random_system(9, &BlockConfig::tiny(), 1.0, seed);
        for x in random_sources(&sys.vocab, 10, 1, 6, seed) {
            let mmi = nonar_mmi_decode(&sys.nonar, &sys.store, &x, 0.0).unwrap();
            assert_eq!(mmi.tokens, nonar_greedy_decode(&sys.nonar, &sys.store, &x).unwrap());
        }
    }
}

#[test]
fn kbest_matches_enumeration_at_fixed_length() {
    let sys = oracle_system(5, 13);
    let v = sys.vocab.num_words();
    let dec = NonArDecoder::new(&sys.nonar, &sys.store);
    for x in random_sources(&sys.vocab, 6, 1, 3, 3) {
        for &lambda in &LAMBDAS {
            let got = dec.kbest_at_length(&x, x.len(), lambda, 10, v).unwrap();
            let want = brute_force_kbest(&sys.nonar, &sys.store, &x, x.len(), lambda, 10).unwrap();
            let got: Vec<_> = got.into_iter().map(|c| c.tokens).collect();
            let want: Vec<_> = want.into_iter().map(|s| s.tokens).collect();
            assert_eq!(got, want, "x={x:?} λ={lambda}");
        }
    }
}

#[test]
fn nbest_pools_lengths_like_enumeration() {
    let mut sys = oracle_system(4, 14);
    // prefer Δm = 0, then Δm = −1
    pin_length_delta(&mut sys, &[0, -1]);
    let v = sys.vocab.num_words();
    for x in random_sources(&sys.vocab, 5, 2, 3, 4) {
        for &lambda in &LAMBDAS {
            let got = nonar_nbest(&sys.nonar, &sys.store, &x, lambda, 12, 2, v).unwrap();
            let mut pool: Vec<(f64, usize, Vec<usize>)> = Vec::new();
            for (rank, len) in [x.len(), x.len() - 1].into_iter().enumerate() {
                let e = enumerate_scores(&sys.nonar, &sys.store, &x, len).unwrap();
                pool.extend((0..e.sequences.len()).map(|i| (e.score(i, lambda), rank, e.sequences[i].clone())));
            }
            pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let want: Vec<_> = pool.into_iter().take(12).map(|p| p.2).collect();
            let got: Vec<_> = got.into_iter().map(|c| c.tokens).collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn single_best_list_is_the_decode() {
    let sys = random_system(10, &BlockConfig::tiny(), 1.0, 15);
    for x in random_sources(&sys.vocab, 10, 1, 5, 5) {
        for &lambda in &LAMBDAS {
            let one = nonar_nbest(&sys.nonar, &sys.store, &x, lambda, 1, 1, 3).unwrap();
            let dec = nonar_mmi_decode(&sys.nonar, &sys.store, &x, lambda).unwrap();
            assert_eq!(one.len(), 1);
            assert_eq!(one[0].tokens, dec.tokens);
        }
    }
}

#[test]
fn per_token_sum_equals_two_term_form() {
    let sys = random_system(7, &BlockConfig::tiny(), 1.0, 16);
    let mut r = rng(6);
    for _ in 0..30 {
        let x = random_sequence(&sys.vocab, rand::Rng::gen_range(&mut r, 1..5), &mut r);
        let y = random_sequence(&sys.vocab, rand::Rng::gen_range(&mut r, 1..5), &mut r);
        let lambda: f64 = rand::Rng::gen_range(&mut r, 0.0..=1.0);
        let b = nonar_mmi::mmi::mmi_objective(&sys.nonar, &sys.store, &x, &y, lambda).unwrap();
        let f = sys.nonar.forward_sequence_logprob(&sys.store, &x, &y).unwrap();
        let g = sys.nonar.backward_sequence_score(&sys.store, &x, &y).unwrap();
        let two = (1.0 - lambda) * f + lambda * g;
        assert!((b.total - two).abs() <= 1e-12 * two.abs().max(1.0));
    }
}

#[test]
fn oracle_suite_detects_a_wrong_tie_break() {
    let sys = common::random_system(4, &BlockConfig::tiny(), 0.0, 0);
    let zero = nonar_mmi::model::System::new(sys.vocab.clone(), &BlockConfig::tiny(), Init::Zeros, 0).unwrap();
    let sources = random_sources(&zero.vocab, 3, 1, 2, 7);
    let ok = oracle_suite(&zero.nonar, &zero.store, &sources, &LAMBDAS, TieBreak::LowestId).unwrap();
    assert!(ok.passed(), "{:?}", ok.mismatches);
    let bad = oracle_suite(&zero.nonar, &zero.store, &sources, &LAMBDAS, TieBreak::HighestId).unwrap();
    assert!(!bad.passed());
    assert!(bad.mismatches.iter().all(|m| m.check == "argmax"));
}

#[test]
fn unpenalised_beam_is_plain_beam_search() {
    let sys = random_system(8, &BlockConfig::tiny(), 1.5, 17);
    for (i, x) in random_sources(&sys.vocab, 100, 1, 4, 8).iter().enumerate() {
        let beam = 1 + i % 4;
        let got = ar_beam_search(&sys.ar_forward, &sys.store, x, beam, 0.0, 5).unwrap();
        let want = reference_beam(&sys.ar_forward, &sys.store, x, beam, 5);
        assert_eq!(got, want, "x={x:?} beam={beam}");
    }
}

#[test]
fn width_one_beam_is_greedy() {
    let sys = random_system(8, &BlockConfig::tiny(), 1.5, 18);
    for x in random_sources(&sys.vocab, 30, 1, 4, 9) {
        for gamma in [0.0, 1.0] {
            let b = ar_beam_search(&sys.ar_forward, &sys.store, &x, 1, gamma, 6).unwrap();
            let g = ar_greedy(&sys.ar_forward, &sys.store, &x, 6).unwrap();
            assert_eq!(b, vec![g]);
        }
    }
}

#[test]
fn beam_scores_match_teacher_forcing() {
    let sys = random_system(8, &BlockConfig::tiny(), 1.5, 19);
    for x in random_sources(&sys.vocab, 10, 1, 4, 10) {
        for gamma in [0.0, 0.5, 2.0] {
            let hyps = ar_beam_search(&sys.ar_forward, &sys.store, &x, 5, gamma, 5).unwrap();
            assert!(!hyps.is_empty() && hyps.len() <= 5);
            assert!(hyps.windows(2).all(|w| w[0].logprob >= w[1].logprob));
            for h in &hyps {
                assert!(!h.tokens.is_empty() && h.tokens.len() <= 5);
                let tf = sys.ar_forward.sequence_logprob(&sys.store, &x, &h.tokens).unwrap();
                assert!((tf - h.logprob).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn sibling_penalty_diversifies_parents() {
    let sys = random_system(8, &BlockConfig::tiny(), 1.5, 20);
    let mut changed = 0;
    for x in random_sources(&sys.vocab, 20, 2, 4, 11) {
        let plain = ar_beam_search(&sys.ar_forward, &sys.store, &x, 4, 0.0, 5).unwrap();
        let diverse = ar_beam_search(&sys.ar_forward, &sys.store, &x, 4, 5.0, 5).unwrap();
        changed += (plain != diverse) as usize;
    }
    assert!(changed > 0);
}

#[test]
fn beam_rejects_bad_arguments() {
    let sys = random_system(3, &BlockConfig::tiny(), 1.0, 21);
    let x = [NUM_RESERVED];
    assert!(ar_beam_search(&sys.ar_forward, &sys.store, &x, 0, 0.0, 3).is_err());
    assert!(ar_beam_search(&sys.ar_forward, &sys.store, &x, 2, -1.0, 3).is_err());
    assert!(ar_beam_search(&sys.ar_forward, &sys.store, &x, 2, 0.0, 0).is_err());
}

#[test]
fn lambda_zero_rerank_keeps_beam_order() {
    let sys = random_system(8, &BlockConfig::tiny(), 1.5, 22);
    let pair = sys.ar_pair();
    for x in random_sources(&sys.vocab, 20, 1, 4, 12) {
        let hyps = ar_beam_search(&sys.ar_forward, &sys.store, &x, 6, 0.0, 5).unwrap();
        let ranked = ar_mmi_rerank(&pair, &x, &hyps, 0.0).unwrap();
        let order: Vec<usize> = ranked.iter().map(|r| r.index).collect();
        assert_eq!(order, (0..hyps.len()).collect::<Vec<_>>());
    }
}

#[test]
fn rerank_scores_combine_both_directions() {
    let sys = random_system(6, &BlockConfig::tiny(), 1.5, 23);
    let pair = sys.ar_pair();
    let dec = NonArDecoder::new(&sys.nonar, &sys.store);
    for x in random_sources(&sys.vocab, 8, 1, 3, 13) {
        let cands = dec.nbest(&x, 0.5, 6, 2, 3).unwrap();
        for lambda in [0.0, 0.4, 1.0] {
            let ranked = npd_mmi_select(&pair, &x, &cands, lambda).unwrap();
            assert_eq!(ranked.len(), cands.len());
            for r in &ranked {
                let y = &cands[r.index].tokens;
                let f = sys.ar_forward.sequence_logprob(&sys.store, &x, y).unwrap();
                let b = sys.ar_backward.sequence_logprob(&sys.store, y, &x).unwrap();
                assert!((r.score - ((1.0 - lambda) * f + lambda * b)).abs() < 1e-9);
            }
            for (a, b) in ranked.iter().zip(ranked.iter().skip(1)) {
                assert!(a.score >= b.score);
            }
        }
    }
    assert!(npd_mmi_select(&pair, &[NUM_RESERVED], &[], 0.5).is_err());
}

#[test]
fn enumeration_is_lexicographic_and_complete() {
    let sys = oracle_system(3, 24);
    let e = enumerate_scores(&sys.nonar, &sys.store, &[NUM_RESERVED, NUM_RESERVED + 1], 2).unwrap();
    assert_eq!(e.sequences, all_sequences(sys.vocab.word_ids(), 2));
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..0.0, 1..5), 1..4)
}

proptest! {
    #[test]
    fn lazy_kbest_equals_sorted_enumeration(table in table_strategy(), k in 1usize..30) {
        let options: Vec<Vec<(usize, f64)>> = table
            .iter()
            .map(|row| {
                let mut o: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
                o.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                o
            })
            .collect();
        let got = kbest_separable(&options, k, |p| p.iter().sum());
        let widths: Vec<usize> = table.iter().map(Vec::len).collect();
        let mut all: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut idx = vec![0usize; table.len()];
        loop {
            all.push((idx.iter().enumerate().map(|(t, &i)| table[t][i]).sum(), idx.clone()));
            let mut t = table.len();
            loop {
                if t == 0 { break; }
                t -= 1;
                idx[t] += 1;
                if idx[t] < widths[t] { break; }
                idx[t] = 0;
                if t == 0 { t = usize::MAX; break; }
            }
            if t == usize::MAX { break; }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        prop_assert_eq!(got.len(), k.min(all.len()));
        for (g, w) in got.iter().zip(&all) {
            prop_assert_eq!(&g.tokens, &w.1);
            prop_assert!((g.score - w.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decoded_tokens_are_words(seed in 0u64..50, lambda in 0.0f64..=1.0) {
        let sys = random_system(6, &BlockConfig::tiny(), 1.0, seed);
        let x = random_sources(&sys.vocab, 1, 1, 5, seed).remove(0);
        let c = nonar_mmi_decode(&sys.nonar, &sys.store, &x, lambda).unwrap();
        prop_assert!(c.tokens.iter().all(|t| sys.vocab.word_ids().contains(t)));
        prop_assert_eq!(c.tokens.len(), sys.nonar.predict_length(&sys.store, &x).unwrap());
    }
}
