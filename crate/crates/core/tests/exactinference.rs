mod common;

use std::sync::Arc;

use bitext_core::corpus::{Monotext, Sentence, Vocabulary};
use bitext_core::exactinference::*;
use bitext_core::langmodel::{build_lm, EmpiricalLM};
use bitext_core::rng::RngStream;
use bitext_core::seq2seq::{DecodeConfig, Direction, Seq2Seq};
use bitext_core::wakesleep::sleep_phase;
use common::{all_sentences, categorical_q, sentence, skewed_lm, tiny_model, vocab};

struct Setup {
    sv: Arc<Vocabulary>,
    tv: Arc<Vocabulary>,
    p: Seq2Seq,
    q: Seq2Seq,
}

fn setup(seed: u64, src_words: usize, trg_words: usize, max_len: usize) -> Setup {
    let sv = vocab("s", src_words);
    let tv = vocab("t", trg_words);
    Setup {
        p: tiny_model(seed, &sv, &tv, Direction::Forward, max_len),
        q: tiny_model(seed + 1000, &tv, &sv, Direction::Backward, max_len),
        sv,
        tv,
    }
}

fn lm_of(sentences: Vec<Sentence>, v: &Arc<Vocabulary>) -> EmpiricalLM {
    build_lm(&Monotext::new(sentences, v.clone())).unwrap()
}

#[test]
fn single_support_marginal_is_the_likelihood() {
    let s = setup(1, 3, 3, 6);
    let x0 = sentence(&[1, 2], &s.sv);
    let y = sentence(&[3, 1, 1], &s.tv);
    let lm = lm_of(vec![x0.clone(), x0.clone()], &s.sv);
    let got = marginal_log_likelihood(&s.p, &lm, &y).unwrap();
    assert!((got - s.p.log_prob(&x0, &y).unwrap()).abs() < 1e-12);
    let post = exact_posterior(&s.p, &lm, &y).unwrap();
    assert_eq!(post.posterior, vec![1.0]);
}

#[test]
fn two_support_marginal_and_naive_summation() {
    let s = setup(2, 3, 3, 6);
    let x1 = sentence(&[1], &s.sv);
    let x2 = sentence(&[2, 3], &s.sv);
    let y = sentence(&[2, 2], &s.tv);
    let lm = lm_of(vec![x1.clone(), x2.clone()], &s.sv);
    let (l1, l2) = (s.p.log_prob(&x1, &y).unwrap(), s.p.log_prob(&x2, &y).unwrap());
    let expected = (0.5 * (l1.exp() + l2.exp())).ln();
    assert!((marginal_log_likelihood(&s.p, &lm, &y).unwrap() - expected).abs() < 1e-10);

    let support: Vec<Sentence> = all_sentences(&s.sv, 2).into_iter().take(8).collect();
    let lm = skewed_lm(&support, &s.sv);
    let total: f64 = (1..=support.len()).sum::<usize>() as f64;
    let naive: f64 = support
        .iter()
        .enumerate()
        .map(|(k, x)| (k + 1) as f64 / total * s.p.log_prob(x, &y).unwrap().exp())
        .sum();
    assert!((marginal_log_likelihood(&s.p, &lm, &y).unwrap() - naive.ln()).abs() < 1e-10);
}

#[test]
fn log_sum_exp_edge_cases() {
    assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
}

#[test]
fn posterior_matches_brute_force_bayes() {
    let s = setup(3, 3, 3, 6);
    let support: Vec<Sentence> = all_sentences(&s.sv, 2).into_iter().skip(1).take(5).collect();
    let lm = skewed_lm(&support, &s.sv);
    let y = sentence(&[1, 3], &s.tv);
    let table = exact_posterior(&s.p, &lm, &y).unwrap();
    // joint with integer counts, normalized directly
    let joint: Vec<f64> = support
        .iter()
        .enumerate()
        .map(|(k, x)| (k + 1) as f64 * s.p.log_prob(x, &y).unwrap().exp())
        .collect();
    let z: f64 = joint.iter().sum();
    for (k, x) in support.iter().enumerate() {
        let pos = lm.position(x).unwrap();
        assert!((table.posterior[pos] - joint[k] / z).abs() < 1e-12);
    }
    assert!((table.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Zeroes every path from the input to the decoder, so p(y | x) is the same for all x.
fn input_blind(mut m: Seq2Seq) -> Seq2Seq {
    let h = m.config.dims.hidden;
    for x in m.params[7].data_mut() {
        *x = 0.0; // init_w
    }
    for x in m.params[15].data_mut() {
        *x = 0.0; // dec_wc
    }
    let vt = m.config.trg_vocab;
    // out_w rows h..3h read the context
    for x in &mut m.params[18].data_mut()[h * vt..3 * h * vt] {
        *x = 0.0;
    }
    m
}

#[test]
fn flat_likelihood_gives_the_prior() {
    let s = setup(4, 3, 3, 6);
    let p = input_blind(s.p.clone());
    let support: Vec<Sentence> = all_sentences(&s.sv, 2).into_iter().take(6).collect();
    let lm = skewed_lm(&support, &s.sv);
    let y = sentence(&[2, 1, 3], &s.tv);
    let table = exact_posterior(&p, &lm, &y).unwrap();
    for k in 0..lm.len() {
        assert!((table.posterior[k] - lm.prob(k)).abs() < 1e-12);
    }
}

#[test]
fn kl_vanishes_for_the_exact_posterior() {
    let s = setup(5, 4, 3, 6);
    // support: the empty sentence and every one-word sentence
    let support = all_sentences(&s.sv, 1);
    let lm = skewed_lm(&support, &s.sv);
    let y = sentence(&[1, 2], &s.tv);
    let table = exact_posterior(&s.p, &lm, &y).unwrap();
    let mut probs = vec![0.0; s.sv.len()];
    for (k, x) in table.support.iter().enumerate() {
        probs[x.ids()[0]] = table.posterior[k];
    }
    let q = categorical_q(&s.q, &probs);
    for (k, x) in table.support.iter().enumerate() {
        assert!((q.log_prob(&y, x).unwrap() - table.posterior[k].ln()).abs() < 1e-12);
    }
    let kl = inclusive_kl(&s.p, &lm, &q, &y).unwrap();
    assert!(kl.abs() < 1e-9, "{kl}");
}

#[test]
fn point_mass_kl_is_the_negative_log_likelihood() {
    let s = setup(6, 3, 3, 6);
    let x0 = sentence(&[3, 1], &s.sv);
    let y = sentence(&[2], &s.tv);
    let lm = lm_of(vec![x0.clone()], &s.sv);
    let kl = inclusive_kl(&s.p, &lm, &s.q, &y).unwrap();
    assert!((kl + s.q.log_prob(&y, &x0).unwrap()).abs() < 1e-12);
}

#[test]
fn kl_is_nonnegative_and_matches_hand_summation() {
    for seed in 0..5 {
        let s = setup(10 + seed, 3, 3, 6);
        let support: Vec<Sentence> = all_sentences(&s.sv, 2).into_iter().take(7).collect();
        let lm = skewed_lm(&support, &s.sv);
        let ys = [sentence(&[1], &s.tv), sentence(&[2, 3, 1], &s.tv)];
        for y in &ys {
            let kl = inclusive_kl(&s.p, &lm, &s.q, y).unwrap();
            let post = exact_posterior(&s.p, &lm, y).unwrap();
            let hand: f64 = lm
                .support
                .iter()
                .enumerate()
                .map(|(k, x)| post.posterior[k] * (post.posterior[k].ln() - s.q.log_prob(y, x).unwrap()))
                .sum();
            assert!(kl >= -1e-10);
            assert!((kl - hand).abs() < 1e-9);
        }
        let mean = mean_inclusive_kl(&s.p, &lm, &s.q, &ys).unwrap();
        let a = inclusive_kl(&s.p, &lm, &s.q, &ys[0]).unwrap();
        let b = inclusive_kl(&s.p, &lm, &s.q, &ys[1]).unwrap();
        assert!((mean - (a + b) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn autoencoder_objective_oracles() {
    let s = setup(7, 3, 3, 6);
    let y = sentence(&[1, 1], &s.tv);
    let x0 = sentence(&[2], &s.sv);
    let single = lm_of(vec![x0.clone()], &s.sv);
    let v = autoencoder_objective(&s.p, &s.q, &y, &single).unwrap();
    let expected = (s.p.log_prob(&x0, &y).unwrap() + s.q.log_prob(&y, &x0).unwrap()).exp();
    assert!((v - expected).abs() < 1e-12);

    let support: Vec<Sentence> = all_sentences(&s.sv, 2).into_iter().take(9).collect();
    let lm = skewed_lm(&support, &s.sv);
    let v = autoencoder_objective(&s.p, &s.q, &y, &lm).unwrap();
    let naive: f64 = support
        .iter()
        .map(|x| s.p.log_prob(x, &y).unwrap().exp() * s.q.log_prob(&y, x).unwrap().exp())
        .sum();
    assert!(v > 0.0 && v <= 1.0);
    assert!((v - naive).abs() < 1e-12);
}

#[test]
fn enumerated_outputs_are_normalized() {
    let s = setup(8, 3, 2, 5);
    let x = sentence(&[1, 3], &s.sv);
    let outs = enumerate_outputs(&s.p, &x, 5);
    let total: f64 = outs.iter().map(|(_, l)| l.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    // outputs that end on their own carry their teacher-forced probability
    for (y, l) in &outs {
        if y.len() < 5 {
            assert!((s.p.log_prob(&x, y).unwrap() - l).abs() < 1e-10);
        }
    }
}

#[test]
fn monte_carlo_sleep_objective_is_reproducible_and_single_sample_exact() {
    let s = setup(9, 3, 2, 6);
    let support: Vec<Sentence> = all_sentences(&s.sv, 2).into_iter().take(6).collect();
    let lm = skewed_lm(&support, &s.sv);
    let rng = RngStream::from_seed(3);
    let a = mc_sleep_objective(&s.p, &lm, &s.tv, &s.q, 50, &rng).unwrap();
    let b = mc_sleep_objective(&s.p, &lm, &s.tv, &s.q, 50, &rng).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());

    let one = mc_sleep_objective(&s.p, &lm, &s.tv, &s.q, 1, &rng).unwrap();
    let dreamt = sleep_phase(&s.p, &lm, &s.tv, 1, &DecodeConfig::sample(6), &rng).unwrap();
    let (x, y) = &dreamt.pairs[0];
    assert_eq!(one, s.q.log_prob(y, x).unwrap());
    assert!(mc_sleep_objective(&s.p, &lm, &s.tv, &s.q, 0, &rng).is_err());
}

#[test]
fn monte_carlo_sleep_objective_converges_to_enumeration() {
    let s = setup(11, 3, 2, 6);
    let support: Vec<Sentence> = all_sentences(&s.sv, 3).into_iter().take(20).collect();
    let lm = skewed_lm(&support, &s.sv);
    let exact = exact_sleep_objective(&s.p, &lm, &s.q, 6).unwrap();
    let mc = mc_sleep_objective(&s.p, &lm, &s.tv, &s.q, 20_000, &RngStream::from_seed(5)).unwrap();
    assert!((mc - exact).abs() < 0.05, "mc {mc} exact {exact}");
}
