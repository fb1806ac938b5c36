//! Randomized invariants across the library.

mod common;

use std::collections::BTreeSet;

use audiotext::audiofront::{logmel, AudioClip, FrontendConfig};
use audiotext::bootstrap::{filter_by_tag_vocab, FilterMode};
use audiotext::captioner::{beam_search, BeamConfig};
use audiotext::contrastive::infonce_loss;
use audiotext::diffcore::{gradient_check, Tensor};
use audiotext::evalsuite::{
    accuracy, argmax, bleu4, cider, mean_average_precision, recall_at_k, rouge_l, Direction,
};
use audiotext::textproc::{detokenize, tokenize, Vocabulary, RESERVED};
use audiotext::toygen::{default_registry, generate_corpus, CorpusConfig};
use common::TableScorer;
use proptest::prelude::*;

const SR: u32 = 8000;

fn small_frontend() -> FrontendConfig {
    FrontendConfig { win: 64, hop: 16, n_fft: 64, mel_bins: 8, fmin: 0.0, fmax: 4000.0, floor_eps: 1e-10 }
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 200..600)
}

fn square(max_n: usize) -> impl Strategy<Value = Tensor> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |d| Tensor::matrix(n, n, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logmel_floor_frame_count_and_gain(samples in signal()) {
        let cfg = small_frontend();
        let clip = AudioClip::new("x", SR, samples.clone()).unwrap();
        let mel = logmel(&clip, &cfg).unwrap();
        prop_assert_eq!(mel.n_frames, 1 + samples.len() / cfg.hop);
        let floor = cfg.floor_eps.ln();
        prop_assert!(mel.frames.iter().all(|v| *v >= floor - 1e-12));

        let loud = AudioClip::new("x2", SR, samples.iter().map(|s| 2.0 * s).collect()).unwrap();
        let mel2 = logmel(&loud, &cfg).unwrap();
        for (a, b) in mel.frames.iter().zip(&mel2.frames) {
            prop_assert!(b - a >= -1e-12);
            // energy far above the floor: the floor's share is below 1e-8
            if *a > floor + 20.0 {
                prop_assert!((b - a - 4f64.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn one_hop_shift_moves_frames_by_one(samples in signal()) {
        let cfg = small_frontend();
        let mel = logmel(&AudioClip::new("x", SR, samples.clone()).unwrap(), &cfg).unwrap();
        let mut shifted = vec![0.0; cfg.hop];
        shifted.extend(&samples);
        let mel_s = logmel(&AudioClip::new("s", SR, shifted).unwrap(), &cfg).unwrap();
        // frames whose window lies inside the signal in both clips
        let edge = cfg.n_fft / (2 * cfg.hop) + 1;
        for t in edge..mel.n_frames.saturating_sub(edge + 1) {
            for (a, b) in mel.frame(t).iter().zip(mel_s.frame(t + 1)) {
                prop_assert!((a - b).abs() < 1e-9, "frame {}: {} vs {}", t, a, b);
            }
        }
    }

    #[test]
    fn detokenize_then_tokenize_is_identity(seq in prop::collection::vec(4usize..12, 0..15)) {
        let words = ["dog", "bark", "rain", "low", "tone", "then", "a", "whistle"];
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(words.iter().map(|s| s.to_string())).collect();
        let vocab = Vocabulary::from_tokens(tokens).unwrap();
        prop_assert_eq!(tokenize(&detokenize(&seq, &vocab), &vocab), seq);
    }

    #[test]
    fn uniform_scores_give_two_ln_n(n in 2usize..80, value in -1.0f64..1.0, temp in 0.01f64..5.0) {
        let sim = Tensor::matrix(n, n, vec![value; n * n]).unwrap();
        let l = infonce_loss(&sim, temp).unwrap();
        prop_assert!((l.total - 2.0 * (n as f64).ln()).abs() <= 1e-9);
    }

    #[test]
    fn infonce_is_nonnegative_and_permutation_invariant(sim in square(9), temp in 0.05f64..2.0, seed in any::<u64>()) {
        let n = sim.rows();
        let l = infonce_loss(&sim, temp).unwrap();
        prop_assert!(l.total >= 0.0);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let d: Vec<f64> = (0..n * n).map(|k| sim.at(perm[k / n], perm[k % n])).collect();
        let lp = infonce_loss(&Tensor::matrix(n, n, d).unwrap(), temp).unwrap();
        prop_assert!((l.total - lp.total).abs() <= 1e-10);
    }

    #[test]
    fn row_shift_leaves_its_row_term_unchanged(sim in square(8), row in 0usize..8, shift in -5.0f64..5.0) {
        let n = sim.rows();
        let row = row % n;
        let before = infonce_loss(&sim, 0.5).unwrap();
        let mut d = sim.data().to_vec();
        d[row * n..(row + 1) * n].iter_mut().for_each(|v| *v += shift);
        let after = infonce_loss(&Tensor::matrix(n, n, d).unwrap(), 0.5).unwrap();
        prop_assert!((before.audio_to_text[row] - after.audio_to_text[row]).abs() <= 1e-10);
    }

    #[test]
    fn infonce_gradient_matches_finite_differences(sim in square(6), temp in 0.2f64..2.0) {
        let inv = 1.0 / temp;
        // step near the central-difference optimum for f64 round-off
        let report = gradient_check(move |_, v| Ok(v[0].scale(inv).info_nce()), &[sim], 1e-5, 1e-6).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn recall_is_monotone_and_full_at_n(sim in square(12)) {
        let n = sim.rows();
        for dir in [Direction::AudioToText, Direction::TextToAudio] {
            let r: Vec<f64> = (1..=n).map(|k| recall_at_k(&sim, k, dir).unwrap()).collect();
            prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(r[n - 1], 1.0);
        }
    }

    #[test]
    fn rank_metrics_ignore_increasing_maps(
        sim in square(10),
        labels in prop::collection::vec(any::<bool>(), 100),
        scale in 0.1f64..10.0,
        offset in -3.0f64..3.0,
    ) {
        let n = sim.rows();
        let warp = |v: f64| (scale * v + offset).exp() + v.powi(3);
        let warped = Tensor::matrix(n, n, sim.data().iter().map(|&v| warp(v)).collect()).unwrap();
        for dir in [Direction::AudioToText, Direction::TextToAudio] {
            for k in 1..=n {
                prop_assert_eq!(recall_at_k(&sim, k, dir).unwrap(), recall_at_k(&warped, k, dir).unwrap());
            }
        }
        let preds: Vec<usize> = (0..n).map(|i| argmax(sim.row(i))).collect();
        let preds_w: Vec<usize> = (0..n).map(|i| argmax(warped.row(i))).collect();
        let truth: Vec<usize> = (0..n).collect();
        prop_assert_eq!(accuracy(&preds, &truth).unwrap(), accuracy(&preds_w, &truth).unwrap());
        let mut truths: Vec<f64> = labels[..n * n].iter().map(|&b| b as u8 as f64).collect();
        truths[0] = 1.0;
        let truths = Tensor::matrix(n, n, truths).unwrap();
        let (a, _) = mean_average_precision(&sim, &truths).unwrap();
        let (b, _) = mean_average_precision(&warped, &truths).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn map_equals_brute_force(
        items in 2usize..=50,
        classes in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut s = seed | 1;
        let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s };
        // coarse scores so ties happen
        let scores: Vec<f64> = (0..items * classes).map(|_| (next() % 7) as f64).collect();
        let mut truths: Vec<f64> = (0..items * classes).map(|_| (next() % 3 == 0) as u8 as f64).collect();
        truths[0] = 1.0;
        let st = Tensor::matrix(items, classes, scores.clone()).unwrap();
        let tt = Tensor::matrix(items, classes, truths.clone()).unwrap();
        let (got, _) = mean_average_precision(&st, &tt).unwrap();
        prop_assert!((got - brute_force_map(&scores, &truths, items, classes)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn caption_metric_ranges(
        cands in prop::collection::vec(prop::collection::vec(0usize..6, 0..8), 2..6),
        refs in prop::collection::vec(prop::collection::vec(prop::collection::vec(0usize..6, 1..8), 1..4), 6),
    ) {
        let words = ["a", "low", "tone", "hums", "then", "rain"];
        let w = |v: &Vec<usize>| v.iter().map(|&i| words[i].to_string()).collect::<Vec<String>>();
        let cands: Vec<Vec<String>> = cands.iter().map(w).collect();
        let refs: Vec<Vec<Vec<String>>> = refs[..cands.len()].iter().map(|rs| rs.iter().map(w).collect()).collect();
        for (c, r) in cands.iter().zip(&refs) {
            let b = bleu4(c, r).unwrap();
            let l = rouge_l(c, r).unwrap();
            prop_assert!((0.0..=1.0).contains(&b) && (0.0..=1.0).contains(&l));
            if r[0].len() >= 4 {
                prop_assert!((bleu4(&r[0], r).unwrap() - 1.0).abs() < 1e-12);
            }
            prop_assert!((rouge_l(&r[0], r).unwrap() - 1.0).abs() < 1e-12);
        }
        let c = cider(&cands, &refs).unwrap();
        prop_assert!(c.mean >= 0.0 && c.per_item.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn beam_score_never_drops_with_width(vocab in 2usize..6, max_len in 2usize..5, seed in any::<u64>()) {
        let mut scorer = TableScorer::new(vocab, seed);
        let mut last = f64::NEG_INFINITY;
        for width in 1..=vocab.pow(max_len as u32).min(40) {
            let h = beam_search(&mut scorer, BeamConfig { beam_size: width, max_len, eos: 0 }).unwrap();
            prop_assert!(h.score >= last - 1e-12, "width {}: {} < {}", width, h.score, last);
            last = h.score;
        }
    }
}

#[test]
fn strict_filter_is_idempotent_and_subsets() {
    let reg = default_registry();
    let cfg = CorpusConfig { n_train: 20, n_val: 5, n_test: 5, n_tag_only: 200, ..CorpusConfig::default() };
    let corpus = generate_corpus(&reg, &cfg, 4).unwrap();
    let ids = reg.ids();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(64));
    runner
        .run(&(prop::collection::vec(any::<bool>(), ids.len()), any::<bool>()), |(mask, lenient)| {
            let known: BTreeSet<String> = ids.iter().zip(&mask).filter(|(_, &m)| m).map(|(i, _)| i.clone()).collect();
            let mode = if lenient { FilterMode::Lenient } else { FilterMode::Strict };
            let (once, rep) = filter_by_tag_vocab(&corpus.tag_only, &known, mode);
            let (twice, _) = filter_by_tag_vocab(&once, &known, mode);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(rep.kept + rep.dropped, corpus.tag_only.len());
            if !lenient {
                prop_assert!(once.iter().all(|e| e.tags.is_subset(&known)));
            }
            Ok(())
        })
        .unwrap();
}

/// Average precision by walking every cut-off of the ranked list and
/// summing precision at each positive, ties broken by item index.
fn brute_force_map(scores: &[f64], truths: &[f64], items: usize, classes: usize) -> f64 {
    let mut aps = Vec::new();
    for c in 0..classes {
        let positives: usize = (0..items).filter(|&i| truths[i * classes + c] > 0.5).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..items).collect();
        order.sort_by(|&a, &b| scores[b * classes + c].total_cmp(&scores[a * classes + c]).then(a.cmp(&b)));
        let mut ap = 0.0;
        for cut in 1..=items {
            let top = &order[..cut];
            if truths[top[cut - 1] * classes + c] > 0.5 {
                let hits = top.iter().filter(|&&i| truths[i * classes + c] > 0.5).count();
                ap += hits as f64 / cut as f64;
            }
        }
        aps.push(ap / positives as f64);
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}
