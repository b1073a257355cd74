mod common;

use proptest::prelude::*;
use sgcap::bank::{compute_stats, effective_dimension, SentenceBank, SentenceRecord};
use sgcap::inference::{domain_transfer, domain_transfer_weights, sample_frame_indices, FrameSet};
use sgcap::metrics::{self, EvalPair};
use sgcap::model::{ModelConfig, ModelParams, Weights};
use sgcap::noise::{NoiseMode, NoiseModel};
use sgcap::similarity::{select_group, Query};
use sgcap::supervision::{build_target, softmax};

fn embedding(d: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, d)
}

fn bank_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = SentenceBank> {
    (1..=max_d, 1..=max_n).prop_flat_map(|(d, n)| {
        prop::collection::vec(
            (embedding(d), prop::collection::btree_set("[a-f]", 0..4)),
            n,
        )
        .prop_map(|rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (e, t))| SentenceRecord::new(format!("sentence {i}"), t, e))
                .collect();
            SentenceBank::build(records).unwrap()
        })
    })
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-e]", 1..8).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retrieval_matches_sorting(bank in bank_strategy(60, 12), q in 0usize..60, k in 0usize..60, s in 0usize..3) {
        let q = q % bank.len();
        let sigma = [0.0, 0.5, 1.0][s];
        let k = k % bank.len();
        let query = Query::from_bank(&bank, q);
        let got = select_group(&query, &bank, sigma, k, true).unwrap();
        let scores: Vec<(usize, f64)> = (0..bank.len())
            .filter(|&i| i != q)
            .map(|i| {
                let r = bank.record(i);
                (i, sigma * common::cosine(query.embedding, &r.embedding)
                    + (1.0 - sigma) * common::jaccard(query.tokens, &r.tokens))
            })
            .collect();
        let want: Vec<usize> = common::top_k(&scores, k).into_iter().map(|e| e.0).collect();
        prop_assert_eq!(got.indices(), want);
        prop_assert!(!got.indices().contains(&q));
        prop_assert!(got.scores().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn stats_invariant_under_reordering(bank in bank_strategy(40, 8), rot in 0usize..40) {
        let n = bank.len();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).rev().collect();
        let a = compute_stats(&bank);
        let b = compute_stats(&bank.subset(&order).unwrap());
        for (x, y) in a.variance.iter().zip(&b.variance) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        for (x, y) in a.covariance_eigenvalues.iter().zip(&b.covariance_eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn eigenvalues_sum_to_trace(bank in bank_strategy(40, 10)) {
        let s = compute_stats(&bank);
        let trace: f64 = s.variance.iter().sum();
        let eig: f64 = s.covariance_eigenvalues.iter().sum();
        prop_assert!((trace - eig).abs() <= 1e-8 * trace.max(1.0));
        prop_assert!(s.covariance_eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.covariance_eigenvalues.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn effective_dimension_monotone(eig in prop::collection::vec(0.0f64..10.0, 1..20), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let mut eig = eig;
        eig[0] += 0.1;
        eig.sort_by(|x, y| y.total_cmp(x));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let dl = effective_dimension(&eig, lo).unwrap();
        let dh = effective_dimension(&eig, hi).unwrap();
        prop_assert!(dl <= dh);
        prop_assert!(dh <= eig.len());
        prop_assert!(dl >= 1);
    }

    #[test]
    fn bank_round_trips(bank in bank_strategy(20, 8)) {
        let bytes = bank.to_bytes().unwrap();
        let back = SentenceBank::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.records(), bank.records());
    }

    #[test]
    fn frames_round_trip(frames in (1usize..6, 1usize..6).prop_flat_map(|(n, d)| prop::collection::vec(embedding(d), n))) {
        let f = FrameSet::new("clip", frames).unwrap();
        let back = FrameSet::from_bytes(&f.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn softmax_shift_invariant(xs in prop::collection::vec(-20.0f64..20.0, 1..10), c in -1e3f64..1e3) {
        let p = softmax(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn target_probabilities_order_follows_scores(scores in prop::collection::vec(0.0f64..1.0, 0..6), lambda in 0.1f64..3.0) {
        let group = vec![vec![4u32]; scores.len()];
        let t = build_target(vec![4], group, &scores, lambda).unwrap();
        prop_assert_eq!(t.len(), scores.len() + 1);
        for (i, &s) in scores.iter().enumerate() {
            prop_assert_eq!(s > lambda, t.probs[i + 1] > t.probs[0]);
        }
    }

    #[test]
    fn noise_none_is_identity(x in embedding(6)) {
        let base: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let m = NoiseModel::new(NoiseMode::None, None, 6).unwrap();
        prop_assert_eq!(m.apply(&base, &mut sgcap::seed::rng(1)).unwrap(), base);
    }

    #[test]
    fn transfer_stays_in_hull(bank in bank_strategy(30, 6), v in embedding(6), tau in 1e-3f64..5.0) {
        let d = bank.dim();
        let visual: Vec<f64> = v[..d].iter().map(|&x| x as f64).collect();
        let w = domain_transfer_weights(&visual, &bank, tau).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let out = domain_transfer(&visual, &bank, tau).unwrap();
        for (j, &o) in out.iter().enumerate() {
            let lo = bank.records().iter().map(|r| r.embedding[j] as f64).fold(f64::INFINITY, f64::min);
            let hi = bank.records().iter().map(|r| r.embedding[j] as f64).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(o >= lo - 1e-6 && o <= hi + 1e-6);
        }
    }

    #[test]
    fn lower_tau_sharpens(bank in bank_strategy(30, 6), v in embedding(6), tau in 1e-2f64..2.0) {
        let d = bank.dim();
        let visual: Vec<f64> = v[..d].iter().map(|&x| x as f64).collect();
        let hot = domain_transfer_weights(&visual, &bank, tau).unwrap();
        let cold = domain_transfer_weights(&visual, &bank, tau / 2.0).unwrap();
        let max_hot = hot.iter().cloned().fold(0.0, f64::max);
        let max_cold = cold.iter().cloned().fold(0.0, f64::max);
        prop_assert!(max_cold >= max_hot - 1e-12);
    }

    #[test]
    fn frame_indices_in_range(n in 1usize..200, k in 0usize..40) {
        let idx = sample_frame_indices(n, k).unwrap();
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        if k >= 2 {
            prop_assert_eq!((idx[0], idx[k - 1]), (0, n - 1));
        }
    }

    #[test]
    fn metric_ranges_and_reference_order(pairs in prop::collection::vec((words(), prop::collection::vec(words(), 1..4)), 2..6)) {
        let build = |rev: bool| -> Vec<EvalPair> {
            pairs.iter().map(|(c, refs)| {
                let mut r: Vec<&str> = refs.iter().map(String::as_str).collect();
                if rev { r.reverse(); }
                EvalPair::from_text(c, &r).unwrap()
            }).collect()
        };
        let a = metrics::evaluate(&build(false)).unwrap();
        let b = metrics::evaluate(&build(true)).unwrap();
        for n in 0..4 {
            prop_assert!((0.0..=1.0).contains(&a.bleu[n]));
            prop_assert!((a.bleu[n] - b.bleu[n]).abs() <= 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&a.rouge_l));
        prop_assert!((a.rouge_l - b.rouge_l).abs() <= 1e-12);
        let (ca, cb) = (a.cider_d.unwrap(), b.cider_d.unwrap());
        prop_assert!((0.0..=10.0 + 1e-9).contains(&ca));
        prop_assert!((ca - cb).abs() <= 1e-9);
    }

    #[test]
    fn metrics_match_oracle(pairs in prop::collection::vec((words(), prop::collection::vec(words(), 1..4)), 2..6)) {
        let corpus: Vec<(&str, Vec<&str>)> = pairs.iter()
            .map(|(c, r)| (c.as_str(), r.iter().map(String::as_str).collect()))
            .collect();
        let ours: Vec<EvalPair> = corpus.iter().map(|(c, r)| EvalPair::from_text(c, r).unwrap()).collect();
        for n in 1..=4 {
            prop_assert!((metrics::bleu(&ours, n).unwrap() - common::bleu(&corpus, n)).abs() <= 1e-9);
        }
        prop_assert!((metrics::rouge_l(&ours).unwrap() - common::rouge_l(&corpus)).abs() <= 1e-9);
        prop_assert!((metrics::cider_d(&ours).unwrap() - common::cider_d(&corpus)).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoder_is_causal(seed in 0u64..1000, a in prop::collection::vec(3u32..12, 2..6), tail in 3u32..12) {
        let cfg = ModelConfig::tiny(8, 12);
        let m = ModelParams::from_weights(cfg.clone(), Weights::init_with_std(&cfg, seed, 0.3));
        let prefix = vec![vec![0.25; 8], vec![-0.5; 8]];
        let mut ids = vec![1u32];
        ids.extend(&a);
        let base = m.logits(&prefix, &ids).unwrap();
        let mut changed = ids.clone();
        *changed.last_mut().unwrap() = tail;
        let other = m.logits(&prefix, &changed).unwrap();
        for t in 0..ids.len() - 1 {
            prop_assert_eq!(&base[t], &other[t]);
        }
    }
}
