use metaprune::analysis::{bin_traces, compare_strategies, rank_auc, summarize, tier_report};
use metaprune::{
    generate, prune, CorpusSpec, PruneSpec, RngStream, ScoreRecord, Strategy, StreamId, Tier, TraceRow, TrainConfig,
};
use proptest::prelude::*;

fn score(id: &str, p: f64) -> ScoreRecord {
    ScoreRecord {
        sample_id: id.into(),
        raw_score: -p,
        percentile: p,
    }
}

fn trace(id: &str, epoch: usize, loss: f64, grad_norm: f64) -> TraceRow {
    TraceRow {
        sample_id: id.into(),
        epoch,
        loss,
        grad_norm,
    }
}

/// Brute-force pair count: lower percentile wins, ties count half.
fn pairwise_auc(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0.0;
    for x in a {
        for y in b {
            wins += if x < y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (a.len() * b.len()) as f64
}

#[test]
fn hand_computed_bin_summary() {
    // 4 samples at percentiles 0, 25, 50, 75 and 2 bins over 2 epochs
    let scores = [score("a", 0.0), score("b", 25.0), score("c", 50.0), score("d", 75.0)];
    let traces = [
        trace("a", 1, 1.0, 4.0),
        trace("b", 1, 3.0, 2.0),
        trace("c", 1, 5.0, 1.0),
        trace("d", 1, 7.0, 3.0),
        trace("a", 2, 0.5, 1.0),
        trace("b", 2, 1.5, 1.0),
        trace("c", 2, 2.0, 0.0),
        trace("d", 2, 4.0, 2.0),
    ];
    let bins = bin_traces(&traces, &scores, 2).unwrap();
    let got: Vec<(usize, usize, f64, f64, usize)> = bins
        .iter()
        .map(|b| (b.epoch, b.bin, b.mean_loss, b.mean_grad_norm, b.count))
        .collect();
    assert_eq!(
        got,
        [
            (1, 0, 2.0, 3.0, 2),
            (1, 1, 6.0, 2.0, 2),
            (2, 0, 1.0, 1.0, 2),
            (2, 1, 3.0, 1.0, 2),
        ]
    );
    assert_eq!((bins[1].bin_lo, bins[1].bin_hi), (50.0, 100.0));
}

#[test]
fn empty_bins_are_omitted() {
    let scores = [score("a", 5.0), score("b", 95.0)];
    let traces = [trace("a", 1, 1.0, 1.0), trace("b", 1, 2.0, 2.0)];
    let bins = bin_traces(&traces, &scores, 10).unwrap();
    assert_eq!(bins.iter().map(|b| b.bin).collect::<Vec<_>>(), [0, 9]);
}

#[test]
fn random_percentiles_give_auc_near_half() {
    let mut rng = RngStream::new(4, StreamId::Sampler);
    let a: Vec<f64> = (0..2000).map(|_| 100.0 * rng.unit()).collect();
    let b: Vec<f64> = (0..2000).map(|_| 100.0 * rng.unit()).collect();
    assert!((rank_auc(&a, &b).unwrap() - 0.5).abs() < 0.03);
}

#[test]
fn tier_report_counts_and_shares() {
    let corpus = generate(&CorpusSpec {
        size: 100,
        seed: 2,
        ..CorpusSpec::default()
    })
    .unwrap();
    // oracle ranking: plain first, then informative, then chaotic
    let mut ordered = corpus.clone();
    ordered.sort_by_key(|s| (s.tier.unwrap().index(), s.id.clone()));
    let scores: Vec<ScoreRecord> = ordered
        .iter()
        .enumerate()
        .map(|(i, s)| score(&s.id, i as f64))
        .collect();
    let sub = prune(&scores, &PruneSpec::new(Strategy::Topk, 30, 0)).unwrap();
    let r = tier_report(&scores, &corpus, Some(&sub)).unwrap();
    assert_eq!(r.count, [30, 50, 20]);
    assert_eq!(r.auc_plain_informative, 1.0);
    assert_eq!(r.auc_informative_chaotic, 1.0);
    assert_eq!(r.subset_share, [1.0, 0.0, 0.0]);
    assert_eq!(r.tier_retained, [1.0, 0.0, 0.0]);
    assert!(r.mean_percentile[0] < r.mean_percentile[1] && r.mean_percentile[1] < r.mean_percentile[2]);
    let _ = Tier::Plain;
}

#[test]
fn comparison_is_invariant_to_spec_order() {
    let corpus = generate(&CorpusSpec {
        size: 120,
        seed: 5,
        ..CorpusSpec::default()
    })
    .unwrap();
    let (train, val) = corpus.split_at(100);
    let scores: Vec<ScoreRecord> = train.iter().enumerate().map(|(i, s)| score(&s.id, i as f64)).collect();
    let specs = [
        PruneSpec::new(Strategy::Random, 50, 0),
        PruneSpec::new(Strategy::Topk, 50, 0),
        PruneSpec::new(Strategy::ShiftGsample, 50, 0),
    ];
    let cfg = TrainConfig {
        epochs: 3,
        hidden: vec![8],
        ..TrainConfig::default()
    };
    let a = compare_strategies(train, val, &scores, &specs, &[1, 2], &cfg).unwrap();
    let mut rev = specs.to_vec();
    rev.reverse();
    let b = compare_strategies(train, val, &scores, &rev, &[2, 1], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3 * 2 * 3);
    let summary = summarize(&a);
    assert_eq!(summary.len(), 3);
    for s in &summary {
        assert_eq!(s.final_losses.len(), 2);
        let last: Vec<f64> = a
            .iter()
            .filter(|r| r.strategy == s.strategy && r.epoch == 3)
            .map(|r| r.val_loss)
            .collect();
        assert_eq!(s.median_final_loss, 0.5 * (last[0] + last[1]));
    }

    let mismatched = [
        PruneSpec::new(Strategy::Random, 50, 0),
        PruneSpec::new(Strategy::Topk, 40, 0),
    ];
    assert!(compare_strategies(train, val, &scores, &mismatched, &[1], &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_matches_pairwise_count(
        a in prop::collection::vec(0u8..20, 1..30),
        b in prop::collection::vec(0u8..20, 1..30),
    ) {
        let a: Vec<f64> = a.into_iter().map(|v| 5.0 * v as f64).collect();
        let b: Vec<f64> = b.into_iter().map(|v| 5.0 * v as f64).collect();
        let got = rank_auc(&a, &b).unwrap();
        prop_assert!((got - pairwise_auc(&a, &b)).abs() < 1e-12);
    }

    /// Every trace lands in exactly one bin.
    #[test]
    fn bin_counts_conserve_traces(pcts in prop::collection::vec(0.0f64..100.0, 1..60), bins in 1usize..12, epochs in 1usize..4) {
        let scores: Vec<ScoreRecord> = pcts.iter().enumerate().map(|(i, &p)| score(&format!("x{i}"), p)).collect();
        let traces: Vec<TraceRow> = (1..=epochs)
            .flat_map(|e| (0..pcts.len()).map(move |i| trace(&format!("x{i}"), e, i as f64, 1.0)))
            .collect();
        let out = bin_traces(&traces, &scores, bins).unwrap();
        prop_assert_eq!(out.iter().map(|b| b.count).sum::<usize>(), traces.len());
        let total: f64 = out.iter().map(|b| b.mean_loss * b.count as f64).sum();
        let want: f64 = traces.iter().map(|t| t.loss).sum();
        prop_assert!((total - want).abs() < 1e-9 * (1.0 + want));
    }
}
