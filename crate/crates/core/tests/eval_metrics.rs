//! Scoring, aggregation, prediction, and sweep-table plumbing checks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use osaa_core::data::{DomainDataset, NormStats};
use osaa_core::eval::{
    aggregate, config_hash, predict, score, sweep_csv, sweep_pairs, SweepAxis, SweepCell,
};
use osaa_core::nn::{NetConfig, Networks};
use osaa_core::train::TrainConfig;

/// Straight per-class counting, no confusion matrix: the independent
/// reference for precision/recall/F1.
fn brute_force_macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count();
        let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t != c).count();
        let fal_n = pred.iter().zip(truth).filter(|&(&p, &t)| p != c && t == c).count();
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fal_n > 0 { tp as f64 / (tp + fal_n) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1;
    }
    total / classes as f64
}

#[test]
fn macro_f1_matches_brute_force_counting_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let classes = rng.random_range(2..6usize);
        let n = rng.random_range(1..60usize);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let case = score(&pred, &truth, classes).unwrap();
        let want = brute_force_macro_f1(&pred, &truth, classes);
        assert_eq!(case.macro_f1, want, "pred {pred:?} truth {truth:?}");
        let sum: usize = case.confusion.iter().flatten().sum();
        assert_eq!(sum, n);
    }
}

#[test]
fn balanced_two_class_confusion_scores_one_half() {
    // Per class: one true positive, one false positive, one false
    // negative, so precision = recall = F1 = 0.5 for both classes.
    let truth = [0, 0, 1, 1];
    let pred = [0, 1, 0, 1];
    let case = score(&pred, &truth, 2).unwrap();
    assert_eq!(case.macro_f1, 0.5);
    assert_eq!(case.micro_f1, 0.5);
    for scores in case.per_class.values() {
        assert_eq!(scores.precision, 0.5);
        assert_eq!(scores.recall, 0.5);
        assert_eq!(scores.f1, 0.5);
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let truth = [0, 1, 2, 0, 1, 2];
    let case = score(&truth, &truth, 3).unwrap();
    assert_eq!(case.macro_f1, 1.0);
    assert_eq!(case.micro_f1, 1.0);
    assert!(case.warnings.is_empty());
}

#[test]
fn class_absent_from_both_sides_warns_and_scores_zero() {
    let truth = [0, 1, 0, 1];
    let pred = [0, 1, 0, 1];
    let case = score(&pred, &truth, 3).unwrap();
    assert_eq!(case.warnings.len(), 1);
    assert!(case.warnings[0].contains("class 2"));
    assert_eq!(case.per_class[&2].f1, 0.0);
    assert!((case.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn out_of_range_labels_are_rejected() {
    let err = score(&[0, 3], &[0, 1], 3).map(|_| ()).unwrap_err();
    assert!(err.to_string().contains("3"));
    let err = score(&[0], &[0, 1], 3).map(|_| ()).unwrap_err();
    assert!(err.to_string().contains("count"));
}

#[test]
fn aggregate_matches_two_point_closed_form() {
    let agg = aggregate(&[0.6, 0.8]).unwrap();
    assert!((agg.mean - 0.7).abs() < 1e-15);
    assert!((agg.std - 0.02f64.sqrt()).abs() < 1e-15);
    let rev = aggregate(&[0.8, 0.6]).unwrap();
    assert_eq!(agg.mean, rev.mean);
    assert_eq!(agg.std, rev.std);

    let same = aggregate(&[0.4, 0.4, 0.4]).unwrap();
    assert_eq!(same.std, 0.0);
    let single = aggregate(&[0.9]).unwrap();
    assert_eq!((single.mean, single.std), (0.9, 0.0));
    assert!(aggregate(&[]).is_err());
}

fn tiny_nets() -> Networks<f64> {
    let mut cfg = NetConfig::default();
    cfg.input_len = 32;
    cfg.classes = 3;
    cfg.channels = 4;
    cfg.kernel = 3;
    cfg.adaptive_out = 2;
    cfg.classifier_hidden = 6;
    cfg.disc_hidden = 6;
    Networks::<f64>::init(&cfg, 5, false, false).unwrap()
}

fn tiny_dataset(n: usize, m: usize, seed: u64) -> DomainDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DomainDataset {
        name: "t".into(),
        n,
        m,
        classes: 3,
        signals: (0..n * m).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        labels: Some((0..n).map(|i| (i % 3) as u8).collect()),
    }
}

const ID_STATS: NormStats = NormStats { mean: 0.0, std: 1.0 };

#[test]
fn zero_weight_network_predicts_class_zero_under_tie_rule() {
    let mut nets = tiny_nets();
    for p in &mut nets.params {
        p.values.iter_mut().for_each(|v| *v = 0.0);
    }
    let ds = tiny_dataset(7, 32, 1);
    let preds = predict(&nets, &ds, &ID_STATS, 4).unwrap();
    assert_eq!(preds, vec![0; 7]);
}

#[test]
fn prediction_is_per_sample_pure_and_chunk_invariant() {
    let nets = tiny_nets();
    let ds = tiny_dataset(9, 32, 2);
    let whole = predict(&nets, &ds, &ID_STATS, 9).unwrap();
    let chunked = predict(&nets, &ds, &ID_STATS, 2).unwrap();
    assert_eq!(whole, chunked);

    // Reversing the rows permutes the predictions identically.
    let rows: Vec<usize> = (0..ds.n).rev().collect();
    let reversed = ds.subset(&rows, "rev", true);
    let rev_preds = predict(&nets, &reversed, &ID_STATS, 4).unwrap();
    let expect: Vec<usize> = whole.iter().rev().copied().collect();
    assert_eq!(rev_preds, expect);
}

#[test]
fn prediction_rejects_mismatched_window_length() {
    let nets = tiny_nets();
    let ds = tiny_dataset(3, 48, 3);
    let err = predict(&nets, &ds, &ID_STATS, 4).map(|_| ()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("48") && msg.contains("32"), "{msg}");
}

#[test]
fn config_hash_tracks_content() {
    let a = TrainConfig::default();
    let mut b = TrainConfig::default();
    assert_eq!(config_hash(&a), config_hash(&b));
    b.lr *= 2.0;
    assert_ne!(config_hash(&a), config_hash(&b));
}

#[test]
fn sweep_grids_expand_to_the_documented_tables() {
    let keep = sweep_pairs(SweepAxis::Keep, &[0.0, 50.0]);
    assert_eq!(keep, vec![(0.0, 0.0), (0.0, 50.0), (50.0, 0.0), (50.0, 50.0)]);

    let weights = sweep_pairs(SweepAxis::Weights, &[0.03, 0.3, 3.0, 30.0]);
    assert_eq!(weights.len(), 8);
    assert!(weights[..4].iter().all(|&(l1, _)| l1 == 1.0));
    assert!(weights[4..].iter().all(|&(_, l2)| l2 == 0.3));

    let csv = sweep_csv(
        SweepAxis::Keep,
        &[SweepCell {
            axis1: 0.0,
            axis2: 50.0,
            mean_f1: Some(0.5),
            std_f1: Some(0.125),
            status: "ok".into(),
        }],
    );
    assert_eq!(csv, "keep_source,keep_intermediate,mean_f1,std_f1,status\n0,50,0.5,0.125,ok\n");

    let csv = sweep_csv(
        SweepAxis::Weights,
        &[SweepCell { axis1: 1.0, axis2: 0.3, mean_f1: None, std_f1: None, status: "failed: x".into() }],
    );
    assert!(csv.starts_with("lambda1,lambda2,"));
    assert!(csv.contains("1,0.3,nan,nan,failed: x"));
}
