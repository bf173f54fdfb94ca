//! End-to-end invariants of the training loop: ablation identities,
//! bitwise determinism, trace bookkeeping, and input validation.

use osaa_core::nn::NetConfig;
use osaa_core::synth::{gen_synthetic, SynthSpec};
use osaa_core::train::{train, train_source_only, TrainConfig, TrainOutput};

fn expect_err(r: osaa_core::Result<TrainOutput<f32>>) -> osaa_core::Error {
    match r {
        Ok(_) => panic!("training unexpectedly succeeded"),
        Err(e) => e,
    }
}

fn tiny_spec() -> SynthSpec {
    let mut spec = SynthSpec::default();
    spec.classes = 2;
    spec.m = 160;
    spec.n_per_domain = 24;
    spec.distant_fraction = 0.25;
    spec
}

fn tiny_net() -> NetConfig {
    let mut net = NetConfig::default();
    net.channels = 4;
    net.kernel = 3;
    net.adaptive_out = 2;
    net.classifier_hidden = 8;
    net.disc_hidden = 8;
    net
}

fn tiny_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.batch = 8;
    cfg.epochs = 2;
    cfg.net = tiny_net();
    cfg.seed = 42;
    cfg
}

#[test]
fn full_method_smoke_run_trains_and_scores() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cfg = tiny_cfg();
    let out = train::<f32>(&cfg, &source, &target, cfg.seed, false).unwrap();
    assert_eq!(out.epoch_traces.len(), 2);
    for tr in &out.epoch_traces {
        assert!(tr.objective.is_finite() && tr.recon.is_finite() && tr.task.is_finite());
        assert!(tr.disc_bce > 0.0, "adversarial term must be live");
        // Keep portion 50 on batch 8 keeps exactly 4, every step.
        assert!((tr.kept_source_rate - 0.5).abs() < 1e-12);
        assert!((tr.kept_intermediate_rate - 0.5).abs() < 1e-12);
    }
    // 24 target rows at split fraction 0.8: 19 train, 5 held out.
    assert_eq!(out.target_test.n, 5);
    assert_eq!(out.final_eval.n, 5);
    assert!((0.0..=1.0).contains(&out.final_eval.macro_f1));
    let sum: usize = out.final_eval.confusion.iter().flatten().sum();
    assert_eq!(sum, 5, "confusion entries must sum to the test-set size");
}

#[test]
fn selection_ablation_is_bitwise_identical_to_full_keep() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let mut ablated = tiny_cfg();
    ablated.keep_portion = 50.0;
    ablated.ablations.selection = true;
    let mut full_keep = tiny_cfg();
    full_keep.keep_portion = 100.0;

    let a = train::<f32>(&ablated, &source, &target, 42, false).unwrap();
    let b = train::<f32>(&full_keep, &source, &target, 42, false).unwrap();
    for (pa, pb) in a.networks.params.iter().zip(&b.networks.params) {
        assert_eq!(pa.name, pb.name);
        let bits_a: Vec<u32> = pa.values.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = pb.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {} diverged", pa.name);
    }
    assert_eq!(
        serde_json::to_string(&a.final_eval).unwrap(),
        serde_json::to_string(&b.final_eval).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&a.epoch_traces).unwrap(),
        serde_json::to_string(&b.epoch_traces).unwrap()
    );
}

/// With the adversarial weight at zero, gradient reversal transmits
/// nothing upstream, so the encoder, decoder, and classifier must follow
/// exactly the trajectory of a run with no discriminator at all. The
/// discriminator still trains on its own loss in the first run; only its
/// parameters may differ.
#[test]
fn zero_adversarial_weight_matches_discriminator_ablation() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let mut zero_l2 = tiny_cfg();
    zero_l2.lambda2 = 0.0;
    let mut no_disc = tiny_cfg();
    no_disc.ablations.discriminator = true;

    let a = train::<f32>(&zero_l2, &source, &target, 42, false).unwrap();
    let b = train::<f32>(&no_disc, &source, &target, 42, false).unwrap();
    assert!(a.networks.has_discriminator);
    assert!(!b.networks.has_discriminator);
    for pb in &b.networks.params {
        let pa = &a.networks.params[a.networks.param_index(&pb.name)];
        let bits_a: Vec<u32> = pa.values.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = pb.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {} diverged", pb.name);
    }
    for (ta, tb) in a.epoch_traces.iter().zip(&b.epoch_traces) {
        assert_eq!(ta.recon.to_bits(), tb.recon.to_bits());
        assert_eq!(ta.task.to_bits(), tb.task.to_bits());
        // objective = recon + l1*task - 0*bce on one side, the same sum
        // with no adversarial term on the other.
        assert_eq!(ta.objective.to_bits(), tb.objective.to_bits());
        assert!(ta.disc_bce > 0.0 && tb.disc_bce == 0.0);
    }
    assert_eq!(
        serde_json::to_string(&a.final_eval).unwrap(),
        serde_json::to_string(&b.final_eval).unwrap()
    );
}

#[test]
fn identical_runs_reproduce_bitwise() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cfg = tiny_cfg();
    let a = train::<f32>(&cfg, &source, &target, 42, true).unwrap();
    let b = train::<f32>(&cfg, &source, &target, 42, true).unwrap();
    for (pa, pb) in a.networks.params.iter().zip(&b.networks.params) {
        let bits_a: Vec<u32> = pa.values.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = pb.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {} not reproducible", pa.name);
    }
    assert_eq!(
        serde_json::to_string(&a.final_eval).unwrap(),
        serde_json::to_string(&b.final_eval).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&a.mask_trace).unwrap(),
        serde_json::to_string(&b.mask_trace).unwrap()
    );
}

#[test]
fn different_run_seeds_share_the_held_out_split() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cfg = tiny_cfg();
    let a = train::<f32>(&cfg, &source, &target, 42, false).unwrap();
    let b = train::<f32>(&cfg, &source, &target, 43, false).unwrap();
    assert_eq!(a.target_test.signals, b.target_test.signals);
    assert_eq!(a.target_test.labels, b.target_test.labels);
}

#[test]
fn source_only_baseline_trains_on_labels_alone() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cfg = tiny_cfg();
    let out = train_source_only::<f32>(&cfg, &source, &target, 42).unwrap();
    assert!(!out.networks.has_decoder && !out.networks.has_discriminator);
    for tr in &out.epoch_traces {
        assert_eq!(tr.recon, 0.0);
        assert_eq!(tr.disc_bce, 0.0);
        assert!((tr.kept_source_rate - 1.0).abs() < 1e-12);
        assert!(tr.task.is_finite());
    }
    assert_eq!(out.final_eval.n, 5);
}

#[test]
fn mask_trace_covers_every_step_and_domain() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cfg = tiny_cfg();
    // Source 24, target-train 19, intermediate 12+9=21 rows; at batch 8
    // the longest domain sets 3 steps per epoch.
    let out = train::<f32>(&cfg, &source, &target, 42, true).unwrap();
    let steps = 3 * cfg.epochs;
    assert_eq!(out.mask_trace.len(), 2 * steps);
    for row in &out.mask_trace {
        assert_eq!(row.batch, 8);
        assert_eq!(row.kept, 4, "50 percent of 8 is 4 kept, domain {}", row.domain);
        assert!(row.threshold.is_finite());
    }
    let mut no_mid = tiny_cfg();
    no_mid.ablations.intermediate = true;
    let out = train::<f32>(&no_mid, &source, &target, 42, true).unwrap();
    assert_eq!(out.mask_trace.len(), steps);
    assert!(out.mask_trace.iter().all(|r| r.domain == "source"));
}

#[test]
fn invalid_configurations_are_rejected_up_front() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cases: Vec<(&str, Box<dyn Fn(&mut TrainConfig)>)> = vec![
        ("lr", Box::new(|c| c.lr = 0.0)),
        ("keep_portion", Box::new(|c| c.keep_portion = 150.0)),
        ("keep_portion_intermediate", Box::new(|c| c.keep_portion_intermediate = Some(-1.0))),
        ("batch", Box::new(|c| c.batch = 1)),
        ("epochs", Box::new(|c| c.epochs = 0)),
        ("split_fraction", Box::new(|c| c.split_fraction = 1.0)),
        ("lambda1", Box::new(|c| c.lambda1 = -0.1)),
    ];
    for (field, mutate) in cases {
        let mut cfg = tiny_cfg();
        mutate(&mut cfg);
        let err = expect_err(train::<f32>(&cfg, &source, &target, 42, false));
        let msg = err.to_string();
        assert!(msg.contains(field), "error for {field} must name it, got: {msg}");
    }
}

#[test]
fn incompatible_datasets_are_rejected_with_diagnostics() {
    let (source, target, _) = gen_synthetic(&tiny_spec(), 7).unwrap();
    let cfg = tiny_cfg();

    let mut unlabeled = source.clone();
    unlabeled.labels = None;
    let err = expect_err(train::<f32>(&cfg, &unlabeled, &target, 42, false));
    assert!(err.to_string().contains("unlabeled"));

    let mut longer = tiny_spec();
    longer.m = 192;
    let (source_b, _, _) = gen_synthetic(&longer, 9).unwrap();
    let err = expect_err(train::<f32>(&cfg, &source_b, &target, 42, false));
    let msg = err.to_string();
    assert!(msg.contains("192") && msg.contains("160"), "must name both lengths: {msg}");
}
