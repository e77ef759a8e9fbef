use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::metrics::auroc;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

fn balanced_labels(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i % 2) as u8).collect()
}

/// Labels with a 20% positive rate, plus an informative channel and a noise channel.
fn two_expert_scenario(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.2) as u8).collect();
    let a: Vec<f64> = labels.iter().map(|&y| y as f64 + normal.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    (a, b, labels)
}

fn random_nets(seed: u64) -> IafNets {
    let mut nets = IafNets::new(&[16, 16], &[16, 16], seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let params: Vec<f64> = nets.selector.flat_params().iter().map(|_| rng.gen_range(-0.8..0.8)).collect();
    nets.selector.set_flat_params(&params).unwrap();
    nets
}

fn random_batch(n: usize, seed: u64) -> FusionBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..2)).collect();
    FusionBatch::new(rows, labels).unwrap()
}

fn numeric_gradient(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

#[test]
fn normalization_statistics() {
    let x1 = noise(500, 1).iter().map(|v| 3.0 * v + 2.0).collect::<Vec<_>>();
    let x2 = vec![4.0; 500];
    let stats = NormStats::fit(&x1, &x2).unwrap();
    let rows = stats.apply(&x1, &x2).unwrap();
    let c0: Vec<f64> = rows.chunks(2).map(|r| r[0]).collect();
    let mean = c0.iter().sum::<f64>() / 500.0;
    let var = c0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 500.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-9);
    assert!(rows.chunks(2).all(|r| r[1] == 0.0));
    let held = stats.apply(&[5.0], &[4.0]).unwrap();
    assert_eq!(held[0], (5.0 - stats.mean[0]) / stats.std[0]);
}

#[test]
fn baseline_for_perfect_expert_is_near_zero() {
    let labels = balanced_labels(400);
    let perfect: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let batch = FusionBatch::new(NormStats::identity().apply(&perfect, &noise(400, 2)).unwrap(), labels).unwrap();
    let b = compute_baseline_b(&batch).unwrap();
    assert!(b.b < 1e-3, "b = {}", b.b);
    assert_eq!(b.b, b.c_3d);
}

#[test]
fn baseline_for_noise_is_near_ln2() {
    let labels = balanced_labels(2000);
    let batch = FusionBatch::new(NormStats::identity().apply(&noise(2000, 3), &noise(2000, 4)).unwrap(), labels).unwrap();
    let b = compute_baseline_b(&batch).unwrap();
    assert!((b.b - std::f64::consts::LN_2).abs() < 0.05, "b = {}", b.b);
}

#[test]
fn baseline_picks_informative_expert() {
    let (a, noise_ch, labels) = two_expert_scenario(2000, 5);
    let batch = FusionBatch::new(NormStats::identity().apply(&noise_ch, &a).unwrap(), labels).unwrap();
    let b = compute_baseline_b(&batch).unwrap();
    assert_eq!(b.b, b.c_2d);
    assert!(b.c_2d < b.c_3d);
}

#[test]
fn baseline_rejects_single_class() {
    let batch = FusionBatch::new(vec![0.0, 1.0, 2.0, 3.0], vec![0, 0]).unwrap();
    assert!(matches!(compute_baseline_b(&batch), Err(Error::SingleClass)));
}

#[test]
fn logistic_fit_recovers_generating_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x: Vec<f64> = (0..20000).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let y: Vec<u8> = x
        .iter()
        .map(|&v| rng.gen_bool(1.0 / (1.0 + (-(2.0 * v - 0.5f64)).exp())) as u8)
        .collect();
    let c = fit_logistic(&x, &y).unwrap();
    assert!((c.scale - 2.0).abs() < 0.15, "{c:?}");
    assert!((c.offset + 0.5).abs() < 0.1, "{c:?}");
}

#[test]
fn zero_init_selector_is_uniform() {
    let nets = IafNets::new(&[16, 16], &[16, 16], 7);
    let s = nets.selector_forward(&random_batch(50, 8).rows).unwrap();
    assert!(s.iter().all(|&v| v == 0.5));
}

#[test]
fn selector_is_rowwise() {
    let nets = random_nets(9);
    let batch = random_batch(20, 10);
    let s = nets.selector_forward(&batch.rows).unwrap();
    let mut reversed = Vec::new();
    for r in batch.rows.chunks(2).rev() {
        reversed.extend_from_slice(r);
    }
    let sr = nets.selector_forward(&reversed).unwrap();
    for i in 0..20 {
        assert_eq!(&s[2 * i..2 * i + 2], &sr[2 * (19 - i)..2 * (19 - i) + 2]);
        let single = nets.selector.predict(&batch.rows[2 * i..2 * i + 2]).unwrap();
        assert_eq!(&s[2 * i..2 * i + 2], single.as_slice());
        assert!((s[2 * i] + s[2 * i + 1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn predictor_silences_weighted_out_channel() {
    let nets = random_nets(11);
    let rows = vec![3.0, 0.5, -2.0, 0.5];
    let s = vec![0.0, 1.0, 0.0, 1.0];
    let (probs, a) = nets.predictor_forward(&rows, &s).unwrap();
    assert_eq!(a[0], a[1]);
    assert!(probs.chunks(2).all(|p| (p[0] + p[1] - 1.0).abs() < 1e-12));
    assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn gate_closes_below_threshold() {
    assert_eq!(gate(0.2, 0.5, 0.1), 0.0);
    assert_eq!(gate(0.4, 0.5, 0.1), 0.0);
    assert!((gate(0.7, 0.5, 0.1) - 0.3).abs() < 1e-15);
    let nets = random_nets(12);
    let batch = random_batch(16, 13);
    // b above every row's CE + m keeps the gate closed
    let ls = selector_loss(&nets, &batch, 100.0, 0.1).unwrap();
    assert_eq!(ls.value, 0.0);
    assert!(ls.selector.flat().iter().all(|&g| g == 0.0));
}

#[test]
fn uniform_selector_single_row_loss_is_r_ln2() {
    let nets = IafNets::new(&[16, 16], &[16, 16], 14);
    let batch = FusionBatch::new(vec![0.7, -0.3], vec![1]).unwrap();
    let lp = predictor_loss(&nets, &batch).unwrap().value;
    let (b, m) = (0.2, 0.1);
    let r0 = m - b + lp;
    assert!(r0 > 0.0);
    let ls = selector_loss(&nets, &batch, b, m).unwrap().value;
    assert!((ls - r0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn selector_loss_monotone_in_margin() {
    let nets = random_nets(15);
    let batch = random_batch(32, 16);
    let mut last = -1.0;
    for k in 0..30 {
        let v = selector_loss(&nets, &batch, 0.5, k as f64 * 0.05).unwrap().value;
        assert!(v >= last);
        last = v;
    }
}

#[test]
fn uniform_predictor_loss_is_ln2() {
    let mut nets = IafNets::new(&[16, 16], &[16, 16], 17);
    nets.predictor.zero_last_layer();
    let batch = random_batch(10, 18);
    let lp = predictor_loss(&nets, &batch).unwrap().value;
    assert!((lp - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn selector_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let nets = random_nets(100 + seed);
        let batch = random_batch(12, 200 + seed);
        let analytic = selector_loss(&nets, &batch, 0.3, 5.0).unwrap().selector.flat();
        let numeric = numeric_gradient(&nets.selector.flat_params(), |p| {
            let mut n = nets.clone();
            n.selector.set_flat_params(p).unwrap();
            selector_loss(&n, &batch, 0.3, 5.0).unwrap().value
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn predictor_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let nets = random_nets(300 + seed);
        let batch = random_batch(12, 400 + seed);
        let analytic = predictor_loss(&nets, &batch).unwrap().predictor.flat();
        let numeric = numeric_gradient(&nets.predictor.flat_params(), |p| {
            let mut n = nets.clone();
            n.predictor.set_flat_params(p).unwrap();
            predictor_loss(&n, &batch).unwrap().value
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn final_loss_cases() {
    assert_eq!(final_loss(0.4, 0.3, 0.0), 0.4);
    assert_eq!(final_loss(0.4, 0.3, 1.0), 0.7);
    assert_eq!(final_loss(0.4, 0.0, 1.0), 0.4);
    assert_eq!(IafConfig::default().margin, 0.1);
    assert_eq!(IafConfig::default().lambda, 1.0);
}

fn scenario_config() -> IafConfig {
    IafConfig {
        epochs: 20,
        seed: 3,
        ..IafConfig::default()
    }
}

#[test]
fn informative_expert_gets_more_weight() {
    let (a, b, labels) = two_expert_scenario(5000, 20);
    let (model, report) = train_iaf(&a, &b, &labels, &scenario_config()).unwrap();
    let w = model.mean_importance(&a, &b).unwrap();
    assert!(w[0] > w[1], "weights {w:?}");
    let fused = model.fuse_point_scores(&a, &b).unwrap();
    let best = auroc(&a, &labels).unwrap().max(auroc(&b, &labels).unwrap());
    assert!(auroc(&fused, &labels).unwrap() >= best - 0.02);
    assert!(report.history.iter().all(|e| e.final_loss.is_finite()));
}

#[test]
fn identical_channels_lose_nothing() {
    let (a, _, labels) = two_expert_scenario(5000, 21);
    let (model, report) = train_iaf(&a, &a, &labels, &scenario_config()).unwrap();
    let fused = model.fuse_point_scores(&a, &a).unwrap();
    assert!(auroc(&fused, &labels).unwrap() >= auroc(&a, &labels).unwrap() - 0.02);
    assert!(report.history.last().unwrap().predictor_loss <= model.baseline.b + 0.05);
}

#[test]
fn selector_frozen_during_warmup() {
    let (a, b, labels) = two_expert_scenario(600, 27);
    let config = IafConfig { epochs: 2, warmup_epochs: 2, ..scenario_config() };
    let (model, _) = train_iaf(&a, &b, &labels, &config).unwrap();
    let s = model.nets.selector_forward(&model.stats.apply(&a, &b).unwrap()).unwrap();
    assert!(s.iter().all(|&v| v == 0.5));
}

#[test]
fn training_is_deterministic() {
    let (a, b, labels) = two_expert_scenario(600, 22);
    let config = IafConfig { epochs: 5, ..scenario_config() };
    let (m1, r1) = train_iaf(&a, &b, &labels, &config).unwrap();
    let (m2, r2) = train_iaf(&a, &b, &labels, &config).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
}

#[test]
fn max_rows_subsamples() {
    let (a, b, labels) = two_expert_scenario(600, 23);
    let config = IafConfig { epochs: 2, max_rows: Some(100), ..scenario_config() };
    let (_, report) = train_iaf(&a, &b, &labels, &config).unwrap();
    assert_eq!(report.rows_used, 100);
}

#[test]
fn object_fusion_matches_point_row() {
    let (a, b, labels) = two_expert_scenario(400, 24);
    let config = IafConfig { epochs: 3, ..scenario_config() };
    let (model, _) = train_iaf(&a, &b, &labels, &config).unwrap();
    let point = model.fuse_point_scores(&a, &b).unwrap();
    assert_eq!(model.fuse_object_scores(a[7], b[7]).unwrap(), point[7]);
    let constant = model.fuse_point_scores(&[0.0; 5], &[0.0; 5]).unwrap();
    assert!(constant.iter().all(|&v| v == constant[0]));
}

#[test]
fn fixed_fusion_rules() {
    assert_eq!(BaselineFuser::Max.fuse(&[0.2, 0.8], &[0.5, 0.1]).unwrap(), vec![0.5, 0.8]);
    assert_eq!(BaselineFuser::Add.fuse(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), vec![0.4, 1.6]);
    assert!(matches!(BaselineFuser::Linear(None).fuse(&[0.1], &[0.1]), Err(Error::LinearNotFitted)));
    let (a, b, labels) = two_expert_scenario(2000, 25);
    let w = LinearFuser::fit(&a, &b, &labels).unwrap();
    assert!(w.w2.abs() / w.w1.abs() < 0.3, "{w:?}");
    assert_eq!(FusionStrategy::parse("add"), Some(FusionStrategy::Add));
    assert_eq!(FusionStrategy::parse("mean"), None);
}

#[test]
fn bundle_round_trip() {
    let (a, b, labels) = two_expert_scenario(300, 26);
    let config = IafConfig { epochs: 2, ..scenario_config() };
    let (model, _) = train_iaf(&a, &b, &labels, &config).unwrap();
    let linear = LinearFuser::fit(&a, &b, &labels).unwrap();
    let bundle = FusionBundle::new(&model, Some(linear), "abc");
    let json = serde_json::to_string(&bundle).unwrap();
    let back: FusionBundle = serde_json::from_str(&json).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.model().unwrap(), model);
}
