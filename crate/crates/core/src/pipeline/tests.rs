use super::*;
use crate::shapes::{benchmark_split, BenchmarkConfig, ShapeConfig, ShapeKind};

pub(crate) fn tiny_config() -> RunConfig {
    let mut c = RunConfig::benchmark();
    c.sdf.encoder_hidden = vec![8, 16];
    c.sdf.latent_dim = 16;
    c.sdf.decoder_hidden = vec![16, 16];
    c.sdf.patch_size = 16;
    c.sdf.patches_per_cloud = 4;
    c.sdf.epochs = 2;
    c.bank.patches_per_cloud = 24;
    c.features2d.resolution = (24, 24);
    c.synthesis.n_samples = 6;
    c.iaf.epochs = 3;
    c.resolved()
}

fn tiny_bench() -> BenchmarkConfig {
    BenchmarkConfig {
        shape: ShapeConfig {
            points: 200,
            ..ShapeConfig::default()
        },
        train_clouds: 3,
        test_clouds: 4,
        test_normal_fraction: 0.5,
    }
}

#[test]
fn config_round_trips_and_rejects_unknown_fields() {
    let c = RunConfig::benchmark();
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    let partial: RunConfig = serde_json::from_str(r#"{"seed": 4, "iaf": {"margin": 0.2}}"#).unwrap();
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.iaf.margin, 0.2);
    assert_eq!(partial.iaf.epochs, 150);
    assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 4}"#).is_err());
}

#[test]
fn hashes_track_their_stage() {
    let base = RunConfig::default();
    assert_eq!(base.experts_hash(), RunConfig::default().experts_hash());
    assert_eq!(base.experts_hash().len(), 64);

    let mut iaf = base.clone();
    iaf.iaf.margin = 0.3;
    iaf.limits = vec![0.3];
    iaf.fusion = FusionStrategy::Max;
    assert_eq!(iaf.experts_hash(), base.experts_hash());
    assert_ne!(iaf.fusion_hash(), base.fusion_hash());

    let mut sdf = base.clone();
    sdf.sdf.epochs += 1;
    assert_ne!(sdf.experts_hash(), base.experts_hash());
    assert_eq!(sdf.dataset_hash(), base.dataset_hash());
    assert_ne!(sdf.fusion_hash(), base.fusion_hash());
}

#[test]
fn validation_ranges() {
    assert!(RunConfig::default().validate().is_ok());
    let mut c = RunConfig::default();
    c.bank.retention_fraction = 0.0;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = RunConfig::default();
    c.iaf.margin = -0.1;
    assert!(c.validate().is_err());
    let mut c = RunConfig::default();
    c.limits = vec![0.3, 1.5];
    assert!(c.validate().is_err());
}

#[test]
fn resolved_propagates_seed() {
    let c = RunConfig {
        seed: 11,
        ..RunConfig::default()
    }
    .resolved();
    assert_eq!((c.sdf.seed, c.iaf.seed), (11, 11));
}

#[test]
fn normal_policy() {
    let cloud = PointCloud::new((0..50).map(|i| [(i % 7) as f64, (i / 7) as f64, 0.0]).collect())
        .unwrap()
        .with_labels(vec![1; 50])
        .unwrap();
    let off = NormalConfig {
        estimate: false,
        k: 8,
    };
    assert!(matches!(prepare_cloud(cloud.clone(), &off), Err(Error::InvalidCloud(_))));
    let prepared = prepare_cloud(cloud, &NormalConfig::default()).unwrap();
    assert!(prepared.normals().is_some());
    assert_eq!(prepared.labels().unwrap(), &[1u8; 50][..]);
}

#[test]
fn end_to_end_in_memory() {
    let config = tiny_config();
    let split = benchmark_split(ShapeKind::Sphere, &tiny_bench(), &config.synthesis, 1).unwrap();
    let train: Vec<PointCloud> = split
        .train
        .into_iter()
        .map(|c| prepare_cloud(c, &config.normals).unwrap())
        .collect();
    let (experts, report) = train_experts(&train, &config).unwrap();
    assert_eq!(report.loss_history.len(), 2);
    assert!(experts.bank.bank3d.len() >= 1);

    let dprime = crate::synthesis::generate_dataset(&train, 5, &config.synthesis).unwrap();
    let mut maps = Vec::new();
    let mut labels = Vec::new();
    for s in &dprime {
        let cloud = prepare_cloud(s.cloud.clone(), &config.normals).unwrap();
        let m = expert_maps(&experts, &cloud, &config).unwrap();
        assert_eq!((m.x1.len(), m.x2.len()), (cloud.len(), cloud.len()));
        assert!(m.x1.iter().chain(&m.x2).all(|v| v.is_finite() && *v >= 0.0));
        maps.push(m);
        labels.push(s.labels().to_vec());
    }
    let (fusion, _) = train_fusion(&maps, &labels, &config.iaf).unwrap();
    let (again, _) = train_fusion(&maps, &labels, &config.iaf).unwrap();
    assert_eq!(fusion, again);

    let tests: Vec<TestSample> = split
        .test
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = prepare_cloud(s.cloud.clone(), &config.normals).unwrap();
            score_test_sample(&experts, &cloud, &i.to_string(), &config).unwrap()
        })
        .collect();
    let mut sources = vec![ScoreSource::Expert3d, ScoreSource::Expert2d];
    sources.extend(FusionStrategy::ALL.map(ScoreSource::Fused));
    for source in sources {
        for t in &tests {
            let (points, _) = score_maps(source, &fusion, &t.maps).unwrap();
            assert_eq!(points.len(), t.labels.len());
        }
        let report = evaluate_source("sphere", source, &fusion, &tests, &config.limits).unwrap();
        assert!(report.is_complete(), "{:?}", report.errors);
        assert_eq!(report.aupro.len(), 7);
    }
    let (iaf, object) = score_maps(ScoreSource::Fused(FusionStrategy::Iaf), &fusion, &tests[0].maps).unwrap();
    assert!(iaf.iter().chain([&object]).all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(score_maps(ScoreSource::Expert3d, &fusion, &tests[0].maps).unwrap().0, tests[0].maps.x1);
}

#[test]
fn fixed_rules_use_normalized_channels() {
    let config = tiny_config();
    let maps = vec![ExpertMaps {
        x1: vec![0.0, 1.0, 2.0, 3.0],
        x2: vec![10.0, 30.0, 20.0, 40.0],
        s1: 3.0,
        s2: 40.0,
    }];
    let (fusion, _) = train_fusion(&maps, &[vec![0, 1, 0, 1]], &config.iaf).unwrap();
    let (add, object) = score_maps(ScoreSource::Fused(FusionStrategy::Add), &fusion, &maps[0]).unwrap();
    let rows = fusion.model.stats.apply(&maps[0].x1, &maps[0].x2).unwrap();
    for (i, a) in add.iter().enumerate() {
        assert_eq!(*a, rows[2 * i] + rows[2 * i + 1]);
    }
    assert_eq!(object, add[3]);
}

#[test]
fn default_hyperparameters() {
    let c = RunConfig::default();
    assert_eq!((c.iaf.margin, c.iaf.lambda), (0.1, 1.0));
    assert_eq!((c.iaf.epochs, c.iaf.batch_size, c.iaf.lr), (150, 32, 0.01));
    assert_eq!(c.synthesis.n_samples, 800);
    assert_eq!(c.sdf.latent_dim, 128);
    assert_eq!(c.limits, vec![0.3, 0.2, 0.1, 0.07, 0.05, 0.03, 0.01]);
    assert_eq!(c.limits, crate::metrics::DEFAULT_LIMITS.to_vec());
}
