//! End-to-end run configuration and the in-memory stages shared by every command.

pub mod commands;
pub mod svg;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{build_dual_bank, object_scores, score_x2, CloudFeatures, DualMemoryBank};
use crate::descriptors::{point_features_2d, Feature2dConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    train_iaf, BaselineFuser, FusionStrategy, IafConfig, IafModel, IafReport, LinearFuser,
};
use crate::geometry::{estimate_normals, PointCloud, Viewpoint};
use crate::metrics::{evaluate_all, label_regions, EvalReport, SampleEval, DEFAULT_LIMITS};
use crate::sdf::{cloud_patches, pretrain_sdf, score_x1, LocalPatch, SdfConfig, SdfExpert, TrainReport};
use crate::synthesis::SynthesisConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalConfig {
    /// Re-estimate normals for every cloud; otherwise clouds must carry them.
    pub estimate: bool,
    pub k: usize,
}

impl Default for NormalConfig {
    fn default() -> Self {
        NormalConfig { estimate: true, k: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub retention_fraction: f64,
    pub k1: usize,
    pub k2: usize,
    /// Patches per cloud used for bank construction and scoring.
    pub patches_per_cloud: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            retention_fraction: 0.1,
            k1: 3,
            k2: 3,
            patches_per_cloud: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub category: String,
    /// Directory of anomaly-free training clouds.
    pub train_dir: Option<PathBuf>,
    /// Manifest of the labeled test set.
    pub test_manifest: Option<PathBuf>,
    /// Drives every stage; copied into the stage configs by [`RunConfig::resolved`].
    pub seed: u64,
    pub normals: NormalConfig,
    pub sdf: SdfConfig,
    pub features2d: Feature2dConfig,
    pub bank: BankConfig,
    pub synthesis: SynthesisConfig,
    pub iaf: IafConfig,
    pub fusion: FusionStrategy,
    pub limits: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            category: "default".into(),
            train_dir: None,
            test_manifest: None,
            seed: 0,
            normals: NormalConfig::default(),
            sdf: SdfConfig::default(),
            features2d: Feature2dConfig::default(),
            bank: BankConfig::default(),
            synthesis: SynthesisConfig::default(),
            iaf: IafConfig::default(),
            fusion: FusionStrategy::Iaf,
            limits: DEFAULT_LIMITS.to_vec(),
        }
    }
}

fn digest(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Smaller networks, patches and datasets sized for the bundled shape benchmark
    /// (clouds of a few hundred points on a single core).
    pub fn benchmark() -> Self {
        let mut c = RunConfig::default();
        c.sdf.encoder_hidden = vec![32, 64];
        c.sdf.latent_dim = 64;
        c.sdf.decoder_hidden = vec![64, 64];
        c.sdf.patch_size = 32;
        c.sdf.patches_per_cloud = 16;
        c.sdf.epochs = 30;
        c.bank.patches_per_cloud = 48;
        c.features2d.resolution = (48, 48);
        c.synthesis.n_samples = 30;
        c.iaf.max_rows = Some(6000);
        c
    }

    /// Copies the run seed into the stage configs.
    pub fn resolved(mut self) -> Self {
        self.sdf.seed = self.seed;
        self.iaf.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sdf.validate()?;
        self.iaf.validate()?;
        if !(self.bank.retention_fraction > 0.0 && self.bank.retention_fraction <= 1.0) {
            return Err(Error::Config("retention fraction must be in (0, 1]".into()));
        }
        if self.bank.k1 == 0 || self.bank.k2 == 0 || self.bank.patches_per_cloud == 0 {
            return Err(Error::Config("k1, k2 and patches per cloud must be positive".into()));
        }
        if self.normals.k < 3 {
            return Err(Error::Config("normal estimation needs k >= 3".into()));
        }
        if self.limits.is_empty() || self.limits.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return Err(Error::Config("integration limits must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Hash of everything the expert artifacts depend on.
    pub fn experts_hash(&self) -> String {
        digest(&serde_json::json!({
            "stage": "experts",
            "seed": self.seed,
            "normals": self.normals,
            "sdf": self.sdf,
            "features2d": self.features2d,
            "bank": self.bank,
        }))
    }

    pub fn dataset_hash(&self) -> String {
        digest(&serde_json::json!({
            "stage": "dataset",
            "seed": self.seed,
            "normals": self.normals,
            "synthesis": self.synthesis,
        }))
    }

    pub fn fusion_hash(&self) -> String {
        digest(&serde_json::json!({
            "stage": "fusion",
            "experts": self.experts_hash(),
            "dataset": self.dataset_hash(),
            "iaf": self.iaf,
        }))
    }
}

/// Applies the normal policy to a loaded cloud. Labels are kept.
pub fn prepare_cloud(cloud: PointCloud, normals: &NormalConfig) -> Result<PointCloud> {
    if normals.estimate {
        let k = normals.k.min(cloud.len());
        Ok(estimate_normals(&cloud, k, Viewpoint::default())?.cloud)
    } else if cloud.normals().is_none() {
        Err(Error::InvalidCloud("cloud has no normals and normal estimation is disabled".into()))
    } else {
        Ok(cloud)
    }
}

/// The two trained experts.
#[derive(Debug, Clone)]
pub struct Experts {
    pub sdf: SdfExpert,
    pub bank: DualMemoryBank,
}

fn scoring_patches(cloud: &PointCloud, config: &RunConfig) -> Result<Vec<LocalPatch>> {
    cloud_patches(cloud, config.bank.patches_per_cloud, config.sdf.patch_size, config.seed)
}

/// Pretrains the SDF expert and builds the dual bank from prepared clouds.
pub fn train_experts(clouds: &[PointCloud], config: &RunConfig) -> Result<(Experts, TrainReport)> {
    if clouds.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (sdf, report) = pretrain_sdf(clouds, &config.sdf)?;
    let features = clouds
        .iter()
        .map(|cloud| {
            let patches = scoring_patches(cloud, config)?;
            let f1 = patches.iter().map(|p| sdf.encoder.encode_patch(p)).collect::<Result<Vec<_>>>()?;
            Ok(CloudFeatures {
                patches: patches.into_iter().map(|p| p.patch).collect(),
                f1,
                f2: point_features_2d(cloud, &config.features2d)?.features,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = build_dual_bank(&features, config.bank.retention_fraction)?;
    Ok((Experts { sdf, bank }, report))
}

/// Raw per-point and object scores of both experts for one cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertMaps {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
}

pub fn expert_maps(experts: &Experts, cloud: &PointCloud, config: &RunConfig) -> Result<ExpertMaps> {
    let patches = scoring_patches(cloud, config)?;
    let x1 = score_x1(&experts.sdf, cloud, &patches, &experts.bank.bank3d, config.bank.k1)?;
    let f2 = point_features_2d(cloud, &config.features2d)?.features;
    let x2 = score_x2(&experts.bank.bank2d, &f2, config.bank.k2)?;
    let (s1, s2) = object_scores(&x1, &x2)?;
    Ok(ExpertMaps { x1, x2, s1, s2 })
}

/// Trained fusion: the importance-aware model and the least-squares baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFusion {
    pub model: IafModel,
    pub linear: LinearFuser,
}

/// Trains the fusion stage on expert maps of labeled synthetic samples.
pub fn train_fusion(maps: &[ExpertMaps], labels: &[Vec<u8>], iaf: &IafConfig) -> Result<(TrainedFusion, IafReport)> {
    if maps.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: maps.len() });
    }
    let x1: Vec<f64> = maps.iter().flat_map(|m| m.x1.iter().copied()).collect();
    let x2: Vec<f64> = maps.iter().flat_map(|m| m.x2.iter().copied()).collect();
    let y: Vec<u8> = labels.iter().flatten().copied().collect();
    let (model, report) = train_iaf(&x1, &x2, &y, iaf)?;
    let (n1, n2) = normalized_channels(&model, &x1, &x2)?;
    let linear = LinearFuser::fit(&n1, &n2, &y)?;
    Ok((TrainedFusion { model, linear }, report))
}

fn normalized_channels(model: &IafModel, x1: &[f64], x2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = model.stats.apply(x1, x2)?;
    Ok((rows.iter().step_by(2).copied().collect(), rows.iter().skip(1).step_by(2).copied().collect()))
}

/// What produces a score map during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Expert3d,
    Expert2d,
    Fused(FusionStrategy),
}

impl ScoreSource {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreSource::Expert3d => "x1",
            ScoreSource::Expert2d => "x2",
            ScoreSource::Fused(s) => s.name(),
        }
    }
}

/// Point scores and object score of one cloud under `source`. Fixed fusion rules
/// combine channels normalized with the fusion model's training statistics.
pub fn score_maps(source: ScoreSource, fusion: &TrainedFusion, maps: &ExpertMaps) -> Result<(Vec<f64>, f64)> {
    let fixed = |rule: BaselineFuser| -> Result<(Vec<f64>, f64)> {
        let (n1, n2) = normalized_channels(&fusion.model, &maps.x1, &maps.x2)?;
        let (o1, o2) = normalized_channels(&fusion.model, &[maps.s1], &[maps.s2])?;
        Ok((rule.fuse(&n1, &n2)?, rule.fuse(&o1, &o2)?[0]))
    };
    match source {
        ScoreSource::Expert3d => Ok((maps.x1.clone(), maps.s1)),
        ScoreSource::Expert2d => Ok((maps.x2.clone(), maps.s2)),
        ScoreSource::Fused(FusionStrategy::Iaf) => Ok((
            fusion.model.fuse_point_scores(&maps.x1, &maps.x2)?,
            fusion.model.fuse_object_scores(maps.s1, maps.s2)?,
        )),
        ScoreSource::Fused(FusionStrategy::Max) => fixed(BaselineFuser::Max),
        ScoreSource::Fused(FusionStrategy::Add) => fixed(BaselineFuser::Add),
        ScoreSource::Fused(FusionStrategy::Linear) => fixed(BaselineFuser::Linear(Some(fusion.linear))),
    }
}

/// Expert maps of one labeled test cloud together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSample {
    pub id: String,
    pub maps: ExpertMaps,
    pub labels: Vec<u8>,
    pub regions: Vec<Vec<usize>>,
}

/// Scores a prepared cloud that carries labels.
pub fn score_test_sample(experts: &Experts, cloud: &PointCloud, id: &str, config: &RunConfig) -> Result<TestSample> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::InvalidCloud(format!("test sample {id} has no labels")))?
        .to_vec();
    Ok(TestSample {
        id: id.to_string(),
        maps: expert_maps(experts, cloud, config)?,
        regions: label_regions(cloud, &labels)?,
        labels,
    })
}

pub fn evaluate_source(
    category: &str,
    source: ScoreSource,
    fusion: &TrainedFusion,
    samples: &[TestSample],
    limits: &[f64],
) -> Result<EvalReport> {
    let evals = samples
        .iter()
        .map(|s| {
            let (point_scores, object_score) = score_maps(source, fusion, &s.maps)?;
            Ok(SampleEval {
                id: s.id.clone(),
                point_scores,
                labels: s.labels.clone(),
                regions: s.regions.clone(),
                object_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_all(category, &evals, limits))
}

#[cfg(test)]
mod tests;
