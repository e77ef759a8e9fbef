//! File-based pipeline commands. Every artifact carries the hash of the config
//! sections it was built from, and loading refuses artifacts whose hash differs
//! from the current config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    evaluate_source, expert_maps, prepare_cloud, score_maps, score_test_sample, svg, train_experts, train_fusion,
    Experts, RunConfig, ScoreSource, TrainedFusion,
};
use crate::bank::DualMemoryBank;
use crate::error::{Error, Result};
use crate::fusion::{FusionBundle, FusionStrategy, IafReport};
use crate::geometry::io::{list_cloud_files, load_cloud, save_cloud};
use crate::geometry::PointCloud;
use crate::metrics::{csv_error, write_reports, EvalReport};
use crate::sdf::{SdfCheckpoint, SdfExpert, TrainReport};
use crate::shapes::{benchmark_split, BenchmarkConfig, ShapeKind};
use crate::synthesis::{generate_dataset, write_dataset, DatasetManifest};

/// Artifact locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn sdf(&self) -> PathBuf {
        self.root.join("experts/sdf.json")
    }

    pub fn bank_base(&self) -> PathBuf {
        self.root.join("experts/bank")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("experts/train_log.csv")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("synthetic")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dataset_dir().join("manifest.json")
    }

    pub fn bundle(&self) -> PathBuf {
        self.root.join("fusion/bundle.json")
    }

    pub fn loss_curves(&self) -> PathBuf {
        self.root.join("fusion/loss.csv")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("eval/report.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("eval/report.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SdfArtifact {
    config_hash: String,
    checkpoint: SdfCheckpoint,
    report: TrainReport,
}

fn check_hash(artifact: &Path, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::HashMismatch {
            artifact: artifact.display().to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn write_parent(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads and prepares every cloud in the configured training directory.
pub fn load_training_clouds(config: &RunConfig) -> Result<Vec<PointCloud>> {
    let dir = config
        .train_dir
        .as_ref()
        .ok_or_else(|| Error::Config("no training directory configured".into()))?;
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.clone()));
    }
    let files = list_cloud_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    files
        .iter()
        .map(|f| prepare_cloud(load_cloud(f)?, &config.normals))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExpertsSummary {
    pub clouds: usize,
    pub bank3d: usize,
    pub bank2d: usize,
    pub final_loss: Option<f64>,
}

pub fn cmd_train_experts(config: &RunConfig, out: &Path) -> Result<TrainExpertsSummary> {
    let clouds = load_training_clouds(config)?;
    let (experts, report) = train_experts(&clouds, config)?;
    let paths = RunPaths::new(out);
    let hash = config.experts_hash();
    let artifact = SdfArtifact {
        config_hash: hash.clone(),
        checkpoint: experts.sdf.to_checkpoint(),
        report: report.clone(),
    };
    write_parent(&paths.sdf(), serde_json::to_string(&artifact)?)?;
    experts.bank.save(&paths.bank_base(), &hash)?;
    let rows = report.loss_history.iter().enumerate().map(|(e, l)| vec![e.to_string(), l.to_string()]);
    write_csv(&paths.train_log(), &["epoch", "loss"], rows)?;
    Ok(TrainExpertsSummary {
        clouds: clouds.len(),
        bank3d: experts.bank.bank3d.len(),
        bank2d: experts.bank.bank2d.len(),
        final_loss: report.loss_history.last().copied(),
    })
}

pub fn load_experts(config: &RunConfig, out: &Path) -> Result<Experts> {
    let paths = RunPaths::new(out);
    let expected = config.experts_hash();
    let sdf_path = paths.sdf();
    if !sdf_path.exists() {
        return Err(Error::MissingArtifact(sdf_path));
    }
    let artifact: SdfArtifact = serde_json::from_str(&fs::read_to_string(&sdf_path)?)?;
    check_hash(&sdf_path, &expected, &artifact.config_hash)?;
    let (bank, bank_hash) = DualMemoryBank::load(&paths.bank_base())?;
    check_hash(&paths.bank_base(), &expected, &bank_hash)?;
    Ok(Experts {
        sdf: SdfExpert::from_checkpoint(&artifact.checkpoint)?,
        bank,
    })
}

pub fn cmd_synthesize(config: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    let clouds = load_training_clouds(config)?;
    let samples = generate_dataset(&clouds, config.seed, &config.synthesis)?;
    let paths = RunPaths::new(out);
    let manifest = write_dataset(&samples, &paths.dataset_dir(), config.seed, &config.dataset_hash())?;
    manifest.save(&paths.manifest())?;
    Ok(manifest)
}

fn load_labeled(manifest: &DatasetManifest, manifest_path: &Path, config: &RunConfig) -> Result<Vec<(String, PointCloud)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let path = manifest.resolve(manifest_path, e);
            let cloud = prepare_cloud(load_cloud(&path)?, &config.normals)?;
            Ok((e.path.display().to_string(), cloud))
        })
        .collect()
}

pub fn cmd_train_iaf(config: &RunConfig, out: &Path) -> Result<IafReport> {
    let experts = load_experts(config, out)?;
    let paths = RunPaths::new(out);
    let manifest_path = paths.manifest();
    let manifest = DatasetManifest::load(&manifest_path)?;
    check_hash(&manifest_path, &config.dataset_hash(), &manifest.config_hash)?;
    let mut maps = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    for (id, cloud) in load_labeled(&manifest, &manifest_path, config)? {
        let y = cloud
            .labels()
            .ok_or_else(|| Error::InvalidCloud(format!("synthetic sample {id} has no labels")))?
            .to_vec();
        maps.push(expert_maps(&experts, &cloud, config)?);
        labels.push(y);
    }
    let (fusion, report) = train_fusion(&maps, &labels, &config.iaf)?;
    let bundle = FusionBundle::new(&fusion.model, Some(fusion.linear), &config.fusion_hash());
    write_parent(&paths.bundle(), serde_json::to_string_pretty(&bundle)?)?;
    let rows = report.history.iter().enumerate().map(|(e, h)| {
        vec![
            e.to_string(),
            h.predictor_loss.to_string(),
            h.selector_loss.to_string(),
            h.final_loss.to_string(),
        ]
    });
    write_csv(&paths.loss_curves(), &["epoch", "predictor_loss", "selector_loss", "final_loss"], rows)?;
    Ok(report)
}

pub fn load_fusion(config: &RunConfig, out: &Path) -> Result<TrainedFusion> {
    let path = RunPaths::new(out).bundle();
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let bundle: FusionBundle = serde_json::from_str(&fs::read_to_string(&path)?)?;
    check_hash(&path, &config.fusion_hash(), &bundle.config_hash)?;
    Ok(TrainedFusion {
        model: bundle.model()?,
        linear: bundle.linear.ok_or(Error::LinearNotFitted)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertScores {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub point_scores: Vec<f64>,
    pub object_score: f64,
    pub expert_scores: ExpertScores,
}

/// Scores one cloud with the configured fusion strategy. Writes
/// `score/<name>.json` and, when `svg` is given, the colored projection.
pub fn cmd_score(config: &RunConfig, out: &Path, input: &Path, svg_path: Option<&Path>) -> Result<ScoreOutput> {
    let experts = load_experts(config, out)?;
    let fusion = load_fusion(config, out)?;
    if !input.exists() {
        return Err(Error::MissingArtifact(input.to_path_buf()));
    }
    let cloud = prepare_cloud(load_cloud(input)?, &config.normals)?;
    let maps = expert_maps(&experts, &cloud, config)?;
    let (point_scores, object_score) = score_maps(ScoreSource::Fused(config.fusion), &fusion, &maps)?;
    if let Some(p) = svg_path {
        write_parent(p, svg::score_map_svg(&cloud, &point_scores)?)?;
    }
    let output = ScoreOutput {
        point_scores,
        object_score,
        expert_scores: ExpertScores {
            x1: maps.x1,
            x2: maps.x2,
            s1: maps.s1,
            s2: maps.s2,
        },
    };
    let stem = input.file_stem().unwrap_or_default().to_string_lossy();
    write_parent(&out.join(format!("score/{stem}.json")), serde_json::to_string_pretty(&output)?)?;
    Ok(output)
}

/// Evaluates the labeled test manifest under each strategy and writes one report
/// row per strategy. Rows with undefined metrics are still written.
pub fn cmd_eval(config: &RunConfig, out: &Path, strategies: &[FusionStrategy]) -> Result<Vec<EvalReport>> {
    let experts = load_experts(config, out)?;
    let fusion = load_fusion(config, out)?;
    let manifest_path = config
        .test_manifest
        .clone()
        .ok_or_else(|| Error::Config("no test manifest configured".into()))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let samples = load_labeled(&manifest, &manifest_path, config)?
        .iter()
        .map(|(id, cloud)| score_test_sample(&experts, cloud, id, config))
        .collect::<Result<Vec<_>>>()?;
    let reports = strategies
        .iter()
        .map(|&s| {
            let category = format!("{}/{}", config.category, s.name());
            evaluate_source(&category, ScoreSource::Fused(s), &fusion, &samples, &config.limits)
        })
        .collect::<Result<Vec<_>>>()?;
    let paths = RunPaths::new(out);
    fs::create_dir_all(paths.report_csv().parent().unwrap())?;
    write_reports(&reports, &paths.report_csv(), &paths.report_json())?;
    Ok(reports)
}

/// Writes a benchmark split for one shape: `train/cloud_NNNN.xyz` and a labeled
/// test set under `test/` with its manifest.
pub fn cmd_shapes(
    kind: ShapeKind,
    bench: &BenchmarkConfig,
    config: &RunConfig,
    out: &Path,
) -> Result<DatasetManifest> {
    let split = benchmark_split(kind, bench, &config.synthesis, config.seed)?;
    for (i, c) in split.train.iter().enumerate() {
        save_cloud(c, &out.join(format!("train/cloud_{i:04}.xyz")))?;
    }
    let test_dir = out.join("test");
    let manifest = write_dataset(&split.test, &test_dir, config.seed, &config.dataset_hash())?;
    manifest.save(&test_dir.join("manifest.json"))?;
    Ok(manifest)
}
