//! Cut-Paste pseudo-anomalies: a region cut from a source cloud is transformed and
//! pasted over a masked region of a target cloud.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::save_cloud;
use crate::geometry::{
    add, align_rotation, axis_angle, build_index, centroid_of, distance, mat_mul, mat_vec, normalize, scale, sub,
    NeighborIndex, Point3, PointCloud,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    SphereBlob,
    Box,
    Ellipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub shapes: Vec<MaskShape>,
    /// Bounds on the masked share of the cloud.
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub max_attempts: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            shapes: vec![MaskShape::SphereBlob, MaskShape::Box, MaskShape::Ellipsoid],
            min_fraction: 0.005,
            max_fraction: 0.05,
            max_attempts: 20,
        }
    }
}

/// Target points selected for replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMask {
    /// Sorted, distinct.
    pub indices: Vec<usize>,
    pub shape: MaskShape,
    pub center_index: usize,
    pub radius: f64,
    /// Per-axis multipliers of `radius` in the mask frame (all 1 for a sphere blob).
    pub aspect: [f64; 3],
    /// Rows are the mask frame axes.
    pub frame: [[f64; 3]; 3],
}

impl AnomalyMask {
    pub fn null() -> Self {
        AnomalyMask {
            indices: Vec::new(),
            shape: MaskShape::SphereBlob,
            center_index: 0,
            radius: 0.0,
            aspect: [1.0; 3],
            frame: IDENTITY,
        }
    }

    pub fn is_null(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, center: &Point3, p: &Point3) -> bool {
        if self.radius <= 0.0 {
            return false;
        }
        let local = mat_vec(&self.frame, &sub(p, center));
        let u: Vec<f64> = (0..3).map(|k| local[k] / (self.radius * self.aspect[k])).collect();
        match self.shape {
            MaskShape::SphereBlob | MaskShape::Ellipsoid => u.iter().map(|v| v * v).sum::<f64>() <= 1.0,
            MaskShape::Box => u.iter().all(|v| v.abs() <= 1.0),
        }
    }
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> [[f64; 3]; 3] {
    let axis = loop {
        let v: Point3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            break normalize(&v);
        }
    };
    axis_angle(&axis, rng.gen_range(0.0..=max_angle))
}

fn count_bounds(m: usize, config: &MaskConfig) -> Result<(usize, usize)> {
    if !(0.0 <= config.min_fraction && config.min_fraction <= config.max_fraction && config.max_fraction < 1.0) {
        return Err(Error::Config("mask fractions must satisfy 0 <= min <= max < 1".into()));
    }
    let lo = ((config.min_fraction * m as f64).ceil() as usize).max(1);
    let hi = (config.max_fraction * m as f64).floor() as usize;
    if hi < lo || hi >= m {
        return Err(Error::InvalidArgument(format!(
            "mask bounds [{}, {}] unsatisfiable for {m} points",
            config.min_fraction, config.max_fraction
        )));
    }
    Ok((lo, hi))
}

/// Draws a random mask shape around a random point.
///
/// The base radius is the distance to the n-th nearest neighbor of the center for
/// a random n within the count bounds, jittered by a factor in [0.5, 1.5]; masks
/// whose point count misses the bounds are redrawn.
pub fn make_mask<R: Rng>(cloud: &PointCloud, rng: &mut R, config: &MaskConfig) -> Result<AnomalyMask> {
    let index = build_index(cloud)?;
    make_mask_indexed(cloud, &index, rng, config)
}

pub fn make_mask_indexed<R: Rng>(
    cloud: &PointCloud,
    index: &NeighborIndex,
    rng: &mut R,
    config: &MaskConfig,
) -> Result<AnomalyMask> {
    let m = cloud.len();
    let (lo, hi) = count_bounds(m, config)?;
    if config.shapes.is_empty() {
        return Err(Error::Config("no mask shapes enabled".into()));
    }
    let points = cloud.points();
    for _ in 0..config.max_attempts {
        let center_index = rng.gen_range(0..m);
        let center = points[center_index];
        let shape = *config.shapes.choose(rng).unwrap();
        let n = rng.gen_range(lo..=hi);
        let base = index.query(&center, n).last().map(|&(_, d)| d).unwrap_or(0.0);
        let radius = base * rng.gen_range(0.5..1.5);
        let aspect = match shape {
            MaskShape::SphereBlob => [1.0; 3],
            _ => [rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)],
        };
        let frame = if shape == MaskShape::SphereBlob {
            IDENTITY
        } else {
            random_rotation(rng, std::f64::consts::PI)
        };
        let mut mask = AnomalyMask {
            indices: Vec::new(),
            shape,
            center_index,
            radius,
            aspect,
            frame,
        };
        let reach = radius * aspect.iter().cloned().fold(0.0, f64::max) * 3f64.sqrt();
        let mut indices: Vec<usize> = index
            .within_radius(&center, reach)
            .into_iter()
            .map(|(i, _)| i)
            .filter(|&i| mask.contains(&center, &points[i]))
            .collect();
        indices.sort_unstable();
        if indices.len() >= lo && indices.len() <= hi {
            mask.indices = indices;
            return Ok(mask);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw a mask covering [{lo}, {hi}] points in {} attempts",
        config.max_attempts
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PasteMode {
    /// Pasted points take over the masked indices; M stays constant.
    Replace,
    /// Pasted points are appended and the masked points kept.
    Insert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PasteConfig {
    pub mode: PasteMode,
    /// Degrees.
    pub max_rotation: f64,
    pub scale_range: (f64, f64),
    /// Offset along the target normal, as multiples of the mask radius.
    pub height_range: (f64, f64),
    /// Original points this close to a pasted point are labeled anomalous too.
    pub merge_radius: f64,
}

impl Default for PasteConfig {
    fn default() -> Self {
        PasteConfig {
            mode: PasteMode::Replace,
            max_rotation: 30.0,
            scale_range: (0.8, 1.2),
            height_range: (0.02, 0.1),
            merge_radius: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub source_center: usize,
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Carries the labels.
    pub cloud: PointCloud,
    pub target_id: usize,
    pub source_id: Option<usize>,
    pub mask: Option<AnomalyMask>,
    pub paste: Option<PasteRecord>,
    pub seed: u64,
}

impl LabeledSample {
    pub fn labels(&self) -> &[u8] {
        self.cloud.labels().expect("samples always carry labels")
    }

    pub fn anomalous_points(&self) -> usize {
        self.labels().iter().filter(|&&l| l == 1).count()
    }
}

fn normal_at(cloud: &PointCloud, i: usize) -> Point3 {
    cloud.normals().map(|n| n[i]).unwrap_or([0.0, 0.0, 1.0])
}

/// Cuts `mask.indices.len()` points from `source` around a random center,
/// orients them from the source normal onto the target normal, applies a bounded
/// random rotation, a uniform scale and a normal offset, and pastes them.
///
/// In replacement mode the i-th closest source point (to its center) replaces the
/// i-th closest masked point (to the mask center).
pub fn cut_paste<R: Rng>(
    target: &PointCloud,
    source: &PointCloud,
    mask: &AnomalyMask,
    rng: &mut R,
    config: &PasteConfig,
) -> Result<(PointCloud, Option<PasteRecord>)> {
    let m = target.len();
    if mask.is_null() {
        return Ok((target.clone().with_labels(vec![0; m])?, None));
    }
    if let Some(&bad) = mask.indices.iter().find(|&&i| i >= m) {
        return Err(Error::MaskBounds(bad));
    }
    let n = mask.indices.len();
    if n > source.len() {
        return Err(Error::InvalidArgument(format!(
            "source has {} points, mask needs {n}",
            source.len()
        )));
    }
    let (lo_s, hi_s) = config.scale_range;
    let (lo_h, hi_h) = config.height_range;
    if !(0.0 < lo_s && lo_s <= hi_s && lo_h <= hi_h && config.max_rotation >= 0.0) {
        return Err(Error::Config("invalid paste transformation ranges".into()));
    }

    let source_center = rng.gen_range(0..source.len());
    let src_index = build_index(source)?;
    let region: Vec<usize> = src_index
        .query(&source.points()[source_center], n)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    let src_centroid = centroid_of(region.iter().map(|&i| &source.points()[i]));

    let t_center = target.points()[mask.center_index];
    let t_normal = normal_at(target, mask.center_index);
    let align = align_rotation(&normal_at(source, source_center), &t_normal);
    let jitter = random_rotation(rng, config.max_rotation.to_radians());
    let rotation = mat_mul(&jitter, &align);
    let k = rng.gen_range(lo_s..=hi_s);
    let height = rng.gen_range(lo_h..=hi_h) * mask.radius;
    let anchor = add(&t_center, &scale(&t_normal, height));

    let pasted: Vec<Point3> = region
        .iter()
        .map(|&i| add(&anchor, &scale(&mat_vec(&rotation, &sub(&source.points()[i], &src_centroid)), k)))
        .collect();
    let pasted_normals: Vec<Point3> = region
        .iter()
        .map(|&i| normalize(&mat_vec(&rotation, &normal_at(source, i))))
        .collect();

    let mut points = target.points().to_vec();
    let mut normals = target.normals().map(|n| n.to_vec());
    let mut labels = vec![0u8; m];
    match config.mode {
        PasteMode::Replace => {
            let mut slots = mask.indices.clone();
            slots.sort_by(|&a, &b| {
                distance(&points[a], &t_center)
                    .total_cmp(&distance(&points[b], &t_center))
                    .then(a.cmp(&b))
            });
            for (j, &slot) in slots.iter().enumerate() {
                points[slot] = pasted[j];
                if let Some(ns) = normals.as_mut() {
                    ns[slot] = pasted_normals[j];
                }
                labels[slot] = 1;
            }
        }
        PasteMode::Insert => {
            points.extend_from_slice(&pasted);
            if let Some(ns) = normals.as_mut() {
                ns.extend_from_slice(&pasted_normals);
            }
            labels.extend(std::iter::repeat(1).take(n));
        }
    }
    if config.merge_radius > 0.0 {
        let near = NeighborIndex::new(&pasted)?;
        for i in 0..points.len() {
            if labels[i] == 0 && !near.within_radius(&points[i], config.merge_radius).is_empty() {
                labels[i] = 1;
            }
        }
    }
    let mut cloud = PointCloud::new(points)?;
    if let Some(ns) = normals {
        cloud = cloud.with_normals(ns)?;
    }
    Ok((
        cloud.with_labels(labels)?,
        Some(PasteRecord {
            source_center,
            rotation,
            scale: k,
            height,
        }),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub n_samples: usize,
    /// Share of samples left unmodified (all labels 0).
    pub normal_fraction: f64,
    pub mask: MaskConfig,
    pub paste: PasteConfig,
    /// Allow the source to be the target itself.
    pub allow_self_source: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            n_samples: 800,
            normal_fraction: 0.25,
            mask: MaskConfig::default(),
            paste: PasteConfig::default(),
            allow_self_source: false,
        }
    }
}

/// Per-sample seed derived from the dataset seed and the sample index.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn is_normal_slot(i: usize, fraction: f64) -> bool {
    // spreads the normal samples evenly over the index range
    ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor()
}

/// Generates `config.n_samples` labeled samples from anomaly-free clouds.
pub fn generate_dataset(clouds: &[PointCloud], seed: u64, config: &SynthesisConfig) -> Result<Vec<LabeledSample>> {
    if clouds.is_empty() || (clouds.len() < 2 && !config.allow_self_source) {
        return Err(Error::InvalidArgument(
            "synthesis needs at least two clouds (source differs from target)".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.normal_fraction) {
        return Err(Error::Config("normal fraction must be in [0, 1]".into()));
    }
    let indices: Vec<NeighborIndex> = clouds.iter().map(build_index).collect::<Result<_>>()?;
    (0..config.n_samples)
        .map(|i| {
            let s = sample_seed(seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let target_id = rng.gen_range(0..clouds.len());
            let target = &clouds[target_id];
            if is_normal_slot(i, config.normal_fraction) {
                return Ok(LabeledSample {
                    cloud: target.clone().with_labels(vec![0; target.len()])?,
                    target_id,
                    source_id: None,
                    mask: None,
                    paste: None,
                    seed: s,
                });
            }
            let source_id = if config.allow_self_source {
                rng.gen_range(0..clouds.len())
            } else {
                let j = rng.gen_range(0..clouds.len() - 1);
                if j >= target_id {
                    j + 1
                } else {
                    j
                }
            };
            let mask = make_mask_indexed(target, &indices[target_id], &mut rng, &config.mask)?;
            let (cloud, paste) = cut_paste(target, &clouds[source_id], &mask, &mut rng, &config.paste)?;
            Ok(LabeledSample {
                cloud,
                target_id,
                source_id: Some(source_id),
                mask: Some(mask),
                paste,
                seed: s,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub seed: u64,
    pub target_id: usize,
    pub source_id: Option<usize>,
    pub mask: Option<AnomalyMask>,
    pub paste: Option<PasteRecord>,
    pub anomalous_points: usize,
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
    /// Point counts per label value ("0", "1").
    pub label_histogram: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Entry paths are relative to the manifest's directory.
    pub fn resolve(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
    }
}

/// Writes every sample as `sample_NNNN.xyz` (with labels) into `dir` and returns
/// the manifest describing them.
pub fn write_dataset(samples: &[LabeledSample], dir: &Path, seed: u64, config_hash: &str) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut histogram = BTreeMap::from([("0".to_string(), 0usize), ("1".to_string(), 0usize)]);
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = PathBuf::from(format!("sample_{i:04}.xyz"));
        save_cloud(&s.cloud, &dir.join(&name))?;
        let ones = s.anomalous_points();
        *histogram.get_mut("1").unwrap() += ones;
        *histogram.get_mut("0").unwrap() += s.cloud.len() - ones;
        entries.push(ManifestEntry {
            path: name,
            seed: s.seed,
            target_id: s.target_id,
            source_id: s.source_id,
            mask: s.mask.clone(),
            paste: s.paste.clone(),
            anomalous_points: ones,
            point_count: s.cloud.len(),
        });
    }
    Ok(DatasetManifest {
        seed,
        config_hash: config_hash.to_string(),
        entries,
        label_histogram: histogram,
    })
}
