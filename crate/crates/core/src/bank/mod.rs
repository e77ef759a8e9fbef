//! Feature memory banks queried by exact nearest neighbors.
//!
//! The dual bank pairs patch latents (3D) with the per-point 2D features of the
//! retained patches' members, linked by receptive field.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{farthest_first, KdTree, Patch};

/// Added to neighbor distances before inverting them into weights.
pub const WEIGHT_EPS: f64 = 1e-9;

/// Where a stored feature came from: a cloud and a patch or point within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub cloud: usize,
    pub item: usize,
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    tree: KdTree,
    provenance: Vec<Provenance>,
}

impl MemoryBank {
    /// `provenance` may be empty, in which case entries are tagged `(0, i)`.
    pub fn new(features: Vec<Vec<f64>>, provenance: Vec<Provenance>) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyBank)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("bank features must be non-empty vectors".into()));
        }
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("bank features must be finite".into()));
        }
        let provenance = if provenance.is_empty() {
            (0..features.len()).map(|i| Provenance { cloud: 0, item: i }).collect()
        } else if provenance.len() == features.len() {
            provenance
        } else {
            return Err(Error::DimensionMismatch { expected: features.len(), got: provenance.len() });
        };
        Ok(MemoryBank {
            tree: KdTree::from_rows(&features, dim),
            provenance,
        })
    }

    fn from_flat(data: Vec<f64>, dim: usize, provenance: Vec<Provenance>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyBank);
        }
        if dim == 0 || data.len() != dim * provenance.len() {
            return Err(Error::InvalidArgument("bank payload does not match its header".into()));
        }
        Ok(MemoryBank {
            tree: KdTree::new(data, dim),
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.tree.point(i)
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// The `k` nearest stored entries as `(index, distance)`, nearest first.
    pub fn nearest(&self, f: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: f.len() });
        }
        Ok(self.tree.knn(f, k))
    }

    /// Inverse-distance-weighted mean of the `k` nearest stored features.
    /// With a single neighbor the stored feature is returned unchanged.
    pub fn reconstruct(&self, f: &[f64], k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("reconstruction needs k >= 1".into()));
        }
        let nbrs = self.nearest(f, k)?;
        if nbrs.len() == 1 {
            return Ok(self.feature(nbrs[0].0).to_vec());
        }
        let mut out = vec![0.0; self.dim()];
        let mut total = 0.0;
        for &(i, d) in &nbrs {
            let w = 1.0 / (d + WEIGHT_EPS);
            total += w;
            for (o, v) in out.iter_mut().zip(self.feature(i)) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(out)
    }

    fn flat(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.feature(i).to_vec()).collect()
    }

    /// Binary layout: magic `PCADBANK`, then `dim` and `count` as u64 LE, then
    /// `count × dim` f64 LE values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(24 + 8 * self.len() * self.dim());
        bytes.extend_from_slice(BANK_MAGIC);
        bytes.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in self.flat() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_binary(path: &Path, provenance: Vec<Provenance>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: msg.to_string(),
        };
        if bytes.len() < 24 || &bytes[..8] != BANK_MAGIC {
            return Err(bad("not a bank file"));
        }
        let word = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
        let (dim, count) = (word(8), word(16));
        if bytes.len() != 24 + 8 * dim * count {
            return Err(bad("payload length does not match header"));
        }
        let data = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(data, dim, provenance)
    }
}

const BANK_MAGIC: &[u8; 8] = b"PCADBANK";

/// Per-point 2D-expert scores: distance from each feature to its reconstruction.
pub fn score_x2(bank2d: &MemoryBank, f2: &[Vec<f64>], k2: usize) -> Result<Vec<f64>> {
    f2.iter()
        .map(|f| {
            let r = bank2d.reconstruct(f, k2)?;
            Ok(f.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect()
}

/// Object-level scores: the maxima of the two maps.
pub fn object_scores(x1: &[f64], x2: &[f64]) -> Result<(f64, f64)> {
    if x1.is_empty() || x2.is_empty() {
        return Err(Error::InvalidArgument("object scores need non-empty maps".into()));
    }
    let max = |x: &[f64]| x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((max(x1), max(x2)))
}

/// Features of one anomaly-free cloud, ready for bank construction.
#[derive(Debug, Clone)]
pub struct CloudFeatures {
    pub patches: Vec<Patch>,
    /// One latent per patch.
    pub f1: Vec<Vec<f64>>,
    /// One 2D feature per point.
    pub f2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DualMemoryBank {
    pub bank3d: MemoryBank,
    pub bank2d: MemoryBank,
    /// For each bank3d entry, the bank2d entries of its patch members.
    pub links: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DualSidecar {
    config_hash: String,
    provenance3d: Vec<Provenance>,
    provenance2d: Vec<Provenance>,
    links: Vec<Vec<usize>>,
}

/// Retains a `retention_fraction` of all patch latents by greedy farthest-first
/// selection (starting from the first patch), then stores the 2D features of the
/// retained patches' members once per `(cloud, point)`.
pub fn build_dual_bank(clouds: &[CloudFeatures], retention_fraction: f64) -> Result<DualMemoryBank> {
    if !(retention_fraction > 0.0 && retention_fraction <= 1.0) {
        return Err(Error::Config(format!("retention fraction {retention_fraction} not in (0, 1]")));
    }
    let mut flat = Vec::new();
    let mut origin = Vec::new();
    let mut dim = None;
    for (ci, c) in clouds.iter().enumerate() {
        if c.f1.len() != c.patches.len() {
            return Err(Error::DimensionMismatch { expected: c.patches.len(), got: c.f1.len() });
        }
        for (pi, f) in c.f1.iter().enumerate() {
            let d = *dim.get_or_insert(f.len());
            if f.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: f.len() });
            }
            flat.extend_from_slice(f);
            origin.push((ci, pi));
        }
    }
    let dim = dim.ok_or(Error::EmptyTrainingSet)?;
    let total = origin.len();
    let keep = ((retention_fraction * total as f64).ceil() as usize).clamp(1, total);
    let retained = farthest_first(&flat, dim, keep, 0);

    let mut f1 = Vec::with_capacity(keep);
    let mut prov3 = Vec::with_capacity(keep);
    let mut f2 = Vec::new();
    let mut prov2 = Vec::new();
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut links = Vec::with_capacity(keep);
    for &r in &retained {
        let (ci, pi) = origin[r];
        let cloud = &clouds[ci];
        f1.push(cloud.f1[pi].clone());
        prov3.push(Provenance { cloud: ci, item: pi });
        let mut link = Vec::new();
        for &m in &cloud.patches[pi].member_indices {
            let feature = cloud
                .f2
                .get(m)
                .ok_or_else(|| Error::InvalidArgument(format!("cloud {ci} lacks a 2D feature for point {m}")))?;
            let id = *slot.entry((ci, m)).or_insert_with(|| {
                f2.push(feature.clone());
                prov2.push(Provenance { cloud: ci, item: m });
                f2.len() - 1
            });
            link.push(id);
        }
        links.push(link);
    }
    Ok(DualMemoryBank {
        bank3d: MemoryBank::new(f1, prov3)?,
        bank2d: MemoryBank::new(f2, prov2)?,
        links,
    })
}

fn bank_paths(base: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut name = base.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        base.with_file_name(name)
    };
    (with(".3d.bin"), with(".2d.bin"), with(".json"))
}

impl DualMemoryBank {
    /// Writes `<base>.3d.bin`, `<base>.2d.bin` and the `<base>.json` sidecar.
    pub fn save(&self, base: &Path, config_hash: &str) -> Result<()> {
        let (p3, p2, pj) = bank_paths(base);
        self.bank3d.write_binary(&p3)?;
        self.bank2d.write_binary(&p2)?;
        let sidecar = DualSidecar {
            config_hash: config_hash.to_string(),
            provenance3d: self.bank3d.provenance.clone(),
            provenance2d: self.bank2d.provenance.clone(),
            links: self.links.clone(),
        };
        fs::write(pj, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Loads a saved bank together with its config hash.
    pub fn load(base: &Path) -> Result<(Self, String)> {
        let (p3, p2, pj) = bank_paths(base);
        if !pj.exists() {
            return Err(Error::MissingArtifact(pj));
        }
        let sidecar: DualSidecar = serde_json::from_str(&fs::read_to_string(&pj)?)?;
        let bank3d = MemoryBank::read_binary(&p3, sidecar.provenance3d)?;
        let bank2d = MemoryBank::read_binary(&p2, sidecar.provenance2d)?;
        if sidecar.links.len() != bank3d.len() || sidecar.links.iter().flatten().any(|&i| i >= bank2d.len()) {
            return Err(Error::InvalidArgument("bank links do not match the stored banks".into()));
        }
        Ok((
            DualMemoryBank {
                bank3d,
                bank2d,
                links: sidecar.links,
            },
            sidecar.config_hash,
        ))
    }
}
