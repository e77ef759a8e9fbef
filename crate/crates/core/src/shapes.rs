//! Procedural sphere, plane and torus clouds for a small synthetic benchmark.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle, mat_vec, Point3, PointCloud};
use crate::synthesis::{generate_dataset, sample_seed, LabeledSample, SynthesisConfig};

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Plane,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Sphere, ShapeKind::Plane, ShapeKind::Torus];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Plane => "plane",
            ShapeKind::Torus => "torus",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn tag(&self) -> u64 {
        match self {
            ShapeKind::Sphere => 0x5348,
            ShapeKind::Plane => 0x504c,
            ShapeKind::Torus => 0x544f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeConfig {
    pub points: usize,
    /// Standard deviation of the Gaussian offset along the normal.
    pub noise: f64,
    /// Relative size jitter, uniform in `1 ± scale_jitter`.
    pub scale_jitter: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            points: 600,
            noise: 0.003,
            scale_jitter: 0.05,
        }
    }
}

fn surface_sample(kind: ShapeKind, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
    match kind {
        ShapeKind::Sphere => {
            let v: Point3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
            let u = [v[0] / n, v[1] / n, v[2] / n];
            (u, u)
        }
        ShapeKind::Plane => ([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0], [0.0, 0.0, 1.0]),
        ShapeKind::Torus => loop {
            let u = rng.gen_range(0.0..2.0 * PI);
            let v = rng.gen_range(0.0..2.0 * PI);
            // area element is proportional to R + r cos v
            if rng.gen::<f64>() * (TORUS_MAJOR + TORUS_MINOR) > TORUS_MAJOR + TORUS_MINOR * v.cos() {
                continue;
            }
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            let p = [ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()];
            let n = [v.cos() * u.cos(), v.cos() * u.sin(), v.sin()];
            break (p, n);
        },
    }
}

/// One anomaly-free cloud with analytic normals, randomly scaled and spun about z.
pub fn generate_shape(kind: ShapeKind, config: &ShapeConfig, seed: u64) -> Result<PointCloud> {
    if config.points < 4 {
        return Err(Error::Config("shapes need at least 4 points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 1.0 + rng.gen_range(-1.0..=1.0) * config.scale_jitter;
    let spin = axis_angle(&[0.0, 0.0, 1.0], rng.gen_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut points = Vec::with_capacity(config.points);
    let mut normals = Vec::with_capacity(config.points);
    for _ in 0..config.points {
        let (p, n) = surface_sample(kind, &mut rng);
        let d = noise.sample(&mut rng);
        let q = [size * p[0] + d * n[0], size * p[1] + d * n[1], size * p[2] + d * n[2]];
        points.push(mat_vec(&spin, &q));
        normals.push(mat_vec(&spin, &n));
    }
    PointCloud::new(points)?.with_normals(normals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub shape: ShapeConfig,
    pub train_clouds: usize,
    pub test_clouds: usize,
    /// Share of test clouds left anomaly-free.
    pub test_normal_fraction: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            shape: ShapeConfig::default(),
            train_clouds: 20,
            test_clouds: 40,
            test_normal_fraction: 0.5,
        }
    }
}

/// Anomaly-free training clouds and a labeled test set for one shape.
#[derive(Debug, Clone)]
pub struct ShapeSplit {
    pub kind: ShapeKind,
    pub train: Vec<PointCloud>,
    pub test: Vec<LabeledSample>,
}

/// Builds the split for `kind`. Test defects are cut-paste anomalies pasted onto
/// fresh clouds that never appear in the training set.
pub fn benchmark_split(
    kind: ShapeKind,
    config: &BenchmarkConfig,
    synthesis: &SynthesisConfig,
    seed: u64,
) -> Result<ShapeSplit> {
    let base = seed ^ kind.tag().rotate_left(32);
    let train = (0..config.train_clouds)
        .map(|i| generate_shape(kind, &config.shape, sample_seed(base, i)))
        .collect::<Result<Vec<_>>>()?;
    let pool = config.test_clouds.max(2);
    let fresh = (0..pool)
        .map(|i| generate_shape(kind, &config.shape, sample_seed(base, 1_000_000 + i)))
        .collect::<Result<Vec<_>>>()?;
    let test_config = SynthesisConfig {
        n_samples: config.test_clouds,
        normal_fraction: config.test_normal_fraction,
        ..synthesis.clone()
    };
    let test = generate_dataset(&fresh, sample_seed(base, 2_000_000), &test_config)?;
    Ok(ShapeSplit { kind, train, test })
}
