//! The 3D expert: a PointNet patch encoder and a signed-distance decoder trained
//! on anomaly-free patches. At inference a point's evidence is the magnitude of
//! the decoded signed distance under the bank-reconstructed patch latent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::error::{Error, Result};
use nalgebra::{Matrix3, SymmetricEigen};

use crate::geometry::{
    build_index, cross, dot, extract_patches, farthest_point_sample, mat_vec, normalize, Patch, Point3, PointCloud,
};
use crate::nn::{mse, mse_grad, Activation, AdamWConfig, AdamWState, Gradients, LrSchedule, Mlp, NetCheckpoint, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdfConfig {
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub patch_size: usize,
    pub patches_per_cloud: usize,
    pub queries_per_patch: usize,
    /// Share of training queries displaced off the surface.
    pub off_surface_fraction: f64,
    /// Standard deviation of the off-surface displacement, in patch-scale units.
    pub off_surface_sigma: f64,
    pub epochs: usize,
    /// Patches per optimizer step.
    pub batch_patches: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        SdfConfig {
            encoder_hidden: vec![64, 128],
            latent_dim: 128,
            decoder_hidden: vec![128, 128],
            patch_size: 64,
            patches_per_cloud: 16,
            queries_per_patch: 64,
            off_surface_fraction: 0.5,
            off_surface_sigma: 0.1,
            epochs: 100,
            batch_patches: 1,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl SdfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.off_surface_fraction > 0.0 && self.off_surface_fraction <= 1.0) {
            return Err(Error::Config(
                "off-surface query fraction must be in (0, 1]; zero admits the constant solution".into(),
            ));
        }
        if !(self.off_surface_sigma > 0.0) {
            return Err(Error::Config("off-surface sigma must be positive".into()));
        }
        if self.latent_dim == 0 || self.patch_size == 0 || self.patches_per_cloud == 0 {
            return Err(Error::Config("latent dim, patch size and patch count must be positive".into()));
        }
        if self.queries_per_patch == 0 || self.batch_patches == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("queries, batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Shared per-point MLP followed by a max-pool over patch members.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNetEncoder {
    pub mlp: Mlp,
}

/// Forward record needed to backpropagate through the max-pool.
pub struct EncoderTrace {
    pub latent: Vec<f64>,
    trace: Trace,
    /// Member row that attained the max, per latent channel.
    argmax: Vec<usize>,
}

impl PointNetEncoder {
    pub fn new<R: Rng>(hidden: &[usize], latent_dim: usize, rng: &mut R) -> Self {
        let mut dims = vec![3];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        PointNetEncoder {
            mlp: Mlp::new(&dims, Activation::Relu, Activation::Relu, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn encode(&self, points: &[Point3]) -> Result<Vec<f64>> {
        Ok(self.encode_traced(points)?.latent)
    }

    pub fn encode_patch(&self, patch: &LocalPatch) -> Result<Vec<f64>> {
        self.encode(&patch.points)
    }

    /// Ties in the max-pool go to the earliest member.
    pub fn encode_traced(&self, points: &[Point3]) -> Result<EncoderTrace> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty patch".into()));
        }
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let trace = self.mlp.forward(&flat, points.len())?;
        let d = self.latent_dim();
        let out = trace.output();
        let mut latent = out[..d].to_vec();
        let mut argmax = vec![0; d];
        for (r, row) in out.chunks(d).enumerate().skip(1) {
            for c in 0..d {
                if row[c] > latent[c] {
                    latent[c] = row[c];
                    argmax[c] = r;
                }
            }
        }
        Ok(EncoderTrace { latent, trace, argmax })
    }

    /// Parameter gradients given dL/d latent.
    pub fn backward(&self, enc: &EncoderTrace, d_latent: &[f64]) -> Gradients {
        let d = self.latent_dim();
        let mut upstream = vec![0.0; enc.trace.batch * d];
        for (c, (&row, &g)) in enc.argmax.iter().zip(d_latent).enumerate() {
            upstream[row * d + c] += g;
        }
        self.mlp.backward(&enc.trace, &upstream).0
    }
}

/// Maps a patch-frame query concatenated with a latent code to a signed distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfDecoder {
    pub mlp: Mlp,
}

impl SdfDecoder {
    pub fn new<R: Rng>(latent_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![3 + latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        SdfDecoder {
            mlp: Mlp::new(&dims, Activation::Relu, Activation::Identity, rng),
        }
    }

    fn rows(queries: &[Point3], latent: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(queries.len() * (3 + latent.len()));
        for q in queries {
            x.extend_from_slice(q);
            x.extend_from_slice(latent);
        }
        x
    }

    pub fn eval(&self, q: &Point3, latent: &[f64]) -> Result<f64> {
        Ok(self.eval_many(std::slice::from_ref(q), latent)?[0])
    }

    /// Signed distances for many queries sharing one latent code.
    pub fn eval_many(&self, queries: &[Point3], latent: &[f64]) -> Result<Vec<f64>> {
        let trace = self.mlp.forward(&Self::rows(queries, latent), queries.len())?;
        Ok(trace.outputs.last().unwrap().clone())
    }
}

/// A trained encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfExpert {
    pub encoder: PointNetEncoder,
    pub decoder: SdfDecoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfCheckpoint {
    pub pointnet: NetCheckpoint,
    pub sdf_decoder: NetCheckpoint,
}

impl SdfExpert {
    pub fn new(config: &SdfConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = PointNetEncoder::new(&config.encoder_hidden, config.latent_dim, &mut rng);
        let decoder = SdfDecoder::new(config.latent_dim, &config.decoder_hidden, &mut rng);
        SdfExpert { encoder, decoder }
    }

    pub fn to_checkpoint(&self) -> SdfCheckpoint {
        SdfCheckpoint {
            pointnet: NetCheckpoint::from_net(&self.encoder.mlp, None),
            sdf_decoder: NetCheckpoint::from_net(&self.decoder.mlp, None),
        }
    }

    pub fn from_checkpoint(ck: &SdfCheckpoint) -> Result<Self> {
        let encoder = PointNetEncoder { mlp: ck.pointnet.to_net()? };
        let decoder = SdfDecoder { mlp: ck.sdf_decoder.to_net()? };
        if decoder.mlp.input_dim() != 3 + encoder.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: 3 + encoder.latent_dim(),
                got: decoder.mlp.input_dim(),
            });
        }
        Ok(SdfExpert { encoder, decoder })
    }

    /// Signed distance of a world-space point under a patch's frame and latent,
    /// in world units.
    pub fn signed_distance(&self, patch: &LocalPatch, latent: &[f64], p: &Point3) -> Result<f64> {
        Ok(self.decoder.eval(&patch.to_local(p), latent)? * patch.patch.scale)
    }
}

/// A patch in its canonical frame: centered and scaled as [`Patch`], then rotated
/// so the fitted surface normal is +z.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPatch {
    pub patch: Patch,
    /// Rows are the two tangent axes and the normal.
    pub rotation: [[f64; 3]; 3],
    pub points: Vec<Point3>,
    pub normals: Vec<Point3>,
}

impl LocalPatch {
    /// `cloud_normals` are the normals of the whole cloud the patch came from.
    ///
    /// The normal axis is the least-variance direction of the members, oriented
    /// along their mean normal; the first tangent is the most-variance direction,
    /// signed so the members' third moment along it is non-negative.
    pub fn new(patch: Patch, cloud_normals: &[Point3]) -> Self {
        let mut cov = Matrix3::<f64>::zeros();
        for p in &patch.centered_points {
            for r in 0..3 {
                for c in 0..3 {
                    cov[(r, c)] += p[r] * p[c];
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let column = |k: usize| {
            let v = eig.eigenvectors.column(order[k]);
            normalize(&[v[0], v[1], v[2]])
        };
        let members: Vec<Point3> = patch.member_indices.iter().map(|&i| cloud_normals[i]).collect();
        let mean_normal = members.iter().fold([0.0; 3], |a, n| [a[0] + n[0], a[1] + n[1], a[2] + n[2]]);
        let mut n = column(0);
        if dot(&n, &mean_normal) < 0.0 {
            n = [-n[0], -n[1], -n[2]];
        }
        let mut t1 = column(2);
        if patch.centered_points.iter().map(|p| dot(p, &t1).powi(3)).sum::<f64>() < 0.0 {
            t1 = [-t1[0], -t1[1], -t1[2]];
        }
        let t2 = cross(&n, &t1);
        let rotation = [t1, t2, n];
        LocalPatch {
            points: patch.centered_points.iter().map(|p| mat_vec(&rotation, p)).collect(),
            normals: members.iter().map(|v| mat_vec(&rotation, v)).collect(),
            rotation,
            patch,
        }
    }

    /// Maps a world-space point into the canonical frame.
    pub fn to_local(&self, p: &Point3) -> Point3 {
        mat_vec(&self.rotation, &self.patch.to_frame(p))
    }
}

/// Farthest-point-sampled patches covering a cloud, in canonical frames.
/// The cloud must carry normals.
pub fn cloud_patches(cloud: &PointCloud, count: usize, size: usize, seed: u64) -> Result<Vec<LocalPatch>> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::InvalidArgument("the 3D expert needs normals".into()))?;
    let index = build_index(cloud)?;
    let centers = farthest_point_sample(cloud, count.min(cloud.len()), seed)?;
    Ok(extract_patches(cloud, &index, &centers, size.min(cloud.len()))?
        .into_iter()
        .map(|p| LocalPatch::new(p, normals))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub patch_count: usize,
}

struct TrainPatch {
    points: Vec<Point3>,
    normals: Vec<Point3>,
}

/// Consecutive epochs above 10× the initial loss tolerated before giving up.
pub const DIVERGENCE_PATIENCE: usize = 20;

/// Pretrains encoder and decoder on anomaly-free clouds (which must carry normals).
///
/// Queries are member points (target 0) or member points displaced along their
/// normal by a Gaussian offset δ (target δ), all in the patch frame.
pub fn pretrain_sdf(clouds: &[PointCloud], config: &SdfConfig) -> Result<(SdfExpert, TrainReport)> {
    config.validate()?;
    if clouds.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut patches = Vec::new();
    for (ci, cloud) in clouds.iter().enumerate() {
        let seed = config.seed.wrapping_add(ci as u64);
        for p in cloud_patches(cloud, config.patches_per_cloud, config.patch_size, seed)? {
            patches.push(TrainPatch {
                points: p.points,
                normals: p.normals,
            });
        }
    }
    let mut expert = SdfExpert::new(config);
    let report = train_on_patches(&mut expert, &patches, config)?;
    Ok((expert, report))
}

fn train_on_patches(expert: &mut SdfExpert, patches: &[TrainPatch], config: &SdfConfig) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5df0_5df0);
    let offset = Normal::new(0.0, config.off_surface_sigma).expect("sigma validated");
    let adam = AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut enc_opt = AdamWState::new(&expert.encoder.mlp, adam);
    let mut dec_opt = AdamWState::new(&expert.decoder.mlp, adam);
    let steps_per_epoch = patches.len().div_ceil(config.batch_patches) as u64;
    let schedule = LrSchedule {
        base: config.lr,
        total: steps_per_epoch * config.epochs as u64,
    };
    let latent_dim = config.latent_dim;
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial = None;
    let mut above = 0;
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_patches) {
            let mut g_enc = Gradients::zeros_like(&expert.encoder.mlp);
            let mut g_dec = Gradients::zeros_like(&expert.decoder.mlp);
            for &pi in chunk {
                let patch = &patches[pi];
                let (queries, targets) = sample_queries(patch, config, &offset, &mut rng);
                let enc = expert.encoder.encode_traced(&patch.points)?;
                let x = SdfDecoder::rows(&queries, &enc.latent);
                let trace = expert.decoder.mlp.forward(&x, queries.len())?;
                let pred = trace.output();
                epoch_loss += mse(pred, &targets);
                let (gd, dx) = expert.decoder.mlp.backward(&trace, &mse_grad(pred, &targets));
                let mut d_latent = vec![0.0; latent_dim];
                for row in dx.chunks(3 + latent_dim) {
                    for (a, b) in d_latent.iter_mut().zip(&row[3..]) {
                        *a += b;
                    }
                }
                g_enc.add_assign(&expert.encoder.backward(&enc, &d_latent));
                g_dec.add_assign(&gd);
            }
            let inv = 1.0 / chunk.len() as f64;
            g_enc.scale(inv);
            g_dec.scale(inv);
            let lr = schedule.at(step);
            enc_opt.step(&mut expert.encoder.mlp, &g_enc, lr)?;
            dec_opt.step(&mut expert.decoder.mlp, &g_dec, lr)?;
            step += 1;
        }
        let loss = epoch_loss / patches.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss, initial: initial.unwrap_or(f64::NAN) });
        }
        let init = *initial.get_or_insert(loss);
        if loss > 10.0 * init {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged { epoch, loss, initial: init });
            }
        } else {
            above = 0;
        }
        history.push(loss);
    }
    Ok(TrainReport {
        loss_history: history,
        patch_count: patches.len(),
    })
}

fn sample_queries(
    patch: &TrainPatch,
    config: &SdfConfig,
    offset: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> (Vec<Point3>, Vec<f64>) {
    let n = config.queries_per_patch;
    let mut queries = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let off = ((n as f64) * config.off_surface_fraction).round() as usize;
    for k in 0..n {
        let i = rng.gen_range(0..patch.points.len());
        let p = patch.points[i];
        if k < off {
            let d = offset.sample(rng);
            let nrm = patch.normals[i];
            queries.push([p[0] + d * nrm[0], p[1] + d * nrm[1], p[2] + d * nrm[2]]);
            targets.push(d);
        } else {
            queries.push(p);
            targets.push(0.0);
        }
    }
    (queries, targets)
}

/// Per-point 3D-expert scores.
///
/// Each patch's latent is replaced by its reconstruction from `bank3d` (k nearest,
/// inverse-distance weighted) and every member is scored as |ψ| in world units.
/// Points in several patches get the mean; uncovered points get the cloud mean.
pub fn score_x1(
    expert: &SdfExpert,
    cloud: &PointCloud,
    patches: &[LocalPatch],
    bank3d: &MemoryBank,
    k1: usize,
) -> Result<Vec<f64>> {
    if bank3d.is_empty() {
        return Err(Error::EmptyBank);
    }
    let m = cloud.len();
    let mut sum = vec![0.0; m];
    let mut count = vec![0usize; m];
    for patch in patches {
        let latent = expert.encoder.encode_patch(patch)?;
        let recon = bank3d.reconstruct(&latent, k1)?;
        let s = expert.decoder.eval_many(&patch.points, &recon)?;
        for (&i, v) in patch.patch.member_indices.iter().zip(s) {
            sum[i] += v.abs() * patch.patch.scale;
            count[i] += 1;
        }
    }
    let covered: Vec<f64> = (0..m).filter(|&i| count[i] > 0).map(|i| sum[i] / count[i] as f64).collect();
    let fallback = if covered.is_empty() {
        0.0
    } else {
        covered.iter().sum::<f64>() / covered.len() as f64
    };
    Ok((0..m)
        .map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { fallback })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::MemoryBank;
    use crate::geometry::normalize;

    fn small_config() -> SdfConfig {
        SdfConfig {
            encoder_hidden: vec![16, 32],
            latent_dim: 16,
            decoder_hidden: vec![32, 32],
            patch_size: 32,
            patches_per_cloud: 8,
            queries_per_patch: 32,
            epochs: 60,
            batch_patches: 4,
            lr: 3e-3,
            ..SdfConfig::default()
        }
    }

    fn fibonacci_sphere(n: usize, radius: f64) -> PointCloud {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Point3> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                [radius * r * t.cos(), radius * r * t.sin(), radius * z]
            })
            .collect();
        let normals = pts.iter().map(normalize).collect();
        PointCloud::new(pts).unwrap().with_normals(normals).unwrap()
    }

    fn plane(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3> = (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0])
            .collect();
        PointCloud::new(pts).unwrap().with_normals(vec![[0.0, 0.0, 1.0]; n]).unwrap()
    }

    #[test]
    fn encoder_is_permutation_and_duplicate_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = PointNetEncoder::new(&[8, 16], 12, &mut rng);
        let pts: Vec<Point3> = (0..20).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let base = enc.encode(&pts).unwrap();
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(enc.encode(&shuffled).unwrap(), base);
        let doubled: Vec<Point3> = pts.iter().chain(pts.iter()).copied().collect();
        assert_eq!(enc.encode(&doubled).unwrap(), base);
    }

    #[test]
    fn encoder_matches_direct_max_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = PointNetEncoder::new(&[8, 16], 12, &mut rng);
        let pts: Vec<Point3> = (0..15).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let mut expect = vec![f64::NEG_INFINITY; 12];
        for p in &pts {
            for (e, v) in expect.iter_mut().zip(enc.mlp.predict(p).unwrap()) {
                *e = e.max(v);
            }
        }
        assert_eq!(enc.encode(&pts).unwrap(), expect);
    }

    #[test]
    fn zero_decoder_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dec = SdfDecoder::new(4, &[8], &mut rng);
        let n = dec.mlp.param_count();
        dec.mlp.set_flat_params(&vec![0.0; n]).unwrap();
        assert_eq!(dec.eval(&[0.3, -0.2, 0.9], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn composite_gradient_matches_finite_difference() {
        // encoder and decoder jointly, through the max-pool
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let config = SdfConfig {
            encoder_hidden: vec![5],
            latent_dim: 4,
            decoder_hidden: vec![6],
            ..SdfConfig::default()
        };
        let mut expert = SdfExpert::new(&config);
        let pts: Vec<Point3> = (0..7).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let queries: Vec<Point3> = (0..5).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let targets: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let loss = |e: &SdfExpert| {
            let z = e.encoder.encode(&pts).unwrap();
            mse(&e.decoder.eval_many(&queries, &z).unwrap(), &targets)
        };
        let enc = expert.encoder.encode_traced(&pts).unwrap();
        let trace = expert.decoder.mlp.forward(&SdfDecoder::rows(&queries, &enc.latent), 5).unwrap();
        let (_, dx) = expert.decoder.mlp.backward(&trace, &mse_grad(trace.output(), &targets));
        let mut d_latent = vec![0.0; 4];
        for row in dx.chunks(7) {
            for (a, b) in d_latent.iter_mut().zip(&row[3..]) {
                *a += b;
            }
        }
        let analytic = expert.encoder.backward(&enc, &d_latent).flat();
        let base = expert.encoder.mlp.flat_params();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            expert.encoder.mlp.set_flat_params(&p).unwrap();
            let up = loss(&expert);
            p[i] -= 2e-6;
            expert.encoder.mlp.set_flat_params(&p).unwrap();
            let down = loss(&expert);
            let fd = (up - down) / 2e-6;
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn rejects_zero_off_surface_fraction() {
        let config = SdfConfig { off_surface_fraction: 0.0, ..small_config() };
        assert!(matches!(pretrain_sdf(&[plane(100, 1)], &config), Err(Error::Config(_))));
        assert!(matches!(pretrain_sdf(&[], &small_config()), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn plane_surface_residual_is_small() {
        let train: Vec<PointCloud> = (0..3).map(|s| plane(300, s)).collect();
        let (expert, report) = pretrain_sdf(&train, &small_config()).unwrap();
        assert!(report.loss_history.last().unwrap() < &report.loss_history[0]);
        let test = plane(300, 99);
        for patch in cloud_patches(&test, 6, 32, 0).unwrap() {
            let z = expert.encoder.encode_patch(&patch).unwrap();
            let s = expert.decoder.eval_many(&patch.points, &z).unwrap();
            let mean = s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64;
            assert!(mean < 0.05, "mean |s| = {mean} (patch units)");
        }
    }

    #[test]
    fn pretraining_is_deterministic() {
        let config = SdfConfig { epochs: 3, ..small_config() };
        let train = vec![plane(120, 1), plane(120, 2)];
        let (a, ra) = pretrain_sdf(&train, &config).unwrap();
        let (b, rb) = pretrain_sdf(&train, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn stored_patch_reconstructs_its_latent() {
        let config = SdfConfig { epochs: 2, ..small_config() };
        let cloud = plane(200, 3);
        let (expert, _) = pretrain_sdf(&[cloud.clone()], &config).unwrap();
        let patches = cloud_patches(&cloud, 8, 32, 0).unwrap();
        let feats: Vec<Vec<f64>> = patches.iter().map(|p| expert.encoder.encode_patch(p).unwrap()).collect();
        let bank = MemoryBank::new(feats.clone(), vec![]).unwrap();
        let x1 = score_x1(&expert, &cloud, &patches, &bank, 1).unwrap();
        // direct residual with the patch's own latent
        let mut sum = vec![0.0; cloud.len()];
        let mut cnt = vec![0usize; cloud.len()];
        for (p, f) in patches.iter().zip(&feats) {
            for (&i, s) in p.patch.member_indices.iter().zip(expert.decoder.eval_many(&p.points, f).unwrap()) {
                sum[i] += s.abs() * p.patch.scale;
                cnt[i] += 1;
            }
        }
        for i in 0..cloud.len() {
            if cnt[i] > 0 {
                assert_eq!(x1[i], sum[i] / cnt[i] as f64);
            }
            assert!(x1[i] >= 0.0);
        }
        let empty = MemoryBank::new(vec![], vec![]);
        assert!(empty.is_err() || score_x1(&expert, &cloud, &patches, &empty.unwrap(), 1).is_err());
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn sphere_sdf_tracks_analytic_distance() {
        let start = std::time::Instant::now();
        let config = SdfConfig { epochs: 30, ..SdfConfig::default() };
        let train: Vec<PointCloud> = [1.0, 0.999, 1.001].iter().map(|&r| fibonacci_sphere(800, r)).collect();
        let (expert, report) = pretrain_sdf(&train, &config).unwrap();
        let test = fibonacci_sphere(700, 1.0);
        let patches = cloud_patches(&test, 12, config.patch_size, 5).unwrap();
        let (mut pred, mut truth, mut surface) = (Vec::new(), Vec::new(), Vec::new());
        let mut far = Vec::new();
        for patch in &patches {
            let z = expert.encoder.encode_patch(patch).unwrap();
            for &i in patch.patch.member_indices.iter().step_by(4) {
                let p = test.points()[i];
                surface.push(expert.signed_distance(patch, &z, &p).unwrap().abs() / patch.patch.scale);
                for t in [-0.1, -0.05, -0.02, 0.02, 0.05, 0.1] {
                    let q = [p[0] * (1.0 + t), p[1] * (1.0 + t), p[2] * (1.0 + t)];
                    pred.push(expert.signed_distance(patch, &z, &q).unwrap());
                    truth.push(t);
                }
            }
            let c = test.points()[patch.patch.center_index];
            far.push(expert.signed_distance(patch, &z, &[1.2 * c[0], 1.2 * c[1], 1.2 * c[2]]).unwrap());
        }
        let r = pearson(&pred, &truth);
        let residual = surface.iter().sum::<f64>() / surface.len() as f64;
        let far_mean = far.iter().sum::<f64>() / far.len() as f64;
        eprintln!(
            "sphere sdf: r = {r:.4}, surface |s|/scale = {residual:.4}, s(1.2) = {far_mean:.4}, loss {:.5} -> {:.5}, {:?}",
            report.loss_history[0],
            report.loss_history.last().unwrap(),
            start.elapsed()
        );
        assert!(r > 0.9);
        assert!(residual < 0.05);
        assert!((far_mean - 0.2).abs() < 0.08);
    }

    #[test]
    fn checkpoint_round_trip() {
        let expert = SdfExpert::new(&small_config());
        let json = serde_json::to_string(&expert.to_checkpoint()).unwrap();
        let back: SdfCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(SdfExpert::from_checkpoint(&back).unwrap(), expert);
    }
}
