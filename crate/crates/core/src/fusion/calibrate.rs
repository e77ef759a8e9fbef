//! Per-expert logistic calibration and the baseline constant b.

use serde::{Deserialize, Serialize};

use super::FusionBatch;
use crate::error::{Error, Result};

/// `p(y = 1 | x) = σ(scale · x + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub offset: f64,
    /// Mean cross-entropy at the fitted parameters.
    pub cross_entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConstant {
    pub b: f64,
    pub c_3d: f64,
    pub c_2d: f64,
    pub calibration_3d: Calibration,
    pub calibration_2d: Calibration,
}

const TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 500;

fn mean_ce(x: &[f64], y: &[u8], a: f64, c: f64) -> f64 {
    // -log σ(z) = softplus(-z), computed stably
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = a * xi + c;
            if yi == 1 {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / x.len() as f64
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Full-batch damped Newton fit of a 1-D logistic model, stopping when the
/// gradient norm falls below 1e-8.
pub fn fit_logistic(x: &[f64], y: &[u8]) -> Result<Calibration> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: x.len() });
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    let n = x.len() as f64;
    let (mut a, mut c) = (0.0, (pos as f64 / (n - pos as f64)).ln());
    let mut loss = mean_ce(x, y, a, c);
    for _ in 0..MAX_ITERATIONS {
        let (mut ga, mut gc, mut haa, mut hac, mut hcc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(a * xi + c);
            let r = p - yi as f64;
            let w = p * (1.0 - p);
            ga += r * xi;
            gc += r;
            haa += w * xi * xi;
            hac += w * xi;
            hcc += w;
        }
        let (ga, gc) = (ga / n, gc / n);
        if ga.hypot(gc) < TOLERANCE {
            break;
        }
        let (haa, hac, hcc) = (haa / n + 1e-12, hac / n, hcc / n + 1e-12);
        let det = haa * hcc - hac * hac;
        let (mut da, mut dc) = if det > 1e-300 {
            ((hcc * ga - hac * gc) / det, (haa * gc - hac * ga) / det)
        } else {
            (ga, gc)
        };
        // backtracking until the loss does not increase
        let mut accepted = false;
        for _ in 0..60 {
            let trial = mean_ce(x, y, a - da, c - dc);
            if trial <= loss {
                a -= da;
                c -= dc;
                loss = trial;
                accepted = true;
                break;
            }
            da *= 0.5;
            dc *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Calibration {
        scale: a,
        offset: c,
        cross_entropy: loss,
    })
}

/// Calibrates each channel and takes the smaller cross-entropy as b.
pub fn compute_baseline_b(batch: &FusionBatch) -> Result<BaselineConstant> {
    let calibration_3d = fit_logistic(&batch.channel(0), &batch.labels)?;
    let calibration_2d = fit_logistic(&batch.channel(1), &batch.labels)?;
    let (c_3d, c_2d) = (calibration_3d.cross_entropy, calibration_2d.cross_entropy);
    Ok(BaselineConstant {
        b: c_3d.min(c_2d),
        c_3d,
        c_2d,
        calibration_3d,
        calibration_2d,
    })
}
