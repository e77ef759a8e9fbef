//! Fixed fusion rules used as baselines.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Iaf,
    Max,
    Add,
    Linear,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [FusionStrategy::Iaf, FusionStrategy::Max, FusionStrategy::Add, FusionStrategy::Linear];

    pub fn name(&self) -> &'static str {
        match self {
            FusionStrategy::Iaf => "iaf",
            FusionStrategy::Max => "max",
            FusionStrategy::Add => "add",
            FusionStrategy::Linear => "linear",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// `w₀ + w₁·x₁ + w₂·x₂`, fitted by least squares on labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFuser {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl LinearFuser {
    pub fn fit(x1: &[f64], x2: &[f64], labels: &[u8]) -> Result<Self> {
        if x1.len() != x2.len() || x1.len() != labels.len() || x1.is_empty() {
            return Err(Error::DimensionMismatch { expected: labels.len(), got: x1.len() });
        }
        let mut ata = Matrix3::<f64>::zeros();
        let mut aty = Vector3::<f64>::zeros();
        for ((&a, &b), &y) in x1.iter().zip(x2).zip(labels) {
            let row = Vector3::new(1.0, a, b);
            ata += row * row.transpose();
            aty += row * y as f64;
        }
        let w = ata
            .lu()
            .solve(&aty)
            .ok_or_else(|| Error::InvalidArgument("linear fusion fit is singular".into()))?;
        Ok(LinearFuser { w0: w[0], w1: w[1], w2: w[2] })
    }
}

/// Elementwise fusion rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineFuser {
    Max,
    Add,
    Linear(Option<LinearFuser>),
}

impl BaselineFuser {
    pub fn fuse(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        if x1.len() != x2.len() {
            return Err(Error::DimensionMismatch { expected: x1.len(), got: x2.len() });
        }
        let pairs = x1.iter().zip(x2);
        Ok(match self {
            BaselineFuser::Max => pairs.map(|(a, b)| a.max(*b)).collect(),
            BaselineFuser::Add => pairs.map(|(a, b)| a + b).collect(),
            BaselineFuser::Linear(None) => return Err(Error::LinearNotFitted),
            BaselineFuser::Linear(Some(w)) => pairs.map(|(a, b)| w.w0 + w.w1 * a + w.w2 * b).collect(),
        })
    }
}
