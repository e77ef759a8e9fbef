//! AUROC, per-region-overlap curves and their normalized integrals.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_index, radius_components, PointCloud};

/// FPR integration limits reported by default.
pub const DEFAULT_LIMITS: [f64; 7] = [0.3, 0.2, 0.1, 0.07, 0.05, 0.03, 0.01];

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outranks a random negative, ties counting
/// one half, computed from midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuroc(format!("{pos} positives, {neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points over descending unique thresholds, from (0, 0) to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuroc(format!("{pos} positives, {neg} negatives")));
    }
    let order = descending(scores);
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in threshold_groups(scores, &order) {
        for &k in group {
            if labels[k] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(curve)
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn threshold_groups<'a>(scores: &'a [f64], order: &'a [usize]) -> impl Iterator<Item = &'a [usize]> + 'a {
    order.chunk_by(move |&a, &b| scores[a] == scores[b])
}

/// `(fpr, pro)` pairs as the threshold descends through the unique scores,
/// starting from the (0, 0) anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProCurve {
    pub fpr: Vec<f64>,
    pub pro: Vec<f64>,
    pub region_count: usize,
}

/// Per-region overlap curve. `regions` are index sets of anomalous points.
pub fn pro_curve(scores: &[f64], labels: &[u8], regions: &[Vec<usize>]) -> Result<ProCurve> {
    let (_, neg) = check(scores, labels)?;
    if regions.is_empty() || regions.iter().any(|r| r.is_empty()) {
        return Err(Error::NoRegions);
    }
    if neg == 0 {
        return Err(Error::EvaluationUndefined("PRO needs negative points".into()));
    }
    let mut region_of = vec![None; scores.len()];
    for (r, members) in regions.iter().enumerate() {
        for &i in members {
            if i >= scores.len() {
                return Err(Error::MaskBounds(i));
            }
            region_of[i] = Some(r);
        }
    }
    let order = descending(scores);
    let inv_regions = 1.0 / regions.len() as f64;
    let mut fp = 0usize;
    let mut overlap = 0.0;
    let mut curve = ProCurve {
        fpr: vec![0.0],
        pro: vec![0.0],
        region_count: regions.len(),
    };
    for group in threshold_groups(scores, &order) {
        for &k in group {
            if labels[k] == 0 {
                fp += 1;
            }
            if let Some(r) = region_of[k] {
                overlap += inv_regions / regions[r].len() as f64;
            }
        }
        curve.fpr.push(fp as f64 / neg as f64);
        curve.pro.push(overlap.min(1.0));
    }
    Ok(curve)
}

/// Trapezoidal integral of PRO over FPR ∈ [0, limit], divided by `limit`; the
/// curve is interpolated linearly at the limit.
pub fn aupro_at(curve: &ProCurve, limit: f64) -> Result<f64> {
    if !(limit > 0.0 && limit <= 1.0) {
        return Err(Error::InvalidArgument(format!("integration limit {limit} not in (0, 1]")));
    }
    let mut area = 0.0;
    for w in 0..curve.fpr.len().saturating_sub(1) {
        let (x0, x1) = (curve.fpr[w], curve.fpr[w + 1]);
        let (y0, y1) = (curve.pro[w], curve.pro[w + 1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_lim) / 2.0;
            break;
        }
    }
    Ok(area / limit)
}

/// Connected anomalous regions: label-1 points linked within twice the median
/// nearest-neighbor spacing.
pub fn label_regions(cloud: &PointCloud, labels: &[u8]) -> Result<Vec<Vec<usize>>> {
    if !labels.iter().any(|&l| l == 1) {
        return Ok(Vec::new());
    }
    let spacing = cloud.median_spacing(&build_index(cloud)?);
    radius_components(cloud, labels, 2.0 * spacing)
}

/// One test sample's point-level evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub id: String,
    pub point_scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub regions: Vec<Vec<usize>>,
    pub object_score: f64,
}

impl SampleEval {
    pub fn is_anomalous(&self) -> bool {
        self.labels.iter().any(|&l| l == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub sample_count: usize,
    pub o_auroc: Option<f64>,
    pub p_auroc: Option<f64>,
    /// Keyed by column name, e.g. `aupro_30`.
    pub aupro: BTreeMap<String, f64>,
    pub limits: Vec<f64>,
    /// Metrics that could not be computed, with the reason.
    pub errors: Vec<String>,
}

pub fn limit_column(limit: f64) -> String {
    format!("aupro_{:02}", (limit * 100.0).round() as u64)
}

/// P-AUROC pooled over all points, O-AUROC over object scores, and AUPRO
/// averaged over the samples that contain anomalous regions.
pub fn evaluate_all(category: &str, samples: &[SampleEval], limits: &[f64]) -> EvalReport {
    let mut report = EvalReport {
        category: category.to_string(),
        sample_count: samples.len(),
        o_auroc: None,
        p_auroc: None,
        aupro: BTreeMap::new(),
        limits: limits.to_vec(),
        errors: Vec::new(),
    };
    let scores: Vec<f64> = samples.iter().flat_map(|s| s.point_scores.iter().copied()).collect();
    let labels: Vec<u8> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    match auroc(&scores, &labels) {
        Ok(v) => report.p_auroc = Some(v),
        Err(e) => report.errors.push(format!("p_auroc: {e}")),
    }
    let obj: Vec<f64> = samples.iter().map(|s| s.object_score).collect();
    let obj_labels: Vec<u8> = samples.iter().map(|s| s.is_anomalous() as u8).collect();
    match auroc(&obj, &obj_labels) {
        Ok(v) => report.o_auroc = Some(v),
        Err(e) => report.errors.push(format!("o_auroc: {e}")),
    }
    let mut sums = vec![0.0; limits.len()];
    let mut counted = 0usize;
    for s in samples.iter().filter(|s| !s.regions.is_empty()) {
        let curve = pro_curve(&s.point_scores, &s.labels, &s.regions).and_then(|c| {
            limits.iter().map(|&l| aupro_at(&c, l)).collect::<Result<Vec<f64>>>()
        });
        match curve {
            Ok(vals) => {
                counted += 1;
                for (acc, v) in sums.iter_mut().zip(vals) {
                    *acc += v;
                }
            }
            Err(e) => report.errors.push(format!("aupro for sample {}: {e}", s.id)),
        }
    }
    if counted == 0 {
        report.errors.push("aupro: no sample has anomalous regions".into());
    } else {
        for (&l, s) in limits.iter().zip(sums) {
            report.aupro.insert(limit_column(l), s / counted as f64);
        }
    }
    report
}

impl EvalReport {
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn aupro_at(&self, limit: f64) -> Option<f64> {
        self.aupro.get(&limit_column(limit)).copied()
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one row per report; limits come from the first report.
pub fn reports_to_csv(reports: &[EvalReport]) -> Result<String> {
    let limits: Vec<f64> = reports.first().map(|r| r.limits.clone()).unwrap_or_else(|| DEFAULT_LIMITS.to_vec());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["category".to_string(), "sample_count".into(), "o_auroc".into(), "p_auroc".into()];
    header.extend(limits.iter().map(|&l| limit_column(l)));
    w.write_record(&header).map_err(csv_error)?;
    for r in reports {
        let mut row = vec![r.category.clone(), r.sample_count.to_string(), cell(r.o_auroc), cell(r.p_auroc)];
        row.extend(limits.iter().map(|&l| cell(r.aupro_at(l))));
        w.write_record(&row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub fn write_reports(reports: &[EvalReport], csv_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(csv_path, reports_to_csv(reports)?)?;
    fs::write(json_path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}
