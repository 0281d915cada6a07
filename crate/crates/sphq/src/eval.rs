//! Retrieval-quality measurement: average precision at a cutoff, MAP,
//! precision-recall curves and quantization-error reporting.

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use crate::data::{norm, squared_distance, CodeMatrix, Codebooks, LabelVector};
use crate::error::{Error, Result};

/// Average precision over the top `cutoff` ranks:
/// `AP@R = sum_{r <= R, ranked[r] relevant} precision@r / min(|relevant|, R)`.
/// A perfect truncated ranking scores 1. An empty relevant set is defined
/// as 0 and logged.
pub fn average_precision(ranked: &[u64], relevant: &HashSet<u64>, cutoff: usize) -> f64 {
    debug_assert!(cutoff >= 1);
    if relevant.is_empty() {
        log::warn!("average_precision: empty relevant set, returning 0");
        return 0.0;
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (idx, id) in ranked.iter().take(cutoff).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            acc += hits as f64 / (idx + 1) as f64;
        }
    }
    acc / relevant.len().min(cutoff) as f64
}

/// Ids of database points sharing the query's class label.
pub fn relevant_by_label(db_labels: &LabelVector, label: u32) -> HashSet<u64> {
    db_labels
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == label)
        .map(|(i, _)| i as u64)
        .collect()
}

/// Mean of per-query AP@R with single-label relevance (shared class label).
pub fn map_at(
    rankings: &[Vec<u64>],
    query_labels: &[u32],
    db_labels: &LabelVector,
    cutoff: usize,
) -> Result<f64> {
    if rankings.len() != query_labels.len() {
        return Err(Error::shape(
            "map_at",
            format!("{} rankings", query_labels.len()),
            format!("{}", rankings.len()),
        ));
    }
    if rankings.is_empty() {
        return Err(Error::Invalid("map_at needs at least one query".into()));
    }
    let total: f64 = rankings
        .iter()
        .zip(query_labels)
        .map(|(ranked, &y)| average_precision(ranked, &relevant_by_label(db_labels, y), cutoff))
        .sum();
    Ok(total / rankings.len() as f64)
}

/// Multi-label variant: a database point is relevant when its label set
/// intersects the query's.
pub fn map_at_multilabel(
    rankings: &[Vec<u64>],
    query_labels: &[Vec<u32>],
    db_labels: &[Vec<u32>],
    cutoff: usize,
) -> Result<f64> {
    if rankings.len() != query_labels.len() {
        return Err(Error::shape(
            "map_at_multilabel",
            format!("{} rankings", query_labels.len()),
            format!("{}", rankings.len()),
        ));
    }
    if rankings.is_empty() {
        return Err(Error::Invalid("map_at needs at least one query".into()));
    }
    let total: f64 = rankings
        .iter()
        .zip(query_labels)
        .map(|(ranked, qlabels)| {
            let qset: HashSet<u32> = qlabels.iter().copied().collect();
            let relevant: HashSet<u64> = db_labels
                .iter()
                .enumerate()
                .filter(|(_, labels)| labels.iter().any(|y| qset.contains(y)))
                .map(|(i, _)| i as u64)
                .collect();
            average_precision(ranked, &relevant, cutoff)
        })
        .sum();
    Ok(total / rankings.len() as f64)
}

/// One `(recall, precision)` point per rank position.
pub fn precision_recall_points(ranked: &[u64], relevant: &HashSet<u64>) -> Vec<(f64, f64)> {
    debug_assert!(!relevant.is_empty());
    let mut hits = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (idx, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
        }
        points.push((
            hits as f64 / relevant.len() as f64,
            hits as f64 / (idx + 1) as f64,
        ));
    }
    points
}

/// Rank-wise mean of per-query precision-recall points; rankings must share
/// a common length.
pub fn mean_precision_recall(
    rankings: &[Vec<u64>],
    relevants: &[HashSet<u64>],
) -> Result<Vec<(f64, f64)>> {
    if rankings.is_empty() || rankings.len() != relevants.len() {
        return Err(Error::Invalid("mismatched precision-recall inputs".into()));
    }
    let len = rankings[0].len();
    if rankings.iter().any(|r| r.len() != len) {
        return Err(Error::Invalid(
            "rankings must share a common length for curve averaging".into(),
        ));
    }
    let mut acc = vec![(0.0, 0.0); len];
    for (ranked, relevant) in rankings.iter().zip(relevants) {
        for (i, (rec, prec)) in precision_recall_points(ranked, relevant)
            .into_iter()
            .enumerate()
        {
            acc[i].0 += rec;
            acc[i].1 += prec;
        }
    }
    let q = rankings.len() as f64;
    Ok(acc.into_iter().map(|(r, p)| (r / q, p / q)).collect())
}

/// Mean squared quantization error and mean reconstruction norm.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuantizationReport {
    pub mean_squared_error: f64,
    pub mean_reconstruction_norm: f64,
}

pub fn quantization_report(
    z_matrix: &[f64],
    books: &Codebooks,
    codes: &CodeMatrix,
) -> Result<QuantizationReport> {
    let p = books.p();
    if z_matrix.len() != codes.n() * p {
        return Err(Error::shape(
            "quantization report",
            format!("{} embedding values", codes.n() * p),
            format!("{}", z_matrix.len()),
        ));
    }
    if codes.n() == 0 {
        return Err(Error::EmptyDatabase);
    }
    let mut err = 0.0;
    let mut recon_norm = 0.0;
    for (i, row) in codes.rows().enumerate() {
        let recon = books.reconstruct(row);
        err += squared_distance(&z_matrix[i * p..(i + 1) * p], &recon);
        recon_norm += norm(&recon);
    }
    let n = codes.n() as f64;
    Ok(QuantizationReport {
        mean_squared_error: err / n,
        mean_reconstruction_norm: recon_norm / n,
    })
}

/// One named metric for the CSV/JSON summaries.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub r: usize,
    pub bits: usize,
}

pub fn metrics_to_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from("metric,value,r,bits\n");
    for rec in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            rec.name, rec.value, rec.r, rec.bits
        ));
    }
    out
}

pub fn write_metrics(
    records: &[MetricRecord],
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(csv_path.as_ref(), metrics_to_csv(records))
        .map_err(|e| Error::io(csv_path.as_ref(), e))?;
    let json = serde_json::to_string_pretty(records)
        .map_err(|e| Error::Invalid(format!("metrics serialization: {e}")))?;
    std::fs::write(json_path.as_ref(), json).map_err(|e| Error::io(json_path.as_ref(), e))
}

pub fn pr_points_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("rank,recall,precision\n");
    for (i, (rec, prec)) in points.iter().enumerate() {
        out.push_str(&format!("{},{rec},{prec}\n", i + 1));
    }
    out
}
