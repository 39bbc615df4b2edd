use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::intensity::IntensityDiff;
use super::MetricRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

/// Two-pass mean and sample SD. `None` for an empty slice.
pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(MeanSd { mean, sd, n })
}

/// Mean +- SD per quantity for one comparison, as in a results table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub comparison: String,
    pub n: usize,
    pub stats: BTreeMap<String, MeanSd>,
    /// PSNR values that were +inf and left out of the PSNR mean.
    pub infinite_psnr: usize,
}

pub fn aggregate_metrics(records: &[MetricRecord], comparison: &str) -> Result<AggregateRow> {
    if records.is_empty() {
        return Err(Error::InvalidParameter(format!("no records for `{comparison}`")));
    }
    let column = |f: fn(&MetricRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let finite_psnr: Vec<f64> = records.iter().map(|r| r.psnr).filter(|v| v.is_finite()).collect();
    let mut stats = BTreeMap::new();
    for (name, values) in [
        ("pcc", column(|r| r.pcc)),
        ("ssim", column(|r| r.ssim)),
        ("mse", column(|r| r.mse)),
        ("psnr", finite_psnr.clone()),
    ] {
        if let Some(ms) = mean_sd(&values) {
            stats.insert(name.to_owned(), ms);
        }
    }
    Ok(AggregateRow {
        comparison: comparison.to_owned(),
        n: records.len(),
        stats,
        infinite_psnr: records.len() - finite_psnr.len(),
    })
}

pub fn aggregate_intensity(diffs: &[IntensityDiff], comparison: &str) -> Result<AggregateRow> {
    if diffs.is_empty() {
        return Err(Error::InvalidParameter(format!("no intensity pairs for `{comparison}`")));
    }
    let mut stats = BTreeMap::new();
    for (name, f) in [
        ("overall", (|d: &IntensityDiff| d.overall) as fn(&IntensityDiff) -> f64),
        ("r", |d| d.r),
        ("g", |d| d.g),
        ("b", |d| d.b),
    ] {
        let values: Vec<f64> = diffs.iter().map(f).collect();
        stats.insert(name.to_owned(), mean_sd(&values).expect("non-empty"));
    }
    Ok(AggregateRow {
        comparison: comparison.to_owned(),
        n: diffs.len(),
        stats,
        infinite_psnr: 0,
    })
}
