//! Evaluation stage: per-pair metrics and intensity differences, aggregates,
//! group statistics and domain-shift summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stainloop_core::evaluation::{
    aggregate_intensity, aggregate_metrics, domain_shift_summary, evaluate_pair, fisher_lsd, intensity_difference,
    masked_intensity, mean_sd, AggregateRow, IntensityDiff, IntensitySummary, MeanSd, MetricRecord, SampleGroup,
    StatTestResult,
};
use stainloop_core::harmonize::{tissue_mask, TissueMask};
use stainloop_core::ingest::load_core_image;
use stainloop_core::CoreImage;

use crate::error::CliResult;
use crate::layout::{CoreStatus, StageStatus};
use crate::manifest::{Comparison, Role};
use crate::provenance::WorkKey;
use crate::stages::load_role;
use crate::Context;

pub const METRICS_HEADER: &str =
    "core_id,comparison,pcc,ssim,psnr_db,mse,align_theta_deg,align_tx,align_ty,align_ecc,align_converged";
pub const INTENSITY_HEADER: &str = "core_id,comparison,first,second,overall,r,g,b";
pub const METRIC_NAMES: [&str; 4] = ["pcc", "ssim", "psnr", "mse"];
pub const CHANNEL_NAMES: [&str; 4] = ["overall", "r", "g", "b"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityRow {
    pub core_id: String,
    pub comparison: String,
    pub first: Role,
    pub second: Role,
    pub diff: IntensityDiff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleIntensity {
    pub role: Role,
    #[serde(flatten)]
    pub summary: IntensitySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub core_id: String,
    pub comparison: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedAlignment {
    pub core_id: String,
    pub comparison: String,
    pub ecc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCore {
    pub core_id: String,
    pub stage: String,
    pub reason: String,
}

/// `evaluation/summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub comparisons: Vec<Comparison>,
    pub cores: Vec<String>,
    pub excluded_cores: Vec<ExcludedCore>,
    pub skipped_pairs: Vec<SkippedPair>,
    pub flagged_alignments: Vec<FlaggedAlignment>,
    pub role_intensities: Vec<RoleIntensity>,
}

/// `evaluation/aggregate.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub metadata: serde_json::Value,
    pub metrics: Vec<AggregateRow>,
    pub intensity: Vec<AggregateRow>,
    /// Configured comparisons without a single evaluated pair.
    pub empty_comparisons: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub name: String,
    pub n: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatEntry {
    pub quantity: String,
    pub groups: Vec<GroupInfo>,
    pub result: Option<StatTestResult>,
    pub skipped: Option<String>,
}

/// `evaluation/stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub alpha: f64,
    pub metric_tests: Vec<StatEntry>,
    pub intensity_tests: Vec<StatEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub core_id: String,
    pub role: Role,
    pub mean_diff: f64,
    pub median_diff: f64,
    pub n_reference: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub role: Role,
    pub n: usize,
    pub mean_diff: MeanSd,
    pub median_diff: MeanSd,
}

/// `evaluation/domain_shift.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftReport {
    pub configured: bool,
    pub n_training_he: usize,
    pub n_training_unstained: usize,
    pub rows: Vec<ShiftRow>,
    pub summary: Vec<ShiftSummary>,
}

/// Images and masks of one core, loaded once.
struct CoreData {
    images: BTreeMap<Role, CoreImage>,
    /// Tissue masks of the harmonized GUS and GHE cores.
    masks: BTreeMap<bool, TissueMask>,
}

#[derive(Default)]
struct CoreResult {
    records: Vec<MetricRecord>,
    intensity: Vec<IntensityRow>,
    summaries: Vec<RoleIntensity>,
    skipped: Vec<SkippedPair>,
    evaluated: usize,
}

fn needed_roles(comparisons: &[Comparison]) -> Vec<Role> {
    let mut roles: Vec<Role> = comparisons.iter().flat_map(|c| [c.first, c.second]).collect();
    roles.extend([Role::Gus, Role::Ghe]);
    roles.sort();
    roles.dedup();
    roles
}

fn load_core(ctx: &Context, id: &str, roles: &[Role]) -> CoreData {
    let mut images = BTreeMap::new();
    for &role in roles {
        if let Ok(img) = load_role(ctx, id, role) {
            images.insert(role, img);
        }
    }
    let mut masks = BTreeMap::new();
    for (stained, role) in [(false, Role::Gus), (true, Role::Ghe)] {
        if let Some(img) = images.get(&role) {
            masks.insert(stained, tissue_mask(img, ctx.config.mask));
        }
    }
    CoreData { images, masks }
}

fn intensity_of(ctx: &Context, id: &str, data: &CoreData, role: Role) -> Result<IntensitySummary, String> {
    let img = data.images.get(&role).ok_or_else(|| missing(ctx, id, role))?;
    let mask = data.masks.get(&role.from_stained_slide()).ok_or_else(|| {
        let src = if role.from_stained_slide() { Role::Ghe } else { Role::Gus };
        format!("no tissue mask for {role}: harmonized {src} missing")
    })?;
    if !mask.matches(img) {
        return Err(format!(
            "{role} is {}x{} but the tissue mask is {}x{}",
            img.width(),
            img.height(),
            mask.width,
            mask.height
        ));
    }
    masked_intensity(img, mask).map_err(|e| e.to_string())
}

fn missing(ctx: &Context, id: &str, role: Role) -> String {
    format!("missing {role} ({})", ctx.layout.rel(&ctx.layout.role_path(id, role)))
}

fn evaluate_comparison(
    ctx: &Context,
    id: &str,
    data: &CoreData,
    c: &Comparison,
    intensities: &BTreeMap<Role, Result<IntensitySummary, String>>,
) -> Result<(Option<MetricRecord>, IntensityRow), String> {
    let (Some(a), Some(b)) = (data.images.get(&c.first), data.images.get(&c.second)) else {
        let absent: Vec<String> = [c.first, c.second]
            .into_iter()
            .filter(|r| !data.images.contains_key(r))
            .map(|r| missing(ctx, id, r))
            .collect();
        return Err(absent.join(", "));
    };
    let record = if c.metrics {
        let align = ctx.align.then_some(ctx.config.ecc);
        Some(evaluate_pair(a, b, align, &c.id, ctx.config.ssim).map_err(|e| format!("metrics: {e}"))?)
    } else {
        None
    };
    let x = intensities[&c.first].as_ref().map_err(|e| format!("intensity: {e}"))?;
    let y = intensities[&c.second].as_ref().map_err(|e| format!("intensity: {e}"))?;
    let row = IntensityRow {
        core_id: id.to_owned(),
        comparison: c.id.clone(),
        first: c.first,
        second: c.second,
        diff: intensity_difference(x, y),
    };
    Ok((record, row))
}

fn evaluate_core(ctx: &Context, id: &str, roles: &[Role]) -> CoreResult {
    let data = load_core(ctx, id, roles);
    let comparisons = &ctx.manifest.comparisons;
    let used: Vec<Role> = needed_roles(comparisons).into_iter().filter(|r| data.images.contains_key(r)).collect();
    let intensities: BTreeMap<Role, Result<IntensitySummary, String>> = roles
        .iter()
        .map(|&r| {
            (r, intensity_of(ctx, id, &data, r))
        })
        .collect();
    let results: Vec<_> = comparisons
        .par_iter()
        .map(|c| evaluate_comparison(ctx, id, &data, c, &intensities))
        .collect();

    let mut out = CoreResult::default();
    for (c, res) in comparisons.iter().zip(results) {
        match res {
            Ok((record, row)) => {
                out.records.extend(record);
                out.intensity.push(row);
                out.evaluated += 1;
            }
            Err(reason) => out.skipped.push(SkippedPair {
                core_id: id.to_owned(),
                comparison: c.id.clone(),
                reason,
            }),
        }
    }
    for role in used {
        if let Ok(s) = &intensities[&role] {
            out.summaries.push(RoleIntensity {
                role,
                summary: s.clone(),
            });
        }
    }
    out
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let a = &r.alignment;
        // without an attempted alignment only the frame correlation is meaningful
        let [theta, tx, ty, converged] = if a.attempted {
            [fmt_f(a.theta_deg), fmt_f(a.tx), fmt_f(a.ty), a.converged.to_string()]
        } else {
            Default::default()
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{theta},{tx},{ty},{},{converged}",
            r.core_id,
            r.comparison,
            fmt_f(r.pcc),
            fmt_f(r.ssim),
            fmt_f(r.psnr),
            fmt_f(r.mse),
            fmt_f(a.ecc),
        );
    }
    s
}

pub fn intensity_csv(rows: &[IntensityRow]) -> String {
    let mut s = String::from(INTENSITY_HEADER);
    s.push('\n');
    for r in rows {
        let d = &r.diff;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.core_id,
            r.comparison,
            r.first,
            r.second,
            fmt_f(d.overall),
            fmt_f(d.r),
            fmt_f(d.g),
            fmt_f(d.b)
        );
    }
    s
}

fn stat_entry(quantity: &str, groups: Vec<SampleGroup>, alpha: f64) -> StatEntry {
    let info = groups
        .iter()
        .map(|g| GroupInfo {
            name: g.name.clone(),
            n: g.values.len(),
            mean: if g.values.is_empty() { 0.0 } else { g.mean() },
        })
        .collect();
    let groups: Vec<SampleGroup> = groups.into_iter().filter(|g| !g.values.is_empty()).collect();
    let (result, skipped) = match fisher_lsd(&groups, alpha) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    StatEntry {
        quantity: quantity.into(),
        groups: info,
        result,
        skipped,
    }
}

pub fn metric_value(r: &MetricRecord, name: &str) -> f64 {
    match name {
        "pcc" => r.pcc,
        "ssim" => r.ssim,
        "psnr" => r.psnr,
        "mse" => r.mse,
        other => unreachable!("unknown metric {other}"),
    }
}

pub fn channel_value(d: &IntensityDiff, name: &str) -> f64 {
    match name {
        "overall" => d.overall,
        "r" => d.r,
        "g" => d.g,
        "b" => d.b,
        other => unreachable!("unknown channel {other}"),
    }
}

pub fn statistics(comparisons: &[Comparison], records: &[MetricRecord], rows: &[IntensityRow], alpha: f64) -> StatsReport {
    let metric_cmps: Vec<&Comparison> = comparisons.iter().filter(|c| c.metrics).collect();
    let metric_tests = METRIC_NAMES
        .iter()
        .map(|&m| {
            let groups = metric_cmps
                .iter()
                .map(|c| {
                    let v = records
                        .iter()
                        .filter(|r| r.comparison == c.id)
                        .map(|r| metric_value(r, m))
                        .filter(|v| v.is_finite())
                        .collect();
                    SampleGroup::new(c.id.clone(), v)
                })
                .collect();
            stat_entry(m, groups, alpha)
        })
        .collect();
    let intensity_tests = CHANNEL_NAMES
        .iter()
        .map(|&ch| {
            let groups = comparisons
                .iter()
                .map(|c| {
                    let v = rows.iter().filter(|r| r.comparison == c.id).map(|r| channel_value(&r.diff, ch)).collect();
                    SampleGroup::new(c.id.clone(), v)
                })
                .collect();
            stat_entry(&format!("intensity_{ch}"), groups, alpha)
        })
        .collect();
    StatsReport {
        alpha,
        metric_tests,
        intensity_tests,
    }
}

pub fn metadata(ctx: &Context) -> serde_json::Value {
    let s = ctx.config.ssim;
    json!({
        "tool": concat!("stainloop ", env!("CARGO_PKG_VERSION")),
        "pixel_scale": "[0, 1] (8-bit values / 255)",
        "psnr": "peak 1.0; identical frames give the string \"inf\", excluded from the PSNR mean and counted in infinite_psnr",
        "ssim": format!(
            "single-scale SSIM on Rec.601 luminance, {w}x{w} Gaussian window (sigma {sg}), k1 {k1}, k2 {k2}, mean over valid window positions",
            w = s.window, sg = s.sigma, k1 = s.k1, k2 = s.k2
        ),
        "pcc": "Pearson correlation over all RGB samples flattened into one vector",
        "metric_region": "full frame after padding both images with white to a common size, background included",
        "intensity_region": "tissue mask of the harmonized core of the slide each image derives from",
        "intensity_difference": "first minus second, 8-bit units",
        "sd": "sample standard deviation (n - 1); 0 when n = 1",
        "alignment": if ctx.align { json!({ "method": "ECC rigid, second image onto first", "params": ctx.config.ecc }) } else { json!("disabled") },
        "reconstruction_fill": "cells without a patch are filled white; edge patches are zero-padded (black) before inference",
        "target_mpp": ctx.config.target_mpp,
        "patch_size": ctx.config.patch_size,
        "tissue_min": ctx.config.tissue_min,
        "alpha": ctx.config.alpha,
    })
}

fn domain_shift(ctx: &Context, role_intensities: &[RoleIntensity]) -> CliResult<DomainShiftReport> {
    let r = &ctx.manifest.reference;
    let load_set = |paths: &[PathBuf]| -> CliResult<Vec<IntensitySummary>> {
        paths
            .iter()
            .map(|p| {
                let img = load_core_image(p, Some(r.mpp.unwrap_or(ctx.config.target_mpp)))?;
                let mask = tissue_mask(&img, ctx.config.mask);
                Ok(masked_intensity(&img, &mask).map_err(|e| {
                    crate::error::CliError::Config(format!("{}: {e}", ctx.manifest.display_path(p)))
                })?)
            })
            .collect()
    };
    let he = load_set(&r.training_he)?;
    let us = load_set(&r.training_unstained)?;
    let mut rows = Vec::new();
    for ri in role_intensities {
        let set = match ri.role {
            Role::GheRaw | Role::Ghe => &he,
            Role::GusRaw | Role::Gus => &us,
            _ => continue,
        };
        if let Ok(d) = domain_shift_summary(&ri.summary, set) {
            rows.push(ShiftRow {
                core_id: ri.summary.core_id.clone(),
                role: ri.role,
                mean_diff: d.mean_diff,
                median_diff: d.median_diff,
                n_reference: d.n_reference,
            });
        }
    }
    let mut summary = Vec::new();
    for role in [Role::GusRaw, Role::GheRaw, Role::Gus, Role::Ghe] {
        let of_role: Vec<&ShiftRow> = rows.iter().filter(|s| s.role == role).collect();
        let means: Vec<f64> = of_role.iter().map(|s| s.mean_diff).collect();
        let medians: Vec<f64> = of_role.iter().map(|s| s.median_diff).collect();
        if let (Some(mean_diff), Some(median_diff)) = (mean_sd(&means), mean_sd(&medians)) {
            summary.push(ShiftSummary {
                role,
                n: of_role.len(),
                mean_diff,
                median_diff,
            });
        }
    }
    Ok(DomainShiftReport {
        configured: !(he.is_empty() && us.is_empty()),
        n_training_he: he.len(),
        n_training_unstained: us.len(),
        rows,
        summary,
    })
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Failures recorded by earlier stages, for the report.
fn upstream_exclusions(ctx: &Context) -> CliResult<Vec<ExcludedCore>> {
    let mut out = Vec::new();
    for stage in ["extract", "harmonize", "infer"] {
        if let Some(st) = StageStatus::load(&ctx.layout, stage)? {
            for c in st.failures() {
                out.push(ExcludedCore {
                    core_id: c.core_id.clone(),
                    stage: stage.into(),
                    reason: c.reason.clone().unwrap_or_default(),
                });
            }
        }
    }
    Ok(out)
}

pub fn evaluate(ctx: &Context) -> CliResult<StageStatus> {
    let comparisons = &ctx.manifest.comparisons;
    let roles = needed_roles(comparisons);
    let ids: Vec<String> = ctx.manifest.cores.iter().map(|c| c.core_id.clone()).collect();

    // inputs for provenance and skip-by-checksum
    let mut key = WorkKey::new(
        "evaluate",
        None,
        json!({
            "comparisons": comparisons,
            "align": ctx.align,
            "ecc": ctx.config.ecc,
            "ssim": ctx.config.ssim,
            "mask": ctx.config.mask,
            "alpha": ctx.config.alpha,
            "target_mpp": ctx.config.target_mpp,
        }),
    );
    for id in &ids {
        for &role in &roles {
            let p = ctx.layout.role_path(id, role);
            if p.is_file() {
                key.input(role.as_str(), ctx.layout.rel(&p), &p)?;
            }
        }
    }
    let r = &ctx.manifest.reference;
    for (role, p) in r.training_he.iter().map(|p| ("training_he", p)).chain(r.training_unstained.iter().map(|p| ("training_unstained", p))) {
        key.input(role, ctx.manifest.display_path(p), p)?;
    }
    for stage in ["extract", "harmonize", "infer"] {
        let p = ctx.layout.status_path(stage);
        if p.is_file() {
            key.input("status", ctx.layout.rel(&p), &p)?;
        }
    }
    let outputs: Vec<PathBuf> = crate::layout::EVALUATION_FILES.iter().map(|f| ctx.layout.evaluation(f)).collect();
    if !ctx.force && key.is_fresh(&outputs) {
        if let Some(prev) = StageStatus::load(&ctx.layout, "evaluate")? {
            let cores = prev
                .cores
                .into_iter()
                .map(|c| if c.succeeded() { CoreStatus { outcome: crate::layout::Outcome::Cached, ..c } } else { c })
                .collect();
            return Ok(StageStatus {
                stage: "evaluate".into(),
                cores,
            });
        }
    }

    let results = ctx.par_map(&ids, |id| evaluate_core(ctx, id, &roles));

    // deterministic fold in core_id order, grouped by comparison
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut skipped = Vec::new();
    let mut statuses = Vec::new();
    for (id, res) in ids.iter().zip(&results) {
        summaries.extend(res.summaries.iter().cloned());
        skipped.extend(res.skipped.iter().cloned());
        statuses.push(if res.evaluated > 0 {
            CoreStatus::ok(id, false)
        } else {
            CoreStatus::failed(id, "no comparison could be evaluated")
        });
    }
    for c in comparisons {
        for res in &results {
            records.extend(res.records.iter().filter(|r| r.comparison == c.id).cloned());
            rows.extend(res.intensity.iter().filter(|r| r.comparison == c.id).cloned());
        }
    }

    let mut metric_rows = Vec::new();
    let mut intensity_rows = Vec::new();
    let mut empty = Vec::new();
    for c in comparisons {
        let recs: Vec<MetricRecord> = records.iter().filter(|r| r.comparison == c.id).cloned().collect();
        let diffs: Vec<IntensityDiff> = rows.iter().filter(|r| r.comparison == c.id).map(|r| r.diff).collect();
        if c.metrics && !recs.is_empty() {
            metric_rows.push(aggregate_metrics(&recs, &c.id)?);
        }
        if diffs.is_empty() {
            empty.push(c.id.clone());
        } else {
            intensity_rows.push(aggregate_intensity(&diffs, &c.id)?);
        }
    }

    let flagged = records
        .iter()
        .filter(|r| r.alignment.flagged())
        .map(|r| FlaggedAlignment {
            core_id: r.core_id.clone(),
            comparison: r.comparison.clone(),
            ecc: r.alignment.ecc,
        })
        .collect();
    let mut excluded = upstream_exclusions(ctx)?;
    excluded.extend(statuses.iter().filter(|s| !s.succeeded()).map(|s| ExcludedCore {
        core_id: s.core_id.clone(),
        stage: "evaluate".into(),
        reason: s.reason.clone().unwrap_or_default(),
    }));

    let summary = RunSummary {
        comparisons: comparisons.clone(),
        cores: ids.clone(),
        excluded_cores: excluded,
        skipped_pairs: skipped,
        flagged_alignments: flagged,
        role_intensities: summaries,
    };
    let aggregate = AggregateReport {
        metadata: metadata(ctx),
        metrics: metric_rows,
        intensity: intensity_rows,
        empty_comparisons: empty,
    };
    let stats = statistics(comparisons, &records, &rows, ctx.config.alpha);
    let shift = domain_shift(ctx, &summary.role_intensities)?;

    let files: [(&str, Vec<u8>); 6] = [
        ("metrics.csv", metrics_csv(&records).into_bytes()),
        ("intensity.csv", intensity_csv(&rows).into_bytes()),
        ("aggregate.json", to_json(&aggregate)?),
        ("stats.json", to_json(&stats)?),
        ("domain_shift.json", to_json(&shift)?),
        ("summary.json", to_json(&summary)?),
    ];
    for (name, bytes) in files {
        key.write(&ctx.layout.evaluation(name), &bytes)?;
    }
    Ok(StageStatus {
        stage: "evaluate".into(),
        cores: statuses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainloop_core::evaluation::AlignmentSummary;

    fn rec(core: &str, cmp: &str, v: f64) -> MetricRecord {
        MetricRecord {
            core_id: core.into(),
            comparison: cmp.into(),
            pcc: v,
            ssim: v,
            psnr: if v == 1.0 { f64::INFINITY } else { 20.0 + v },
            mse: 1.0 - v,
            alignment: AlignmentSummary {
                attempted: true,
                converged: true,
                theta_deg: 0.5,
                tx: -1.25,
                ty: 0.0,
                ecc: 0.9,
            },
        }
    }

    #[test]
    fn csv_layout() {
        let csv = metrics_csv(&[rec("c1", "X", 1.0), rec("c2", "X", 0.5)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "c1,X,1,1,inf,0,0.5,-1.25,0,0.9,true");
        assert_eq!(lines[2].split(',').count(), 11);

        let mut r = rec("c3", "X", 0.5);
        r.alignment.attempted = false;
        r.alignment.converged = false;
        let csv = metrics_csv(&[r]);
        assert_eq!(csv.lines().nth(1).unwrap(), "c3,X,0.5,0.5,20.5,0.5,,,,0.9,");
    }

    #[test]
    fn stats_skip_small_groups_and_drop_infinite_psnr() {
        let cmps = vec![
            Comparison { id: "A".into(), first: Role::Ghe, second: Role::Vds, metrics: true },
            Comparison { id: "B".into(), first: Role::Ghe, second: Role::Vher, metrics: true },
        ];
        let records = vec![rec("1", "A", 0.2), rec("2", "A", 0.3), rec("1", "B", 0.8), rec("2", "B", 1.0)];
        let s = statistics(&cmps, &records, &[], 0.05);
        let psnr = s.metric_tests.iter().find(|t| t.quantity == "psnr").unwrap();
        assert_eq!(psnr.groups[1].n, 1);
        assert!(psnr.result.is_none() && psnr.skipped.is_some());
        let pcc = s.metric_tests.iter().find(|t| t.quantity == "pcc").unwrap();
        assert_eq!(pcc.result.as_ref().unwrap().pairwise.len(), 1);
        assert!(s.intensity_tests.iter().all(|t| t.skipped.is_some()));
    }
}
