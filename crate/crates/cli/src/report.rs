//! Markdown summary of an evaluated run directory.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use stainloop_core::evaluation::{AggregateRow, StatTestResult};

use crate::error::{CliError, CliResult};
use crate::evaluate::{AggregateReport, DomainShiftReport, RunSummary, StatEntry, StatsReport};
use crate::layout::{RunLayout, EVALUATION_FILES};
use crate::provenance::WorkKey;

pub struct RunArtifacts {
    pub aggregate: AggregateReport,
    pub stats: StatsReport,
    pub summary: RunSummary,
    pub shift: DomainShiftReport,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load the evaluation outputs, naming every absent file.
pub fn load_artifacts(layout: &RunLayout) -> CliResult<RunArtifacts> {
    let missing: Vec<String> = EVALUATION_FILES
        .iter()
        .map(|f| layout.evaluation(f))
        .filter(|p| !p.is_file())
        .map(|p| layout.rel(&p))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts {
            dir: layout.root.clone(),
            missing,
        });
    }
    Ok(RunArtifacts {
        aggregate: read_json(&layout.evaluation("aggregate.json"))?,
        stats: read_json(&layout.evaluation("stats.json"))?,
        summary: read_json(&layout.evaluation("summary.json"))?,
        shift: read_json(&layout.evaluation("domain_shift.json"))?,
    })
}

fn ms(row: &AggregateRow, key: &str, prec: usize) -> String {
    match row.stats.get(key) {
        Some(m) => format!("{:.prec$} ± {:.prec$}", m.mean, m.sd),
        None => "n/a".into(),
    }
}

fn p_fmt(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn stat_block(s: &mut String, entry: &StatEntry) {
    let groups: Vec<String> = entry.groups.iter().map(|g| format!("{} (n={})", g.name, g.n)).collect();
    let _ = writeln!(s, "### {}\n\nGroups: {}\n", entry.quantity, groups.join(", "));
    match (&entry.result, &entry.skipped) {
        (Some(r), _) => stat_result(s, r),
        (None, Some(why)) => {
            let _ = writeln!(s, "Not computed: {why}\n");
        }
        (None, None) => {}
    }
}

fn stat_result(s: &mut String, r: &StatTestResult) {
    let _ = writeln!(
        s,
        "ANOVA: F({}, {}) = {:.4}, p = {}\n",
        r.df_between,
        r.df_within,
        r.f_stat,
        p_fmt(r.p_value)
    );
    let _ = writeln!(s, "| A | B | mean diff | LSD threshold | p | significant |\n|---|---|---|---|---|---|");
    for p in &r.pairwise {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} | {} | {} |",
            p.group_a,
            p.group_b,
            p.mean_diff,
            p.lsd_threshold,
            p_fmt(p.p_value),
            if p.significant { "yes" } else { "no" }
        );
    }
    s.push('\n');
}

pub fn render(a: &RunArtifacts) -> String {
    let mut s = String::new();
    let sum = &a.summary;
    let _ = writeln!(s, "# Evaluation report\n");
    let _ = writeln!(
        s,
        "{} core(s) in the manifest, {} excluded at some stage. {} comparison(s) configured.\n",
        sum.cores.len(),
        {
            let mut ids: Vec<&str> = sum.excluded_cores.iter().map(|e| e.core_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        },
        sum.comparisons.len()
    );

    let _ = writeln!(s, "## Pixel metrics (mean ± SD)\n");
    let _ = writeln!(s, "| Comparison | n | PCC | SSIM | PSNR (dB) | MSE | infinite PSNR |\n|---|---|---|---|---|---|---|");
    for c in sum.comparisons.iter().filter(|c| c.metrics) {
        match a.aggregate.metrics.iter().find(|r| r.comparison == c.id) {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    c.id,
                    r.n,
                    ms(r, "pcc", 4),
                    ms(r, "ssim", 4),
                    ms(r, "psnr", 2),
                    ms(r, "mse", 5),
                    r.infinite_psnr
                );
            }
            None => {
                let _ = writeln!(s, "| {} | 0 | n/a | n/a | n/a | n/a | 0 |", c.id);
            }
        }
    }

    let _ = writeln!(s, "\n## Masked intensity differences, first minus second (mean ± SD, 8-bit units)\n");
    let _ = writeln!(s, "| Comparison | n | Overall | R | G | B |\n|---|---|---|---|---|---|");
    for c in &sum.comparisons {
        match a.aggregate.intensity.iter().find(|r| r.comparison == c.id) {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "| {} vs {} | {} | {} | {} | {} | {} |",
                    c.first,
                    c.second,
                    r.n,
                    ms(r, "overall", 2),
                    ms(r, "r", 2),
                    ms(r, "g", 2),
                    ms(r, "b", 2)
                );
            }
            None => {
                let _ = writeln!(s, "| {} vs {} | 0 | n/a | n/a | n/a | n/a |", c.first, c.second);
            }
        }
    }

    let _ = writeln!(s, "\n## Statistics (one-way ANOVA, Fisher LSD at alpha = {})\n", a.stats.alpha);
    for e in a.stats.metric_tests.iter().chain(&a.stats.intensity_tests) {
        stat_block(&mut s, e);
    }

    let _ = writeln!(s, "## Domain shift\n");
    if a.shift.configured {
        let _ = writeln!(
            s,
            "Overall intensity minus the training set ({} H&E, {} unstained image(s)).\n",
            a.shift.n_training_he, a.shift.n_training_unstained
        );
        let _ = writeln!(s, "| Role | n | mean diff | median diff |\n|---|---|---|---|");
        for r in &a.shift.summary {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} ± {:.2} | {:.2} ± {:.2} |",
                r.role, r.n, r.mean_diff.mean, r.mean_diff.sd, r.median_diff.mean, r.median_diff.sd
            );
        }
        s.push('\n');
    } else {
        let _ = writeln!(s, "No training reference set configured.\n");
    }

    let _ = writeln!(s, "## Non-converged alignments\n");
    if sum.flagged_alignments.is_empty() {
        let _ = writeln!(s, "None.\n");
    } else {
        for f in &sum.flagged_alignments {
            let _ = writeln!(
                s,
                "- {} / {}: no convergence, metrics computed unaligned (frame correlation {:.4})",
                f.core_id, f.comparison, f.ecc
            );
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Skipped cores\n");
    if sum.excluded_cores.is_empty() {
        let _ = writeln!(s, "None.\n");
    } else {
        for e in &sum.excluded_cores {
            let _ = writeln!(s, "- {} ({}): {}", e.core_id, e.stage, e.reason);
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Skipped pairs\n");
    if sum.skipped_pairs.is_empty() {
        let _ = writeln!(s, "None.\n");
    } else {
        for p in &sum.skipped_pairs {
            let _ = writeln!(s, "- {} / {}: {}", p.core_id, p.comparison, p.reason);
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Method\n");
    if let Some(obj) = a.aggregate.metadata.as_object() {
        for (k, v) in obj {
            let v = v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string());
            let _ = writeln!(s, "- {k}: {v}");
        }
    }
    s
}

/// Render `report.md` into the run directory and return its text.
pub fn report(layout: &RunLayout) -> CliResult<String> {
    let artifacts = load_artifacts(layout)?;
    let text = render(&artifacts);
    let mut key = WorkKey::new("report", None, serde_json::Value::Null);
    for f in EVALUATION_FILES {
        let p = layout.evaluation(f);
        key.input("evaluation", layout.rel(&p), &p)?;
    }
    key.write(&layout.report_path(), text.as_bytes())?;
    Ok(text)
}
