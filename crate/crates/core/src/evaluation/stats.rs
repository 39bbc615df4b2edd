//! One-way ANOVA with Fisher's LSD post hoc comparisons.

use serde::{Deserialize, Serialize};

use super::special::{f_sf, t_quantile_two_sided, t_sf_two_sided};
use crate::error::{Error, Result};
use crate::util::float_or_inf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub name: String,
    pub values: Vec<f64>,
}

impl SampleGroup {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsdPair {
    pub group_a: String,
    pub group_b: String,
    /// mean(a) - mean(b)
    pub mean_diff: f64,
    pub lsd_threshold: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    #[serde(with = "float_or_inf")]
    pub f_stat: f64,
    pub p_value: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ms_within: f64,
    pub alpha: f64,
    /// Empty unless produced by `fisher_lsd`.
    pub pairwise: Vec<LsdPair>,
}

fn check(groups: &[SampleGroup]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::InvalidParameter(format!("ANOVA needs at least 2 groups, got {}", groups.len())));
    }
    for g in groups {
        if g.values.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "group `{}` has {} sample(s); at least 2 required",
                g.name,
                g.values.len()
            )));
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("group `{}` contains non-finite values", g.name)));
        }
    }
    Ok(())
}

pub fn anova_oneway(groups: &[SampleGroup]) -> Result<StatTestResult> {
    check(groups)?;
    let n_total: usize = groups.iter().map(|g| g.values.len()).sum();
    let grand = groups.iter().flat_map(|g| &g.values).sum::<f64>() / n_total as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.mean();
        ssb += g.values.len() as f64 * (m - grand).powi(2);
        ssw += g.values.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let df_b = groups.len() - 1;
    let df_w = n_total - groups.len();
    let ms_b = ssb / df_b as f64;
    let ms_w = ssw / df_w as f64;
    let (f_stat, p_value) = if ssw == 0.0 {
        if ssb == 0.0 {
            return Err(Error::UndefinedF);
        }
        (f64::INFINITY, 0.0)
    } else {
        let f = ms_b / ms_w;
        (f, f_sf(f, df_b as f64, df_w as f64).clamp(0.0, 1.0))
    };
    Ok(StatTestResult {
        f_stat,
        p_value,
        df_between: df_b,
        df_within: df_w,
        ss_between: ssb,
        ss_within: ssw,
        ms_within: ms_w,
        alpha: 0.05,
        pairwise: Vec::new(),
    })
}

/// ANOVA plus every pairwise LSD comparison, in input order (i < j).
pub fn fisher_lsd(groups: &[SampleGroup], alpha: f64) -> Result<StatTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut res = anova_oneway(groups)?;
    res.alpha = alpha;
    let df = res.df_within as f64;
    let t_crit = t_quantile_two_sided(alpha, df);
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            let diff = a.mean() - b.mean();
            let se = (res.ms_within * (1.0 / a.values.len() as f64 + 1.0 / b.values.len() as f64)).sqrt();
            let threshold = t_crit * se;
            let p_value = if se == 0.0 {
                if diff == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                t_sf_two_sided(diff.abs() / se, df).clamp(0.0, 1.0)
            };
            res.pairwise.push(LsdPair {
                group_a: a.name.clone(),
                group_b: b.name.clone(),
                mean_diff: diff,
                lsd_threshold: threshold,
                p_value,
                significant: diff.abs() > threshold,
            });
        }
    }
    Ok(res)
}
