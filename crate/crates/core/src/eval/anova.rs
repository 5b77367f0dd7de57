//! One-way analysis of variance with an F-distribution tail computed by
//! numerical integration of the incomplete beta function.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// Mean of the level-1 group minus mean of the level-0 group.
    pub coefficient: f64,
    pub f: f64,
    /// `None` when the within-group variance is zero.
    pub p_value: Option<f64>,
    pub group_means: [f64; 2],
    pub group_sizes: [usize; 2],
    pub df_between: f64,
    pub df_within: f64,
}

impl AnovaResult {
    pub fn is_degenerate(&self) -> bool {
        self.p_value.is_none()
    }
}

/// Between- and within-group mean squares of a one-way ANOVA over `groups`,
/// with their degrees of freedom.
pub fn f_statistic(groups: &[&[f64]]) -> Result<(f64, f64, f64, f64)> {
    if groups.len() < 2 {
        return Err(Error::DegreesOfFreedom("need at least two groups".into()));
    }
    if let Some(g) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::DegreesOfFreedom(format!(
            "group {g} has {} sample(s), need at least 2",
            groups[g].len()
        )));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let df_b = (groups.len() - 1) as f64;
    let df_w = (n - groups.len()) as f64;
    Ok((ss_between / df_b, ss_within / df_w, df_b, df_w))
}

/// Two-level one-way ANOVA: `factor[i]` is 0 or 1, `values[i]` the response.
pub fn one_way_anova(factor: &[u8], values: &[f64]) -> Result<AnovaResult> {
    if factor.len() != values.len() {
        return Err(Error::dims(factor.len(), values.len()));
    }
    if let Some(bad) = factor.iter().find(|&&f| f > 1) {
        return Err(Error::InvalidArgument(format!("factor levels must be 0 or 1, got {bad}")));
    }
    let level = |l: u8| -> Vec<f64> { factor.iter().zip(values).filter(|(&f, _)| f == l).map(|(_, &v)| v).collect() };
    let (g0, g1) = (level(0), level(1));
    let (ms_b, ms_w, df_b, df_w) = f_statistic(&[&g0, &g1])?;
    let mean = |g: &[f64]| g.iter().sum::<f64>() / g.len() as f64;
    let (m0, m1) = (mean(&g0), mean(&g1));
    let (f, p) = if ms_w > 0.0 {
        let f = ms_b / ms_w;
        (f, Some(f_survival(f, df_b, df_w)))
    } else if ms_b > 0.0 {
        (f64::INFINITY, None)
    } else {
        (0.0, None)
    };
    Ok(AnovaResult {
        coefficient: m1 - m0,
        f,
        p_value: p,
        group_means: [m0, m1],
        group_sizes: [g0.len(), g1.len()],
        df_between: df_b,
        df_within: df_w,
    })
}

/// `P(F > f)` for an F distribution with `d1`, `d2` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if !(f > 0.0) {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    regularized_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

/// Regularized incomplete beta `I_x(a, b)` by adaptive Simpson quadrature.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // integrate on the side away from the mode, where the integrand is smooth
    if x > a / (a + b) {
        return 1.0 - regularized_beta(1.0 - x, b, a);
    }
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    // substituting t = x v^(1/a) removes the t^(a-1) singularity:
    // integral_0^x t^(a-1) (1-t)^(b-1) dt = x^a / a * integral_0^1 (1 - x v^(1/a))^(b-1) dv
    let g = |v: f64| (1.0 - x * v.powf(1.0 / a)).powf(b - 1.0);
    let integral = adaptive_simpson(&g, 0.0, 1.0, 1e-13, 60);
    (a * x.ln() - a.ln() - ln_beta).exp() * integral
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Pooled two-sample t statistic (level 1 minus level 0).
pub fn pooled_t(g0: &[f64], g1: &[f64]) -> f64 {
    let mean = |g: &[f64]| g.iter().sum::<f64>() / g.len() as f64;
    let (m0, m1) = (mean(g0), mean(g1));
    let ss = |g: &[f64], m: f64| g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let (n0, n1) = (g0.len() as f64, g1.len() as f64);
    let sp2 = (ss(g0, m0) + ss(g1, m1)) / (n0 + n1 - 2.0);
    (m1 - m0) / (sp2 * (1.0 / n0 + 1.0 / n1)).sqrt()
}
