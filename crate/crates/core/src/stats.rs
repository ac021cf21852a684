//! Friedman rank-sum test with Hochberg's step-up post-hoc procedure against
//! the best-ranked (control) method.
//!
//! Post-hoc comparisons use the mean-rank statistic
//! `z = (R̄_j - R̄_control) / sqrt(k(k+1) / (6N))` with a two-sided normal
//! tail. All tail probabilities come from the regularized incomplete gamma
//! function: `χ²_df` upper tail is `Q(df/2, x/2)` and the two-sided normal
//! tail is `Q(1/2, z²/2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest p-value rendered numerically; anything below prints as `< 1e-30`.
pub const P_FLOOR: f64 = 1e-30;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

/// Upper tail `P(X > x)` of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    regularized_gamma_q(0.5 * df, 0.5 * x)
}

/// Two-sided standard normal tail `P(|Z| > |z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    regularized_gamma_q(0.5, 0.5 * z * z)
}

/// Renders a p-value with the `< 1e-30` floor.
pub fn format_p(p: f64) -> String {
    if p < P_FLOOR {
        "< 1e-30".to_owned()
    } else {
        format!("{p:.3e}")
    }
}

/// Per-row ranks (rank 1 = smallest error, ties averaged), `N` rows × `k` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    rows: Vec<Vec<f64>>,
    k: usize,
}

impl RankMatrix {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_methods(&self) -> usize {
        self.k
    }

    pub fn mean_ranks(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.k).map(|j| self.rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
    }
}

fn rank_row(row: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && row[idx[j]] == row[idx[i]] {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Ranks each row of an `N×k` error matrix.
pub fn rank_rows(errors: &[Vec<f64>]) -> Result<RankMatrix> {
    let n = errors.len();
    let k = errors.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::InvalidInput(format!("rank matrix needs N >= 2 and k >= 2, got {n}x{k}")));
    }
    for (i, row) in errors.iter().enumerate() {
        if row.len() != k {
            return Err(Error::LengthMismatch { left: row.len(), right: k });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite error at row {i}, column {j}")));
        }
    }
    Ok(RankMatrix { rows: errors.iter().map(|r| rank_row(r)).collect(), k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Classic Friedman chi-square statistic and its `χ²_{k-1}` upper tail.
pub fn friedman_test(ranks: &RankMatrix) -> FriedmanResult {
    let n = ranks.n_rows() as f64;
    let k = ranks.n_methods() as f64;
    let centre = (k + 1.0) / 2.0;
    let spread: f64 = ranks.mean_ranks().iter().map(|r| (r - centre) * (r - centre)).sum();
    let statistic = 12.0 * n / (k * (k + 1.0)) * spread;
    FriedmanResult { statistic, p_value: chi_square_sf(statistic, k - 1.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HochbergRow {
    pub method: String,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub rejected: bool,
}

/// Hochberg step-up adjustment. With the raw p-values sorted ascending
/// `p_(1) <= ... <= p_(m)`, `adj_(i) = min_{j >= i} (m - j + 1) p_(j)`, capped
/// at 1. Rows come back in input order.
pub fn hochberg(raw: &[(String, f64)], alpha: f64) -> Result<Vec<HochbergRow>> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("hochberg needs at least one p-value".into()));
    }
    if let Some((m, p)) = raw.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput(format!("p-value {p} of `{m}` outside [0, 1]")));
    }
    let m = raw.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| raw[a].1.total_cmp(&raw[b].1));
    let mut adjusted = vec![0.0; m];
    let mut running = f64::INFINITY;
    for pos in (0..m).rev() {
        let i = order[pos];
        let multiplier = (m - pos) as f64;
        running = running.min(multiplier * raw[i].1);
        adjusted[i] = running.min(1.0);
    }
    Ok(raw
        .iter()
        .zip(adjusted)
        .map(|((method, p), adj)| HochbergRow {
            method: method.clone(),
            raw_p: *p,
            adjusted_p: adj,
            rejected: adj <= alpha,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub mean_rank: f64,
    pub z: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
    /// Significantly worse than the control at `alpha`.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub n_series: usize,
    pub friedman_statistic: f64,
    pub friedman_p: f64,
    pub alpha: f64,
    pub control: String,
    pub control_mean_rank: f64,
    /// Non-control methods ordered by mean rank, best first.
    pub comparisons: Vec<Comparison>,
}

impl TestResult {
    pub fn rejected(&self) -> impl Iterator<Item = &str> {
        self.comparisons.iter().filter(|c| c.rejected).map(|c| c.method.as_str())
    }
}

/// Friedman test over `errors` (`N` series × `methods.len()` columns) followed
/// by Hochberg-adjusted comparisons of every method against the control.
pub fn compare_methods(errors: &[Vec<f64>], methods: &[String], alpha: f64) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let ranks = rank_rows(errors)?;
    if methods.len() != ranks.n_methods() {
        return Err(Error::LengthMismatch { left: methods.len(), right: ranks.n_methods() });
    }
    let friedman = friedman_test(&ranks);
    let mean_ranks = ranks.mean_ranks();
    let control = (0..mean_ranks.len()).min_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b])).expect("k >= 2");
    let n = ranks.n_rows() as f64;
    let k = ranks.n_methods() as f64;
    let se = (k * (k + 1.0) / (6.0 * n)).sqrt();

    let mut others: Vec<usize> = (0..methods.len()).filter(|&j| j != control).collect();
    others.sort_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]));
    let zs: Vec<f64> = others.iter().map(|&j| (mean_ranks[j] - mean_ranks[control]) / se).collect();
    let raw: Vec<(String, f64)> =
        others.iter().zip(&zs).map(|(&j, z)| (methods[j].clone(), normal_two_sided_p(*z))).collect();
    let adjusted = hochberg(&raw, alpha)?;
    let comparisons = others
        .iter()
        .zip(zs)
        .zip(adjusted)
        .map(|((&j, z), h)| Comparison {
            method: h.method,
            mean_rank: mean_ranks[j],
            z,
            raw_p: h.raw_p,
            adjusted_p: h.adjusted_p,
            rejected: h.rejected,
        })
        .collect();
    Ok(TestResult {
        n_series: ranks.n_rows(),
        friedman_statistic: friedman.statistic,
        friedman_p: friedman.p_value,
        alpha,
        control: methods[control].clone(),
        control_mean_rank: mean_ranks[control],
        comparisons,
    })
}
