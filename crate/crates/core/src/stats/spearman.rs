use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::special::student_t_sf;
use super::StatsError;

/// Largest sample size for which p-values come from exact enumeration.
pub const EXACT_MAX_N: usize = 9;

/// Which tail(s) the Spearman p-value covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// P(rho >= observed).
    Greater,
    /// P(rho <= observed).
    Less,
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DegenerateInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(StatsError::DegenerateInput(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::DegenerateInput("non-finite value".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::DegenerateInput("constant input vector".into()));
    }
    Ok(pearson(&ranks(x), &ranks(y)))
}

/// Null distribution of D = sum of squared rank differences over all n!
/// permutations: `counts[d]` permutations have D = d.
fn exact_distribution(n: usize) -> &'static [u64] {
    static TABLES: [OnceLock<Vec<u64>>; EXACT_MAX_N + 1] = [const { OnceLock::new() }; EXACT_MAX_N + 1];
    TABLES[n].get_or_init(|| {
        let max_d = n * (n * n - 1) / 3;
        let mut counts = vec![0u64; max_d + 1];
        // Heap's algorithm over the permutation of 0..n
        let mut perm: Vec<usize> = (0..n).collect();
        let d_of = |p: &[usize]| -> usize { p.iter().enumerate().map(|(i, &v)| i.abs_diff(v).pow(2)).sum() };
        counts[d_of(&perm)] += 1;
        let mut c = vec![0usize; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                counts[d_of(&perm)] += 1;
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        counts
    })
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Exact tail count: number of the n! permutations whose rho lies at least
/// as far out as `rho` in the requested tail(s). Returned with n!.
pub fn spearman_exact_count(rho: f64, n: usize, alternative: Alternative) -> Result<(u64, u64), StatsError> {
    if !(3..=EXACT_MAX_N).contains(&n) {
        return Err(StatsError::DegenerateInput(format!(
            "exact distribution available for 3 <= n <= {EXACT_MAX_N}, got {n}"
        )));
    }
    let denom = (n * (n * n - 1)) as f64;
    let tol = 1e-9;
    let count = exact_distribution(n)
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .filter(|&(d, _)| {
            let r = 1.0 - 6.0 * d as f64 / denom;
            match alternative {
                Alternative::TwoSided => r.abs() >= rho.abs() - tol,
                Alternative::Greater => r >= rho - tol,
                Alternative::Less => r <= rho + tol,
            }
        })
        .map(|(_, &c)| c)
        .sum();
    Ok((count, factorial(n)))
}

/// Two-sided p-value for Spearman's rho.
pub fn spearman_p(rho: f64, n: usize) -> Result<f64, StatsError> {
    spearman_p_with(rho, n, Alternative::TwoSided)
}

/// Exact permutation p for n <= 9; t-approximation with n - 2 degrees of
/// freedom above that.
pub fn spearman_p_with(rho: f64, n: usize, alternative: Alternative) -> Result<f64, StatsError> {
    if n < 3 {
        return Err(StatsError::DegenerateInput(format!("need n >= 3, got {n}")));
    }
    if !(-1.0..=1.0).contains(&rho) || rho.is_nan() {
        return Err(StatsError::DegenerateInput(format!("rho {rho} outside [-1, 1]")));
    }
    if n <= EXACT_MAX_N {
        let (count, total) = spearman_exact_count(rho, n, alternative)?;
        return Ok(count as f64 / total as f64);
    }
    let df = (n - 2) as u32;
    let p = if rho.abs() >= 1.0 {
        match alternative {
            Alternative::TwoSided => 0.0,
            Alternative::Greater => {
                if rho > 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            Alternative::Less => {
                if rho < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    } else {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho)).sqrt();
        match alternative {
            Alternative::TwoSided => 2.0 * student_t_sf(t.abs(), df),
            Alternative::Greater => student_t_sf(t, df),
            Alternative::Less => student_t_sf(-t, df),
        }
    };
    Ok(p.clamp(0.0, 1.0))
}
