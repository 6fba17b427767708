//! Rank statistics for the listening test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{ListenError, Result};

/// Largest sample size for which the signed-rank null is enumerated.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

/// Upper tail of the chi-squared distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// Average ranks (1-based) and the sizes of every tie group.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share the mean of ranks i+1..=j
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p: f64,
}

/// Kruskal–Wallis H with the tie correction; p from chi-squared with
/// `groups - 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    if groups.len() < 2 {
        return Err(ListenError::Stats(format!("Kruskal–Wallis needs at least 2 groups, got {}", groups.len())));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(ListenError::Stats(format!("group {i} is empty")));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    if all.iter().any(|v| v.is_nan()) {
        return Err(ListenError::Stats("NaN in ratings".into()));
    }
    let n = all.len() as f64;
    let df = groups.len() - 1;
    let (ranks, ties) = average_ranks(&all);
    let correction = 1.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * n * n - n);
    if correction <= 0.0 {
        // every value identical
        return Ok(KruskalWallis { h: 0.0, df, p: 1.0 });
    }
    let mut start = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[start..start + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        start += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    Ok(KruskalWallis { h, df, p: chi2_sf(h, df as f64) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// Differences tend to be positive.
    Greater,
    /// Differences tend to be negative.
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Sum of the ranks of the positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences.
    pub n: usize,
    pub p: f64,
    pub exact: bool,
    pub diagnostic: Option<String>,
}

/// Wilcoxon signed-rank test of the paired differences `x - y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alternative: Alternative) -> Result<Wilcoxon> {
    if x.len() != y.len() {
        return Err(ListenError::Stats(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    signed_rank(&d, alternative)
}

/// Signed-rank test of one sample of differences against zero. Zeros are
/// dropped and tied magnitudes share their average rank.
pub fn signed_rank(d: &[f64], alternative: Alternative) -> Result<Wilcoxon> {
    if d.iter().any(|v| v.is_nan()) {
        return Err(ListenError::Stats("NaN in paired differences".into()));
    }
    let d: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(Wilcoxon { w_plus: 0.0, w_minus: 0.0, n: 0, p: 1.0, exact: true, diagnostic: Some("all differences are zero".into()) });
    }
    let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&mags);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let (p_ge, p_le, exact) = if n <= EXACT_WILCOXON_MAX_N {
        let (ge, le) = exact_tails(&ranks, w_plus);
        (ge, le, true)
    } else {
        let (ge, le) = normal_tails(n, &ties, w_plus);
        (ge, le, false)
    };
    let p = match alternative {
        Alternative::Greater => p_ge,
        Alternative::Less => p_le,
        Alternative::TwoSided => (2.0 * p_ge.min(p_le)).min(1.0),
    };
    Ok(Wilcoxon { w_plus, w_minus, n, p, exact, diagnostic: None })
}

/// `P(W+ >= w)` and `P(W+ <= w)` under random signs, counted exactly.
/// Ranks are whole or half integers, so sums are tracked in half units.
fn exact_tails(ranks: &[f64], w: f64) -> (f64, f64) {
    let units: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = units.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &u in &units {
        for s in (u..=max).rev() {
            counts[s] += counts[s - u];
        }
    }
    let target = (w * 2.0).round() as usize;
    let total = 2f64.powi(ranks.len() as i32);
    let ge: u64 = counts[target..].iter().sum();
    let le: u64 = counts[..=target].iter().sum();
    (ge as f64 / total, le as f64 / total)
}

/// Normal approximation with tie-corrected variance and a continuity
/// correction of one half.
fn normal_tails(n: usize, ties: &[usize], w: f64) -> (f64, f64) {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let sd = var.sqrt();
    let z = Normal::standard();
    let ge = z.sf((w - 0.5 - mean) / sd);
    let le = z.cdf((w + 0.5 - mean) / sd);
    (ge.min(1.0), le.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bonferroni {
    pub p: f64,
    /// `min(1, p · m)`.
    pub adjusted: f64,
    /// `p < alpha / m`.
    pub significant: bool,
}

pub fn bonferroni(p_values: &[f64], alpha: f64, m: usize) -> Vec<Bonferroni> {
    let m = m.max(1) as f64;
    p_values.iter().map(|&p| Bonferroni { p, adjusted: (p * m).min(1.0), significant: p < alpha / m }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        let (r, t) = average_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn three_separated_groups() {
        let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
        assert!((kw.h - 7.2).abs() < 1e-9);
        assert_eq!(kw.df, 2);
        assert!((kw.p - (-3.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn constant_groups_give_zero() {
        let kw = kruskal_wallis(&[vec![2.0, 2.0], vec![2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!((kw.h, kw.p), (0.0, 1.0));
        assert!(kruskal_wallis(&[vec![1.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0], vec![]]).is_err());
    }

    #[test]
    fn six_positive_differences() {
        let w = signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Alternative::Greater).unwrap();
        assert_eq!(w.w_plus, 21.0);
        assert_eq!(w.p, 1.0 / 64.0);
        assert!(w.exact);
        let two = signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Alternative::TwoSided).unwrap();
        assert_eq!(two.p, 2.0 / 64.0);
    }

    #[test]
    fn identical_pairs() {
        let w = wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0], Alternative::TwoSided).unwrap();
        assert_eq!(w.p, 1.0);
        assert!(w.diagnostic.is_some());
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0], Alternative::TwoSided).is_err());
    }

    #[test]
    fn bonferroni_threshold() {
        let b = bonferroni(&[0.0001, 0.0002], 0.001, 6);
        assert!(b[0].significant);
        assert!(!b[1].significant);
        assert!((b[0].adjusted - 0.0006).abs() < 1e-15);
    }
}
