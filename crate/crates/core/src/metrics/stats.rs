//! Mann-Whitney U and Friedman tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::MetricsError;

/// Midranks (1-based) of `values`; tied values share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 averaged.
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of each tie group.
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        sizes.push(j);
        i += j;
    }
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// The first group is shifted to the left of the second.
    Less,
    /// The first group is shifted to the right of the second.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first group: pairs with `a > b` plus half the ties.
    pub u: f64,
    pub z: f64,
    pub p: f64,
}

/// Rank-sum test with midrank ties, tie-corrected normal approximation and
/// continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<MannWhitney, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::InvalidInput("both groups must be non-empty".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidInput("values must be finite".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;

    let n = n1 + n2;
    let tie_term: f64 = tie_sizes(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mean = n1 * n2 / 2.0;

    if variance <= 0.0 {
        return Ok(MannWhitney { u, z: 0.0, p: 1.0 });
    }
    let sd = variance.sqrt();
    let normal = Normal::standard();
    let (z, p) = match alternative {
        Alternative::Less => {
            let z = (u - mean + 0.5) / sd;
            (z, normal.cdf(z))
        }
        Alternative::Greater => {
            let z = (u - mean - 0.5) / sd;
            (z, normal.sf(z))
        }
        Alternative::TwoSided => {
            let dev = u - mean;
            let corrected = (dev.abs() - 0.5).max(0.0) * dev.signum();
            let z = corrected / sd;
            (z, (2.0 * normal.sf(z.abs())).min(1.0))
        }
    };
    Ok(MannWhitney { u, z, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub p: f64,
    pub dof: usize,
    pub rank_sums: Vec<f64>,
}

/// Friedman test over `blocks` (rows: subjects, columns: treatments).
pub fn friedman_test(blocks: &[Vec<f64>]) -> Result<FriedmanResult, MetricsError> {
    let n = blocks.len();
    if n < 2 {
        return Err(MetricsError::InvalidInput("need at least two blocks".into()));
    }
    let k = blocks[0].len();
    if k < 2 {
        return Err(MetricsError::InvalidInput("need at least two treatments".into()));
    }
    if blocks.iter().any(|b| b.len() != k) {
        return Err(MetricsError::InvalidInput("blocks must all have the same number of treatments".into()));
    }
    if blocks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidInput("values must be finite".into()));
    }
    let mut rank_sums = vec![0.0; k];
    for block in blocks {
        for (sum, r) in rank_sums.iter_mut().zip(midranks(block)) {
            *sum += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let chi2 = (12.0 * sum_sq / (nf * kf * (kf + 1.0)) - 3.0 * nf * (kf + 1.0)).max(0.0);
    let dist = ChiSquared::new((k - 1) as f64).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
    Ok(FriedmanResult { chi2, p: dist.sf(chi2), dof: k - 1, rank_sums })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn u_examples() {
        assert_eq!(mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::Less).unwrap().u, 0.0);
        assert_eq!(mann_whitney_u(&[1.0, 3.0], &[2.0, 4.0], Alternative::TwoSided).unwrap().u, 1.0);
        let same = [1.0, 2.0, 2.0, 5.0];
        assert_eq!(mann_whitney_u(&same, &same, Alternative::TwoSided).unwrap().u, 8.0);
        assert!(mann_whitney_u(&[], &[1.0], Alternative::Less).is_err());
    }

    #[test]
    fn p_value_directions() {
        let low = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let high = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let less = mann_whitney_u(&low, &high, Alternative::Less).unwrap();
        let greater = mann_whitney_u(&low, &high, Alternative::Greater).unwrap();
        let two = mann_whitney_u(&low, &high, Alternative::TwoSided).unwrap();
        assert!(less.p < 0.01);
        assert!(greater.p > 0.99);
        assert!((two.p - 2.0 * less.p).abs() < 1e-12);
        assert!(less.z < 0.0);
    }

    #[test]
    fn normal_approximation_reference_value() {
        // Six pairs with a > b, no ties: mean 12.5, variance 25 * 11 / 12.
        let mw = mann_whitney_u(&[1.0, 2.0, 3.0, 7.0, 8.0], &[4.0, 5.0, 6.0, 9.0, 10.0], Alternative::Less).unwrap();
        assert_eq!(mw.u, 6.0);
        let z = (6.0 - 12.5 + 0.5) / (275.0f64 / 12.0).sqrt();
        assert!((mw.z - z).abs() < 1e-12);
        assert!((mw.p - Normal::standard().cdf(z)).abs() < 1e-12);
    }

    #[test]
    fn friedman_examples() {
        let r = friedman_test(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(r.chi2, 4.0);
        assert_eq!(r.dof, 2);
        assert!((r.p - (-2.0f64).exp()).abs() < 1e-12);
        let tied = friedman_test(&[vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]]).unwrap();
        assert_eq!(tied.chi2, 0.0);
        assert!(friedman_test(&[vec![1.0, 2.0]]).is_err());
        assert!(friedman_test(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
