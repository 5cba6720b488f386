use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Standardized rank sum of `x` (normal approximation, no tie correction).
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Wilcoxon rank-sum test of `x` against `y`.
pub fn rank_sum(x: &[f64], y: &[f64]) -> Result<RankSum> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("rank-sum test needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "rank-sum samples".into(),
        });
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let s: f64 = average_ranks(&all)[..x.len()].iter().sum();
    let expected = n1 * (n1 + n2 + 1.0) / 2.0;
    let z = (s - expected) / (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    Ok(RankSum {
        statistic: z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Rank of each x by pairwise counting over the pooled sample.
    fn brute_rank_sum(x: &[f64], y: &[f64]) -> f64 {
        let all: Vec<f64> = x.iter().chain(y).copied().collect();
        x.iter()
            .map(|v| {
                let less = all.iter().filter(|w| *w < v).count() as f64;
                let equal = all.iter().filter(|w| *w == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .sum()
    }

    #[test]
    fn separated_samples() {
        let r = rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((r.statistic + 1.963_961_012_123_931).abs() < 1e-12);
        assert!((r.p_value - 0.049_534_613_435_626_49).abs() < 1e-9);
        let same = rank_sum(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        assert!(rank_sum(&[], &[1.0]).is_err());
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            x in proptest::collection::vec(0i32..8, 1..15),
            y in proptest::collection::vec(0i32..8, 1..15),
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let r = rank_sum(&x, &y).unwrap();
            let (n1, n2) = (x.len() as f64, y.len() as f64);
            let z = (brute_rank_sum(&x, &y) - n1 * (n1 + n2 + 1.0) / 2.0) / (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
            prop_assert!((r.statistic - z).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
