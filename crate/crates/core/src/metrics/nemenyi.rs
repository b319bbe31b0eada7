//! Nemenyi post-hoc critical difference for comparing k methods over n
//! datasets by average rank.

use crate::error::{Error, Result};

/// Studentized range statistic divided by √2, indexed by k - 2. Entries for
/// k ≤ 10 are the widely reproduced three-decimal table; larger k were
/// computed from the studentized range distribution with infinite degrees
/// of freedom and rounded the same way.
const Q_05: [f64; 19] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354,
    3.391, 3.426, 3.458, 3.489, 3.517, 3.544,
];
const Q_10: [f64; 19] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978, 3.030, 3.077, 3.120,
    3.159, 3.196, 3.230, 3.261, 3.291, 3.319,
];

pub const MAX_METHODS: usize = 20;

pub fn q_alpha(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=MAX_METHODS).contains(&k) {
        return Err(Error::invalid(format!(
            "k = {k} outside the q table (2..={MAX_METHODS})"
        )));
    }
    let table = if alpha == 0.05 {
        &Q_05
    } else if alpha == 0.10 {
        &Q_10
    } else {
        return Err(Error::invalid(format!(
            "no q table for alpha = {alpha}; use 0.05 or 0.10"
        )));
    };
    Ok(table[k - 2])
}

/// CD = q_α(k) · √(k(k+1) / (6n)).
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("need at least one dataset"));
    }
    Ok(q_alpha(k, alpha)? * ((k * (k + 1)) as f64 / (6 * n) as f64).sqrt())
}

/// Average rank of each method across datasets. `scores[dataset][method]`;
/// higher scores are better and receive lower ranks. Ties share the mean of
/// the ranks they span.
pub fn average_ranks(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = scores
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no datasets"))?;
    if k == 0 {
        return Err(Error::invalid("no methods"));
    }
    let mut totals = vec![0.0; k];
    for (d, row) in scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::invalid(format!(
                "dataset {d} has {} scores, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score for dataset {d}")));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && row[order[j + 1]] == row[order[i]] {
                j += 1;
            }
            // Positions i..=j (0-based) hold ranks i+1..=j+1.
            let shared = (i + j) as f64 / 2.0 + 1.0;
            for &m in &order[i..=j] {
                totals[m] += shared;
            }
            i = j + 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|t| t / scores.len() as f64)
        .collect())
}

pub fn significantly_different(rank_a: f64, rank_b: f64, cd: f64) -> bool {
    (rank_a - rank_b).abs() >= cd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_methods_one_dataset() {
        assert_eq!(nemenyi_cd(2, 1, 0.05).unwrap(), 1.960);
    }

    #[test]
    fn quadrupling_datasets_halves_cd() {
        for k in 2..=MAX_METHODS {
            let a = nemenyi_cd(k, 3, 0.05).unwrap();
            let b = nemenyi_cd(k, 12, 0.05).unwrap();
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn table_increases_with_k() {
        for t in [&Q_05, &Q_10] {
            assert!(t.windows(2).all(|w| w[1] > w[0]));
        }
        assert!(Q_10.iter().zip(&Q_05).all(|(a, b)| a < b));
    }

    #[test]
    fn out_of_table_is_an_error() {
        assert!(nemenyi_cd(1, 5, 0.05).is_err());
        assert!(nemenyi_cd(21, 5, 0.05).is_err());
        assert!(nemenyi_cd(3, 5, 0.01).is_err());
        assert!(nemenyi_cd(3, 0, 0.05).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        let ranks = average_ranks(&[vec![0.9, 0.5, 0.5, 0.1], vec![0.2, 0.8, 0.4, 0.4]]).unwrap();
        // Dataset 1: 1, 2.5, 2.5, 4. Dataset 2: 4, 1, 2.5, 2.5.
        assert_eq!(ranks, vec![2.5, 1.75, 2.5, 3.25]);
        assert_eq!(ranks.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn decision_rule() {
        let cd = nemenyi_cd(4, 10, 0.05).unwrap();
        assert!(!significantly_different(2.0, 2.0 + cd * 0.99, cd));
        assert!(significantly_different(1.0, 1.0 + cd * 1.01, cd));
    }
}
