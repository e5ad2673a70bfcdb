//! External clustering metrics.
//!
//! | metric   | definition                                          |
//! |----------|-----------------------------------------------------|
//! | ACC      | best bijective relabeling, via optimal assignment   |
//! | NMI      | I(pred; truth) / sqrt(H(pred) H(truth)), natural log |
//! | purity   | Σ_c max_t \|c ∩ t\| / n                               |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian::max_weight_assignment;
use crate::error::{Error, Result};

/// ACC, NMI and purity of one clustering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub purity: f64,
}

impl Scores {
    pub fn of(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self {
            acc: clustering_accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            purity: purity(pred, truth)?,
        })
    }
}

/// Contingency table with rows indexed by predicted label and columns by true
/// label, both compacted to `0..` in increasing label order.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} labels, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let compact = |labels: &[usize]| -> BTreeMap<usize, usize> {
        let mut ids = BTreeMap::new();
        for &l in labels {
            ids.entry(l).or_insert(0);
        }
        for (i, v) in ids.values_mut().enumerate() {
            *v = i;
        }
        ids
    };
    let p_ids = compact(pred);
    let t_ids = compact(truth);
    let mut table = vec![vec![0usize; t_ids.len()]; p_ids.len()];
    for (p, t) in pred.iter().zip(truth) {
        table[p_ids[p]][t_ids[t]] += 1;
    }
    Ok(table)
}

pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let (rows, cols) = (table.len(), table[0].len());
    // Pad to square so both orientations are injective.
    let size = rows.max(cols);
    let profit: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| if i < rows && j < cols { table[i][j] as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    let assignment = max_weight_assignment(&profit);
    let hits: f64 = assignment.iter().enumerate().map(|(i, &j)| profit[i][j]).sum();
    Ok(hits / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let n = pred.len() as f64;
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_truth = entropy(col_sums.iter().copied(), n);
    if h_pred <= 0.0 || h_truth <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (h_pred * h_truth).sqrt()).clamp(0.0, 1.0))
}

pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let majority: usize = table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_labelings_score_one() {
        let y = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(clustering_accuracy(&y, &y).unwrap(), 1.0);
        assert!((nmi(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(purity(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn relabeling_is_free() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [2, 2, 0, 0, 1, 1];
        assert_eq!(clustering_accuracy(&pred, &truth).unwrap(), 1.0);
        assert!((nmi(&pred, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_has_zero_nmi() {
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn independent_partitions_have_zero_nmi() {
        // Every cell of the 2×2 contingency holds 1 sample, so p(i,j) = p(i)p(j).
        let v = nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
    }

    #[test]
    fn purity_hand_cases() {
        assert_eq!(purity(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(purity(&[0, 1, 2, 3], &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
        assert!(nmi(&[0, 1], &[0]).is_err());
        assert!(purity(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn more_clusters_than_classes() {
        // pred has 3 clusters, truth 2: best bijection matches 2 clusters.
        let acc = clustering_accuracy(&[0, 0, 1, 2], &[0, 0, 1, 1]).unwrap();
        assert_eq!(acc, 0.75);
    }
}
