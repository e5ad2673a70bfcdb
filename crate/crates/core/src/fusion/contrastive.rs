use nalgebra::DMatrix;

use crate::buffer::StructuralBuffer;
use crate::error::{Error, Result};

/// `C = H Hᵀ / ‖H‖_F²`.
pub fn similarity_matrix(h: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = h.norm_squared();
    if scale == 0.0 {
        return DMatrix::zeros(h.nrows(), h.nrows());
    }
    h * h.transpose() / scale
}

fn pair_sum(h: &DMatrix<f64>, w: &StructuralBuffer, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let scale = h.norm_squared();
    if scale == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, j, v) in w.iter() {
        if keep(i, j) {
            sum += v * h.row(i).dot(&h.row(j));
        }
    }
    2.0 * sum / scale
}

/// `Tr(C W)` summed over the stored pairs of `w`; `C` is never formed.
pub fn contrastive_loss(h: &DMatrix<f64>, w: &StructuralBuffer) -> Result<f64> {
    if h.nrows() != w.n() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} rows, buffer covers {} samples",
            h.nrows(),
            w.n()
        )));
    }
    Ok(pair_sum(h, w, |_, _| true))
}

/// Batched approximation: samples are split into contiguous batches of `batch`
/// and only intra-batch pairs contribute. `C` keeps the global normalization,
/// so the result equals [`contrastive_loss`] whenever no stored pair crosses a
/// batch boundary.
pub fn contrastive_loss_batched(h: &DMatrix<f64>, w: &StructuralBuffer, batch: usize) -> Result<f64> {
    if batch == 0 || batch > h.nrows() {
        return Err(Error::InvalidInput(format!("batch size {batch} outside 1..={}", h.nrows())));
    }
    if h.nrows() != w.n() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} rows, buffer covers {} samples",
            h.nrows(),
            w.n()
        )));
    }
    Ok(pair_sum(h, w, |i, j| i / batch == j / batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::{build_indicator, PairSelection};

    #[test]
    fn identity_columns_give_scaled_diagonal() {
        let h = DMatrix::identity(5, 2);
        let c = similarity_matrix(&h);
        let mut expected = DMatrix::zeros(5, 5);
        expected[(0, 0)] = 0.5;
        expected[(1, 1)] = 0.5;
        assert_eq!(c, expected);
        assert!((c.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_buffer_gives_zero_loss() {
        let h = DMatrix::identity(4, 2);
        let w = build_indicator(&PairSelection::empty(4), 1.0, 0.2, 4).unwrap();
        assert_eq!(contrastive_loss(&h, &w).unwrap(), 0.0);
    }

    #[test]
    fn two_sample_hand_case() {
        let h = DMatrix::from_column_slice(2, 1, &[0.5f64.sqrt(), 0.5f64.sqrt()]);
        let mut sel = PairSelection::empty(2);
        sel.positives[0].push(1);
        let w = build_indicator(&sel, 1.0, 0.2, 2).unwrap();
        // C = [[.5,.5],[.5,.5]], W = [[0,1],[1,0]]: Tr(CW) = 2·0.5 = 1.
        assert!((contrastive_loss(&h, &w).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let h = DMatrix::identity(4, 2);
        let w = build_indicator(&PairSelection::empty(3), 1.0, 0.2, 3).unwrap();
        assert!(contrastive_loss(&h, &w).is_err());
        assert!(contrastive_loss_batched(&h, &w, 2).is_err());
        let w = build_indicator(&PairSelection::empty(4), 1.0, 0.2, 4).unwrap();
        assert!(contrastive_loss_batched(&h, &w, 0).is_err());
    }
}
