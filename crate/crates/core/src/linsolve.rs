//! Sparse direct solves backed by faer's LU, with residual checks and a few
//! steps of iterative refinement.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

const REFINEMENT_STEPS: usize = 3;

/// Solves the square system given by `triplets` (duplicates are summed).
///
/// The returned solution has relative residual
/// `‖Ax − b‖∞ / (‖A‖∞‖x‖∞ + ‖b‖∞)` at most `tolerance`.
pub fn solve(n: usize, triplets: &[(usize, usize, f64)], rhs: &[f64], tolerance: f64) -> Result<Vec<f64>> {
    let entries: Vec<Triplet<usize, usize, f64>> =
        triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
        .map_err(|e| Error::Singular(format!("matrix assembly failed: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;

    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let mut x = lu.solve(&b);

    let mut row_norm = vec![0.0f64; n];
    for &(i, _, v) in triplets {
        row_norm[i] += v.abs();
    }
    let a_norm = row_norm.iter().copied().fold(0.0, f64::max);
    let b_norm = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let relative = |x: &Mat<f64>| -> (Mat<f64>, f64) {
        let r = &b - &a * x;
        let x_norm = x.norm_max();
        let scale = a_norm * x_norm + b_norm;
        let rel = if scale > 0.0 { r.norm_max() / scale } else { 0.0 };
        (r, rel)
    };

    let (mut r, mut rel) = relative(&x);
    for _ in 0..REFINEMENT_STEPS {
        if rel <= tolerance * 1e-3 {
            break;
        }
        let dx = lu.solve(&r);
        let candidate = &x + &dx;
        let (r_new, rel_new) = relative(&candidate);
        if rel_new >= rel {
            break;
        }
        x = candidate;
        r = r_new;
        rel = rel_new;
    }
    if !rel.is_finite() || (0..n).any(|i| !x[(i, 0)].is_finite()) {
        return Err(Error::Singular("solve produced non-finite values".into()));
    }
    if rel > tolerance {
        return Err(Error::LinearResidual { residual: rel, tolerance });
    }
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}
