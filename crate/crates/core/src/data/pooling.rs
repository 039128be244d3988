use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};

/// Component-wise mean of the frames of one segment, accumulated in f64.
pub fn mean_pool_segment(frames: ArrayView2<'_, f32>) -> Result<Array1<f32>> {
    let (len, dim) = frames.dim();
    if len == 0 {
        return Err(Error::EmptySegment);
    }
    let mut acc = vec![0f64; dim];
    for row in frames.rows() {
        for (a, v) in acc.iter_mut().zip(row.iter()) {
            *a += f64::from(*v);
        }
    }
    let n = len as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_frame_is_identity() {
        let m = array![[1.0f32, 2.0, 3.0]];
        assert_eq!(mean_pool_segment(m.view()).unwrap(), array![1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_point_mean() {
        let m = array![[0.0f32, 0.0], [2.0, 4.0]];
        assert_eq!(mean_pool_segment(m.view()).unwrap(), array![1.0, 2.0]);
    }

    #[test]
    fn empty_segment_rejected() {
        let m = Array2::<f32>::zeros((0, 3));
        assert!(matches!(mean_pool_segment(m.view()), Err(Error::EmptySegment)));
    }

    #[test]
    fn matches_reverse_order_summation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = Array2::from_shape_fn((5, 8), |_| rng.random_range(-3.0f32..3.0));
            let pooled = mean_pool_segment(m.view()).unwrap();
            for j in 0..8 {
                // column-wise, last row first
                let mut s = 0f64;
                for i in (0..5).rev() {
                    s += f64::from(m[[i, j]]);
                }
                let oracle = (s / 5.0) as f32;
                let tol = 1e-6 * oracle.abs().max(1.0);
                assert!((pooled[j] - oracle).abs() <= tol, "{} vs {}", pooled[j], oracle);
            }
        }
    }
}
