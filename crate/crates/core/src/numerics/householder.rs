use super::matrix::RMatrix;
use crate::error::{Error, Result};

/// Vectors shorter than this cannot define a reflection.
pub const MIN_REFLECTOR_NORM: f64 = 1e-12;

/// Single reflection `I - 2 v vᵀ / (vᵀ v)`.
pub fn householder_reflection(v: &[f64]) -> Option<RMatrix> {
    let nsq: f64 = v.iter().map(|x| x * x).sum();
    if nsq.sqrt() <= MIN_REFLECTOR_NORM {
        return None;
    }
    let n = v.len();
    Some(RMatrix::from_fn(n, n, |r, c| {
        let delta = if r == c { 1.0 } else { 0.0 };
        delta - 2.0 * v[r] * v[c] / nsq
    }))
}

/// Orthogonal `Q = Q₁ Q₂ … Q_k` built from `k` reflection vectors of dimension `dim`.
/// An empty list yields the identity.
pub fn householder_orthogonal(vectors: &[Vec<f64>], dim: usize) -> Result<RMatrix> {
    let mut q = RMatrix::identity(dim);
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::shape(format!("reflection vector {index} has length {}, expected {dim}", v.len())));
        }
        let nsq: f64 = v.iter().map(|x| x * x).sum();
        if nsq.sqrt() <= MIN_REFLECTOR_NORM {
            return Err(Error::ZeroVector { index });
        }
        // q ← q (I - 2 v vᵀ / n) = q - (2/n) (q v) vᵀ
        let qv = q.matvec(v)?;
        for r in 0..dim {
            let s = 2.0 * qv[r] / nsq;
            for c in 0..dim {
                q[(r, c)] -= s * v[c];
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::lu_slogdet;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn orthogonality_error(q: &RMatrix) -> f64 {
        q.transpose().matmul(q).unwrap().max_abs_diff(&RMatrix::identity(q.rows()))
    }

    #[test]
    fn axis_reflection() {
        let q = householder_orthogonal(&[vec![1.0, 0.0, 0.0]], 3).unwrap();
        assert_eq!(q, RMatrix::from_diag(&[-1.0, 1.0, 1.0]));
    }

    #[test]
    fn empty_product_is_identity() {
        assert_eq!(householder_orthogonal(&[], 4).unwrap(), RMatrix::identity(4));
    }

    #[test]
    fn zero_vector_rejected_with_index() {
        let vs = vec![vec![1.0, 2.0], vec![0.0, 0.0]];
        assert!(matches!(householder_orthogonal(&vs, 2), Err(Error::ZeroVector { index: 1 })));
    }

    #[test]
    fn random_reflections_are_orthogonal_with_unit_det() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for k in 0..=6 {
            let vs: Vec<Vec<f64>> = (0..k).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            let q = householder_orthogonal(&vs, 4).unwrap();
            assert!(orthogonality_error(&q) < 1e-12);
            let d = lu_slogdet(&q).unwrap();
            assert!(d.log_abs.abs() < 1e-12);
            let expected = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((d.phase.re - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn product_matches_explicit_reflections() {
        let vs = vec![vec![1.0, 2.0, -1.0], vec![0.5, -0.3, 2.0]];
        let q = householder_orthogonal(&vs, 3).unwrap();
        let explicit =
            householder_reflection(&vs[0]).unwrap().matmul(&householder_reflection(&vs[1]).unwrap()).unwrap();
        assert!(q.max_abs_diff(&explicit) < 1e-14);
    }
}
