use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::ParamStore;
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::Tensor4;
use crate::error::Result;
use crate::numerics::RMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Log-Jacobian contribution of a recorded layer.
#[derive(Clone, Copy, Debug)]
pub enum TapeLogdet {
    Zero,
    /// Scalar shared by every example (parameter-only determinants).
    Shared(Var),
    /// `[n]`, one value per example.
    PerExample(Var),
}

impl TapeLogdet {
    /// Per-example values read back from the tape.
    pub fn values(&self, tape: &Tape, n: usize) -> Result<Vec<f64>> {
        Ok(match self {
            TapeLogdet::Zero => vec![0.0; n],
            TapeLogdet::Shared(v) => vec![tape.value(*v).item()?; n],
            TapeLogdet::PerExample(v) => tape.value(*v).data().to_vec(),
        })
    }
}

/// Shared contract of the invertible layers.
pub trait Bijection {
    /// Records the forward map of `x` (`[n, c, h, w]`) on `tape`; `p` is indexed by
    /// [`ParamId`](super::ParamId).
    fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, TapeLogdet)>;

    /// Exact inverse; the logdet returned is that of the inverse map.
    fn inverse(&self, store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)>;

    /// `(y, logdet)` with `logdet` the log-Jacobian of the forward map, negated for
    /// [`Direction::Inverse`].
    fn apply(&self, store: &ParamStore, x: &Tensor4, dir: Direction) -> Result<(Tensor4, Vec<f64>)> {
        match dir {
            Direction::Forward => {
                let mut tape = Tape::new();
                let p = store.bind_constants(&mut tape);
                let xv = tape.constant(Tensor::from(x));
                let (y, ld) = self.record(&mut tape, &p, xv)?;
                let logdet = ld.values(&tape, x.batch())?;
                Ok((tape.value(y).to_tensor4()?, logdet))
            }
            Direction::Inverse => self.inverse(store, x),
        }
    }
}

pub(crate) fn normal_vec(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(crate) fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(n, std, rng)).expect("shape matches length")
}

/// Uniformly random orthogonal matrix (Gram–Schmidt on a Gaussian matrix, with column signs
/// fixed by the diagonal of R).
pub fn random_rotation(c: usize, rng: &mut impl Rng) -> RMatrix {
    loop {
        let g = RMatrix::from_fn(c, c, |_, _| StandardNormal.sample(rng));
        let mut cols: Vec<Vec<f64>> = (0..c).map(|j| (0..c).map(|i| g[(i, j)]).collect()).collect();
        let mut ok = true;
        for j in 0..c {
            for k in 0..j {
                let d: f64 = (0..c).map(|i| cols[j][i] * cols[k][i]).sum();
                for i in 0..c {
                    cols[j][i] -= d * cols[k][i];
                }
            }
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            return RMatrix::from_fn(c, c, |i, j| cols[j][i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in 1..6 {
            let q = random_rotation(c, &mut rng);
            let qtq = q.transpose().matmul(&q).unwrap();
            assert!(qtq.max_abs_diff(&RMatrix::identity(c)) < 1e-12);
        }
    }
}
