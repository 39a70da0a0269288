//! Affine coupling: the first half of the channels is scaled and shifted by a small network
//! of the second half.

use rand::Rng;

use super::layer::{normal_tensor, Bijection, TapeLogdet};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::{Boundary, Padding, Tensor4};
use crate::error::{Error, Result};

/// Constant added to the raw scale logits, so a zero network gives `sigmoid(2)`.
pub const SCALE_OFFSET: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct Coupling {
    pub channels: usize,
    pub width: usize,
    pub f1: ParamId,
    pub b1: ParamId,
    pub f2: ParamId,
    pub b2: ParamId,
    /// Zero-initialized; output channels `[0, c/2)` are scale logits, `[c/2, c)` the shift.
    pub f3: ParamId,
    pub b3: ParamId,
}

impl Coupling {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::invalid(format!("coupling needs an even channel count, got {channels}")));
        }
        let half = channels / 2;
        let std1 = 1.0 / ((half * 9) as f64).sqrt();
        let std2 = 1.0 / (width as f64).sqrt();
        Ok(Coupling {
            channels,
            width,
            f1: store.add(format!("{prefix}.f1"), normal_tensor(&[width, half, 3, 3], std1, rng), true),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[width]), true),
            f2: store.add(format!("{prefix}.f2"), normal_tensor(&[width, width, 1, 1], std2, rng), true),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[width]), true),
            f3: store.add(format!("{prefix}.f3"), Tensor::zeros(&[channels, width, 3, 3]), true),
            b3: store.add(format!("{prefix}.b3"), Tensor::zeros(&[channels]), true),
        })
    }

    fn check(&self, c: usize) -> Result<()> {
        if c != self.channels {
            return Err(Error::shape(format!("coupling expects {} channels, got {c}", self.channels)));
        }
        Ok(())
    }

    /// `(s, shift)` computed from the conditioning half.
    fn scale_shift(&self, tape: &mut Tape, p: &[Var], xb: Var) -> Result<(Var, Var)> {
        let half = self.channels / 2;
        let pad3 = Padding::centered(3, 3);
        let h = tape.conv2d(xb, p[self.f1.0], Some(p[self.b1.0]), pad3, Boundary::Zero)?;
        let h = tape.relu(h)?;
        let h = tape.conv2d(h, p[self.f2.0], Some(p[self.b2.0]), Padding::NONE, Boundary::Zero)?;
        let h = tape.relu(h)?;
        let out = tape.conv2d(h, p[self.f3.0], Some(p[self.b3.0]), pad3, Boundary::Zero)?;
        let raw = tape.slice_channels(out, 0, half)?;
        let shift = tape.slice_channels(out, half, half)?;
        let raw = tape.add_scalar(raw, SCALE_OFFSET)?;
        let s = tape.sigmoid(raw)?;
        Ok((s, shift))
    }
}

impl Bijection for Coupling {
    fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, TapeLogdet)> {
        self.check(tape.value(x).dims4()?.1)?;
        let half = self.channels / 2;
        let xa = tape.slice_channels(x, 0, half)?;
        let xb = tape.slice_channels(x, half, half)?;
        let (s, shift) = self.scale_shift(tape, p, xb)?;
        let scaled = tape.mul(xa, s)?;
        let ya = tape.add(scaled, shift)?;
        let y = tape.concat_channels(ya, xb)?;
        let log_s = tape.log(s)?;
        let ld = tape.sum_per_example(log_s)?;
        Ok((y, TapeLogdet::PerExample(ld)))
    }

    fn inverse(&self, store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        self.check(y.channels())?;
        let half = self.channels / 2;
        let ya = y.slice_channels(0, half)?;
        let yb = y.slice_channels(half, half)?;
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let xb = tape.constant(Tensor::from(&yb));
        let (s, shift) = self.scale_shift(&mut tape, &p, xb)?;
        let (s, shift) = (tape.value(s).data(), tape.value(shift).data());
        let mut xa = ya.clone();
        for (k, v) in xa.data_mut().iter_mut().enumerate() {
            *v = (*v - shift[k]) / s[k];
        }
        let per = xa.example_len();
        let ld = (0..y.batch()).map(|b| -s[b * per..(b + 1) * per].iter().map(|v| v.ln()).sum::<f64>()).collect();
        Ok((Tensor4::concat_channels(&xa, &yb)?, ld))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::layer::Direction;
    use crate::numerics::{lu_slogdet, RMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized(c: usize, seed: u64) -> (ParamStore, Coupling) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let l = Coupling::new(&mut s, "cp", c, 8, &mut rng).unwrap();
        for id in [l.f3, l.b3, l.b1] {
            let shape = s.get(id).shape().to_vec();
            s.set(id, normal_tensor(&shape, 0.3, &mut rng)).unwrap();
        }
        (s, l)
    }

    #[test]
    fn zero_network_scales_by_sigmoid_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let l = Coupling::new(&mut s, "cp", 4, 6, &mut rng).unwrap();
        let x = Tensor4::from_fn(2, 4, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        let sig = 1.0 / (1.0 + (-2f64).exp());
        for b in 0..2 {
            for k in 0..18 {
                assert!((y.example(b)[k] - sig * x.example(b)[k]).abs() < 1e-15);
                assert_eq!(y.example(b)[18 + k], x.example(b)[18 + k]);
            }
            assert!((ld[b] - 2.0 * 9.0 * sig.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_channels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Coupling::new(&mut ParamStore::new(), "cp", 3, 4, &mut rng).is_err());
    }

    #[test]
    fn round_trip() {
        let (s, l) = randomized(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4::from_fn(3, 4, 4, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (y, fwd) = l.apply(&s, &x, Direction::Forward).unwrap();
        let (back, inv) = l.apply(&s, &y, Direction::Inverse).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
        for b in 0..3 {
            assert!((fwd[b] + inv[b]).abs() < 1e-12);
        }
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        let (s, l) = randomized(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor4::from_fn(1, 2, 2, 2, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (_, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        let d = 8;
        let eps = 1e-6;
        let mut jac = RMatrix::zeros(d, d);
        for k in 0..d {
            let mut xp = x.clone();
            xp.data_mut()[k] += eps;
            let mut xm = x.clone();
            xm.data_mut()[k] -= eps;
            let yp = l.apply(&s, &xp, Direction::Forward).unwrap().0;
            let ym = l.apply(&s, &xm, Direction::Forward).unwrap().0;
            for r in 0..d {
                jac[(r, k)] = (yp.data()[r] - ym.data()[r]) / (2.0 * eps);
            }
        }
        let fd = lu_slogdet(&jac).unwrap().log_abs;
        assert!((fd - ld[0]).abs() < 1e-5, "{fd} vs {}", ld[0]);
    }
}
