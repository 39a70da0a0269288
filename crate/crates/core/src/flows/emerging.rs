//! Emerging convolution: a 1×1 mixing followed by a LOWER and an UPPER autoregressive
//! `p × p` convolution, `p = (d + 1) / 2`, giving a `d × d` receptive field.

use rand::Rng;

use super::layer::{normal_vec, random_rotation, Bijection, TapeLogdet};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::{
    build_autoregressive_mask, conv2d, solve_autoregressive_with, BatchMode, Boundary, Filter, MaskVariant, Padding,
    Tensor4,
};
use crate::error::{Error, Result};
use crate::numerics::{Lu, RMatrix};

/// Standard deviation of the off-diagonal initial weights.
pub const INIT_NOISE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct Emerging {
    pub channels: usize,
    pub kernel: usize,
    pub w: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    mask1: Filter,
    mask2: Filter,
}

fn init_weights(c: usize, p: usize, variant: MaskVariant, rng: &mut impl Rng) -> Tensor {
    let mut data = normal_vec(c * c * p * p, INIT_NOISE, rng);
    let (my, mx) = variant.center(p);
    for ch in 0..c {
        data[((ch * c + ch) * p + my) * p + mx] = 1.0;
    }
    Tensor::new(vec![c, c, p, p], data).expect("sized above")
}

impl Emerging {
    /// `kernel` is the odd receptive-field size `d`.
    pub fn new(store: &mut ParamStore, prefix: &str, c: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("emerging kernel size must be odd, got {kernel}")));
        }
        let p = kernel.div_ceil(2);
        Ok(Emerging {
            channels: c,
            kernel,
            w: store.add(format!("{prefix}.w"), Tensor::from(random_rotation(c, rng)), true),
            w1: store.add(format!("{prefix}.w1"), init_weights(c, p, MaskVariant::Lower, rng), true),
            w2: store.add(format!("{prefix}.w2"), init_weights(c, p, MaskVariant::Upper, rng), true),
            mask1: build_autoregressive_mask(MaskVariant::Lower, p, c)?,
            mask2: build_autoregressive_mask(MaskVariant::Upper, p, c)?,
        })
    }

    /// Off-center extent `p`.
    pub fn p(&self) -> usize {
        self.mask1.kh()
    }

    /// `(W, k1, k2)` with the masks applied.
    pub fn effective(&self, store: &ParamStore) -> Result<(RMatrix, Filter, Filter)> {
        let c = self.channels;
        let p = self.p();
        let w = store.get(self.w).to_matrix()?;
        let k1 = Filter::new(c, c, p, p, store.get(self.w1).data().to_vec(), self.mask1.pad())?.masked(&self.mask1)?;
        let k2 = Filter::new(c, c, p, p, store.get(self.w2).data().to_vec(), self.mask2.pad())?.masked(&self.mask2)?;
        Ok((w, k1, k2))
    }

    /// Inverse with an explicit batch schedule.
    pub fn inverse_with(&self, store: &ParamStore, y: &Tensor4, mode: BatchMode) -> Result<(Tensor4, Vec<f64>)> {
        let (n, c, h, w) = y.shape();
        if c != self.channels {
            return Err(Error::shape(format!("emerging layer expects {} channels, got {c}", self.channels)));
        }
        let (wm, k1, k2) = self.effective(store)?;
        let u = solve_autoregressive_with(y, &k2, MaskVariant::Upper, mode)?;
        let v = solve_autoregressive_with(&u, &k1, MaskVariant::Lower, mode)?;
        let lu = Lu::factor(&wm)?;
        let winv = lu.inverse().map_err(|_| Error::NonInvertible("singular 1x1 weight in emerging layer".into()))?;
        let x = conv2d(&v, &Filter::from_matrix(&winv), Boundary::Zero)?;
        let ld = self.logdet_value(&lu, &k1, &k2, h * w);
        Ok((x, vec![-ld; n]))
    }

    fn logdet_value(&self, lu: &Lu<f64>, k1: &Filter, k2: &Filter, hw: usize) -> f64 {
        let p = self.p();
        let (c1, c2) = (MaskVariant::Lower.center(p), MaskVariant::Upper.center(p));
        let diag: f64 =
            (0..self.channels).map(|c| k1.tap(c, c, c1.0, c1.1).abs().ln() + k2.tap(c, c, c2.0, c2.1).abs().ln()).sum();
        hw as f64 * (lu.slogdet().log_abs + diag)
    }
}

impl Bijection for Emerging {
    fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, TapeLogdet)> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!("emerging layer expects {} channels, got {c}", self.channels)));
        }
        let pp = self.p();
        let m1 = tape.constant(Tensor::new(vec![c, c, pp, pp], self.mask1.taps().to_vec())?);
        let m2 = tape.constant(Tensor::new(vec![c, c, pp, pp], self.mask2.taps().to_vec())?);
        let k1 = tape.mul(p[self.w1.0], m1)?;
        let k2 = tape.mul(p[self.w2.0], m2)?;
        let w1x1 = tape.reshape(p[self.w.0], &[c, c, 1, 1])?;

        let y = tape.conv2d(x, w1x1, None, Padding::NONE, Boundary::Zero)?;
        let y = tape.conv2d(y, k1, None, self.mask1.pad(), Boundary::Zero)?;
        let y = tape.conv2d(y, k2, None, self.mask2.pad(), Boundary::Zero)?;

        let ldw = tape.log_abs_det(p[self.w.0])?;
        let ld1 = tape.log_abs_diag_taps(k1, MaskVariant::Lower.center(pp))?;
        let ld2 = tape.log_abs_diag_taps(k2, MaskVariant::Upper.center(pp))?;
        let ld = tape.add(ldw, ld1)?;
        let ld = tape.add(ld, ld2)?;
        let ld = tape.scale(ld, (h * w) as f64)?;
        Ok((y, TapeLogdet::Shared(ld)))
    }

    fn inverse(&self, store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        self.inverse_with(store, y, BatchMode::Parallel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convkit::{combine_filters, dense_operator, DenseOperator};
    use crate::flows::layer::{normal_tensor, Direction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized(c: usize, d: usize, seed: u64) -> (ParamStore, Emerging) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let l = Emerging::new(&mut s, "em", c, d, &mut rng).unwrap();
        let p = l.p();
        for (id, variant) in [(l.w1, MaskVariant::Lower), (l.w2, MaskVariant::Upper)] {
            let mut t = normal_tensor(&[c, c, p, p], 0.3, &mut rng);
            let (my, mx) = variant.center(p);
            for ch in 0..c {
                let v = &mut t.data_mut()[((ch * c + ch) * p + my) * p + mx];
                *v += 1.0f64.copysign(*v);
            }
            s.set(id, t).unwrap();
        }
        (s, l)
    }

    #[test]
    fn identity_parameters() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Emerging::new(&mut s, "em", 2, 3, &mut rng).unwrap();
        s.set(l.w, Tensor::from(RMatrix::identity(2))).unwrap();
        for id in [l.w1, l.w2] {
            let mut t = s.get(id).clone();
            let c = t.data().len();
            let v = if id == l.w1 { MaskVariant::Lower.center(2) } else { MaskVariant::Upper.center(2) };
            for k in 0..c {
                let (ch, rem) = (k / 8, k % 8);
                let (ci, y, x) = (rem / 4, (rem % 4) / 2, rem % 2);
                t.data_mut()[k] = if ch == ci && (y, x) == v { 1.0 } else { 0.0 };
            }
            s.set(id, t).unwrap();
        }
        let x = Tensor4::from_fn(1, 2, 4, 4, |_, c, y, x| (c * 16 + y * 4 + x) as f64);
        let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, vec![0.0]);
    }

    #[test]
    fn round_trip_and_dense_logdet() {
        for (c, d, seed) in [(2, 3, 1), (3, 3, 2), (2, 1, 3)] {
            let (s, l) = randomized(c, d, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let x = Tensor4::from_fn(2, c, 4, 4, |_, _, _, _| rng.random_range(-1.0..1.0));
            let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
            let (back, inv) = l.apply(&s, &y, Direction::Inverse).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-8, "{c} {d}: {}", back.max_abs_diff(&x));
            assert!((ld[0] + inv[0]).abs() < 1e-10);

            let (w, k1, k2) = l.effective(&s).unwrap();
            let dw = dense_operator(&Filter::from_matrix(&w), 4, 4, Boundary::Zero).unwrap();
            let d1 = dense_operator(&k1, 4, 4, Boundary::Zero).unwrap();
            let d2 = dense_operator(&k2, 4, 4, Boundary::Zero).unwrap();
            let full: DenseOperator = d2.compose(&d1).unwrap().compose(&dw).unwrap();
            assert!((full.log_abs_det().unwrap() - ld[0]).abs() < 1e-8);
            assert!(full.apply(&x).unwrap().max_abs_diff(&y) < 1e-12);
        }
    }

    #[test]
    fn wrap_equivalent_of_merged_filter() {
        let (s, l) = randomized(2, 3, 4);
        let (w, k1, k2) = l.effective(&s).unwrap();
        let merged = combine_filters(&k2, &combine_filters(&k1, &Filter::from_matrix(&w)).unwrap()).unwrap();
        assert_eq!((merged.kh(), merged.pad()), (3, Padding::centered(3, 3)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4::from_fn(1, 2, 5, 5, |_, _, _, _| rng.random_range(-1.0..1.0));
        let chained = conv2d(
            &conv2d(&conv2d(&x, &Filter::from_matrix(&w), Boundary::Wrap).unwrap(), &k1, Boundary::Wrap).unwrap(),
            &k2,
            Boundary::Wrap,
        )
        .unwrap();
        assert!(chained.max_abs_diff(&conv2d(&x, &merged, Boundary::Wrap).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_center_tap_fails_inverse_with_channel() {
        let (mut s, l) = randomized(3, 3, 6);
        // (co=1, ci=1) at the UPPER center (0, 0) of a 2×2 kernel
        s.get_mut(l.w2).data_mut()[(3 + 1) * 4] = 0.0;
        let y = Tensor4::zeros(1, 3, 3, 3);
        assert!(matches!(l.apply(&s, &y, Direction::Inverse), Err(Error::ZeroDiagonalTap { channel: 1 })));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Emerging::new(&mut ParamStore::new(), "e", 2, 2, &mut rng).is_err());
    }
}
