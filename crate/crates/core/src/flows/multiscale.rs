//! Squeeze and split, the reshaping steps of the multi-scale architecture.

use rand::Rng;
use rand_distr::StandardNormal;

use super::layer::{Bijection, TapeLogdet};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::{Boundary, Padding, Tensor4};
use crate::error::{Error, Result};

/// 2×2 space-to-depth. Within each input channel the four sub-pixels become consecutive
/// output channels in the order top-left, top-right, bottom-left, bottom-right.
#[derive(Clone, Copy, Debug, Default)]
pub struct Squeeze;

impl Bijection for Squeeze {
    fn record(&self, tape: &mut Tape, _p: &[Var], x: Var) -> Result<(Var, TapeLogdet)> {
        Ok((tape.squeeze(x)?, TapeLogdet::Zero))
    }

    fn inverse(&self, _store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        Ok((y.depth_to_space()?, vec![0.0; y.batch()]))
    }
}

/// Factors out the second half of the channels under a Gaussian whose mean and log-std come
/// from a zero-initialized 3×3 convolution of the first half.
#[derive(Clone, Debug)]
pub struct Split {
    pub channels: usize,
    /// `[c, c/2, 3, 3]`; output channels `[0, c/2)` are the mean, `[c/2, c)` the log-std.
    pub prior_filter: ParamId,
    pub prior_bias: ParamId,
}

/// Forward result of a split.
#[derive(Clone, Debug)]
pub struct SplitOutput {
    pub kept: Tensor4,
    pub factored: Tensor4,
    pub log_prob: Vec<f64>,
}

impl Split {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::invalid(format!("split needs an even channel count, got {channels}")));
        }
        Ok(Split {
            channels,
            prior_filter: store.add(format!("{prefix}.prior_f"), Tensor::zeros(&[channels, channels / 2, 3, 3]), true),
            prior_bias: store.add(format!("{prefix}.prior_b"), Tensor::zeros(&[channels]), true),
        })
    }

    fn check(&self, c: usize) -> Result<()> {
        if c != self.channels {
            return Err(Error::shape(format!("split expects {} channels, got {c}", self.channels)));
        }
        Ok(())
    }

    /// `(mean, log_std)` of the factored half given the kept half.
    pub fn record_prior(&self, tape: &mut Tape, p: &[Var], kept: Var) -> Result<(Var, Var)> {
        let half = self.channels / 2;
        let out = tape.conv2d(
            kept,
            p[self.prior_filter.0],
            Some(p[self.prior_bias.0]),
            Padding::centered(3, 3),
            Boundary::Zero,
        )?;
        Ok((tape.slice_channels(out, 0, half)?, tape.slice_channels(out, half, half)?))
    }

    /// Records the split; returns `(kept, factored, log p(factored) per example)`.
    pub fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, Var, Var)> {
        self.check(tape.value(x).dims4()?.1)?;
        let half = self.channels / 2;
        let kept = tape.slice_channels(x, 0, half)?;
        let factored = tape.slice_channels(x, half, half)?;
        let (mean, log_std) = self.record_prior(tape, p, kept)?;
        let lp = tape.gaussian_log_prob(factored, Some(mean), Some(log_std))?;
        Ok((kept, factored, lp))
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor4) -> Result<SplitOutput> {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let xv = tape.constant(Tensor::from(x));
        let (kept, factored, lp) = self.record(&mut tape, &p, xv)?;
        Ok(SplitOutput {
            kept: tape.value(kept).to_tensor4()?,
            factored: tape.value(factored).to_tensor4()?,
            log_prob: tape.value(lp).data().to_vec(),
        })
    }

    fn moments(&self, store: &ParamStore, kept: &Tensor4) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let kv = tape.constant(Tensor::from(kept));
        let (m, s) = self.record_prior(&mut tape, &p, kv)?;
        Ok((tape.value(m).data().to_vec(), tape.value(s).data().to_vec()))
    }

    /// Reattaches `factored` to `kept`.
    pub fn inverse(&self, kept: &Tensor4, factored: &Tensor4) -> Result<Tensor4> {
        if kept.channels() * 2 != self.channels || factored.shape() != kept.shape() {
            return Err(Error::shape("split inverse: kept and factored halves do not match the layer"));
        }
        Tensor4::concat_channels(kept, factored)
    }

    /// Draws the factored half as `mean + temperature · std · ε` and reattaches it.
    pub fn sample(&self, store: &ParamStore, kept: &Tensor4, temperature: f64, rng: &mut impl Rng) -> Result<Tensor4> {
        if kept.channels() * 2 != self.channels {
            return Err(Error::shape("split sample: kept half does not match the layer"));
        }
        let (mean, log_std) = self.moments(store, kept)?;
        let mut z = kept.clone();
        for (k, v) in z.data_mut().iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *v = mean[k] + temperature * log_std[k].exp() * eps;
        }
        self.inverse(kept, &z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convkit::{dense_operator, Filter};
    use crate::flows::layer::{normal_tensor, Direction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squeeze_ordering() {
        let x = Tensor4::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, ld) = Squeeze.apply(&ParamStore::new(), &x, Direction::Forward).unwrap();
        assert_eq!(y.shape(), (1, 4, 1, 1));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ld, vec![0.0]);
        assert_eq!(Squeeze.apply(&ParamStore::new(), &y, Direction::Inverse).unwrap().0, x);
    }

    #[test]
    fn squeeze_is_a_permutation() {
        let (c, h, w) = (2, 4, 2);
        let d = c * h * w;
        let store = ParamStore::new();
        let mut ones_per_col = vec![0; d];
        for k in 0..d {
            let mut e = Tensor4::zeros(1, c, h, w);
            e.data_mut()[k] = 1.0;
            let y = Squeeze.apply(&store, &e, Direction::Forward).unwrap().0;
            assert_eq!(y.data().iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(y.data().iter().filter(|&&v| v != 0.0).count(), 1);
            ones_per_col[y.data().iter().position(|&v| v == 1.0).unwrap()] += 1;
        }
        assert!(ones_per_col.iter().all(|&n| n == 1));
    }

    #[test]
    fn odd_size_rejected() {
        assert!(Squeeze.apply(&ParamStore::new(), &Tensor4::zeros(1, 1, 3, 2), Direction::Forward).is_err());
    }

    #[test]
    fn zero_prior_is_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let sp = Split::new(&mut s, "sp", 4).unwrap();
        let x = Tensor4::from_fn(2, 4, 2, 2, |_, _, _, _| rng.random_range(-2.0..2.0));
        let out = sp.forward(&s, &x).unwrap();
        for b in 0..2 {
            let expected: f64 =
                out.factored.example(b).iter().map(|z| -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z).sum();
            assert!((out.log_prob[b] - expected).abs() < 1e-12);
        }
        assert_eq!(sp.inverse(&out.kept, &out.factored).unwrap(), x);
    }

    #[test]
    fn zero_temperature_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let sp = Split::new(&mut s, "sp", 2).unwrap();
        s.set(sp.prior_filter, normal_tensor(&[2, 1, 3, 3], 0.3, &mut rng)).unwrap();
        s.set(sp.prior_bias, Tensor::vector(vec![0.5, -0.2])).unwrap();
        let kept = Tensor4::from_fn(1, 1, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        let x = sp.sample(&s, &kept, 0.0, &mut rng).unwrap();
        let f = Filter::new(2, 1, 3, 3, s.get(sp.prior_filter).data().to_vec(), Padding::centered(3, 3)).unwrap();
        let out = dense_operator(&f, 3, 3, crate::convkit::Boundary::Zero).unwrap();
        let mean = out.matrix().matvec(&kept.raster(0)).unwrap();
        let z = x.slice_channels(1, 1).unwrap();
        for (k, v) in z.raster(0).iter().enumerate() {
            assert!((v - (mean[2 * k] + 0.5)).abs() < 1e-12);
        }
    }
}
