//! Per-channel affine layer with data-dependent initialization.

use super::layer::{Bijection, TapeLogdet};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::Tensor4;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ActNorm {
    pub channels: usize,
    pub log_scale: ParamId,
    pub bias: ParamId,
    /// `[1]`, nonzero once initialized.
    pub initialized: ParamId,
}

impl ActNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        ActNorm {
            channels,
            log_scale: store.add(format!("{prefix}.log_scale"), Tensor::zeros(&[channels]), true),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels]), true),
            initialized: store.add(format!("{prefix}.initialized"), Tensor::zeros(&[1]), false),
        }
    }

    pub fn is_initialized(&self, store: &ParamStore) -> bool {
        store.get(self.initialized).data()[0] != 0.0
    }

    /// Sets `γ = 1/std`, `β = −mean/std` per channel so this batch comes out standardized.
    pub fn initialize(&self, store: &mut ParamStore, x: &Tensor4) -> Result<()> {
        let (n, c, h, w) = x.shape();
        if c != self.channels {
            return Err(Error::shape(format!("actnorm expects {} channels, got {c}", self.channels)));
        }
        let count = (n * h * w) as f64;
        if count == 0.0 {
            return Err(Error::invalid("actnorm initialization needs a non-empty batch"));
        }
        let mut ls = vec![0.0; c];
        let mut bias = vec![0.0; c];
        for ch in 0..c {
            let vals = (0..n).flat_map(|b| x.example(b)[ch * h * w..(ch + 1) * h * w].iter().copied());
            let mean = vals.clone().sum::<f64>() / count;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            ls[ch] = -std.ln();
            bias[ch] = -mean / std;
        }
        store.set(self.log_scale, Tensor::vector(ls))?;
        store.set(self.bias, Tensor::vector(bias))?;
        store.set(self.initialized, Tensor::vector(vec![1.0]))?;
        Ok(())
    }

    fn ensure_initialized(&self, tape: &Tape, p: &[Var]) -> Result<()> {
        if tape.value(p[self.initialized.0]).data()[0] == 0.0 {
            return Err(Error::Uninitialized);
        }
        Ok(())
    }
}

impl Bijection for ActNorm {
    fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, TapeLogdet)> {
        self.ensure_initialized(tape, p)?;
        let (_, _, h, w) = tape.value(x).dims4()?;
        let y = tape.affine_per_channel(x, p[self.log_scale.0], p[self.bias.0])?;
        let s = tape.sum(p[self.log_scale.0])?;
        let ld = tape.scale(s, (h * w) as f64)?;
        Ok((y, TapeLogdet::Shared(ld)))
    }

    fn inverse(&self, store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        if !self.is_initialized(store) {
            return Err(Error::Uninitialized);
        }
        let (n, c, h, w) = y.shape();
        if c != self.channels {
            return Err(Error::shape(format!("actnorm expects {} channels, got {c}", self.channels)));
        }
        let ls = store.get(self.log_scale).data();
        let b = store.get(self.bias).data();
        let x = Tensor4::from_fn(n, c, h, w, |e, ch, yy, xx| (y.at(e, ch, yy, xx) - b[ch]) * (-ls[ch]).exp());
        let ld = -((h * w) as f64) * ls.iter().sum::<f64>();
        Ok((x, vec![ld; n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::layer::Direction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(c: usize) -> (ParamStore, ActNorm) {
        let mut s = ParamStore::new();
        let a = ActNorm::new(&mut s, "an", c);
        s.set(a.initialized, Tensor::vector(vec![1.0])).unwrap();
        (s, a)
    }

    #[test]
    fn identity_parameters() {
        let (s, a) = layer(2);
        let x = Tensor4::from_fn(3, 2, 2, 2, |b, c, y, x| (b + c + y * x) as f64);
        let (y, ld) = a.apply(&s, &x, Direction::Forward).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, vec![0.0; 3]);
    }

    #[test]
    fn doubling_logdet() {
        let (mut s, a) = layer(2);
        s.set(a.log_scale, Tensor::vector(vec![2f64.ln(); 2])).unwrap();
        let x = Tensor4::zeros(1, 2, 4, 4);
        let (_, ld) = a.apply(&s, &x, Direction::Forward).unwrap();
        assert!((ld[0] - 16.0 * 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn initialization_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let a = ActNorm::new(&mut s, "an", 2);
        let x = Tensor4::from_fn(16, 2, 4, 4, |_, _, _, _| 6.0 + 3.0 * rng.random_range(-1.7..1.7));
        assert!(matches!(a.apply(&s, &x, Direction::Forward), Err(Error::Uninitialized)));
        a.initialize(&mut s, &x).unwrap();
        let (y, _) = a.apply(&s, &x, Direction::Forward).unwrap();
        for ch in 0..2 {
            let v: Vec<f64> = (0..16).flat_map(|b| y.example(b)[ch * 16..(ch + 1) * 16].to_vec()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
            assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6, "{m} {sd}");
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut s, a) = layer(3);
        s.set(a.log_scale, Tensor::vector(vec![0.3, -0.2, 0.9])).unwrap();
        s.set(a.bias, Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        let x = Tensor4::from_fn(2, 3, 3, 2, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (y, fwd) = a.apply(&s, &x, Direction::Forward).unwrap();
        let (back, inv) = a.apply(&s, &y, Direction::Inverse).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
        assert!((fwd[0] + inv[0]).abs() < 1e-12);
    }
}
