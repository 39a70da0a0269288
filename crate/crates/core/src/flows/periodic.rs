//! Periodic convolution: a `d × d` convolution with wrap-around boundaries, applied and
//! inverted per frequency.

use std::fmt;
use std::sync::{Arc, RwLock};

use rand::Rng;

use super::layer::{normal_vec, random_rotation, Bijection, TapeLogdet};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::{apply_frequency_matrices, frequency_matrices, Filter, Padding, Tensor4};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, Dft2Plan, Lu};

/// Standard deviation of the initial non-center taps.
pub const INIT_NOISE: f64 = 0.05;

/// Per-frequency inverses for one parameter version and image size.
pub struct InverseCache {
    store: u64,
    version: u64,
    plan: Dft2Plan,
    inverses: Vec<CMatrix>,
    logdet: f64,
}

pub struct Periodic {
    pub channels: usize,
    pub kernel: usize,
    pub w: ParamId,
    cache: RwLock<Option<Arc<InverseCache>>>,
}

impl Clone for Periodic {
    fn clone(&self) -> Self {
        Periodic { channels: self.channels, kernel: self.kernel, w: self.w, cache: RwLock::new(None) }
    }
}

impl fmt::Debug for Periodic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Periodic")
            .field("channels", &self.channels)
            .field("kernel", &self.kernel)
            .field("w", &self.w)
            .finish()
    }
}

impl Periodic {
    /// Center tap a random rotation, remaining taps small Gaussian noise.
    pub fn new(store: &mut ParamStore, prefix: &str, c: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel == 0 {
            return Err(Error::invalid("periodic kernel size must be positive"));
        }
        let d = kernel;
        let m = (d - 1) / 2;
        let mut taps = normal_vec(c * c * d * d, INIT_NOISE, rng);
        let rot = random_rotation(c, rng);
        for co in 0..c {
            for ci in 0..c {
                taps[((co * c + ci) * d + m) * d + m] = rot[(co, ci)];
            }
        }
        let w = store.add(format!("{prefix}.w"), Tensor::new(vec![c, c, d, d], taps)?, true);
        Ok(Periodic { channels: c, kernel, w, cache: RwLock::new(None) })
    }

    pub fn padding(&self) -> Padding {
        Padding::centered(self.kernel, self.kernel)
    }

    pub fn filter(&self, store: &ParamStore) -> Result<Filter> {
        let d = self.kernel;
        Filter::new(self.channels, self.channels, d, d, store.get(self.w).data().to_vec(), self.padding())
    }

    /// Drops cached inverses.
    pub fn invalidate_cache(&self) {
        *self.cache.write().expect("cache lock poisoned") = None;
    }

    /// True when the cache matches the current parameters and image size.
    pub fn cache_is_warm(&self, store: &ParamStore, h: usize, w: usize) -> bool {
        self.lookup(store, h, w).is_some()
    }

    fn lookup(&self, store: &ParamStore, h: usize, w: usize) -> Option<Arc<InverseCache>> {
        let guard = self.cache.read().expect("cache lock poisoned");
        guard
            .as_ref()
            .filter(|c| {
                c.store == store.id()
                    && c.version == store.version(self.w)
                    && c.plan.height() == h
                    && c.plan.width() == w
            })
            .cloned()
    }

    fn inverse_cache(&self, store: &ParamStore, h: usize, w: usize) -> Result<Arc<InverseCache>> {
        if let Some(c) = self.lookup(store, h, w) {
            return Ok(c);
        }
        let plan = Dft2Plan::new(h, w);
        let mats = frequency_matrices(&self.filter(store)?, &plan);
        let mut inverses = Vec::with_capacity(mats.len());
        let mut logdet = 0.0;
        for (uv, m) in mats.iter().enumerate() {
            let lu = Lu::factor(m)?;
            logdet += lu.slogdet().log_abs;
            inverses.push(lu.inverse().map_err(|_| Error::SingularFrequency { u: uv / w, v: uv % w })?);
        }
        let entry =
            Arc::new(InverseCache { store: store.id(), version: store.version(self.w), plan, inverses, logdet });
        *self.cache.write().expect("cache lock poisoned") = Some(entry.clone());
        Ok(entry)
    }
}

impl Bijection for Periodic {
    fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, TapeLogdet)> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!("periodic layer expects {} channels, got {c}", self.channels)));
        }
        let y = tape.periodic_conv(x, p[self.w.0], self.padding())?;
        let ld = tape.periodic_logdet(p[self.w.0], self.padding(), h, w)?;
        Ok((y, TapeLogdet::Shared(ld)))
    }

    fn inverse(&self, store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        let (n, c, h, w) = y.shape();
        if c != self.channels {
            return Err(Error::shape(format!("periodic layer expects {} channels, got {c}", self.channels)));
        }
        let cache = self.inverse_cache(store, h, w)?;
        let x = apply_frequency_matrices(&cache.plan, &cache.inverses, c, c, y.data());
        Ok((Tensor4::new(n, c, h, w, x)?, vec![-cache.logdet; n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convkit::{conv2d, dense_operator, Boundary};
    use crate::flows::layer::Direction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_filter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let l = Periodic::new(&mut s, "pc", 2, 3, &mut rng).unwrap();
        s.set(
            l.w,
            Tensor::new(vec![2, 2, 3, 3], Filter::delta(2, 3, 3, (1, 1), l.padding()).unwrap().into_taps()).unwrap(),
        )
        .unwrap();
        let x = Tensor4::from_fn(2, 2, 4, 4, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
        assert!(ld[0].abs() < 1e-12);
    }

    #[test]
    fn all_ones_filter_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let l = Periodic::new(&mut s, "pc", 1, 3, &mut rng).unwrap();
        s.set(l.w, Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let x = Tensor4::zeros(1, 1, 3, 3);
        let (_, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        assert_eq!(ld[0], f64::NEG_INFINITY);
        assert!(matches!(l.apply(&s, &x, Direction::Inverse), Err(Error::SingularFrequency { .. })));
    }

    #[test]
    fn forward_matches_wrap_conv_and_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let l = Periodic::new(&mut s, "pc", 2, 3, &mut rng).unwrap();
        s.set(l.w, super::super::layer::normal_tensor(&[2, 2, 3, 3], 0.5, &mut rng)).unwrap();
        let x = Tensor4::from_fn(2, 2, 4, 4, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        let f = l.filter(&s).unwrap();
        assert!(y.max_abs_diff(&conv2d(&x, &f, Boundary::Wrap).unwrap()) < 1e-9);
        let dense = dense_operator(&f, 4, 4, Boundary::Wrap).unwrap().log_abs_det().unwrap();
        assert!((dense - ld[0]).abs() < 1e-7);
        let (back, inv) = l.apply(&s, &y, Direction::Inverse).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-8);
        assert!((inv[0] + ld[0]).abs() < 1e-9);
    }

    #[test]
    fn cache_follows_parameter_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let l = Periodic::new(&mut s, "pc", 2, 3, &mut rng).unwrap();
        let x = Tensor4::from_fn(1, 2, 4, 4, |_, _, _, _| rng.random_range(-1.0..1.0));
        assert!(!l.cache_is_warm(&s, 4, 4));
        l.apply(&s, &x, Direction::Inverse).unwrap();
        assert!(l.cache_is_warm(&s, 4, 4));
        assert!(!l.cache_is_warm(&s, 4, 2));
        s.get_mut(l.w).data_mut()[0] += 0.1;
        assert!(!l.cache_is_warm(&s, 4, 4));
        let (y, _) = l.apply(&s, &x, Direction::Forward).unwrap();
        let (back, _) = l.apply(&s, &y, Direction::Inverse).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
        l.invalidate_cache();
        assert!(!l.cache_is_warm(&s, 4, 4));
    }

    #[test]
    fn kernel_larger_than_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let l = Periodic::new(&mut s, "pc", 3, 3, &mut rng).unwrap();
        let x = Tensor4::from_fn(2, 3, 1, 1, |_, _, _, _| rng.random_range(-1.0..1.0));
        let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        let f = l.filter(&s).unwrap();
        assert!(y.max_abs_diff(&conv2d(&x, &f, Boundary::Wrap).unwrap()) < 1e-12);
        let dense = dense_operator(&f, 1, 1, Boundary::Wrap).unwrap().log_abs_det().unwrap();
        assert!((dense - ld[0]).abs() < 1e-9);
        let (back, _) = l.apply(&s, &y, Direction::Inverse).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
    }
}
