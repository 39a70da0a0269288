//! Inverses of autoregressive convolutions by forward/backward substitution.
//!
//! A LOWER-masked filter only reads the current pixel and pixels earlier in raster order, so
//! pixels can be solved in ascending order; at the current pixel the channel block is lower
//! triangular and is solved channel by channel. UPPER is the mirror image. Each example is an
//! independent work item.

use rayon::prelude::*;

use super::filter::{Filter, MaskVariant};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Diagonal taps with magnitude at or below this make the layer non-invertible.
pub const DIAGONAL_EPS: f64 = 1e-12;

/// How the batch axis is processed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    Sequential,
    Parallel,
}

fn validate(z: &Tensor4, f: &Filter, variant: MaskVariant) -> Result<()> {
    let c = z.channels();
    if f.c_in() != c || f.c_out() != c {
        return Err(Error::shape(format!(
            "autoregressive filter ({}, {}) does not match {c} channels",
            f.c_out(),
            f.c_in()
        )));
    }
    if f.kh() != f.kw() || f.pad() != variant.padding(f.kh()) {
        return Err(Error::invalid(format!("filter is not a square {variant:?}-aligned autoregressive filter")));
    }
    let (my, mx) = variant.center(f.kh());
    for ch in 0..c {
        if f.tap(ch, ch, my, mx).abs() <= DIAGONAL_EPS {
            return Err(Error::ZeroDiagonalTap { channel: ch });
        }
    }
    Ok(())
}

/// Solves one pixel: `x[:, j, i]` from `z` and the already-solved neighbours.
#[inline]
fn solve_pixel(
    f: &Filter,
    variant: MaskVariant,
    (c, h, w): (usize, usize, usize),
    (j, i): (usize, usize),
    z: &[f64],
    x: &mut [f64],
    acc: &mut [f64],
) {
    let p = f.kh();
    let hw = h * w;
    let pad = f.pad();
    let (my, mx) = variant.center(p);
    for (ch, a) in acc.iter_mut().enumerate() {
        *a = z[ch * hw + j * w + i];
    }
    // Only taps landing inside the image; the center tap is handled below.
    let dy_lo = pad.top.saturating_sub(j);
    let dy_hi = p.min(h + pad.top - j);
    let dx_lo = pad.left.saturating_sub(i);
    let dx_hi = p.min(w + pad.left - i);
    for dy in dy_lo..dy_hi {
        let sy = j + dy - pad.top;
        for dx in dx_lo..dx_hi {
            if (dy, dx) == (my, mx) {
                continue;
            }
            let sx = i + dx - pad.left;
            for (co, a) in acc.iter_mut().enumerate() {
                for ci in 0..c {
                    *a -= f.tap(co, ci, dy, dx) * x[ci * hw + sy * w + sx];
                }
            }
        }
    }
    let pix = j * w + i;
    match variant {
        MaskVariant::Lower => {
            for co in 0..c {
                let mut a = acc[co];
                for ci in 0..co {
                    a -= f.tap(co, ci, my, mx) * x[ci * hw + pix];
                }
                x[co * hw + pix] = a / f.tap(co, co, my, mx);
            }
        }
        MaskVariant::Upper => {
            for co in (0..c).rev() {
                let mut a = acc[co];
                for ci in co + 1..c {
                    a -= f.tap(co, ci, my, mx) * x[ci * hw + pix];
                }
                x[co * hw + pix] = a / f.tap(co, co, my, mx);
            }
        }
    }
}

fn solve_example(f: &Filter, variant: MaskVariant, dims: (usize, usize, usize), z: &[f64], x: &mut [f64]) {
    let (c, h, w) = dims;
    let mut acc = vec![0.0; c];
    match variant {
        MaskVariant::Lower => {
            for j in 0..h {
                for i in 0..w {
                    solve_pixel(f, variant, dims, (j, i), z, x, &mut acc);
                }
            }
        }
        MaskVariant::Upper => {
            for j in (0..h).rev() {
                for i in (0..w).rev() {
                    solve_pixel(f, variant, dims, (j, i), z, x, &mut acc);
                }
            }
        }
    }
}

/// Returns `x` with `conv2d(x, f, Zero) == z` for an autoregressive filter `f`.
pub fn solve_autoregressive(z: &Tensor4, f: &Filter, variant: MaskVariant) -> Result<Tensor4> {
    solve_autoregressive_with(z, f, variant, BatchMode::Parallel)
}

pub fn solve_autoregressive_with(z: &Tensor4, f: &Filter, variant: MaskVariant, mode: BatchMode) -> Result<Tensor4> {
    validate(z, f, variant)?;
    let (n, c, h, w) = z.shape();
    let el = z.example_len();
    let mut x = Tensor4::zeros(n, c, h, w);
    if el == 0 {
        return Ok(x);
    }
    let dims = (c, h, w);
    match mode {
        BatchMode::Sequential => {
            for (xe, ze) in x.data_mut().chunks_mut(el).zip(z.data().chunks(el)) {
                solve_example(f, variant, dims, ze, xe);
            }
        }
        BatchMode::Parallel => {
            x.data_mut()
                .par_chunks_mut(el)
                .zip(z.data().par_chunks(el))
                .for_each(|(xe, ze)| solve_example(f, variant, dims, ze, xe));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convkit::conv::conv2d;
    use crate::convkit::dense::dense_operator;
    use crate::convkit::filter::{build_autoregressive_mask, Boundary};
    use crate::numerics::inverse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_masked(variant: MaskVariant, p: usize, c: usize, rng: &mut ChaCha8Rng) -> Filter {
        let mask = build_autoregressive_mask(variant, p, c).unwrap();
        let mut w =
            Filter::new(c, c, p, p, (0..c * c * p * p).map(|_| rng.random_range(-0.5..0.5)).collect(), mask.pad())
                .unwrap();
        let (my, mx) = variant.center(p);
        for ch in 0..c {
            *w.tap_mut(ch, ch, my, mx) = rng.random_range(0.8..1.5) * if rng.random() { 1.0 } else { -1.0 };
        }
        w.masked(&mask).unwrap()
    }

    #[test]
    fn identity_filter_returns_input() {
        let z = Tensor4::from_fn(2, 2, 3, 3, |b, c, y, x| (b + c * 3 + y * 5 + x) as f64);
        for variant in [MaskVariant::Lower, MaskVariant::Upper] {
            let f = Filter::delta(2, 2, 2, variant.center(2), variant.padding(2)).unwrap();
            assert_eq!(solve_autoregressive(&z, &f, variant).unwrap(), z);
        }
    }

    #[test]
    fn roundtrip_and_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for variant in [MaskVariant::Lower, MaskVariant::Upper] {
            let f = random_masked(variant, 2, 2, &mut rng);
            let x = Tensor4::from_fn(3, 2, 4, 4, |_, _, _, _| rng.random_range(-1.0..1.0));
            let z = conv2d(&x, &f, Boundary::Zero).unwrap();
            let back = solve_autoregressive(&z, &f, variant).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-9);

            let minv = inverse(dense_operator(&f, 4, 4, Boundary::Zero).unwrap().matrix()).unwrap();
            for b in 0..3 {
                let dense = minv.matvec(&z.raster(b)).unwrap();
                let err = dense.iter().zip(back.raster(b)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-8);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_masked(MaskVariant::Upper, 3, 3, &mut rng);
        let z = Tensor4::from_fn(5, 3, 5, 4, |_, _, _, _| rng.random_range(-1.0..1.0));
        let a = solve_autoregressive_with(&z, &f, MaskVariant::Upper, BatchMode::Sequential).unwrap();
        let b = solve_autoregressive_with(&z, &f, MaskVariant::Upper, BatchMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_diagonal_names_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = random_masked(MaskVariant::Lower, 2, 3, &mut rng);
        *f.tap_mut(1, 1, 1, 1) = 0.0;
        let z = Tensor4::zeros(1, 3, 3, 3);
        assert!(matches!(solve_autoregressive(&z, &f, MaskVariant::Lower), Err(Error::ZeroDiagonalTap { channel: 1 })));
    }

    #[test]
    fn wrong_alignment_rejected() {
        let f = Filter::delta(1, 2, 2, (1, 1), MaskVariant::Lower.padding(2)).unwrap();
        let z = Tensor4::zeros(1, 1, 3, 3);
        assert!(solve_autoregressive(&z, &f, MaskVariant::Upper).is_err());
    }
}
