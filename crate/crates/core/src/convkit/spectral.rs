//! Wrap-around convolutions in the frequency domain.
//!
//! A cross-correlation with wrap-around boundaries is a circular convolution with the
//! reflected filter. Embedding the reflected taps into an `h × w` plane per channel pair and
//! transforming gives, at every frequency `(u, v)`, a `c_out × c_in` complex matrix `Ŵ_uv`
//! that maps `x̂[:, u, v]` to `ẑ[:, u, v]`.

use num_complex::Complex64;
use rayon::prelude::*;

use super::filter::Filter;
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CPlane, Dft2Plan, Lu};

/// Row/column of tap `(dy, dx)` inside the circular kernel plane. Several taps share a
/// location when the kernel is larger than the image.
#[inline]
fn embed_position(f: &Filter, dy: usize, dx: usize, h: usize, w: usize) -> (usize, usize) {
    let pad = f.pad();
    let y = (pad.top as isize - dy as isize).rem_euclid(h as isize) as usize;
    let x = (pad.left as isize - dx as isize).rem_euclid(w as isize) as usize;
    (y, x)
}

/// Per-frequency channel matrices `Ŵ_uv`, indexed `u·w + v`.
pub fn frequency_matrices(f: &Filter, plan: &Dft2Plan) -> Vec<CMatrix> {
    let (h, w) = (plan.height(), plan.width());
    let (co_n, ci_n) = (f.c_out(), f.c_in());
    let mut spectra = Vec::with_capacity(co_n * ci_n);
    let mut plane = vec![0.0; h * w];
    for co in 0..co_n {
        for ci in 0..ci_n {
            plane.iter_mut().for_each(|v| *v = 0.0);
            for dy in 0..f.kh() {
                for dx in 0..f.kw() {
                    let (y, x) = embed_position(f, dy, dx, h, w);
                    plane[y * w + x] += f.tap(co, ci, dy, dx);
                }
            }
            spectra.push(plan.forward_real(&plane));
        }
    }
    (0..h * w)
        .map(|uv| {
            let data = spectra.iter().map(|s| s.as_slice()[uv]).collect();
            CMatrix::new(co_n, ci_n, data).expect("spectrum count matches channel pairs")
        })
        .collect()
}

/// Applies per-frequency matrices to `n` examples of `c_in·h·w` reals.
pub fn apply_frequency_matrices(plan: &Dft2Plan, mats: &[CMatrix], c_in: usize, c_out: usize, x: &[f64]) -> Vec<f64> {
    let hw = plan.height() * plan.width();
    let in_len = c_in * hw;
    let out_len = c_out * hw;
    let n = x.len().checked_div(in_len).unwrap_or(0);
    let mut out = vec![0.0; n * out_len];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(out_len).zip(x.par_chunks(in_len)).for_each(|(o, xe)| {
        let xs: Vec<CPlane> = (0..c_in).map(|ci| plan.forward_real(&xe[ci * hw..(ci + 1) * hw])).collect();
        let mut zs = vec![CPlane::zeros(plan.height(), plan.width()); c_out];
        for (uv, m) in mats.iter().enumerate() {
            for co in 0..c_out {
                let row = m.row(co);
                let mut acc = Complex64::new(0.0, 0.0);
                for ci in 0..c_in {
                    acc += row[ci] * xs[ci].as_slice()[uv];
                }
                zs[co].as_mut_slice()[uv] = acc;
            }
        }
        for (co, z) in zs.iter().enumerate() {
            plan.inverse_real_into(z, &mut o[co * hw..(co + 1) * hw]);
        }
    });
    out
}

/// Wrap-boundary convolution evaluated through the frequency domain.
pub fn periodic_conv_raw(f: &Filter, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let plan = Dft2Plan::new(h, w);
    let mats = frequency_matrices(f, &plan);
    apply_frequency_matrices(&plan, &mats, f.c_in(), f.c_out(), x)
}

/// `Σ_uv log |det Ŵ_uv|`; `-inf` when any frequency is singular.
pub fn periodic_logdet(f: &Filter, h: usize, w: usize) -> Result<f64> {
    let plan = Dft2Plan::new(h, w);
    let mut total = 0.0;
    for m in frequency_matrices(f, &plan) {
        total += Lu::factor(&m)?.slogdet().log_abs;
    }
    Ok(total)
}

/// Inverses `Ŵ_uv⁻¹` for every frequency, or the first singular frequency.
pub fn inverse_frequency_matrices(f: &Filter, plan: &Dft2Plan) -> Result<Vec<CMatrix>> {
    let w = plan.width();
    frequency_matrices(f, plan)
        .iter()
        .enumerate()
        .map(|(uv, m)| Lu::factor(m)?.inverse().map_err(|_| Error::SingularFrequency { u: uv / w, v: uv % w }))
        .collect()
}

/// Gradient of `Σ_uv log |det Ŵ_uv|` with respect to the filter taps.
///
/// `∂ log|det A| = Re tr(A⁻¹ dA)`, so each embedded kernel entry receives
/// `Σ_uv Re((Ŵ_uv⁻¹)[ci, co] · e^{-2πi(uy/h + vx/w)})`, i.e. the real part of a forward DFT of
/// the transposed inverses.
pub fn periodic_logdet_grad(f: &Filter, h: usize, w: usize) -> Result<Vec<f64>> {
    let plan = Dft2Plan::new(h, w);
    let inv = inverse_frequency_matrices(f, &plan)?;
    let (co_n, ci_n) = (f.c_out(), f.c_in());
    let mut grad = vec![0.0; f.taps().len()];
    for co in 0..co_n {
        for ci in 0..ci_n {
            let data = inv.iter().map(|m| m[(ci, co)]).collect();
            let plane = plan.forward(&CPlane::new(h, w, data)?);
            for dy in 0..f.kh() {
                for dx in 0..f.kw() {
                    let (y, x) = embed_position(f, dy, dx, h, w);
                    grad[f.index(co, ci, dy, dx)] = plane.get(y, x).re;
                }
            }
        }
    }
    Ok(grad)
}
