//! Cross-correlation layers (`⋆_l`) and their adjoints.

use rayon::prelude::*;

use super::filter::{Boundary, Filter, Padding};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Everything a kernel needs besides the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: Padding,
    pub h: usize,
    pub w: usize,
    pub boundary: Boundary,
}

impl ConvGeom {
    pub fn for_filter(f: &Filter, h: usize, w: usize, boundary: Boundary) -> Self {
        ConvGeom { c_in: f.c_in(), c_out: f.c_out(), kh: f.kh(), kw: f.kw(), pad: f.pad(), h, w, boundary }
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h * self.w
    }

    pub fn taps_len(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw
    }
}

/// Runs of `(dst_start, src_start, len)` with `src = dst + off`, clipped (zero) or wrapped.
#[inline]
fn segments(off: isize, n: usize, boundary: Boundary) -> ([(usize, usize, usize); 2], usize) {
    let none = (0, 0, 0);
    let ni = n as isize;
    match boundary {
        Boundary::Zero => {
            let start = (-off).max(0);
            let end = (ni - off).min(ni);
            if end <= start {
                ([none, none], 0)
            } else {
                ([(start as usize, (start + off) as usize, (end - start) as usize), none], 1)
            }
        }
        Boundary::Wrap => {
            let s0 = off.rem_euclid(ni) as usize;
            if s0 == 0 {
                ([(0, 0, n), none], 1)
            } else {
                ([(0, s0, n - s0), (n - s0, 0, s0)], 2)
            }
        }
    }
}

/// Visits every `(tap index, dst pixel run, src pixel run)` triple of one channel pair.
#[inline]
fn for_each_run(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize)) {
    // f(tap_yx, dst_offset, src_offset, len)
    for dy in 0..g.kh {
        let oy = dy as isize - g.pad.top as isize;
        let (rows, nr) = segments(oy, g.h, g.boundary);
        for dx in 0..g.kw {
            let ox = dx as isize - g.pad.left as isize;
            let (cols, nc) = segments(ox, g.w, g.boundary);
            for &(j0, sy0, rlen) in &rows[..nr] {
                for k in 0..rlen {
                    let (j, sy) = (j0 + k, sy0 + k);
                    for &(i0, sx0, clen) in &cols[..nc] {
                        f(dy * g.kw + dx, j * g.w + i0, sy * g.w + sx0, clen);
                    }
                }
            }
        }
    }
}

fn forward_example(g: &ConvGeom, x: &[f64], taps: &[f64], out: &mut [f64]) {
    let hw = g.h * g.w;
    let ksz = g.kh * g.kw;
    for co in 0..g.c_out {
        let oplane = &mut out[co * hw..(co + 1) * hw];
        for ci in 0..g.c_in {
            let xplane = &x[ci * hw..(ci + 1) * hw];
            let tbase = (co * g.c_in + ci) * ksz;
            for_each_run(g, |t, d, s, len| {
                let tap = taps[tbase + t];
                if tap != 0.0 {
                    for (o, &xv) in oplane[d..d + len].iter_mut().zip(&xplane[s..s + len]) {
                        *o += tap * xv;
                    }
                }
            });
        }
    }
}

fn adjoint_example(g: &ConvGeom, gz: &[f64], taps: &[f64], gx: &mut [f64]) {
    let hw = g.h * g.w;
    let ksz = g.kh * g.kw;
    for co in 0..g.c_out {
        let gplane = &gz[co * hw..(co + 1) * hw];
        for ci in 0..g.c_in {
            let xplane = &mut gx[ci * hw..(ci + 1) * hw];
            let tbase = (co * g.c_in + ci) * ksz;
            for_each_run(g, |t, d, s, len| {
                let tap = taps[tbase + t];
                if tap != 0.0 {
                    for (xv, &gv) in xplane[s..s + len].iter_mut().zip(&gplane[d..d + len]) {
                        *xv += tap * gv;
                    }
                }
            });
        }
    }
}

fn filter_grad_example(g: &ConvGeom, gz: &[f64], x: &[f64], gf: &mut [f64]) {
    let hw = g.h * g.w;
    let ksz = g.kh * g.kw;
    for co in 0..g.c_out {
        let gplane = &gz[co * hw..(co + 1) * hw];
        for ci in 0..g.c_in {
            let xplane = &x[ci * hw..(ci + 1) * hw];
            let tbase = (co * g.c_in + ci) * ksz;
            for_each_run(g, |t, d, s, len| {
                let acc: f64 = gplane[d..d + len].iter().zip(&xplane[s..s + len]).map(|(a, b)| a * b).sum();
                gf[tbase + t] += acc;
            });
        }
    }
}

/// `n` examples of `g.in_len()` values each → `n × g.out_len()` outputs.
pub fn conv2d_raw(g: &ConvGeom, x: &[f64], taps: &[f64]) -> Vec<f64> {
    debug_assert_eq!(taps.len(), g.taps_len());
    let n = x.len() / g.in_len().max(1);
    let mut out = vec![0.0; n * g.out_len()];
    if g.out_len() == 0 || g.in_len() == 0 {
        return out;
    }
    out.par_chunks_mut(g.out_len()).zip(x.par_chunks(g.in_len())).for_each(|(o, xe)| forward_example(g, xe, taps, o));
    out
}

/// Adjoint (transpose) of [`conv2d_raw`] with respect to the input.
pub fn conv2d_adjoint_raw(g: &ConvGeom, gz: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = gz.len() / g.out_len().max(1);
    let mut gx = vec![0.0; n * g.in_len()];
    if g.out_len() == 0 || g.in_len() == 0 {
        return gx;
    }
    gx.par_chunks_mut(g.in_len())
        .zip(gz.par_chunks(g.out_len()))
        .for_each(|(gxe, gze)| adjoint_example(g, gze, taps, gxe));
    gx
}

/// Gradient of `⟨gz, conv2d(x, f)⟩` with respect to the taps. Per-example partials are
/// summed in batch order, so the result does not depend on the thread count.
pub fn conv2d_filter_grad_raw(g: &ConvGeom, gz: &[f64], x: &[f64]) -> Vec<f64> {
    let nt = g.taps_len();
    if g.out_len() == 0 || g.in_len() == 0 {
        return vec![0.0; nt];
    }
    let partials: Vec<Vec<f64>> = gz
        .par_chunks(g.out_len())
        .zip(x.par_chunks(g.in_len()))
        .map(|(gze, xe)| {
            let mut gf = vec![0.0; nt];
            filter_grad_example(g, gze, xe, &mut gf);
            gf
        })
        .collect();
    let mut total = vec![0.0; nt];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// `z[n, co, j, i] = Σ f[co, ci, dy, dx] · x_padded[n, ci, j+dy, i+dx]`.
pub fn conv2d(x: &Tensor4, f: &Filter, boundary: Boundary) -> Result<Tensor4> {
    let (n, c, h, w) = x.shape();
    if f.c_in() != c {
        return Err(Error::shape(format!("filter expects {} input channels, tensor has {c}", f.c_in())));
    }
    if !f.pad().preserves_size(f.kh(), f.kw()) {
        return Err(Error::invalid("filter padding does not preserve spatial size"));
    }
    let g = ConvGeom::for_filter(f, h, w, boundary);
    Tensor4::new(n, f.c_out(), h, w, conv2d_raw(&g, x.data(), f.taps()))
}
