//! Explicit matrices of convolution layers, used as verification oracles.

use super::filter::{Boundary, Filter};
use super::tensor::{raster_index, Tensor4};
use crate::error::{Error, Result};
use crate::numerics::{lu_slogdet, RMatrix};

/// `(c_out·h·w) × (c_in·h·w)` matrix of a convolution under raster order.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    matrix: RMatrix,
    boundary: Boundary,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
}

impl DenseOperator {
    /// Wraps an arbitrary square raster-order operator on `(c, h, w)` signals.
    pub fn from_matrix(matrix: RMatrix, c: usize, h: usize, w: usize, boundary: Boundary) -> Result<Self> {
        if matrix.rows() != c * h * w || matrix.cols() != c * h * w {
            return Err(Error::shape("dense operator size does not match signal shape"));
        }
        Ok(DenseOperator { matrix, boundary, c_in: c, c_out: c, h, w })
    }

    pub fn matrix(&self) -> &RMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> RMatrix {
        self.matrix
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// `M · vec(x)` for every example.
    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        let (n, c, h, w) = x.shape();
        if (c, h, w) != (self.c_in, self.h, self.w) {
            return Err(Error::shape("tensor does not match dense operator"));
        }
        let mut outs = Vec::with_capacity(n);
        for b in 0..n {
            let z = self.matrix.matvec(&x.raster(b))?;
            outs.push(Tensor4::from_raster(self.c_out, h, w, &z)?);
        }
        Tensor4::stack(&outs)
    }

    /// `M₁ · M₂`: applying `rhs` first, then `self`.
    pub fn compose(&self, rhs: &DenseOperator) -> Result<DenseOperator> {
        if rhs.c_out != self.c_in || (rhs.h, rhs.w) != (self.h, self.w) {
            return Err(Error::shape("cannot compose dense operators of different geometry"));
        }
        Ok(DenseOperator {
            matrix: self.matrix.matmul(&rhs.matrix)?,
            boundary: self.boundary,
            c_in: rhs.c_in,
            c_out: self.c_out,
            h: self.h,
            w: self.w,
        })
    }

    /// `log |det M|` (square operators only).
    pub fn log_abs_det(&self) -> Result<f64> {
        Ok(lu_slogdet(&self.matrix)?.log_abs)
    }
}

/// Matrix `M` with `vec(conv2d(x, f, boundary)) == M · vec(x)` on `h × w` images.
pub fn dense_operator(f: &Filter, h: usize, w: usize, boundary: Boundary) -> Result<DenseOperator> {
    let (co_n, ci_n) = (f.c_out(), f.c_in());
    let pad = f.pad();
    let mut m = RMatrix::zeros(co_n * h * w, ci_n * h * w);
    for j in 0..h {
        for i in 0..w {
            for dy in 0..f.kh() {
                for dx in 0..f.kw() {
                    let sy = j as isize + dy as isize - pad.top as isize;
                    let sx = i as isize + dx as isize - pad.left as isize;
                    let (sy, sx) = match boundary {
                        Boundary::Zero => {
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            (sy as usize, sx as usize)
                        }
                        Boundary::Wrap => (sy.rem_euclid(h as isize) as usize, sx.rem_euclid(w as isize) as usize),
                    };
                    for co in 0..co_n {
                        let row = raster_index(co, i, j, co_n, w);
                        for ci in 0..ci_n {
                            let col = raster_index(ci, sx, sy, ci_n, w);
                            m[(row, col)] += f.tap(co, ci, dy, dx);
                        }
                    }
                }
            }
        }
    }
    Ok(DenseOperator { matrix: m, boundary, c_in: ci_n, c_out: co_n, h, w })
}
