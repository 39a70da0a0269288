//! Separable 2-D discrete Fourier transforms by direct summation.
//!
//! Forward transforms are unnormalized; inverse transforms carry the `1/(h·w)` factor.
//! Sizes in this crate stay at or below 32×32, where the O(hw·(h+w)) direct sums are
//! cheap and exact enough.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::matrix::RMatrix;
use crate::error::{Error, Result};

/// Imaginary residue above which an inverse transform is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Complex `h × w` plane indexed by frequency `(u, v)` (or by position, for complex signals).
#[derive(Clone, Debug, PartialEq)]
pub struct CPlane {
    h: usize,
    w: usize,
    data: Vec<Complex64>,
}

impl CPlane {
    pub fn zeros(h: usize, w: usize) -> Self {
        CPlane { h, w, data: vec![Complex64::new(0.0, 0.0); h * w] }
    }

    pub fn new(h: usize, w: usize, data: Vec<Complex64>) -> Result<Self> {
        if h * w != data.len() {
            return Err(Error::shape(format!("{h}x{w} plane needs {} entries, got {}", h * w, data.len())));
        }
        Ok(CPlane { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.w + v]
    }

    pub fn set(&mut self, u: usize, v: usize, value: Complex64) {
        self.data[u * self.w + v] = value;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
}

/// Precomputed twiddle tables for one `h × w` plane size.
#[derive(Clone, Debug)]
pub struct Dft2Plan {
    h: usize,
    w: usize,
    // exp(-2πi·k/h) for k in 0..h
    tw_h: Vec<Complex64>,
    tw_w: Vec<Complex64>,
}

fn twiddles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            Complex64::new(a.cos(), a.sin())
        })
        .collect()
}

impl Dft2Plan {
    pub fn new(h: usize, w: usize) -> Self {
        assert!(h >= 1 && w >= 1, "DFT plane must be at least 1x1");
        Dft2Plan { h, w, tw_h: twiddles(h), tw_w: twiddles(w) }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Unnormalized forward transform of a real plane given row-major.
    pub fn forward_real(&self, plane: &[f64]) -> CPlane {
        assert_eq!(plane.len(), self.h * self.w);
        let mut buf: Vec<Complex64> = plane.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, false);
        CPlane { h: self.h, w: self.w, data: buf }
    }

    /// Unnormalized forward transform of a complex plane.
    pub fn forward(&self, plane: &CPlane) -> CPlane {
        let mut buf = plane.data.clone();
        self.transform(&mut buf, false);
        CPlane { h: self.h, w: self.w, data: buf }
    }

    /// Inverse transform (with `1/(h·w)`), keeping the complex result.
    pub fn inverse_complex(&self, spectrum: &CPlane) -> CPlane {
        let mut buf = spectrum.data.clone();
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.h * self.w) as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
        CPlane { h: self.h, w: self.w, data: buf }
    }

    /// Inverse transform of a Hermitian spectrum into `out`, returning the largest
    /// imaginary residue. No tolerance check.
    pub fn inverse_real_into(&self, spectrum: &CPlane, out: &mut [f64]) -> f64 {
        let z = self.inverse_complex(spectrum);
        let mut residue: f64 = 0.0;
        for (o, v) in out.iter_mut().zip(&z.data) {
            *o = v.re;
            residue = residue.max(v.im.abs());
        }
        residue
    }

    /// In-place separable transform: rows (length w) then columns (length h).
    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let conj = |z: Complex64| if inverse { z.conj() } else { z };
        let mut scratch = vec![Complex64::new(0.0, 0.0); h.max(w)];
        if w > 1 {
            for r in 0..h {
                let row = &mut buf[r * w..(r + 1) * w];
                for (k, s) in scratch[..w].iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (n, &x) in row.iter().enumerate() {
                        acc += x * conj(self.tw_w[(k * n) % w]);
                    }
                    *s = acc;
                }
                row.copy_from_slice(&scratch[..w]);
            }
        }
        if h > 1 {
            for c in 0..w {
                for (k, s) in scratch[..h].iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in 0..h {
                        acc += buf[n * w + c] * conj(self.tw_h[(k * n) % h]);
                    }
                    *s = acc;
                }
                for k in 0..h {
                    buf[k * w + c] = scratch[k];
                }
            }
        }
    }
}

/// Unnormalized 2-D DFT of a real `h × w` plane.
pub fn dft2(plane: &RMatrix) -> CPlane {
    Dft2Plan::new(plane.rows(), plane.cols()).forward_real(plane.as_slice())
}

/// Inverse of [`dft2`]. Rejects spectra whose inverse has imaginary residue above
/// [`HERMITIAN_TOL`].
pub fn idft2(spectrum: &CPlane) -> Result<RMatrix> {
    let plan = Dft2Plan::new(spectrum.h, spectrum.w);
    let mut out = vec![0.0; spectrum.h * spectrum.w];
    let residue = plan.inverse_real_into(spectrum, &mut out);
    if residue > HERMITIAN_TOL {
        return Err(Error::NonHermitian { residue });
    }
    RMatrix::new(spectrum.h, spectrum.w, out)
}
