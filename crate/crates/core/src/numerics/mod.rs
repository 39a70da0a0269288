//! Dense real/complex linear algebra and 2-D DFTs.

mod dft;
mod householder;
mod matrix;

pub use dft::{dft2, idft2, CPlane, Dft2Plan, HERMITIAN_TOL};
pub use householder::{householder_orthogonal, householder_reflection, MIN_REFLECTOR_NORM};
pub use matrix::{inverse, lu_slogdet, solve, CMatrix, Lu, Matrix, RMatrix, Scalar, SlogDet, PIVOT_EPS};
