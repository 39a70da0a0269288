use crate::convkit::Tensor4;
use crate::error::{Error, Result};
use crate::numerics::RMatrix;

/// Dense real array of arbitrary rank, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {n} entries, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected a rank-4 tensor, got {:?}", self.shape))),
        }
    }

    pub fn to_tensor4(&self) -> Result<Tensor4> {
        let (n, c, h, w) = self.dims4()?;
        Tensor4::new(n, c, h, w, self.data.clone())
    }

    pub fn to_matrix(&self) -> Result<RMatrix> {
        match self.shape[..] {
            [r, c] => RMatrix::new(r, c, self.data.clone()),
            _ => Err(Error::shape(format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl From<Tensor4> for Tensor {
    fn from(t: Tensor4) -> Self {
        let (n, c, h, w) = t.shape();
        Tensor { shape: vec![n, c, h, w], data: t.into_data() }
    }
}

impl From<&Tensor4> for Tensor {
    fn from(t: &Tensor4) -> Self {
        let (n, c, h, w) = t.shape();
        Tensor { shape: vec![n, c, h, w], data: t.data().to_vec() }
    }
}

impl From<RMatrix> for Tensor {
    fn from(m: RMatrix) -> Self {
        Tensor { shape: vec![m.rows(), m.cols()], data: m.into_vec() }
    }
}

impl From<&RMatrix> for Tensor {
    fn from(m: &RMatrix) -> Self {
        Tensor { shape: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
    }
}
