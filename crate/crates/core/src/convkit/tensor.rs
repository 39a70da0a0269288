use crate::error::{Error, Result};

/// Rank-4 real array in N-C-H-W order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n * c * h * w != data.len() {
            return Err(Error::shape(format!(
                "tensor ({n},{c},{h},{w}) needs {} entries, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_fn(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Tensor4 { n, c, h, w, data }
    }

    /// `(n, c, h, w)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Elements per example.
    pub fn example_len(&self) -> usize {
        self.c * self.h * self.w
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

    #[inline]
    pub fn offset(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, b: usize, ch: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(b, ch, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, value: f64) {
        let o = self.offset(b, ch, y, x);
        self.data[o] = value;
    }

    pub fn example(&self, b: usize) -> &[f64] {
        let len = self.example_len();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn example_mut(&mut self, b: usize) -> &mut [f64] {
        let len = self.example_len();
        &mut self.data[b * len..(b + 1) * len]
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff on mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Example `b` flattened in raster order `t = c + n_c·i + (n_c·w)·j`.
    pub fn raster(&self, b: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.example_len()];
        for ch in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    v[raster_index(ch, x, y, self.c, self.w)] = self.at(b, ch, y, x);
                }
            }
        }
        v
    }

    /// Single-example tensor from a raster-ordered vector.
    pub fn from_raster(c: usize, h: usize, w: usize, v: &[f64]) -> Result<Self> {
        if v.len() != c * h * w {
            return Err(Error::shape(format!("raster vector length {} for ({c},{h},{w})", v.len())));
        }
        Ok(Tensor4::from_fn(1, c, h, w, |_, ch, y, x| v[raster_index(ch, x, y, c, w)]))
    }

    /// Stacks single examples along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let (_, c, h, w) = first.shape();
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if (t.c, t.h, t.w) != (c, h, w) {
                return Err(Error::shape("stacked tensors differ in shape"));
            }
            n += t.n;
            data.extend_from_slice(&t.data);
        }
        Tensor4::new(n, c, h, w, data)
    }

    /// Examples `start..start+len` as a new tensor.
    pub fn slice_batch(&self, start: usize, len: usize) -> Tensor4 {
        let el = self.example_len();
        Tensor4 { n: len, c: self.c, h: self.h, w: self.w, data: self.data[start * el..(start + len) * el].to_vec() }
    }

    /// Channels `start..start+len` of every example.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor4> {
        if start + len > self.c {
            return Err(Error::shape(format!("channel slice {start}+{len} exceeds {} channels", self.c)));
        }
        let hw = self.h * self.w;
        let mut data = Vec::with_capacity(self.n * len * hw);
        for b in 0..self.n {
            let base = b * self.c * hw;
            data.extend_from_slice(&self.data[base + start * hw..base + (start + len) * hw]);
        }
        Tensor4::new(self.n, len, self.h, self.w, data)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
            return Err(Error::shape("channel concat of tensors with different batch/spatial shape"));
        }
        let hw = a.h * a.w;
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for e in 0..a.n {
            data.extend_from_slice(&a.data[e * a.c * hw..(e + 1) * a.c * hw]);
            data.extend_from_slice(&b.data[e * b.c * hw..(e + 1) * b.c * hw]);
        }
        Tensor4::new(a.n, a.c + b.c, a.h, a.w, data)
    }

    /// 2×2 space-to-depth: `(c, h, w) → (4c, h/2, w/2)`, sub-pixels ordered TL, TR, BL, BR
    /// within each input channel.
    pub fn space_to_depth(&self) -> Result<Tensor4> {
        if !self.h.is_multiple_of(2) || !self.w.is_multiple_of(2) {
            return Err(Error::shape(format!("squeeze needs even spatial dims, got {}x{}", self.h, self.w)));
        }
        let (h2, w2) = (self.h / 2, self.w / 2);
        Ok(Tensor4::from_fn(self.n, self.c * 4, h2, w2, |b, co, y, x| {
            let (ci, sub) = (co / 4, co % 4);
            self.at(b, ci, 2 * y + sub / 2, 2 * x + sub % 2)
        }))
    }

    /// Inverse of [`Tensor4::space_to_depth`].
    pub fn depth_to_space(&self) -> Result<Tensor4> {
        if !self.c.is_multiple_of(4) {
            return Err(Error::shape(format!("unsqueeze needs channels divisible by 4, got {}", self.c)));
        }
        Ok(Tensor4::from_fn(self.n, self.c / 4, self.h * 2, self.w * 2, |b, ci, y, x| {
            self.at(b, ci * 4 + (y % 2) * 2 + x % 2, y / 2, x / 2)
        }))
    }
}

/// Raster position of channel `c` at column `i`, row `j`.
#[inline]
pub fn raster_index(c: usize, i: usize, j: usize, n_c: usize, w: usize) -> usize {
    c + n_c * i + n_c * w * j
}
