use crate::error::{Error, Result};
use crate::numerics::RMatrix;

/// Zero-padding (or wrap offsets) around the input, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding { top: 0, bottom: 0, left: 0, right: 0 };

    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Padding { top, bottom, left, right }
    }

    /// Centered "same" padding; the extra pixel of an even extent goes to bottom/right.
    pub fn centered(kh: usize, kw: usize) -> Self {
        let top = (kh - 1) / 2;
        let left = (kw - 1) / 2;
        Padding { top, bottom: kh - 1 - top, left, right: kw - 1 - left }
    }

    /// Whether this padding keeps the output the same size as the input.
    pub fn preserves_size(&self, kh: usize, kw: usize) -> bool {
        self.top + self.bottom + 1 == kh && self.left + self.right + 1 == kw
    }
}

/// How the convolution treats pixels outside the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Zero,
    Wrap,
}

/// Direction of an autoregressive mask relative to raster order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskVariant {
    /// Depends on the current and earlier pixels; lower-triangular operator.
    Lower,
    /// Depends on the current and later pixels; upper-triangular operator.
    Upper,
}

impl MaskVariant {
    /// Padding that places the output pixel at the bottom-right (LOWER) or top-left (UPPER) tap.
    pub fn padding(self, p: usize) -> Padding {
        match self {
            MaskVariant::Lower => Padding::new(p - 1, 0, p - 1, 0),
            MaskVariant::Upper => Padding::new(0, p - 1, 0, p - 1),
        }
    }

    /// `(m_y, m_x)`: the tap aligned with the output pixel.
    pub fn center(self, p: usize) -> (usize, usize) {
        match self {
            MaskVariant::Lower => (p - 1, p - 1),
            MaskVariant::Upper => (0, 0),
        }
    }
}

/// Convolution filter `(c_out, c_in, kh, kw)` with its padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    taps: Vec<f64>,
    pad: Padding,
}

impl Filter {
    pub fn new(c_out: usize, c_in: usize, kh: usize, kw: usize, taps: Vec<f64>, pad: Padding) -> Result<Self> {
        if taps.len() != c_out * c_in * kh * kw {
            return Err(Error::shape(format!(
                "filter ({c_out},{c_in},{kh},{kw}) needs {} taps, got {}",
                c_out * c_in * kh * kw,
                taps.len()
            )));
        }
        if !pad.preserves_size(kh, kw) {
            return Err(Error::invalid(format!("padding {pad:?} does not preserve size for {kh}x{kw} kernel")));
        }
        Ok(Filter { c_out, c_in, kh, kw, taps, pad })
    }

    pub fn zeros(c_out: usize, c_in: usize, kh: usize, kw: usize, pad: Padding) -> Result<Self> {
        Filter::new(c_out, c_in, kh, kw, vec![0.0; c_out * c_in * kh * kw], pad)
    }

    /// 1×1 filter with the given channel-mixing matrix.
    pub fn from_matrix(m: &RMatrix) -> Self {
        Filter { c_out: m.rows(), c_in: m.cols(), kh: 1, kw: 1, taps: m.as_slice().to_vec(), pad: Padding::NONE }
    }

    /// Identity channel matrix at tap `center` of a `kh × kw` filter.
    pub fn delta(c: usize, kh: usize, kw: usize, center: (usize, usize), pad: Padding) -> Result<Self> {
        let mut f = Filter::zeros(c, c, kh, kw, pad)?;
        for ch in 0..c {
            *f.tap_mut(ch, ch, center.0, center.1) = 1.0;
        }
        Ok(f)
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn pad(&self) -> Padding {
        self.pad
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    #[inline]
    pub fn index(&self, co: usize, ci: usize, y: usize, x: usize) -> usize {
        ((co * self.c_in + ci) * self.kh + y) * self.kw + x
    }

    #[inline]
    pub fn tap(&self, co: usize, ci: usize, y: usize, x: usize) -> f64 {
        self.taps[self.index(co, ci, y, x)]
    }

    #[inline]
    pub fn tap_mut(&mut self, co: usize, ci: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.index(co, ci, y, x);
        &mut self.taps[i]
    }

    /// Elementwise product with a same-shaped mask (`k = w ⊙ m`).
    pub fn masked(&self, mask: &Filter) -> Result<Filter> {
        if (self.c_out, self.c_in, self.kh, self.kw) != (mask.c_out, mask.c_in, mask.kh, mask.kw) {
            return Err(Error::shape("mask shape differs from filter"));
        }
        let taps = self.taps.iter().zip(&mask.taps).map(|(w, m)| w * m).collect();
        Ok(Filter { taps, ..self.clone() })
    }

    pub fn max_abs_diff(&self, other: &Filter) -> f64 {
        assert_eq!(self.taps.len(), other.taps.len());
        self.taps.iter().zip(&other.taps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Binary mask for a `p × p` autoregressive filter over `c` channels.
///
/// Every off-center tap is free. At the center tap the channel block is lower
/// (LOWER) or upper (UPPER) triangular including the diagonal.
pub fn build_autoregressive_mask(variant: MaskVariant, p: usize, c: usize) -> Result<Filter> {
    if p == 0 || c == 0 {
        return Err(Error::invalid("mask extent and channel count must be positive"));
    }
    let (my, mx) = variant.center(p);
    let mut mask = Filter::new(c, c, p, p, vec![1.0; c * c * p * p], variant.padding(p))?;
    for co in 0..c {
        for ci in 0..c {
            let allowed = match variant {
                MaskVariant::Lower => ci <= co,
                MaskVariant::Upper => ci >= co,
            };
            if !allowed {
                *mask.tap_mut(co, ci, my, mx) = 0.0;
            }
        }
    }
    Ok(mask)
}

/// Single filter equivalent to applying `k1` and then `k2`.
///
/// The result realizes `conv(conv(x, k1), k2) == conv(x, combine_filters(k2, k1))` exactly for
/// wrap-around boundaries, and for zero boundaries wherever the intermediate signal does not
/// reach past the image border.
pub fn combine_filters(k2: &Filter, k1: &Filter) -> Result<Filter> {
    if k2.c_in != k1.c_out {
        return Err(Error::shape(format!(
            "cannot chain filter with {} outputs into filter with {} inputs",
            k1.c_out, k2.c_in
        )));
    }
    let (co_n, mid, ci_n) = (k2.c_out, k2.c_in, k1.c_in);
    let kh = k1.kh + k2.kh - 1;
    let kw = k1.kw + k2.kw - 1;
    let pad = Padding::new(
        k1.pad.top + k2.pad.top,
        k1.pad.bottom + k2.pad.bottom,
        k1.pad.left + k2.pad.left,
        k1.pad.right + k2.pad.right,
    );
    let mut out = Filter::zeros(co_n, ci_n, kh, kw, pad)?;
    for co in 0..co_n {
        for m in 0..mid {
            for y2 in 0..k2.kh {
                for x2 in 0..k2.kw {
                    let a = k2.tap(co, m, y2, x2);
                    if a == 0.0 {
                        continue;
                    }
                    for ci in 0..ci_n {
                        for y1 in 0..k1.kh {
                            for x1 in 0..k1.kw {
                                *out.tap_mut(co, ci, y1 + y2, x1 + x2) += a * k1.tap(m, ci, y1, x1);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_1x1_is_triangular_channel_matrix() {
        let m = build_autoregressive_mask(MaskVariant::Lower, 1, 2).unwrap();
        assert_eq!(m.taps(), &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(m.taps().iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn lower_2x2_single_channel() {
        let m = build_autoregressive_mask(MaskVariant::Lower, 2, 1).unwrap();
        assert!(m.taps().iter().all(|&t| t == 1.0));
        assert_eq!(m.pad(), Padding::new(1, 0, 1, 0));
    }

    #[test]
    fn upper_2x2_two_channels_has_fifteen_ones() {
        let m = build_autoregressive_mask(MaskVariant::Upper, 2, 2).unwrap();
        assert_eq!(m.taps().iter().sum::<f64>(), 15.0);
        assert_eq!(m.tap(1, 0, 0, 0), 0.0);
        assert_eq!(m.pad(), Padding::new(0, 1, 0, 1));
    }

    #[test]
    fn combine_1x1_is_matrix_product() {
        let a = RMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = RMatrix::new(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let k = combine_filters(&Filter::from_matrix(&b), &Filter::from_matrix(&a)).unwrap();
        assert_eq!(k.taps(), b.matmul(&a).unwrap().as_slice());
    }

    #[test]
    fn combine_deltas_is_delta() {
        let d1 = Filter::delta(2, 2, 2, (1, 1), MaskVariant::Lower.padding(2)).unwrap();
        let d2 = Filter::delta(2, 2, 2, (0, 0), MaskVariant::Upper.padding(2)).unwrap();
        let k = combine_filters(&d2, &d1).unwrap();
        assert_eq!((k.kh(), k.kw()), (3, 3));
        assert_eq!(k.pad(), Padding::centered(3, 3));
        assert_eq!(k, Filter::delta(2, 3, 3, (1, 1), Padding::centered(3, 3)).unwrap());
    }

    #[test]
    fn combine_rejects_channel_mismatch() {
        let a = Filter::zeros(3, 2, 1, 1, Padding::NONE).unwrap();
        let b = Filter::zeros(2, 2, 1, 1, Padding::NONE).unwrap();
        assert!(combine_filters(&b, &a).is_err());
    }

    #[test]
    fn inconsistent_padding_rejected() {
        assert!(Filter::zeros(1, 1, 3, 3, Padding::new(1, 0, 1, 1)).is_err());
    }
}
