//! Seeded synthetic image sets.

use std::f64::consts::TAU;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::convkit::Tensor4;
use crate::error::{Error, Result};

/// Largest absolute integer frequency of a texture component.
pub const MAX_FREQUENCY: i32 = 3;
/// Standard deviation of the additive pixel noise of textures.
pub const TEXTURE_NOISE: f64 = 2.0;

/// `cos(2π (fy·y + fx·x) / size + phase)` on a `size × size` grid, row-major.
pub fn sinusoid(size: usize, fy: i32, fx: i32, phase: f64) -> Vec<f64> {
    let s = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            out.push((TAU * (fy as f64 * y as f64 + fx as f64 * x as f64) / s + phase).cos());
        }
    }
    out
}

fn quantize_level(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

/// Mixtures of 2–4 integer-frequency 2-D sinusoids with per-channel gains plus mild noise.
/// Integer frequencies make every image seamless under wrap-around.
pub fn synth_periodic_textures(n: usize, size: usize, c: usize, seed: u64) -> Result<Tensor4> {
    if size < 4 || c == 0 {
        return Err(Error::invalid(format!("textures need size >= 4 and channels > 0, got {size} and {c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensor4::zeros(n, c, size, size);
    let plane = size * size;
    for b in 0..n {
        let k = rng.random_range(2..=4);
        let mut mix = vec![0.0; c * plane];
        let mut total_amp = 0.0;
        for _ in 0..k {
            let (fy, fx) = loop {
                let f = (rng.random_range(-MAX_FREQUENCY..=MAX_FREQUENCY), rng.random_range(0..=MAX_FREQUENCY));
                if f != (0, 0) {
                    break f;
                }
            };
            let amp = rng.random_range(0.5..1.0);
            total_amp += amp;
            let wave = sinusoid(size, fy, fx, rng.random_range(0.0..TAU));
            for ch in 0..c {
                let gain = amp * rng.random_range(0.3..1.0);
                for (m, w) in mix[ch * plane..(ch + 1) * plane].iter_mut().zip(&wave) {
                    *m += gain * w;
                }
            }
        }
        let offset = rng.random_range(96.0..160.0);
        let spread = 90.0 / total_amp;
        for (o, m) in out.example_mut(b).iter_mut().zip(&mix) {
            let noise: f64 = rng.sample(StandardNormal);
            *o = quantize_level(offset + spread * m + TEXTURE_NOISE * noise);
        }
    }
    Ok(out)
}

/// 1–3 Gaussian blobs on a near-black background.
pub fn synth_dark_field_blobs(n: usize, size: usize, c: usize, seed: u64) -> Result<Tensor4> {
    synth_dark_field_blobs_with(n, size, c, seed, 1..=3)
}

/// Like [`synth_dark_field_blobs`] with a chosen range of blob counts. Blob centers stay in
/// the middle half of the image and widths are at most `size / 10`, which keeps the border dark.
pub fn synth_dark_field_blobs_with(
    n: usize,
    size: usize,
    c: usize,
    seed: u64,
    blobs: RangeInclusive<usize>,
) -> Result<Tensor4> {
    if size < 8 || c == 0 {
        return Err(Error::invalid(format!("blobs need size >= 8 and channels > 0, got {size} and {c}")));
    }
    if blobs.is_empty() {
        return Err(Error::invalid("empty blob count range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut out = Tensor4::zeros(n, c, size, size);
    for b in 0..n {
        let mut img = vec![0.0; c * size * size];
        for _ in 0..rng.random_range(blobs.clone()) {
            let cy = rng.random_range(0.25 * s..0.75 * s);
            let cx = rng.random_range(0.25 * s..0.75 * s);
            let sigma = rng.random_range(0.04 * s..0.1 * s);
            let peak = rng.random_range(120.0..250.0);
            let tint: Vec<f64> = (0..c).map(|_| rng.random_range(0.6..1.0)).collect();
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let v = peak * (-0.5 * d2 / (sigma * sigma)).exp();
                    for (ch, t) in tint.iter().enumerate() {
                        img[(ch * size + y) * size + x] += v * t;
                    }
                }
            }
        }
        for (o, v) in out.example_mut(b).iter_mut().zip(&img) {
            *o = quantize_level(v + rng.random_range(0.0..4.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sinusoid_rows_constant_and_seamless() {
        let s = sinusoid(8, 1, 0, 0.3);
        for y in 0..8 {
            assert!(s[y * 8..y * 8 + 8].iter().all(|&v| (v - s[y * 8]).abs() < 1e-12));
        }
        // continuing past the last row lands on row 0
        let next = (TAU * 8.0 / 8.0 + 0.3).cos();
        assert!((next - s[0]).abs() < 1e-12);
    }

    #[test]
    fn texture_seam_comparable_to_interior() {
        let t = synth_periodic_textures(200, 16, 3, 7).unwrap();
        let (n, c, h, w) = t.shape();
        let mut seam = 0.0;
        let mut interior = 0.0;
        for b in 0..n {
            for ch in 0..c {
                let col = |x: usize| (0..h).map(|y| t.at(b, ch, y, x)).sum::<f64>() / h as f64;
                seam += (col(0) - col(w - 1)).abs();
                interior += (1..w).map(|x| (col(x) - col(x - 1)).abs()).sum::<f64>() / (w - 1) as f64;
            }
        }
        let ratio = seam / interior;
        assert!(ratio < 2.0, "seam ratio {ratio}");
    }

    #[test]
    fn textures_valid_and_deterministic() {
        let a = synth_periodic_textures(5, 8, 1, 3).unwrap();
        assert_eq!(a, synth_periodic_textures(5, 8, 1, 3).unwrap());
        assert_ne!(a, synth_periodic_textures(5, 8, 1, 4).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=255.0).contains(v) && v.fract() == 0.0));
        assert!(synth_periodic_textures(1, 3, 1, 0).is_err());
    }

    #[test]
    fn zero_blobs_are_dark() {
        let t = synth_dark_field_blobs_with(20, 16, 3, 1, 0..=0).unwrap();
        assert!(t.data().iter().all(|&v| v < 5.0));
    }

    #[test]
    fn blob_border_dark() {
        let size = 16;
        let t = synth_dark_field_blobs(1000, size, 1, 2).unwrap();
        let (mut acc, mut cnt) = (0.0, 0);
        for b in 0..1000 {
            for y in 0..size {
                for x in 0..size {
                    if y == 0 || x == 0 || y == size - 1 || x == size - 1 {
                        acc += t.at(b, 0, y, x);
                        cnt += 1;
                    }
                }
            }
        }
        assert!(acc / (cnt as f64) < 10.0);
        assert!(t.data().iter().any(|&v| v > 100.0));
        assert_eq!(t, synth_dark_field_blobs(1000, size, 1, 2).unwrap());
    }
}
