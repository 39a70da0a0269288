//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::convkit::Tensor4;
use crate::error::{Error, Result};

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image { path: path.to_path_buf(), msg: msg.into() }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("expected magic P5 or P6".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][k];
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| format!("malformed header: missing {name}"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header: no whitespace after maxval".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}; only 8-bit images (255) are supported"));
    }
    Ok(Header { channels, width, height, maxval, payload: pos + 1 })
}

/// Decodes one image into a `1 × c × h × w` tensor of integer values.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Tensor4, String> {
    let hd = parse_header(bytes)?;
    debug_assert_eq!(hd.maxval, 255);
    let (c, h, w) = (hd.channels, hd.height, hd.width);
    let need = c * h * w;
    let body = &bytes[hd.payload..];
    if body.len() < need {
        return Err(format!("truncated payload: {} of {need} bytes", body.len()));
    }
    Ok(Tensor4::from_fn(1, c, h, w, |_, ch, y, x| body[(y * w + x) * c + ch] as f64))
}

/// Encodes example `b` of `img` (1 or 3 channels, integer values 0..=255).
pub fn encode_pnm(img: &Tensor4, b: usize) -> std::result::Result<Vec<u8>, String> {
    let (_, c, h, w) = img.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(format!("cannot store {c} channels; PGM/PPM need 1 or 3")),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.at(b, ch, y, x);
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(format!("pixel value {v} is not an integer in 0..=255"));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_pnm(&bytes).map_err(|m| image_err(path, m))
}

pub fn save_ppm(img: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.batch() != 1 {
        return Err(Error::shape(format!("save_ppm takes one image, got {}", img.batch())));
    }
    let bytes = encode_pnm(img, 0).map_err(|m| image_err(path, m))?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Tiles the examples of `images` into one image with `cols` columns, row by row. Empty cells
/// stay black.
pub fn tile_grid(images: &Tensor4, cols: usize) -> Result<Tensor4> {
    let (n, c, h, w) = images.shape();
    if cols == 0 {
        return Err(Error::invalid("grid needs at least one column"));
    }
    let rows = n.div_ceil(cols);
    let mut out = Tensor4::zeros(1, c, rows * h, cols * w);
    for b in 0..n {
        let (r, k) = (b / cols, b % cols);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(0, ch, r * h + y, k * w + x, images.at(b, ch, y, x));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn white_gray_pixel() {
        let t = decode_pnm(b"P5\n1 1\n255\n\xff").unwrap();
        assert_eq!(t.shape(), (1, 1, 1, 1));
        assert_eq!(t.data(), &[255.0]);
    }

    #[test]
    fn comments_and_layout() {
        let t = decode_pnm(b"P6 # rgb\n# size next\n2 1 255\n\x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(t.shape(), (1, 3, 1, 2));
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn rgb_round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = Tensor4::from_fn(1, 3, 8, 8, |_, _, _, _| rng.random_range(0..256) as f64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        save_ppm(&img, &p).unwrap();
        let back = load_ppm(&p).unwrap();
        assert_eq!(back, img);
        let q = dir.path().join("b.ppm");
        save_ppm(&back, &q).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn rejects_sixteen_bit_and_truncation() {
        let e = decode_pnm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert!(e.contains("maxval 65535"), "{e}");
        assert!(decode_pnm(b"P5\n2 2\n255\n\0\0\0").unwrap_err().contains("truncated"));
        assert!(decode_pnm(b"P3\n1 1\n255\n0").is_err());
        assert!(decode_pnm(b"P5\n1\n").is_err());
    }

    #[test]
    fn load_error_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, b"P5\n1 1\n65535\n\0\0").unwrap();
        let err = load_ppm(&p).unwrap_err();
        assert!(err.to_string().contains("bad.pgm"));
    }

    #[test]
    fn grid_placement() {
        let imgs = Tensor4::from_fn(3, 1, 1, 2, |b, _, _, x| (b * 10 + x) as f64);
        let g = tile_grid(&imgs, 2).unwrap();
        assert_eq!(g.shape(), (1, 1, 2, 4));
        assert_eq!(g.data(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0, 0.0, 0.0]);
    }
}
