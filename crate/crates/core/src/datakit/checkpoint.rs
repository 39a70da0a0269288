//! Binary checkpoints: `"EMCF"`, u32 version, a length-prefixed UTF-8 header of `key=value`
//! lines (model spec, step, generator state), a u32 entry count, then per entry a u32 name
//! length, the name, a u32 rank, u64 dims and little-endian f64 values. Integers are
//! little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flows::{FlowModel, ModelSpec};

pub const MAGIC: &[u8; 4] = b"EMCF";
pub const VERSION: u32 = 1;

/// Position of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub step: u64,
    pub rng: Option<RngState>,
    /// Every parameter of the model, trainable or not, in store order.
    pub entries: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, pos: usize, msg: impl Into<String>) -> Error {
        Error::Checkpoint { pos: pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(self.err(self.pos, format!("truncated {what}: need {n} bytes, {rest} left")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit a u32 length field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (k, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * k..2 * k + 2], 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    pub fn from_model(model: &FlowModel, step: u64, rng: Option<RngState>) -> Self {
        let entries = model.store().params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        Checkpoint { spec: *model.spec(), step, rng, entries }
    }

    fn header(&self) -> String {
        let mut lines: Vec<(String, String)> = self.spec.to_pairs();
        lines.push(("step".into(), self.step.to_string()));
        if let Some(r) = &self.rng {
            lines.push(("rng_seed".into(), hex(&r.seed)));
            lines.push(("rng_stream".into(), r.stream.to_string()));
            lines.push(("rng_word_pos".into(), r.word_pos.to_string()));
        }
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.header();
        push_u32(&mut out, header.len())?;
        out.extend_from_slice(header.as_bytes());
        push_u32(&mut out, self.entries.len())?;
        for (name, t) in &self.entries {
            push_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            push_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.err(0, "bad magic; not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.err(4, format!("unsupported version {version}; expected {VERSION}")));
        }
        let header_at = r.pos;
        let len = r.u32("header length")? as usize;
        let text =
            std::str::from_utf8(r.take(len, "header")?).map_err(|_| r.err(header_at + 4, "header is not UTF-8"))?;
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let (k, v) =
                line.split_once('=').ok_or_else(|| r.err(header_at + 4, format!("bad header line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let header_err = |e: Error| r.err(header_at + 4, e.to_string());
        let spec = ModelSpec::from_pairs(&map).map_err(header_err)?;
        let field =
            |key: &str| map.get(key).ok_or_else(|| r.err(header_at + 4, format!("missing header field {key:?}")));
        let step = field("step")?.parse().map_err(|_| r.err(header_at + 4, "bad step"))?;
        let rng = match map.get("rng_seed") {
            None => None,
            Some(seed) => Some(RngState {
                seed: unhex(seed).ok_or_else(|| r.err(header_at + 4, "bad rng_seed"))?,
                stream: field("rng_stream")?.parse().map_err(|_| r.err(header_at + 4, "bad rng_stream"))?,
                word_pos: field("rng_word_pos")?.parse().map_err(|_| r.err(header_at + 4, "bad rng_word_pos"))?,
            }),
        };

        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let at = r.pos;
            let nlen = r.u32("name length")? as usize;
            let name =
                std::str::from_utf8(r.take(nlen, "name")?).map_err(|_| r.err(at + 4, "name is not UTF-8"))?.to_string();
            let rank_at = r.pos;
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(r.err(rank_at, format!("implausible rank {rank} for {name:?}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let dim_at = r.pos;
                let d = usize::try_from(r.u64("dimension")?).map_err(|_| r.err(dim_at, "dimension overflows"))?;
                numel = numel.checked_mul(d).ok_or_else(|| r.err(dim_at, "element count overflows"))?;
                shape.push(d);
            }
            let payload_at = r.pos;
            let nbytes = numel.checked_mul(8).ok_or_else(|| r.err(payload_at, "payload size overflows"))?;
            let raw = r.take(nbytes, "payload")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            entries.push((name, Tensor::new(shape, data).expect("numel matches")));
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { spec, step, rng, entries })
    }

    /// Rebuilds the model and copies every stored parameter into it.
    pub fn to_model(&self) -> Result<FlowModel> {
        let mut model = FlowModel::new(self.spec)?;
        if self.entries.len() != model.store().len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, the model {}",
                self.entries.len(),
                model.store().len()
            )));
        }
        for (name, t) in &self.entries {
            let id = model.store().find(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
            model.store_mut().set(id, t.clone())?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_model(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, 0, None).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FlowModel> {
    Checkpoint::load(path)?.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convkit::Tensor4;
    use crate::flows::ConvKind;
    use rand::{Rng, SeedableRng};

    fn model() -> FlowModel {
        let spec = ModelSpec {
            levels: 2,
            depth: 1,
            coupling_width: 4,
            conv: ConvKind::Plu,
            channels: 1,
            height: 4,
            width: 4,
            seed: 5,
        };
        let mut m = FlowModel::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.initialize(&Tensor4::from_fn(3, 1, 4, 4, |_, _, _, _| rng.random::<f64>())).unwrap();
        m
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let _: u64 = rng.random();
        let ck = Checkpoint::from_model(&m, 12, Some(RngState::capture(&rng)));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut restored = back.rng.unwrap().restore();
        assert_eq!(restored.random::<u64>(), rng.random::<u64>());
        let m2 = back.to_model().unwrap();
        for (a, b) in m.store().params().iter().zip(m2.store().params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn eval_identical_after_reload() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_model(&m, &p).unwrap();
        let m2 = load_model(&p).unwrap();
        let x = Tensor4::from_fn(2, 1, 4, 4, |b, _, y, x| ((b * 31 + y * 7 + x * 3) % 256) as f64);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(m.bits_per_dim(&x, &mut r1).unwrap(), m2.bits_per_dim(&x, &mut r2).unwrap());
    }

    #[test]
    fn corruption_reports_position() {
        let bytes = Checkpoint::from_model(&model(), 0, None).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        match Checkpoint::from_bytes(&bad) {
            Err(Error::Checkpoint { pos, msg }) => {
                assert_eq!(pos, 12);
                assert!(msg.contains("truncated header"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let name_at = 12 + hlen + 4;
        let mut bad = bytes.clone();
        bad[name_at..name_at + 4].copy_from_slice(&1_000_000u32.to_le_bytes());
        assert!(
            matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { pos, .. }) if pos == name_at as u64 + 4)
        );
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint { .. })));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn magic_and_version_checked() {
        let bytes = Checkpoint::from_model(&model(), 0, None).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { pos: 0, .. })));
        let mut bad = bytes;
        bad[4] = 2;
        let err = Checkpoint::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ck = Checkpoint::from_model(&model(), 0, None);
        ck.entries[0].1 = Tensor::zeros(&[7]);
        assert!(ck.to_model().is_err());
    }
}
