use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Invertible convolution used in every flow step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// Unconstrained 1×1 matrix.
    W1x1,
    Plu,
    /// `None` uses as many reflections as channels.
    Qr {
        reflections: Option<usize>,
    },
    Emerging {
        kernel: usize,
    },
    Periodic {
        kernel: usize,
    },
}

impl fmt::Display for ConvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvKind::W1x1 => write!(f, "w1x1"),
            ConvKind::Plu => write!(f, "plu"),
            ConvKind::Qr { reflections: None } => write!(f, "qr"),
            ConvKind::Qr { reflections: Some(k) } => write!(f, "qr-{k}"),
            ConvKind::Emerging { kernel } => write!(f, "emerging-{kernel}"),
            ConvKind::Periodic { kernel } => write!(f, "periodic-{kernel}"),
        }
    }
}

impl FromStr for ConvKind {
    type Err = Error;

    /// Accepts the [`Display`](fmt::Display) forms; `emerging` and `periodic` alone mean 3×3.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once('-') {
            Some((n, a)) => {
                let v = a.parse::<usize>().map_err(|_| Error::invalid(format!("bad convolution size in {s:?}")))?;
                (n, Some(v))
            }
            None => (s, None),
        };
        match (name, arg) {
            ("w1x1", None) => Ok(ConvKind::W1x1),
            ("plu", None) => Ok(ConvKind::Plu),
            ("qr", reflections) => Ok(ConvKind::Qr { reflections }),
            ("emerging", k) => Ok(ConvKind::Emerging { kernel: k.unwrap_or(3) }),
            ("periodic", k) => Ok(ConvKind::Periodic { kernel: k.unwrap_or(3) }),
            _ => Err(Error::invalid(format!("unknown convolution type {s:?}"))),
        }
    }
}

/// Architecture and initialization seed of a multi-scale flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub levels: usize,
    pub depth: usize,
    /// Hidden channels of the coupling networks.
    pub coupling_width: usize,
    pub conv: ConvKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            levels: 2,
            depth: 4,
            coupling_width: 64,
            conv: ConvKind::W1x1,
            channels: 3,
            height: 16,
            width: 16,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let scale = 1usize.checked_shl(self.levels as u32).filter(|_| self.levels < 16);
        let Some(scale) = scale else {
            return Err(Error::invalid(format!("too many levels: {}", self.levels)));
        };
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !self.height.is_multiple_of(scale) || !self.width.is_multiple_of(scale) {
            return Err(Error::invalid(format!(
                "image {}x{} is not divisible by 2^{} = {scale}",
                self.height, self.width, self.levels
            )));
        }
        if self.levels > 0 && (self.depth == 0 || self.coupling_width == 0) {
            return Err(Error::invalid("depth and coupling width must be positive"));
        }
        match self.conv {
            ConvKind::Emerging { kernel } if kernel % 2 == 0 => {
                Err(Error::invalid(format!("emerging kernel must be odd, got {kernel}")))
            }
            ConvKind::Periodic { kernel: 0 } | ConvKind::Emerging { kernel: 0 } => {
                Err(Error::invalid("kernel size must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Dimensions per example.
    pub fn dims(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("levels", self.levels.to_string()),
            ("depth", self.depth.to_string()),
            ("coupling_width", self.coupling_width.to_string()),
            ("conv", self.conv.to_string()),
            ("channels", self.channels.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        fn field<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = map.get(key).ok_or_else(|| Error::invalid(format!("missing model field {key:?}")))?;
            raw.parse().map_err(|_| Error::invalid(format!("bad value {raw:?} for model field {key:?}")))
        }
        let spec = ModelSpec {
            levels: field(map, "levels")?,
            depth: field(map, "depth")?,
            coupling_width: field(map, "coupling_width")?,
            conv: map.get("conv").ok_or_else(|| Error::invalid("missing model field \"conv\""))?.parse()?,
            channels: field(map, "channels")?,
            height: field(map, "height")?,
            width: field(map, "width")?,
            seed: field(map, "seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_kind_round_trips_through_text() {
        for k in [
            ConvKind::W1x1,
            ConvKind::Plu,
            ConvKind::Qr { reflections: None },
            ConvKind::Qr { reflections: Some(2) },
            ConvKind::Emerging { kernel: 3 },
            ConvKind::Periodic { kernel: 1 },
        ] {
            assert_eq!(k.to_string().parse::<ConvKind>().unwrap(), k);
        }
        assert_eq!("periodic".parse::<ConvKind>().unwrap(), ConvKind::Periodic { kernel: 3 });
        assert!("dense".parse::<ConvKind>().is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let s = ModelSpec { conv: ConvKind::Emerging { kernel: 3 }, seed: 42, ..ModelSpec::default() };
        let map: BTreeMap<_, _> = s.to_pairs().into_iter().collect();
        assert_eq!(ModelSpec::from_pairs(&map).unwrap(), s);
    }

    #[test]
    fn divisibility_enforced() {
        let s = ModelSpec { height: 12, levels: 3, ..ModelSpec::default() };
        assert!(s.validate().is_err());
        assert!(ModelSpec { levels: 0, height: 1, width: 1, channels: 1, ..ModelSpec::default() }.validate().is_ok());
    }
}
