//! Dataset descriptors and train/test partitions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::convkit::Tensor4;
use crate::error::{Error, Result};

use super::pnm::load_ppm;
use super::synth::{synth_dark_field_blobs, synth_periodic_textures};

/// Seed offset separating the test set of a synthetic source from its training set.
const TEST_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Textures,
    Blobs,
    /// Directory of PGM/PPM files of equal size.
    Directory(PathBuf),
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic:textures" => Ok(Source::Textures),
            "synthetic:blobs" => Ok(Source::Blobs),
            other if other.starts_with("synthetic:") => {
                Err(Error::invalid(format!("unknown synthetic dataset {other:?}")))
            }
            path => Ok(Source::Directory(PathBuf::from(path))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Textures => f.write_str("synthetic:textures"),
            Source::Blobs => f.write_str("synthetic:blobs"),
            Source::Directory(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Integer images with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor4,
    pub partition: Partition,
    pub source: Source,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How many images to synthesize and at what size; ignored for directories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthShape {
    pub count: usize,
    pub size: usize,
    pub channels: usize,
}

/// Loads one partition of a source. Synthetic test sets use an independent seed. A directory
/// is read in file-name order and every fifth file forms the test set.
pub fn load_dataset(source: &Source, partition: Partition, shape: SynthShape, seed: u64) -> Result<Dataset> {
    let part_seed = match partition {
        Partition::Train => seed,
        Partition::Test => seed ^ TEST_SEED_OFFSET,
    };
    let images = match source {
        Source::Textures => synth_periodic_textures(shape.count, shape.size, shape.channels, part_seed)?,
        Source::Blobs => synth_dark_field_blobs(shape.count, shape.size, shape.channels, part_seed)?,
        Source::Directory(dir) => load_directory(dir, partition)?,
    };
    Ok(Dataset { images, partition, source: source.clone(), seed })
}

fn load_directory(dir: &Path, partition: Partition) -> Result<Tensor4> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::invalid(format!("cannot read dataset directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no .ppm or .pgm files in {}", dir.display())));
    }
    let chosen: Vec<&PathBuf> = files
        .iter()
        .enumerate()
        .filter(|(k, _)| (k % 5 == 4) == (partition == Partition::Test))
        .map(|(_, p)| p)
        .collect();
    if chosen.is_empty() {
        return Err(Error::invalid(format!("{} has no {partition} images", dir.display())));
    }
    let images = chosen.iter().map(load_ppm).collect::<Result<Vec<_>>>()?;
    let first = images[0].shape();
    if let Some((k, img)) = images.iter().enumerate().find(|(_, i)| i.shape() != first) {
        let (_, c, h, w) = img.shape();
        return Err(Error::Image {
            path: chosen[k].clone(),
            msg: format!("size {c}x{h}x{w} differs from {}x{}x{}", first.1, first.2, first.3),
        });
    }
    Tensor4::stack(&images)
}
