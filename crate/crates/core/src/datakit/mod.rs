//! Image files, synthetic datasets and checkpoints.

mod checkpoint;
mod dataset;
mod pnm;
mod synth;

pub use checkpoint::{load_model, save_model, Checkpoint, RngState, MAGIC, VERSION};
pub use dataset::{load_dataset, Dataset, Partition, Source, SynthShape};
pub use pnm::{decode_pnm, encode_pnm, load_ppm, save_ppm, tile_grid};
pub use synth::{
    sinusoid, synth_dark_field_blobs, synth_dark_field_blobs_with, synth_periodic_textures, MAX_FREQUENCY,
    TEXTURE_NOISE,
};
