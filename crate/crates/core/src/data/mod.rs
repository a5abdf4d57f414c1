//! Images, pore lists, label maps, patching and synthetic fingerprints.

mod grid;
mod image_io;
mod labels;
mod manifest;
mod patches;
mod pores;
mod synth;

pub use grid::{GrayImage, Grid};
pub use image_io::{read_gray_image, write_pgm};
pub use labels::{make_label_map, LabelMap, LABEL_RADIUS};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use patches::{
    extract_training_patches, tile_for_inference, training_grid, PatchGrid, PatchRef, TileLayout, TileSet,
    TrainingPatches, TrainingSet, PATCH_SIZE, TRAIN_STRIDE,
};
pub use pores::{read_pore_csv, write_pore_csv, Pore, PoreSet};
pub use synth::{synth_fingerprint, SynthParams};
