//! Image decoding, preprocessing, synthetic blob datasets, manifests and
//! stratified splits.

mod image;
mod manifest;
mod split;
mod synthetic;

pub use image::{
    decode_pnm, encode_pnm, load_image, preprocess, read_pnm, resize_bilinear, write_pnm, Image,
};
pub use manifest::{Dataset, DatasetManifest, ManifestRecord, SplitName};
pub use split::{stratified_split, SplitIndices};
pub use synthetic::{generate_synthetic, SyntheticSpec};
