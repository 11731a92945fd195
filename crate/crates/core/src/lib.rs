//! Crystal-preserving mask post-processing, pseudo-labeling and
//! confidence-stratified evaluation for dense crystal instance segmentation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, PNG IO and the
//! command-line tool live in the `crystalmask` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod mask;
pub mod matching;
pub mod metrics;
pub mod morphology;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use mask::{
    decode_rle, encode_rle, rasterize_region, BinaryMask, ClassLabel, CoarseRegion, Confidence,
    GrayImage, Instance, InstanceSet,
};
