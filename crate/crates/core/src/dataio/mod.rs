//! Persistence and the synthetic dataset generator.

mod dataset;
mod pnm;
mod tensor_file;

pub use dataset::{
    gen_band_dataset, synthesize_sample, BandConfig, Dataset, DatasetManifest, Regime, SampleEntry,
};
pub use pnm::{pgm_write, ppm_read, ppm_write};
pub use tensor_file::{tensor_read, tensor_write, TENSOR_MAGIC};
