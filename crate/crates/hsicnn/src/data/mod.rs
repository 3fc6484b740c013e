//! Scene I/O, normalization, patch extraction, sample bookkeeping, and
//! synthetic data.

pub mod cube;
pub mod labels;
pub mod patch;
pub mod samples;
pub mod synth;

pub use cube::{normalize_cube, BandStats, HsiCube};
pub use labels::LabelRaster;
pub use patch::extract_patch;
pub use samples::{enumerate_samples, stratified_split, Sample, SampleSet, SplitIndices};
pub use synth::{class_signatures, synth_generate};
