//! Embedding bundles: the stand-in for frozen backbone outputs, their file
//! format, synthetic generation and clip sampling.

pub mod bundle;
pub mod format;
pub mod sampling;
pub mod synth;

pub use bundle::{Dataset, EmbeddingBundle, TEST_SPLIT, TRAIN_SPLIT};
pub use format::{decode_bundles, encode_bundles, read_bundle_file, read_bundles, write_bundle_file, write_bundles};
pub use sampling::{few_shot_sample, multi_view_split, view_starts};
pub use synth::{generate_synthetic, SyntheticSpec};
