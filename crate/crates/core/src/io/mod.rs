//! Binary checkpoint, dataset and sample files, and PGM map output.

mod checkpoint;
mod codec;
mod dataset_file;
mod pgm;

pub use checkpoint::{Checkpoint, ModelKind, CKPT_MAGIC, CKPT_VERSION};
pub use dataset_file::{read_dataset, write_dataset, DsetFile, SampleMetadata, SampleSet, DSET_MAGIC, DSET_VERSION};
pub use pgm::{common_log_scale, pgm_bytes, write_pgm};
