//! "DSET" files: magic, u16 version, named tensors in the checkpoint
//! encoding, u32 split index, then a u32-length-prefixed UTF-8 metadata
//! string. Datasets store `X` and `Y`; sample files reuse the container with
//! a single `samples` tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{put_tensors, put_u16, put_u32, Reader};
use crate::data::DownscalingDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DSET_MAGIC: &[u8; 4] = b"DSET";
pub const DSET_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DsetFile {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub split_index: u32,
    pub metadata: String,
}

impl DsetFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(DSET_MAGIC);
        put_u16(&mut out, DSET_VERSION);
        put_tensors(&mut out, "DSET", &self.tensors)?;
        put_u32(&mut out, self.split_index);
        let len = u32::try_from(self.metadata.len()).map_err(|_| Error::Format {
            file: "DSET",
            field: "metadata (too long)".into(),
        })?;
        put_u32(&mut out, len);
        out.extend_from_slice(self.metadata.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("DSET", bytes);
        r.magic(DSET_MAGIC)?;
        r.version(DSET_VERSION)?;
        let tensors = r.tensors()?;
        let split_index = r.u32("split_index")?;
        let len = r.u32("metadata length")? as usize;
        let metadata = r.string(len, "metadata")?;
        r.finish()?;
        Ok(Self {
            tensors,
            split_index,
            metadata,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        let i = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format {
                file: "DSET",
                field: format!("tensor {name} (missing)"),
            })?;
        Ok(self.tensors.remove(i).1)
    }

    pub fn from_dataset<T: Scalar>(data: &DownscalingDataset<T>) -> Result<Self> {
        Ok(Self {
            tensors: vec![
                ("X".to_string(), data.predictors.cast()),
                ("Y".to_string(), data.precip.cast()),
            ],
            split_index: u32::try_from(data.split_index).map_err(|_| Error::Format {
                file: "DSET",
                field: "split_index (too large)".into(),
            })?,
            metadata: data.metadata.clone(),
        })
    }

    pub fn into_dataset<T: Scalar>(mut self) -> Result<DownscalingDataset<T>> {
        let x = self.take("X")?;
        let y = self.take("Y")?;
        DownscalingDataset::new(x.cast(), y.cast(), self.split_index as usize, self.metadata)
    }
}

pub fn write_dataset<T: Scalar>(data: &DownscalingDataset<T>, path: &Path) -> Result<()> {
    DsetFile::from_dataset(data)?.write(path)
}

pub fn read_dataset<T: Scalar>(path: &Path) -> Result<DownscalingDataset<T>> {
    DsetFile::read(path)?.into_dataset()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub model: String,
    pub ensemble_size: usize,
    pub seed: u64,
}

/// Ensemble draws over the test slice: `samples` is `[T_test, n, H_f, W_f]`
/// and `first_time` is the dataset index of the first test day.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet<T = f32> {
    pub samples: Tensor<T>,
    pub first_time: usize,
    pub metadata: SampleMetadata,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(samples: Tensor<T>, first_time: usize, metadata: SampleMetadata) -> Result<Self> {
        samples.expect_rank("SampleSet", 4)?;
        if samples.shape()[1] != metadata.ensemble_size {
            return Err(Error::shape("SampleSet", "ensemble size", metadata.ensemble_size, samples.shape()[1]));
        }
        Ok(Self {
            samples,
            first_time,
            metadata,
        })
    }

    pub fn days(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn ensemble_size(&self) -> usize {
        self.samples.shape()[1]
    }

    /// The `n` draws for test day `d`, each `[H_f, W_f]`.
    pub fn ensemble(&self, d: usize) -> Result<Vec<Tensor<T>>> {
        let day = self.samples.slice_outer(d)?;
        (0..self.ensemble_size()).map(|i| day.slice_outer(i)).collect()
    }

    pub fn to_file(&self) -> Result<DsetFile> {
        Ok(DsetFile {
            tensors: vec![("samples".to_string(), self.samples.cast())],
            split_index: u32::try_from(self.first_time).map_err(|_| Error::Format {
                file: "DSET",
                field: "split_index (too large)".into(),
            })?,
            metadata: serde_json::to_string(&self.metadata).expect("metadata serializes"),
        })
    }

    pub fn from_file(mut f: DsetFile) -> Result<Self> {
        let samples = f.take("samples")?;
        let metadata: SampleMetadata = serde_json::from_str(&f.metadata).map_err(|_| Error::Format {
            file: "DSET",
            field: "metadata (not a sample header)".into(),
        })?;
        Self::new(samples.cast(), f.split_index as usize, metadata)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_file()?.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(DsetFile::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};
    use crate::rng::RandomStream;

    #[test]
    fn dataset_roundtrip() {
        let cfg = SynthConfig {
            n_times: 30,
            channels: 3,
            coarse_height: 2,
            coarse_width: 3,
            ..SynthConfig::default()
        };
        let d = generate_dataset::<f32>(&cfg, &RandomStream::new(4)).unwrap();
        let bytes = DsetFile::from_dataset(&d).unwrap().to_bytes().unwrap();
        let back: DownscalingDataset<f32> = DsetFile::from_bytes(&bytes).unwrap().into_dataset().unwrap();
        assert_eq!(back, d);
        assert_eq!(DsetFile::from_dataset(&back).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn sample_set_roundtrip() {
        let meta = SampleMetadata {
            model: "cvae".into(),
            ensemble_size: 2,
            seed: 9,
        };
        let s = SampleSet::new(Tensor::<f32>::from_fn(&[3, 2, 4, 4], |i| i as f32), 7, meta).unwrap();
        let back = SampleSet::<f32>::from_file(DsetFile::from_bytes(&s.to_file().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.ensemble(1).unwrap()[0].data()[0], 32.0);
    }

    #[test]
    fn missing_tensor_and_truncated_metadata() {
        let f = DsetFile {
            tensors: vec![("X".into(), Tensor::zeros(&[1]))],
            split_index: 1,
            metadata: "{}".into(),
        };
        let err = f.clone().into_dataset::<f32>().unwrap_err().to_string();
        assert!(err.contains("tensor Y"), "{err}");
        let mut bytes = f.to_bytes().unwrap();
        bytes.pop();
        assert!(DsetFile::from_bytes(&bytes).unwrap_err().to_string().contains("metadata"));
    }
}
