//! "CKPT" files: magic, u16 version, then a count-prefixed list of named
//! tensors. Model checkpoints lead with an architecture tensor whose name
//! identifies the model kind.

use std::path::Path;

use super::codec::{put_tensors, put_u16, Reader};
use crate::baseline::{Baseline, BaselineArch};
use crate::cvae::{Cvae, CvaeArch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Parameterized;

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u16 = 1;

const CVAE_ARCH: &str = "arch.cvae";
const BASELINE_ARCH: &str = "arch.baseline";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cvae,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cvae => "cvae",
            ModelKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        put_u16(&mut out, CKPT_VERSION);
        put_tensors(&mut out, "CKPT", &self.tensors)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("CKPT", bytes);
        r.magic(CKPT_MAGIC)?;
        r.version(CKPT_VERSION)?;
        let tensors = r.tensors()?;
        r.finish()?;
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn model_kind(&self) -> Option<ModelKind> {
        match self.tensors.first().map(|(n, _)| n.as_str()) {
            Some(CVAE_ARCH) => Some(ModelKind::Cvae),
            Some(BASELINE_ARCH) => Some(ModelKind::Baseline),
            _ => None,
        }
    }

    fn from_model<T: Scalar, M: Parameterized<T>>(arch_name: &str, codes: Vec<usize>, model: &M) -> Self {
        let codes = Tensor::from_vec(codes.into_iter().map(|c| c as f32).collect());
        let mut tensors = vec![(arch_name.to_string(), codes)];
        for (name, p) in model.parameter_names().into_iter().zip(model.parameters()) {
            tensors.push((name, p.cast()));
        }
        Self { tensors }
    }

    fn codes(&self, arch_name: &str) -> Result<Vec<usize>> {
        let bad = || Error::Format {
            file: "CKPT",
            field: format!("{arch_name} tensor"),
        };
        let (name, t) = self.tensors.first().ok_or_else(bad)?;
        if name != arch_name || t.rank() != 1 {
            return Err(bad());
        }
        t.data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
                    Ok(v as usize)
                } else {
                    Err(bad())
                }
            })
            .collect()
    }

    fn parameters<T: Scalar, M: Parameterized<T>>(&self, empty: &M) -> Result<Vec<Tensor<T>>> {
        let names = empty.parameter_names();
        let shapes: Vec<Vec<usize>> = empty.parameters().iter().map(|p| p.shape().to_vec()).collect();
        if self.tensors.len() != names.len() + 1 {
            return Err(Error::Format {
                file: "CKPT",
                field: format!("tensor count ({}, expected {})", self.tensors.len(), names.len() + 1),
            });
        }
        names
            .iter()
            .zip(&shapes)
            .zip(&self.tensors[1..])
            .map(|((want, shape), (name, t))| {
                if name != want {
                    return Err(Error::Format {
                        file: "CKPT",
                        field: format!("tensor name ({name:?}, expected {want:?})"),
                    });
                }
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("checkpoint", name.clone(), format!("{shape:?}"), format!("{:?}", t.shape())));
                }
                Ok(t.cast())
            })
            .collect()
    }

    pub fn from_cvae<T: Scalar>(model: &Cvae<T>) -> Self {
        Self::from_model(CVAE_ARCH, model.arch.to_codes(), model)
    }

    pub fn from_baseline<T: Scalar>(model: &Baseline<T>) -> Self {
        Self::from_model(BASELINE_ARCH, model.arch.to_codes(), model)
    }

    pub fn to_cvae<T: Scalar>(&self) -> Result<Cvae<T>> {
        let arch = CvaeArch::from_codes(&self.codes(CVAE_ARCH)?)?;
        let params = self.parameters(&Cvae::<T>::zeros(arch.clone())?)?;
        Cvae::from_parameters(arch, params)
    }

    pub fn to_baseline<T: Scalar>(&self) -> Result<Baseline<T>> {
        let arch = BaselineArch::from_codes(&self.codes(BASELINE_ARCH)?)?;
        let params = self.parameters(&Baseline::<T>::zeros(arch.clone())?)?;
        Baseline::from_parameters(arch, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    #[test]
    fn cvae_roundtrip() {
        let m = Cvae::<f32>::init(CvaeArch::default(), &RandomStream::new(1)).unwrap();
        let ck = Checkpoint::from_cvae(&m);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"CKPT");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model_kind(), Some(ModelKind::Cvae));
        assert_eq!(back.to_cvae::<f32>().unwrap(), m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(back.to_baseline::<f32>().is_err());
    }

    #[test]
    fn baseline_roundtrip() {
        let m = Baseline::<f32>::init(BaselineArch::default(), &RandomStream::new(2)).unwrap();
        let back = Checkpoint::from_bytes(&Checkpoint::from_baseline(&m).to_bytes().unwrap()).unwrap();
        assert_eq!(back.model_kind(), Some(ModelKind::Baseline));
        assert_eq!(back.to_baseline::<f32>().unwrap(), m);
    }

    #[test]
    fn corrupt_headers_are_named() {
        let m = Baseline::<f32>::init(BaselineArch::default(), &RandomStream::new(2)).unwrap();
        let mut bytes = Checkpoint::from_baseline(&m).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
        bytes[0] = b'C';
        bytes[4] = 9;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }
}
