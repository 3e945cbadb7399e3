//! Little-endian primitives and the named-tensor encoding shared by the
//! checkpoint and dataset files.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn fits_u32(file: &'static str, field: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format {
        file,
        field: format!("{field} (too large to encode)"),
    })
}

/// Appends one tensor: name length u16, UTF-8 name, rank u8, u32 extents,
/// then the f32 payload.
pub(crate) fn put_tensor<T: Scalar>(
    out: &mut Vec<u8>,
    file: &'static str,
    name: &str,
    t: &Tensor<T>,
) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format {
        file,
        field: format!("tensor name {name:?} (too long)"),
    })?;
    put_u16(out, len);
    out.extend_from_slice(name.as_bytes());
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Format {
        file,
        field: format!("rank of {name}"),
    })?;
    out.push(rank);
    for &d in t.shape() {
        put_u32(out, fits_u32(file, "extent", d)?);
    }
    out.reserve(4 * t.len());
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    Ok(())
}

pub(crate) fn put_tensors<T: Scalar>(
    out: &mut Vec<u8>,
    file: &'static str,
    tensors: &[(String, Tensor<T>)],
) -> Result<()> {
    put_u32(out, fits_u32(file, "tensor count", tensors.len())?);
    for (name, t) in tensors {
        put_tensor(out, file, name, t)?;
    }
    Ok(())
}

/// Cursor over an encoded file; every failure names the field being read.
pub(crate) struct Reader<'a> {
    file: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(file: &'static str, bytes: &'a [u8]) -> Self {
        Self { file, bytes, pos: 0 }
    }

    pub(crate) fn bad(&self, field: impl Into<String>) -> Error {
        Error::Format {
            file: self.file,
            field: field.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.bad(format!("{field} (truncated at byte {})", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        if self.take(4, "magic")? != want {
            return Err(self.bad("magic"));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u16) -> Result<u16> {
        let v = self.u16("version")?;
        if v != supported {
            return Err(self.bad(format!("version ({v}, expected {supported})")));
        }
        Ok(v)
    }

    pub(crate) fn string(&mut self, len: usize, field: &str) -> Result<String> {
        let b = self.take(len, field)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.bad(format!("{field} (invalid UTF-8)")))
    }

    pub(crate) fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u16("tensor name length")? as usize;
        let name = self.string(len, "tensor name")?;
        let rank = self.u8(&format!("rank of {name}"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(&format!("extents of {name}"))? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c > 0 && rank > 0)
            .ok_or_else(|| self.bad(format!("extents of {name}")))?;
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| self.bad(format!("extents of {name}")))?;
        let payload = self.take(bytes, &format!("payload of {name}"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|_| self.bad(format!("extents of {name}")))?;
        Ok((name, t))
    }

    pub(crate) fn tensors(&mut self) -> Result<Vec<(String, Tensor<f32>)>> {
        let n = self.u32("tensor count")? as usize;
        // each tensor needs at least 7 bytes, so a huge count is caught early
        if n > self.bytes.len() {
            return Err(self.bad("tensor count"));
        }
        (0..n).map(|_| self.tensor()).collect()
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad(format!("trailing bytes at {}", self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_keeps_bits() {
        let t = Tensor::new(&[2, 3], vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, 1e-40, 3.25]).unwrap();
        let mut out = Vec::new();
        put_tensor(&mut out, "CKPT", "w", &t).unwrap();
        let mut r = Reader::new("CKPT", &out);
        let (name, back) = r.tensor().unwrap();
        r.finish().unwrap();
        assert_eq!(name, "w");
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn truncation_names_field() {
        let mut out = Vec::new();
        put_tensor(&mut out, "CKPT", "weights", &Tensor::<f32>::zeros(&[4])).unwrap();
        out.truncate(out.len() - 1);
        let err = Reader::new("CKPT", &out).tensor().unwrap_err().to_string();
        assert!(err.contains("payload of weights"), "{err}");
    }

    #[test]
    fn zero_extent_rejected() {
        let mut out = Vec::new();
        put_u16(&mut out, 1);
        out.push(b'a');
        out.push(1);
        put_u32(&mut out, 0);
        assert!(Reader::new("CKPT", &out).tensor().is_err());
    }
}
