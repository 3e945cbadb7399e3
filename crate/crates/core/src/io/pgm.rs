//! 8-bit binary greyscale maps of precipitation fields.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Encodes `field` ([H, W], mm/day) as P5: grey = round(255·log1p(y)/log_max),
/// clamped to 0..=255. The scale goes into the comment line so maps can be
/// read back to log1p units.
pub fn pgm_bytes<T: Scalar>(field: &Tensor<T>, log_max: f64) -> Result<Vec<u8>> {
    field.expect_rank("pgm", 2)?;
    if !(log_max > 0.0 && log_max.is_finite()) {
        return Err(Error::domain("pgm", format!("log1p scale must be positive, got {log_max}")));
    }
    let (h, w) = (field.shape()[0], field.shape()[1]);
    let header = format!("P5\n# grey = 255 * log1p(mm/day) / {log_max:.6}\n{w} {h}\n255\n");
    let mut out = header.into_bytes();
    out.extend(field.data().iter().map(|&v| {
        let g = 255.0 * v.as_f64().max(0.0).ln_1p() / log_max;
        g.round().clamp(0.0, 255.0) as u8
    }));
    Ok(out)
}

/// Shared scale for a set of maps: log1p of their largest value (at least 1).
pub fn common_log_scale<T: Scalar>(fields: &[&Tensor<T>]) -> f64 {
    let top = fields
        .iter()
        .flat_map(|f| f.data())
        .fold(0.0f64, |m, &v| m.max(v.as_f64()));
    top.ln_1p().max(1.0)
}

pub fn write_pgm<T: Scalar>(field: &Tensor<T>, log_max: f64, path: &Path) -> Result<()> {
    let bytes = pgm_bytes(field, log_max)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
