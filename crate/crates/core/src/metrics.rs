//! Scalar image metrics.

use crate::error::Result;
use crate::field::Field;

/// Value reported by [`psnr`] for identical inputs. A finite sentinel keeps CSV
/// and JSON output portable.
pub const PSNR_IDENTICAL: f64 = 1e9;

pub fn mse(a: &Field, b: &Field) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}

pub fn rmse(a: &Field, b: &Field) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// `10 log10(peak^2 / mse)`, or [`PSNR_IDENTICAL`] when the inputs agree exactly.
pub fn psnr(a: &Field, b: &Field, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(crate::Error::InvalidArgument(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// MSE restricted to entries where `weight` is nonzero. `None` when the region
/// is empty.
pub fn masked_mse(a: &Field, b: &Field, mask: &Field, inside: bool) -> Result<Option<f64>> {
    a.ensure_same_shape(b)?;
    a.ensure_same_shape(mask)?;
    let mut s = 0.0;
    let mut n = 0usize;
    for ((x, y), m) in a.data().iter().zip(b.data()).zip(mask.data()) {
        if (*m != 0.0) == inside {
            s += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok((n > 0).then(|| s / n as f64))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}
