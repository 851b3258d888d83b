//! Field serialization.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! u64 ndim
//! u64 extent[ndim]
//! f64 data[product(extents)]      row-major
//! ```
//!
//! PGM output is 8-bit binary (`P5`), linearly rescaled so that the field's
//! minimum maps to 0 and its maximum to 255 (or a fixed window when given).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::Field;

pub fn write_field<W: Write>(w: &mut W, field: &Field) -> Result<()> {
    w.write_all(&(field.shape().len() as u64).to_le_bytes())?;
    for &e in field.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for &v in field.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_field<R: Read>(r: &mut R) -> Result<Field> {
    let ndim = read_u64(r)? as usize;
    if ndim > 16 {
        return Err(Error::Format(format!("implausible rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Field::new(shape, data)
}

pub fn to_bytes(field: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (1 + field.shape().len() + field.len()));
    write_field(&mut out, field).expect("writing to a Vec cannot fail");
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Field> {
    let mut cursor = bytes;
    let f = read_field(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(f)
}

/// Writes a 2-D field as binary PGM. `window` fixes the value range mapped to
/// `[0, 255]`; otherwise the field's own min/max are used.
pub fn write_pgm<W: Write>(w: &mut W, field: &Field, window: Option<(f64, f64)>) -> Result<()> {
    if field.shape().len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "PGM needs a 2-D field, got shape {:?}",
            field.shape()
        )));
    }
    let (rows, cols) = (field.shape()[0], field.shape()[1]);
    let (lo, hi) = window.unwrap_or((field.min(), field.max()));
    let span = hi - lo;
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let pixels: Vec<u8> = field
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect();
    w.write_all(&pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{randn, Rng};
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = Field::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let b = to_bytes(&f);
        assert_eq!(b.len(), 8 * 5);
        assert_eq!(&b[0..8], &2u64.to_le_bytes());
        assert_eq!(&b[8..16], &1u64.to_le_bytes());
        assert_eq!(&b[16..24], &2u64.to_le_bytes());
        assert_eq!(&b[24..32], &1.5f64.to_le_bytes());
    }

    #[test]
    fn truncated_input_fails() {
        let f = randn(&[3], &mut Rng::new(1, 0));
        let b = to_bytes(&f);
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn pgm_header_and_extremes() {
        let f = Field::from_fn_2d(2, 3, |i, j| (i * 3 + j) as f64);
        let mut out = Vec::new();
        write_pgm(&mut out, &f, None).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&out[..header.len()], header);
        let px = &out[header.len()..];
        assert_eq!(px.len(), 6);
        assert_eq!(px[0], 0);
        assert_eq!(px[5], 255);
    }

    proptest! {
        #[test]
        fn binary_roundtrip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let data = randn(&[rows, cols], &mut Rng::new(seed, 0));
            let back = from_bytes(&to_bytes(&data)).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
