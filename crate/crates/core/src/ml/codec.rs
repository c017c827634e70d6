//! Byte-exact parameter blob encoding.
//!
//! ```text
//! "FSTR" | version u16 | entry count u32
//! per entry: name length u16 | name utf-8 | rank u8 | dims u32 * rank
//! values: f64 little-endian, exactly sum(prod(dims)) of them
//! ```
//! All integers are little-endian.

use super::{MlError, ModelParams, TensorSpec};

pub const PARAMS_MAGIC: &[u8; 4] = b"FSTR";
pub const PARAMS_VERSION: u16 = 1;

pub fn serialize_params(p: &ModelParams) -> Result<Vec<u8>, MlError> {
    p.validate()?;
    let header: usize = p
        .layout
        .iter()
        .map(|t| 2 + t.name.len() + 1 + 4 * t.shape.len())
        .sum();
    let mut out = Vec::with_capacity(10 + header + 8 * p.values.len());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    let count = u32::try_from(p.layout.len())
        .map_err(|_| MlError::Format("too many layout entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in &p.layout {
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| MlError::Format(format!("tensor name too long: {}", t.name.len())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        let rank = u8::try_from(t.shape.len())
            .map_err(|_| MlError::Format("tensor rank above 255".into()))?;
        out.push(rank);
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| MlError::Format("dimension overflow".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    for v in &p.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MlError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| MlError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MlError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MlError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, MlError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ModelParams, MlError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != PARAMS_MAGIC {
        return Err(MlError::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != PARAMS_VERSION {
        return Err(MlError::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layout = Vec::with_capacity(count.min(1024));
    let mut total: usize = 0;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| MlError::Format("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| MlError::Format("tensor size overflow".into()))?;
        total = total
            .checked_add(numel)
            .ok_or_else(|| MlError::Format("tensor size overflow".into()))?;
        layout.push(TensorSpec { name, shape });
    }
    let remaining = bytes.len() - r.pos;
    if total.checked_mul(8) != Some(remaining) {
        return Err(MlError::Format(format!(
            "expected {total} values ({} bytes), found {remaining} bytes",
            total.saturating_mul(8)
        )));
    }
    let values = r
        .take(remaining)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ModelParams::new(values, layout).map_err(|e| MlError::Format(e.to_string()))
}
