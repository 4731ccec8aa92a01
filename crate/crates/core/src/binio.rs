//! Little-endian readers/writers shared by the checkpoint and embedding formats.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn fail<T>(&self, reason: impl Into<String>) -> Result<T, BinError> {
        Err(BinError::Format { offset: self.pos, reason: reason.into() })
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!("unexpected end of data (wanted {n} bytes)"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<(), BinError> {
        let at = self.pos;
        let got = self.take(4)?;
        if got != want {
            return Err(BinError::Format {
                offset: at,
                reason: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(want)),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn string(&mut self) -> Result<String, BinError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| BinError::Format { offset: at, reason: "name is not valid UTF-8".into() })
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>, BinError> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| BinError::Format {
            offset: self.pos,
            reason: "payload size overflows".into(),
        })?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn finish(&self) -> Result<(), BinError> {
        if self.pos != self.buf.len() {
            return self.fail(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
