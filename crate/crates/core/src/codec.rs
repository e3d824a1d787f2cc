//! Little-endian binary encoding with a trailing CRC-32, shared by the model
//! file and the training-pair cache.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: magic.to_vec() };
        w.u32(version as usize);
        w
    }

    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits in 32 bits");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    pub fn row_major(&mut self, m: &DMatrix<f64>) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.f64(m[(r, c)]);
            }
        }
    }

    /// Shape then entries, column-major.
    pub fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u32(m.nrows());
        self.u32(m.ncols());
        self.f64s(m.iter().copied());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    payload: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and checksum; returns a reader positioned after the version.
    pub fn new(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format("file too short"));
        }
        if &bytes[..4] != magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            )));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::format(format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})")));
        }
        let mut r = Self { payload, pos: 4 };
        let v = r.u32()? as u32;
        if v != version {
            return Err(Error::format(format!("unsupported format version {v}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.payload.len());
        let end = end.ok_or_else(|| Error::format("unexpected end of data"))?;
        let s = &self.payload[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(Error::format("unexpected end of data"));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn row_major(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::format("matrix too large"))?;
        let v = self.f64s(n)?;
        Ok(DMatrix::from_row_slice(rows, cols, &v))
    }

    pub fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::format("matrix too large"))?;
        let v = self.f64s(n)?;
        Ok(DMatrix::from_vec(rows, cols, v))
    }

    pub fn remaining(&self) -> usize {
        self.payload.len() - self.pos
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
