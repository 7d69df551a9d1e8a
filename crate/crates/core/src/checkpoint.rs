//! Little-endian binary container shared by the model checkpoints.
//!
//! Layout: 8-byte magic, u32 format version, u8 model kind, then the
//! model's fields, then a trailing FNV-1a checksum of everything before it.

use std::io::{Read, Write};

use crate::error::CheckpointError;
use crate::kg::Fnv64;

pub const MAGIC: &[u8; 8] = b"KGSEEK\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Scorer = 1,
    Refiner = 2,
}

pub struct CheckpointWriter<W: Write> {
    out: W,
    hash: Fnv64,
}

impl<W: Write> CheckpointWriter<W> {
    pub fn new(out: W, kind: Kind) -> Result<Self, CheckpointError> {
        let mut w = Self { out, hash: Fnv64::default() };
        w.bytes(MAGIC)?;
        w.bytes(&VERSION.to_le_bytes())?;
        w.bytes(&[kind as u8])?;
        Ok(w)
    }

    fn bytes(&mut self, b: &[u8]) -> Result<(), CheckpointError> {
        self.hash.write(b);
        self.out.write_all(b)?;
        Ok(())
    }

    pub fn u64(&mut self, v: u64) -> Result<(), CheckpointError> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<(), CheckpointError> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<(), CheckpointError> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn strings(&mut self, ss: &[String]) -> Result<(), CheckpointError> {
        self.u64(ss.len() as u64)?;
        for s in ss {
            self.u64(s.len() as u64)?;
            self.bytes(s.as_bytes())?;
        }
        Ok(())
    }

    /// Writes only the rows of a `rows x width` matrix that are not all zero.
    pub fn sparse_rows(&mut self, m: &[f64], width: usize) -> Result<(), CheckpointError> {
        let nonzero: Vec<usize> = (0..m.len() / width)
            .filter(|&i| m[i * width..(i + 1) * width].iter().any(|&v| v != 0.0))
            .collect();
        self.u64((m.len() / width) as u64)?;
        self.u64(nonzero.len() as u64)?;
        for i in nonzero {
            self.u64(i as u64)?;
            for &v in &m[i * width..(i + 1) * width] {
                self.f64(v)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CheckpointError> {
        let sum = self.hash.finish();
        self.out.write_all(&sum.to_le_bytes())?;
        self.out.flush()?;
        Ok(())
    }
}

pub struct CheckpointReader<R: Read> {
    input: R,
    hash: Fnv64,
}

impl<R: Read> CheckpointReader<R> {
    pub fn new(input: R, kind: Kind) -> Result<Self, CheckpointError> {
        let mut r = Self { input, hash: Fnv64::default() };
        let mut magic = [0u8; 8];
        if r.input.read_exact(&mut magic).is_err() || &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        r.hash.write(&magic);
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let [k] = r.array::<1>()?;
        if k != kind as u8 {
            return Err(CheckpointError::Corrupt(format!("expected model kind {}, found {k}", kind as u8)));
        }
        Ok(r)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut buf = [0u8; N];
        self.input
            .read_exact(&mut buf)
            .map_err(|e| CheckpointError::Corrupt(format!("truncated: {e}")))?;
        self.hash.write(&buf);
        Ok(buf)
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn len_matching(&mut self, expected: usize) -> Result<(), CheckpointError> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(CheckpointError::Corrupt(format!("array length {n}, expected {expected}")));
        }
        Ok(())
    }

    pub fn f64s_into(&mut self, dst: &mut [f64]) -> Result<(), CheckpointError> {
        self.len_matching(dst.len())?;
        for v in dst {
            *v = self.f64()?;
        }
        Ok(())
    }

    pub fn strings(&mut self) -> Result<Vec<String>, CheckpointError> {
        let n = self.u64()? as usize;
        if n > 1 << 24 {
            return Err(CheckpointError::Corrupt(format!("implausible string count {n}")));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let len = self.u64()? as usize;
            if len > 1 << 20 {
                return Err(CheckpointError::Corrupt(format!("implausible string length {len}")));
            }
            let mut buf = vec![0u8; len];
            self.input
                .read_exact(&mut buf)
                .map_err(|e| CheckpointError::Corrupt(format!("truncated: {e}")))?;
            self.hash.write(&buf);
            out.push(String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("invalid UTF-8 name".into()))?);
        }
        Ok(out)
    }

    pub fn sparse_rows_into(&mut self, dst: &mut [f64], width: usize) -> Result<(), CheckpointError> {
        let rows = dst.len() / width;
        self.len_matching(rows)?;
        let n = self.u64()? as usize;
        if n > rows {
            return Err(CheckpointError::Corrupt(format!("{n} stored rows exceed {rows}")));
        }
        for _ in 0..n {
            let i = self.u64()? as usize;
            if i >= rows {
                return Err(CheckpointError::Corrupt(format!("row index {i} out of range")));
            }
            for v in &mut dst[i * width..(i + 1) * width] {
                *v = self.f64()?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CheckpointError> {
        let expected = self.hash.finish();
        let mut buf = [0u8; 8];
        self.input
            .read_exact(&mut buf)
            .map_err(|e| CheckpointError::Corrupt(format!("missing checksum: {e}")))?;
        if u64::from_le_bytes(buf) != expected {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        Ok(())
    }
}
