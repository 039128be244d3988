//! Little-endian helpers shared by the DSUF, DSUC and DSUN formats.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(magic);
        let mut w = Writer { buf };
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s<'a>(&mut self, values: impl IntoIterator<Item = &'a f32>) {
        for v in values {
            self.f32(*v);
        }
    }

    pub fn finish(self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader {
    path: PathBuf,
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    /// Opens `path`, checks the magic and the format version.
    pub fn open(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        };
        if r.bytes.len() < 4 || &r.bytes[..4] != magic {
            return Err(r.format(format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        r.pos = 4;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.format(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    pub fn format(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: end,
                found: self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    /// Fails early with a truncation error if fewer than `n` bytes remain.
    pub fn require(&self, n: usize) -> Result<()> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.format("payload size overflows"))?;
        let b = self.take(bytes)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Reads only the fixed 16-byte DSU header: magic, version, and two u32 fields.
pub(crate) fn peek_header(path: &Path, magic: &[u8; 4]) -> Result<(u32, u32)> {
    use std::io::Read;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 16];
    let mut read = 0;
    while read < head.len() {
        let n = file.read(&mut head[read..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        read += n;
    }
    if read < 4 || &head[..4] != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        });
    }
    if read < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 16,
            found: read,
        });
    }
    let field = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]);
    if field(4) != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {}", field(4)),
        });
    }
    Ok((field(8), field(12)))
}
