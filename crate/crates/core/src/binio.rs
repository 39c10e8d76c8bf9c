//! Little-endian framing shared by the bundle and checkpoint formats:
//! 4-byte magic, 1-byte version, body, CRC32 of everything before it.

use crate::error::{Result, VictrError};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u8) -> Self {
        let mut buf = magic.to_vec();
        buf.push(version);
        Self { buf }
    }

    /// A writer for a nested section with no framing of its own.
    pub fn plain() -> Self {
        Self { buf: Vec::new() }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Length-prefixed (u32) byte string.
    pub fn blob(&mut self, v: &[u8]) -> Result<()> {
        self.u32(len_u32(v.len())?);
        self.bytes(v);
        Ok(())
    }

    /// Length-prefixed (u16) UTF-8 string.
    pub fn str16(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len()).map_err(|_| VictrError::Range(format!("string of {} bytes", s.len())))?;
        self.u16(n);
        self.bytes(s.as_bytes());
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| VictrError::Range(format!("length {n} exceeds u32")))
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, returning a reader over the body.
    /// The checksum is verified separately by [`Reader::verify`].
    pub fn open(data: &'a [u8], magic: &[u8; 4], version: u8) -> Result<Self> {
        let mut found = [0u8; 4];
        let head = data.len().min(4);
        found[..head].copy_from_slice(&data[..head]);
        if head < 4 || &found != magic {
            return Err(VictrError::MagicMismatch {
                expected: *magic,
                found,
            });
        }
        let mut r = Self { data, pos: 4 };
        let v = r.u8()?;
        if v != version {
            return Err(VictrError::Version {
                found: v,
                supported: version,
            });
        }
        Ok(r)
    }

    /// A reader over a nested section with no framing of its own.
    pub fn plain(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(VictrError::Truncation {
                expected: self.pos.saturating_add(n),
                actual: self.data.len(),
            }),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| VictrError::Spec(format!("invalid utf-8 string: {e}")))
    }

    /// Ensures exactly a CRC32 trailer remains and that it matches.
    pub fn verify(mut self) -> Result<()> {
        let body_end = self.pos;
        let stored = self.u32()?;
        if self.pos != self.data.len() {
            return Err(VictrError::Truncation {
                expected: self.pos,
                actual: self.data.len(),
            });
        }
        let computed = crc32fast::hash(&self.data[..body_end]);
        if stored != computed {
            return Err(VictrError::Checksum { stored, computed });
        }
        Ok(())
    }

    /// Verifies the CRC over the whole buffer before any body is parsed,
    /// assuming the trailer is the last four bytes.
    pub fn precheck_crc(data: &[u8]) -> Result<()> {
        if data.len() < 9 {
            return Err(VictrError::Truncation {
                expected: 9,
                actual: data.len(),
            });
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(VictrError::Checksum { stored, computed });
        }
        Ok(())
    }
}
