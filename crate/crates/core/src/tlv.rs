//! Minimal tag-length-value codec shared by certificates, attestation
//! reports and protocol messages.
//!
//! Every field is `tag: u8 | len: u32 LE | value: [u8; len]`. Records are
//! canonical: fields appear in a fixed order and a decoder rejects anything
//! left over once the expected fields have been consumed.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TlvError {
    #[error("truncated TLV record (needed {needed} bytes, {available} available)")]
    Truncated { needed: usize, available: usize },
    #[error("unexpected TLV tag 0x{found:02x} (expected 0x{expected:02x})")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("field 0x{tag:02x} has length {len}, expected {expected}")]
    BadLength { tag: u8, len: usize, expected: usize },
    #[error("{0} trailing bytes after TLV record")]
    Trailing(usize),
    #[error("field 0x{0:02x} is not valid UTF-8")]
    Utf8(u8),
}

#[derive(Debug, Default, Clone)]
pub struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, tag: u8, value: &[u8]) -> &mut Self {
        let len = u32::try_from(value.len()).expect("TLV value larger than 4 GiB");
        self.buf.push(tag);
        self.buf.extend_from_slice(&len.to_le_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn put_u8(&mut self, tag: u8, v: u8) -> &mut Self {
        self.put(tag, &[v])
    }

    pub fn put_u16(&mut self, tag: u8, v: u16) -> &mut Self {
        self.put(tag, &v.to_le_bytes())
    }

    pub fn put_u32(&mut self, tag: u8, v: u32) -> &mut Self {
        self.put(tag, &v.to_le_bytes())
    }

    pub fn put_u64(&mut self, tag: u8, v: u64) -> &mut Self {
        self.put(tag, &v.to_le_bytes())
    }

    pub fn put_str(&mut self, tag: u8, s: &str) -> &mut Self {
        self.put(tag, s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct TlvReader<'a> {
    rest: &'a [u8],
}

impl<'a> TlvReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    /// Tag of the next field without consuming it.
    pub fn peek_tag(&self) -> Option<u8> {
        self.rest.first().copied()
    }

    /// Consumes the next field, whatever its tag.
    pub fn next_field(&mut self) -> Result<(u8, &'a [u8]), TlvError> {
        if self.rest.len() < 5 {
            return Err(TlvError::Truncated { needed: 5, available: self.rest.len() });
        }
        let tag = self.rest[0];
        let len = u32::from_le_bytes(self.rest[1..5].try_into().unwrap()) as usize;
        let body = &self.rest[5..];
        if body.len() < len {
            return Err(TlvError::Truncated { needed: len, available: body.len() });
        }
        let (value, rest) = body.split_at(len);
        self.rest = rest;
        Ok((tag, value))
    }

    pub fn expect(&mut self, tag: u8) -> Result<&'a [u8], TlvError> {
        let mut probe = self.clone();
        let (found, value) = probe.next_field()?;
        if found != tag {
            return Err(TlvError::UnexpectedTag { expected: tag, found });
        }
        *self = probe;
        Ok(value)
    }

    pub fn expect_array<const N: usize>(&mut self, tag: u8) -> Result<[u8; N], TlvError> {
        let v = self.expect(tag)?;
        v.try_into().map_err(|_| TlvError::BadLength { tag, len: v.len(), expected: N })
    }

    pub fn expect_u8(&mut self, tag: u8) -> Result<u8, TlvError> {
        Ok(self.expect_array::<1>(tag)?[0])
    }

    pub fn expect_u16(&mut self, tag: u8) -> Result<u16, TlvError> {
        Ok(u16::from_le_bytes(self.expect_array(tag)?))
    }

    pub fn expect_u32(&mut self, tag: u8) -> Result<u32, TlvError> {
        Ok(u32::from_le_bytes(self.expect_array(tag)?))
    }

    pub fn expect_u64(&mut self, tag: u8) -> Result<u64, TlvError> {
        Ok(u64::from_le_bytes(self.expect_array(tag)?))
    }

    pub fn expect_str(&mut self, tag: u8) -> Result<&'a str, TlvError> {
        std::str::from_utf8(self.expect(tag)?).map_err(|_| TlvError::Utf8(tag))
    }

    pub fn finish(self) -> Result<(), TlvError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(TlvError::Trailing(self.rest.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_tag_then_le_length() {
        let mut w = TlvWriter::new();
        w.put(0x07, b"ab");
        assert_eq!(w.finish(), vec![0x07, 2, 0, 0, 0, b'a', b'b']);
    }

    #[test]
    fn reader_enforces_order_and_trailing() {
        let mut w = TlvWriter::new();
        w.put_u32(1, 42).put_str(2, "hi");
        let bytes = w.finish();

        let mut r = TlvReader::new(&bytes);
        assert_eq!(r.expect(2), Err(TlvError::UnexpectedTag { expected: 2, found: 1 }));
        assert_eq!(r.expect_u32(1).unwrap(), 42);
        assert_eq!(r.expect_str(2).unwrap(), "hi");
        r.finish().unwrap();

        let mut extended = bytes.clone();
        extended.push(0);
        let mut r = TlvReader::new(&extended);
        r.expect_u32(1).unwrap();
        r.expect_str(2).unwrap();
        assert_eq!(r.finish(), Err(TlvError::Trailing(1)));
    }

    #[test]
    fn truncation_detected() {
        let mut w = TlvWriter::new();
        w.put(3, &[1, 2, 3, 4]);
        let bytes = w.finish();
        for cut in 0..bytes.len() {
            assert!(matches!(
                TlvReader::new(&bytes[..cut]).expect(3),
                Err(TlvError::Truncated { .. })
            ));
        }
    }
}
