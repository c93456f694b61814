//! Binary portable graymap (P5) label maps, maxval 255.

use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::model::LabelMap;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("missing or invalid {what}")))
    }
}

pub fn decode_labelmap(bytes: &[u8]) -> Result<LabelMap> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedHeader("not a binary graymap (P5)".into()));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!(
            "maxval {maxval}, expected 255"
        )));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedHeader("no separator after maxval".into()));
    }
    let data = &bytes[cur.pos + 1..];
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedHeader("image too large".into()))?;
    if data.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(Error::TrailingBytes(data.len() - expected));
    }
    LabelMap::new(height, width, data.to_vec())
}

pub fn encode_labelmap(map: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend_from_slice(map.values());
    out
}

pub fn read_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labelmap(&read_file(path.as_ref())?)
}

pub fn write_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_labelmap(map))
}
