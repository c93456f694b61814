//! The MKIO container.
//!
//! ```text
//! "MKIO" | u32 version | u32 N | u32 H | u32 W | u32 C | N*H*W f32 masks | N*(C+1) f32 probs
//! ```
//!
//! All integers and floats are little-endian; masks are query-major. A
//! heatmap is stored as a bundle with `N = 1`, `C = 0` and a single
//! probability of 1.

use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::model::{AnomalyMap, Bundle};

pub const BUNDLE_MAGIC: [u8; 4] = *b"MKIO";
pub const BUNDLE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

struct Header {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_raw(n: usize, h: usize, w: usize, c: usize, masks: &[f32], probs: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (masks.len() + probs.len()));
    out.extend_from_slice(&BUNDLE_MAGIC);
    put_u32(&mut out, BUNDLE_VERSION as usize);
    for d in [n, h, w, c] {
        put_u32(&mut out, d);
    }
    for v in masks.iter().chain(probs) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn floats(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize, usize)> {
    if bytes.len() >= 4 && bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d = |i: usize| u32_at(bytes, 8 + 4 * i) as u64;
    let (n, h, w, c) = (d(0), d(1), d(2), d(3));
    let mask_len = n as u128 * h as u128 * w as u128;
    let prob_len = n as u128 * (c as u128 + 1);
    let expected = HEADER_LEN as u128 + 4 * (mask_len + prob_len);
    if expected > bytes.len() as u128 {
        return Err(Error::TruncatedPayload {
            expected: usize::try_from(expected).unwrap_or(usize::MAX),
            found: bytes.len(),
        });
    }
    let expected = expected as usize;
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let header = Header {
        n: n as usize,
        h: h as usize,
        w: w as usize,
        c: c as usize,
    };
    Ok((header, mask_len as usize, prob_len as usize))
}

pub fn encode_bundle(bundle: &Bundle) -> Vec<u8> {
    encode_raw(
        bundle.n_queries(),
        bundle.height(),
        bundle.width(),
        bundle.n_classes(),
        bundle.masks().values(),
        bundle.probs().values(),
    )
}

/// Parses and validates a bundle.
pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle> {
    let (hd, mask_len, prob_len) = parse_header(bytes)?;
    let masks_end = HEADER_LEN + 4 * mask_len;
    let masks = floats(&bytes[HEADER_LEN..masks_end]);
    let probs = floats(&bytes[masks_end..masks_end + 4 * prob_len]);
    Bundle::from_raw(hd.n, hd.h, hd.w, hd.c, masks, probs)
}

pub fn encode_heatmap(map: &AnomalyMap) -> Vec<u8> {
    encode_raw(1, map.height(), map.width(), 0, map.values(), &[1.0])
}

pub fn decode_heatmap(bytes: &[u8]) -> Result<AnomalyMap> {
    let (hd, mask_len, _) = parse_header(bytes)?;
    if hd.n != 1 || hd.c != 0 {
        return Err(Error::DimensionMismatch(format!(
            "heatmap container must have N = 1 and C = 0, found N = {} and C = {}",
            hd.n, hd.c
        )));
    }
    let probs = floats(&bytes[HEADER_LEN + 4 * mask_len..]);
    if probs != [1.0] {
        return Err(Error::RangeViolation {
            what: "heatmap class probability",
            index: 0,
            value: probs[0],
        });
    }
    AnomalyMap::new(
        hd.h,
        hd.w,
        floats(&bytes[HEADER_LEN..HEADER_LEN + 4 * mask_len]),
    )
}

pub fn write_bundle(bundle: &Bundle, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_bundle(bundle))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    decode_bundle(&read_file(path.as_ref())?)
}

pub fn write_heatmap(map: &AnomalyMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_heatmap(map))
}

pub fn read_heatmap(path: impl AsRef<Path>) -> Result<AnomalyMap> {
    decode_heatmap(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Bundle {
        Bundle::from_raw(
            2,
            1,
            3,
            1,
            vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125],
            vec![0.3, 0.7, 1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn layout() {
        let bytes = encode_bundle(&tiny());
        assert_eq!(&bytes[..4], b"MKIO");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 2);
        assert_eq!(u32_at(&bytes, 20), 1);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * (6 + 4));
        assert_eq!(
            &bytes[HEADER_LEN + 4..HEADER_LEN + 8],
            &0.5f32.to_le_bytes()
        );
    }

    #[test]
    fn round_trip() {
        let b = tiny();
        assert_eq!(decode_bundle(&encode_bundle(&b)).unwrap(), b);
    }

    #[test]
    fn malformed() {
        let good = encode_bundle(&tiny());
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_bundle(&bad), Err(Error::BadMagic { found }) if &found == b"XXXX"));
        assert!(matches!(
            decode_bundle(&good[..good.len() - 1]),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            decode_bundle(&good[..10]),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            decode_bundle(b"MK"),
            Err(Error::TruncatedPayload { .. })
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_bundle(&long), Err(Error::TrailingBytes(1))));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_bundle(&v2),
            Err(Error::UnsupportedVersion(2))
        ));
        let mut range = good.clone();
        range[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(
            decode_bundle(&range),
            Err(Error::RangeViolation { .. })
        ));
        let mut huge = good;
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_bundle(&huge),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn heatmap_round_trip() {
        let m = AnomalyMap::new(2, 2, vec![0.0, 0.1, 0.7, 1.0]).unwrap();
        let bytes = encode_heatmap(&m);
        assert_eq!(decode_heatmap(&bytes).unwrap(), m);
        assert!(matches!(
            decode_heatmap(&encode_bundle(&tiny())),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn files_are_written_atomically_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mkio");
        write_bundle(&tiny(), &path).unwrap();
        write_bundle(&tiny(), &path).unwrap();
        assert_eq!(read_bundle(&path).unwrap(), tiny());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(matches!(
            read_bundle(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
