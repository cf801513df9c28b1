//! Netpbm graymap (PGM) reading and writing.
//!
//! Reads both the plain (`P2`) and raw (`P5`) variants with maxval up to
//! 65535; raw samples wider than one byte are big-endian. Writes are always
//! raw, with a minimal `P5\n<w> <h>\n<maxval>\n` header and no comments.

use std::num::NonZeroU16;

use thiserror::Error;

use super::{BinaryMask, GridShape, PredictionField};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("bad magic number at byte {offset}: expected P2 or P5")]
    BadMagic { offset: usize },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: &'static str },
    #[error("maxval is zero at byte {offset}")]
    ZeroMaxval { offset: usize },
    #[error("maxval {value} at byte {offset} exceeds 65535")]
    MaxvalTooLarge { offset: usize, value: u64 },
    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("malformed sample at byte {offset}")]
    BadSample { offset: usize },
    #[error("sample {value} at byte {offset} exceeds maxval {maxval}")]
    SampleOutOfRange {
        offset: usize,
        value: u32,
        maxval: u32,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    /// Reads an unsigned decimal token. Returns the value and its start
    /// offset.
    fn number(&mut self, what: &'static str) -> Result<(u64, usize), PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        let mut value: u64 = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value
                .saturating_mul(10)
                .saturating_add(u64::from(self.bytes[self.pos] - b'0'));
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PgmError::MalformedHeader {
                offset: start,
                reason: what,
            });
        }
        if self.pos < self.bytes.len() && !is_space(self.bytes[self.pos]) && self.bytes[self.pos] != b'#' {
            return Err(PgmError::MalformedHeader {
                offset: self.pos,
                reason: what,
            });
        }
        Ok((value, start))
    }
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Decodes a PGM image into a field, mapping sample `v` to `v / maxval`.
pub fn read_pgm(bytes: &[u8]) -> Result<PredictionField, PgmError> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'5') {
        return Err(PgmError::BadMagic { offset: 0 });
    }
    let raw = bytes[1] == b'5';
    let mut cur = Cursor { bytes, pos: 2 };
    if cur.pos < bytes.len() && !is_space(bytes[cur.pos]) && bytes[cur.pos] != b'#' {
        return Err(PgmError::BadMagic { offset: 0 });
    }

    let (width, w_at) = cur.number("expected width")?;
    let (height, h_at) = cur.number("expected height")?;
    if width == 0 {
        return Err(PgmError::MalformedHeader {
            offset: w_at,
            reason: "width is zero",
        });
    }
    if height == 0 {
        return Err(PgmError::MalformedHeader {
            offset: h_at,
            reason: "height is zero",
        });
    }
    let (maxval, m_at) = cur.number("expected maxval")?;
    if maxval == 0 {
        return Err(PgmError::ZeroMaxval { offset: m_at });
    }
    if maxval > 65535 {
        return Err(PgmError::MaxvalTooLarge {
            offset: m_at,
            value: maxval,
        });
    }
    let too_big = PgmError::MalformedHeader {
        offset: w_at,
        reason: "image dimensions too large",
    };
    let n = usize::try_from(width)
        .ok()
        .zip(usize::try_from(height).ok())
        .and_then(|(w, h)| w.checked_mul(h))
        .ok_or(too_big.clone())?;
    let shape = GridShape::new(height as usize, width as usize).map_err(|_| too_big.clone())?;
    let maxval = maxval as u32;
    let scale = f64::from(maxval);

    let mut values = Vec::with_capacity(n.min(1 << 24));
    if raw {
        // Exactly one whitespace byte separates the header from the payload.
        if cur.pos >= bytes.len() {
            return Err(PgmError::TruncatedPayload {
                offset: cur.pos,
                expected: n,
                found: 0,
            });
        }
        if !is_space(bytes[cur.pos]) {
            return Err(PgmError::MalformedHeader {
                offset: cur.pos,
                reason: "expected whitespace before payload",
            });
        }
        let start = cur.pos + 1;
        let bpp = if maxval > 255 { 2 } else { 1 };
        let expected = n.checked_mul(bpp).ok_or(too_big)?;
        let payload = &bytes[start..];
        if payload.len() < expected {
            return Err(PgmError::TruncatedPayload {
                offset: start,
                expected,
                found: payload.len(),
            });
        }
        for i in 0..n {
            let v = if bpp == 1 {
                u32::from(payload[i])
            } else {
                u32::from(u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]))
            };
            if v > maxval {
                return Err(PgmError::SampleOutOfRange {
                    offset: start + i * bpp,
                    value: v,
                    maxval,
                });
            }
            values.push(f64::from(v) / scale);
        }
    } else {
        for _ in 0..n {
            cur.skip_whitespace_and_comments();
            if cur.pos >= bytes.len() {
                return Err(PgmError::TruncatedPayload {
                    offset: cur.pos,
                    expected: n,
                    found: values.len(),
                });
            }
            let at = cur.pos;
            let (v, _) = cur.number("sample").map_err(|_| PgmError::BadSample { offset: at })?;
            if v > u64::from(maxval) {
                return Err(PgmError::SampleOutOfRange {
                    offset: at,
                    value: v.min(u64::from(u32::MAX)) as u32,
                    maxval,
                });
            }
            values.push(v as f64 / scale);
        }
    }
    Ok(PredictionField { shape, values })
}

/// Encodes a field as raw PGM; each value is rounded to the nearest level.
pub fn write_pgm(field: &PredictionField, maxval: NonZeroU16) -> Vec<u8> {
    let maxval = maxval.get();
    let shape = field.shape();
    let header = format!("P5\n{} {}\n{}\n", shape.width(), shape.height(), maxval);
    let bpp = if maxval > 255 { 2 } else { 1 };
    let mut out = Vec::with_capacity(header.len() + shape.len() * bpp);
    out.extend_from_slice(header.as_bytes());
    let scale = f64::from(maxval);
    for &v in field.values() {
        let level = (v * scale).round() as u16;
        if bpp == 1 {
            out.push(level as u8);
        } else {
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

/// Masks are written with maxval 255: foreground 255, background 0.
pub fn write_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    write_pgm(&mask.to_field(), NonZeroU16::new(255).unwrap())
}
