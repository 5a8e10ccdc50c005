//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use crate::error::{Error, Result};

/// A decoded 8-bit raster: `channels` is 3 for PPM and 1 for PGM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Skip whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                what: self.what,
                offset: start,
                message: format!("{field} out of range"),
            })
    }
}

fn decode(bytes: &[u8], magic: &[u8; 2], channels: usize, what: &'static str) -> Result<Raster> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        what,
    };
    if bytes.get(..2) != Some(&magic[..]) {
        return Err(cur.err(format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    cur.pos = 2;
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(cur.err("expected whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::Format {
            what,
            offset: maxval_at,
            message: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected a single whitespace byte before the raster"));
    }
    cur.pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(Error::Format {
            what,
            offset: bytes.len(),
            message: format!("truncated raster: {have} of {need} bytes"),
        });
    }
    if have > need {
        return Err(Error::Format {
            what,
            offset: cur.pos + need,
            message: format!("{} trailing bytes after raster", have - need),
        });
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: bytes[cur.pos..].to_vec(),
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Raster> {
    decode(bytes, b"P6", 3, "PPM")
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    decode(bytes, b"P5", 1, "PGM")
}

fn encode(magic: &str, width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::shape(format!(
            "{} RGB bytes for a {width}x{height} image",
            rgb.len()
        )));
    }
    Ok(encode("P6", width, height, rgb))
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Result<Vec<u8>> {
    if gray.len() != width * height {
        return Err(Error::shape(format!(
            "{} gray bytes for a {width}x{height} image",
            gray.len()
        )));
    }
    Ok(encode("P5", width, height, gray))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_with_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let r = decode_ppm(&bytes).unwrap();
        assert_eq!((r.width, r.height, r.channels), (2, 1, 3));
        assert_eq!(r.data, vec![255, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn round_trip() {
        let bytes = encode_pgm(3, 2, &[0, 1, 2, 3, 4, 255]).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        let r = decode_pgm(&bytes).unwrap();
        assert_eq!(r.data, vec![0, 1, 2, 3, 4, 255]);
    }

    #[test]
    fn malformed_inputs_name_offsets() {
        let err = |b: &[u8]| match decode_ppm(b) {
            Err(Error::Format {
                offset, message, ..
            }) => (offset, message),
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(err(b"P5\n1 1\n255\n\0").0, 0);
        let (off, msg) = err(b"P6\n1 1\n65535\n\0\0\0\0\0\0");
        assert_eq!(off, 7);
        assert!(msg.contains("maxval"));
        let (off, msg) = err(b"P6\n2 2\n255\n\0\0\0");
        assert_eq!(off, 14);
        assert!(msg.contains("truncated"));
        let (off, _) = err(b"P6\nx 2\n255\n");
        assert_eq!(off, 3);
        assert!(decode_ppm(b"P6\n1 1\n255\n\0\0\0\0").is_err());
        assert!(decode_ppm(b"").is_err());
    }
}
