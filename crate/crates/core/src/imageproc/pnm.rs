//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn format_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        msg: msg.into(),
    })
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
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

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return format_err(start, format!("expected {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map_or_else(|| format_err(start, format!("{what} out of range")), Ok)
    }
}

/// Parses a P5/P6 file.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return format_err(0, "bad magic: expected P5 or P6"),
    };
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    r.skip_space_and_comments();
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return format_err(maxval_at, "zero image dimension");
    }
    if maxval != 255 {
        return format_err(maxval_at, format!("maxval {maxval} unsupported, only 255"));
    }
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return format_err(r.pos, "expected single whitespace before pixel data"),
    }
    let n = width * height * channels;
    let payload = &bytes[r.pos..];
    if payload.len() < n {
        return format_err(
            bytes.len(),
            format!("truncated payload: expected {n} bytes, found {}", payload.len()),
        );
    }
    let plane = width * height;
    let mut data = vec![0.0; n];
    for (i, &b) in payload[..n].iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        data[c * plane + p] = b as f64 / 255.0;
    }
    Image::new(channels, height, width, data)
}

fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Serializes as P5 (1 channel) or P6 (3 channels).
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(img.data()[ch * plane + p]));
        }
    }
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_pnm(&fs::read(path)?)
}

pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn p5_loads_as_single_channel() {
        let bytes = b"P5\n# comment\n2 1\n255\n\x00\xff";
        let img = decode_pnm(bytes).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 1, 2));
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn p6_is_interleaved_on_disk() {
        let bytes = b"P6 1 1 255\n\xff\x00\x33";
        let img = decode_pnm(bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0x33 as f64 / 255.0]);
        assert_eq!(encode_pnm(&img), b"P6\n1 1\n255\n\xff\x00\x33");
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00"), Err(Error::Format { offset: 7, .. })));
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\x00"), Err(Error::Format { offset: 12, .. })));
        assert!(matches!(decode_pnm(b"P5\nx"), Err(Error::Format { .. })));
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    proptest! {
        #[test]
        fn round_trip_error_within_one_level(
            c in prop::sample::select(vec![1usize, 3]),
            h in 1usize..6,
            w in 1usize..6,
            seed in prop::collection::vec(0.0f64..=1.0, 108),
        ) {
            let img = Image::new(c, h, w, seed[..c * h * w].to_vec()).unwrap();
            let back = decode_pnm(&encode_pnm(&img)).unwrap();
            prop_assert_eq!(back.channels(), c);
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }
}
