//! Binary PGM (`P5`, maxval 255) and density heatmaps.

use std::path::Path;

use crate::density::DensityMap;
use crate::error::{Error, Format, Result};
use crate::image::GrayImage;

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

/// Header tokenizer: whitespace separated, `#` starts a comment running to
/// the end of the line.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<&str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Truncated {
                format: Format::Pgm,
                needed: 1,
                available: 0,
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| malformed("non-ASCII header"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse().map_err(|_| malformed(format!("{what} `{tok}` is not a number")))
    }
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Malformed {
        format: Format::Pgm,
        reason: reason.into(),
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token()?;
    if magic != "P5" {
        return Err(Error::UnsupportedImage(format!(
            "expected binary PGM (P5), found `{}`",
            magic.chars().take(8).collect::<String>()
        )));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedImage(format!("PGM maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(malformed(format!("zero dimension {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = h.pos + 1;
    let needed = width * height;
    let available = bytes.len().saturating_sub(start);
    if available < needed {
        return Err(Error::Truncated {
            format: Format::Pgm,
            needed,
            available,
        });
    }
    GrayImage::new(width, height, bytes[start..start + needed].to_vec())
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(image))?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&std::fs::read(path)?)
}

/// `round(255 * v / max)`, all black when the map has no positive value.
pub fn render_heatmap(map: &DensityMap) -> GrayImage {
    let max = map.values.iter().copied().fold(0.0f32, f32::max);
    let pixels = if max > 0.0 {
        map.values
            .iter()
            .map(|&v| (255.0 * f64::from(v.max(0.0)) / f64::from(max)).round() as u8)
            .collect()
    } else {
        vec![0; map.values.len()]
    };
    GrayImage {
        width: map.width,
        height: map.height,
        pixels,
    }
}
