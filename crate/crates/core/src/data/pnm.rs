//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use super::labels::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    /// One byte per pixel.
    Gray,
    /// Three interleaved bytes per pixel.
    Rgb,
}

impl PnmKind {
    fn magic(self) -> &'static str {
        match self {
            PnmKind::Gray => "P5",
            PnmKind::Rgb => "P6",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }
}

/// A decoded image: `height * width * channels` bytes, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Pnm {
    pub fn new(kind: PnmKind, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * kind.channels() {
            return Err(Error::shape(
                "pnm",
                format!("{} bytes for a {width}x{height} {}", pixels.len(), kind.magic()),
            ));
        }
        Ok(Pnm {
            kind,
            width,
            height,
            pixels,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{}\n{} {}\n255\n", self.kind.magic(), self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// `source` names the input in diagnostics.
    pub fn decode(bytes: &[u8], source: &str) -> Result<Self> {
        let mut p = HeaderParser {
            bytes,
            pos: 0,
            source,
        };
        let kind = match bytes.get(..2) {
            Some(b"P5") => PnmKind::Gray,
            Some(b"P6") => PnmKind::Rgb,
            _ => return Err(p.error("expected magic P5 or P6")),
        };
        p.pos = 2;
        let width = p.number("width")?;
        let height = p.number("height")?;
        let maxval = p.number("maxval")?;
        if maxval != 255 {
            return Err(p.error(&format!("maxval {maxval} is not 255")));
        }
        match bytes.get(p.pos) {
            Some(b) if b.is_ascii_whitespace() => p.pos += 1,
            _ => return Err(p.error("expected one whitespace byte before the payload")),
        }
        let need = width * height * kind.channels();
        let payload = &bytes[p.pos..];
        if payload.len() < need {
            return Err(p.error(&format!("truncated payload: need {need} bytes, have {}", payload.len())));
        }
        if payload.len() > need {
            p.pos += need;
            return Err(p.error("trailing bytes after payload"));
        }
        Pnm::new(kind, width, height, payload.to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }

    /// Raster values as a `(1, c, h, w)` tensor in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let c = self.kind.channels();
        let plane = self.width * self.height;
        let mut data = vec![0.0; c * plane];
        for (i, px) in self.pixels.chunks_exact(c).enumerate() {
            for (ch, &b) in px.iter().enumerate() {
                data[ch * plane + i] = b as f64 / 255.0;
            }
        }
        Tensor::from_vec([1, c, self.height, self.width], data).expect("sized")
    }

    /// Quantizes batch item `n` of a 1- or 3-channel tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let s = t.shape();
        let kind = match s.c {
            1 => PnmKind::Gray,
            3 => PnmKind::Rgb,
            c => return Err(Error::shape("pnm", format!("cannot store c={c} as PNM"))),
        };
        let item = t.item(n);
        let plane = s.plane();
        let mut pixels = Vec::with_capacity(item.len());
        for i in 0..plane {
            for ch in 0..s.c {
                pixels.push((item[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        Pnm::new(kind, s.w, s.h, pixels)
    }

    /// Labels stored as raw class indices.
    pub fn from_labels(labels: &LabelMap) -> Self {
        Pnm {
            kind: PnmKind::Gray,
            width: labels.width(),
            height: labels.height(),
            pixels: labels.as_slice().to_vec(),
        }
    }

    pub fn to_labels(&self) -> Result<LabelMap> {
        if self.kind != PnmKind::Gray {
            return Err(Error::shape("pnm", "label maps must be P5"));
        }
        LabelMap::new(self.height, self.width, self.pixels.clone())
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl HeaderParser<'_> {
    fn error(&self, detail: &str) -> Error {
        Error::Pnm {
            path: self.source.to_string(),
            offset: self.pos,
            detail: detail.to_string(),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
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
        let before = self.pos;
        self.skip_space();
        if self.pos == before {
            return Err(self.error(&format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(&format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .ok()
            .filter(|&v| v > 0 && v < 1 << 24)
            .ok_or_else(|| Error::Pnm {
                path: self.source.to_string(),
                offset: start,
                detail: format!("{what} out of range"),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_layout() {
        let img = Pnm::new(PnmKind::Gray, 2, 2, vec![0, 1, 2, 3]).unwrap();
        let mut expected = b"P5\n2 2\n255\n".to_vec();
        expected.extend_from_slice(&[0, 1, 2, 3]);
        assert_eq!(img.encode(), expected);
        assert_eq!(Pnm::decode(&expected, "t").unwrap(), img);
    }

    #[test]
    fn rgb_pixel_bytes() {
        let t = Tensor::from_vec([1, 3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let img = Pnm::from_tensor(&t, 0).unwrap();
        assert!(img.encode().ends_with(&[0xFF, 0x00, 0x00]));
        assert_eq!(img.to_tensor(), t);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5 # made by hand\n1 # w\n 1\n255\n\x07";
        assert_eq!(Pnm::decode(bytes, "t").unwrap().pixels, vec![7]);
    }

    #[test]
    fn diagnostics() {
        let err = Pnm::decode(b"P5\n2 2\n65535\n", "x.pgm").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
        let err = Pnm::decode(b"P5\n2 2\n255\n\x00\x01", "x.pgm").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated") && msg.contains("offset 11"), "{msg}");
        assert!(Pnm::decode(b"P3\n1 1\n255\n0", "x").is_err());
        assert!(Pnm::decode(b"P5\n1\n", "x").is_err());
        assert!(Pnm::decode(b"P5\n1 1\n255\n\x00\x00", "x").is_err());
    }
}
