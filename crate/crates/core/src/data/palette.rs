use super::labels::LabelMap;
use super::pnm::{Pnm, PnmKind};
use crate::error::{Error, Result};

pub const PALETTE: [[u8; 3]; 9] = [
    [0, 0, 0],
    [64, 0, 128],
    [64, 64, 0],
    [0, 128, 192],
    [0, 0, 192],
    [128, 128, 0],
    [64, 64, 128],
    [192, 128, 128],
    [192, 64, 0],
];

/// Paints each class with its palette color.
pub fn colorize(labels: &LabelMap) -> Result<Pnm> {
    let mut pixels = Vec::with_capacity(labels.as_slice().len() * 3);
    for &l in labels.as_slice() {
        let rgb = PALETTE.get(l as usize).ok_or(Error::LabelOutOfRange {
            label: l as usize,
            classes: PALETTE.len(),
        })?;
        pixels.extend_from_slice(rgb);
    }
    Pnm::new(PnmKind::Rgb, labels.width(), labels.height(), pixels)
}

/// Inverse of [`colorize`]; rejects colors outside the palette.
pub fn decolorize(image: &Pnm) -> Result<LabelMap> {
    if image.kind != PnmKind::Rgb {
        return Err(Error::shape("decolorize", "expected an RGB image"));
    }
    let labels = image
        .pixels
        .chunks_exact(3)
        .enumerate()
        .map(|(i, px)| {
            PALETTE
                .iter()
                .position(|c| c[..] == *px)
                .map(|c| c as u8)
                .ok_or_else(|| Error::shape("decolorize", format!("pixel {i} has no palette entry")))
        })
        .collect::<Result<Vec<u8>>>()?;
    LabelMap::new(image.height, image.width, labels)
}
