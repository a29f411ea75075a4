//! False-colour rendering of label maps.

use super::{LabelMap, UNLABELED};
use crate::raster::RgbImage;

const MASK24: u32 = 0x00ff_ffff;

/// Colour of `label` under the palette picked by `seed`.
///
/// Label 0 is black. On labels below 2^24 the mapping is a bijection onto the
/// 24-bit colours that never yields black, so distinct labels always get
/// distinct colours. Larger labels are folded into 24 bits first.
pub fn palette_color(label: u32, seed: u32) -> [u8; 3] {
    if label == UNLABELED {
        return [0, 0, 0];
    }
    let mut x = (label ^ (label >> 24)) & MASK24;
    if x == 0 {
        x = 1;
    }
    // xorshifts and odd multipliers are invertible mod 2^24 and fix 0.
    let m1 = (0x2c_1b3d ^ (seed << 1)) | 1;
    let m2 = (0x9e_3779 ^ (seed >> 7)) | 1;
    x ^= x >> 12;
    x = x.wrapping_mul(m1) & MASK24;
    x ^= x >> 11;
    x = x.wrapping_mul(m2) & MASK24;
    x ^= x >> 12;
    [(x >> 16) as u8, (x >> 8) as u8, x as u8]
}

pub fn render_labels(map: &LabelMap, seed: u32) -> RgbImage {
    let mut data = Vec::with_capacity(map.labels.len() * 3);
    let mut last = (UNLABELED, [0u8; 3]);
    for &l in &map.labels {
        if l != last.0 {
            last = (l, palette_color(l, seed));
        }
        data.extend_from_slice(&last.1);
    }
    RgbImage::from_raw(map.width, map.height, data).expect("same dims")
}
