use crate::labelmap::BinaryMask;

/// Foreground pixels within Chebyshev distance `d` of the mask boundary.
///
/// A boundary pixel is a foreground pixel with a 4-neighbour that is
/// background or lies outside the raster.
pub fn boundary_band(bits: &[bool], width: usize, height: usize, d: usize) -> Vec<bool> {
    let at = |x: usize, y: usize| bits[y * width + x];
    let mut boundary = vec![false; bits.len()];
    for y in 0..height {
        for x in 0..width {
            if !at(x, y) {
                continue;
            }
            boundary[y * width + x] = x == 0
                || y == 0
                || x + 1 == width
                || y + 1 == height
                || !at(x - 1, y)
                || !at(x + 1, y)
                || !at(x, y - 1)
                || !at(x, y + 1);
        }
    }
    let mut band = dilate_square(&boundary, width, height, d);
    for (b, &f) in band.iter_mut().zip(bits) {
        *b &= f;
    }
    band
}

/// Dilation by a (2d+1)×(2d+1) square, done as two 1-D passes with prefix counts.
fn dilate_square(bits: &[bool], width: usize, height: usize, d: usize) -> Vec<bool> {
    let pass = |src: &[bool], len: usize, lines: usize, idx: &dyn Fn(usize, usize) -> usize| {
        let mut out = vec![false; src.len()];
        let mut prefix = vec![0u32; len + 1];
        for line in 0..lines {
            for i in 0..len {
                prefix[i + 1] = prefix[i] + u32::from(src[idx(line, i)]);
            }
            for i in 0..len {
                let lo = i.saturating_sub(d);
                let hi = (i + d + 1).min(len);
                out[idx(line, i)] = prefix[hi] > prefix[lo];
            }
        }
        out
    };
    let horizontal = pass(bits, width, height, &|y, x| y * width + x);
    pass(&horizontal, height, width, &|x, y| y * width + x)
}

/// Boundary IoU of two same-sized masks with band width `d`.
///
/// Returns 1.0 when both bands are empty.
pub fn biou(a: &BinaryMask, b: &BinaryMask, d: u32) -> f64 {
    assert_eq!(
        (a.width(), a.height()),
        (b.width(), b.height()),
        "boundary IoU needs equal mask sizes"
    );
    biou_bits(&a.to_bits(), &b.to_bits(), a.width() as usize, a.height() as usize, d as usize)
}

pub(crate) fn biou_bits(a: &[bool], b: &[bool], width: usize, height: usize, d: usize) -> f64 {
    let ba = boundary_band(a, width, height, d);
    let bb = boundary_band(b, width, height, d);
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in ba.iter().zip(&bb) {
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
