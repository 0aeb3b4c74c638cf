//! Space/depth rearrangements behind patch embedding, merging and expansion.
//!
//! A `p x p` block at block coordinates `(by, bx)` maps to the channel vector
//! `[(dy * p + dx) * C + c]`: top-left first, then along the row, then the
//! next row. For `p = 2` this is (TL, TR, BL, BR).

pub(crate) fn space_to_depth(x: &[f64], (h, w, c): (usize, usize, usize), p: usize) -> Vec<f64> {
    let (oh, ow) = (h / p, w / p);
    let oc = p * p * c;
    let mut out = vec![0.0; x.len()];
    for by in 0..oh {
        for bx in 0..ow {
            let base = (by * ow + bx) * oc;
            for dy in 0..p {
                for dx in 0..p {
                    let src = ((by * p + dy) * w + bx * p + dx) * c;
                    let dst = base + (dy * p + dx) * c;
                    out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    out
}

/// Inverse of [`space_to_depth`]; `(h, w, c)` is the shape of the deep input.
pub(crate) fn depth_to_space(x: &[f64], (h, w, c): (usize, usize, usize), p: usize) -> Vec<f64> {
    let oc = c / (p * p);
    let ow = w * p;
    let mut out = vec![0.0; x.len()];
    for by in 0..h {
        for bx in 0..w {
            let base = (by * w + bx) * c;
            for dy in 0..p {
                for dx in 0..p {
                    let dst = ((by * p + dy) * ow + bx * p + dx) * oc;
                    let src = base + (dy * p + dx) * oc;
                    out[dst..dst + oc].copy_from_slice(&x[src..src + oc]);
                }
            }
        }
    }
    out
}
