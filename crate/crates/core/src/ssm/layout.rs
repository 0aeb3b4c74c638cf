//! Skip-sampled scan orders over a 2-D grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Traversal order of one sub-grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    RowReverse,
    ColForward,
    ColReverse,
}

/// Stride-2 sub-grid offsets `(row mod 2, col mod 2)`, in sub-sequence order.
pub const OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Default direction per offset: one of each traversal.
pub const DEFAULT_DIRECTIONS: [ScanDirection; 4] = [
    ScanDirection::RowForward,
    ScanDirection::RowReverse,
    ScanDirection::ColForward,
    ScanDirection::ColReverse,
];

/// Splits an `h x w` grid into four stride-2 sub-grids, each flattened in its
/// own direction. The concatenation of the four sequences is a permutation of
/// all row-major positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanLayout {
    h: usize,
    w: usize,
    directions: [ScanDirection; 4],
    order: Arc<Vec<usize>>,
    inverse: Arc<Vec<usize>>,
    starts: Arc<Vec<usize>>,
}

impl ScanLayout {
    /// Layout for even extents with the default directions.
    pub fn even(h: usize, w: usize) -> Result<Self> {
        for extent in [h, w] {
            if extent == 0 || extent % 2 != 0 {
                return Err(Error::Indivisible {
                    op: "es2d_partition",
                    extent,
                    divisor: 2,
                });
            }
        }
        Ok(Self::build(h, w, DEFAULT_DIRECTIONS))
    }

    /// Layout for any non-empty extents; with odd extents the sub-grids have
    /// unequal lengths and some may be empty.
    pub fn covering(h: usize, w: usize) -> Self {
        Self::build(h, w, DEFAULT_DIRECTIONS)
    }

    pub fn with_directions(&self, directions: [ScanDirection; 4]) -> Self {
        Self::build(self.h, self.w, directions)
    }

    fn build(h: usize, w: usize, directions: [ScanDirection; 4]) -> Self {
        let mut order = Vec::with_capacity(h * w);
        let mut starts = Vec::with_capacity(4);
        for (o, &dir) in OFFSETS.iter().zip(&directions) {
            starts.push(order.len());
            order.extend(sub_sequence(h, w, *o, dir));
        }
        let mut inverse = vec![0; order.len()];
        for (k, &p) in order.iter().enumerate() {
            inverse[p] = k;
        }
        Self {
            h,
            w,
            directions,
            order: Arc::new(order),
            inverse: Arc::new(inverse),
            starts: Arc::new(starts),
        }
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn directions(&self) -> [ScanDirection; 4] {
        self.directions
    }

    /// Row-major positions of sub-sequence `k` in scan order.
    pub fn sequence(&self, k: usize) -> &[usize] {
        let end = self.starts.get(k + 1).copied().unwrap_or(self.order.len());
        &self.order[self.starts[k]..end]
    }

    /// Concatenated scan order: token `t` reads position `order[t]`.
    pub fn order(&self) -> Arc<Vec<usize>> {
        self.order.clone()
    }

    /// `inverse[p]` is the token holding position `p`.
    pub fn inverse(&self) -> Arc<Vec<usize>> {
        self.inverse.clone()
    }

    /// First token of every sub-sequence.
    pub fn starts(&self) -> Arc<Vec<usize>> {
        self.starts.clone()
    }
}

fn sub_sequence(h: usize, w: usize, (r0, c0): (usize, usize), dir: ScanDirection) -> Vec<usize> {
    let rows: Vec<usize> = (r0..h).step_by(2).collect();
    let cols: Vec<usize> = (c0..w).step_by(2).collect();
    let mut seq = Vec::with_capacity(rows.len() * cols.len());
    match dir {
        ScanDirection::RowForward | ScanDirection::RowReverse => {
            for &r in &rows {
                seq.extend(cols.iter().map(|&c| r * w + c));
            }
        }
        ScanDirection::ColForward | ScanDirection::ColReverse => {
            for &c in &cols {
                seq.extend(rows.iter().map(|&r| r * w + c));
            }
        }
    }
    if matches!(dir, ScanDirection::RowReverse | ScanDirection::ColReverse) {
        seq.reverse();
    }
    seq
}

fn check_extents(feature: &Tensor, layout: &ScanLayout) -> Result<usize> {
    let (h, w, c) = feature.hwc()?;
    if (h, w) != layout.extents() {
        return Err(Error::shape(
            "es2d_partition",
            format!("{:?}", layout.extents()),
            format!("{:?}", (h, w)),
        ));
    }
    Ok(c)
}

/// Gathers the four token sequences, each `[len_k, C]`.
pub fn es2d_partition(feature: &Tensor, layout: &ScanLayout) -> Result<[Tensor; 4]> {
    let c = check_extents(feature, layout)?;
    let src = feature.data();
    let part = |k: usize| {
        let seq = layout.sequence(k);
        let mut data = Vec::with_capacity(seq.len() * c);
        for &p in seq {
            data.extend_from_slice(&src[p * c..(p + 1) * c]);
        }
        Tensor::new(&[seq.len(), c], data)
    };
    Ok([part(0)?, part(1)?, part(2)?, part(3)?])
}

/// Writes the four sequences back to their grid positions; inverse of
/// [`es2d_partition`].
pub fn es2d_scatter(parts: &[Tensor; 4], layout: &ScanLayout) -> Result<Tensor> {
    let (h, w) = layout.extents();
    let c = parts.iter().map(Tensor::channels).max().unwrap_or(1);
    let mut out = vec![0.0; h * w * c];
    for (k, part) in parts.iter().enumerate() {
        let seq = layout.sequence(k);
        if part.len() != seq.len() * c {
            return Err(Error::shape(
                "es2d_scatter",
                format!("[{}, {c}]", seq.len()),
                format!("{:?}", part.shape()),
            ));
        }
        for (t, &p) in seq.iter().enumerate() {
            out[p * c..(p + 1) * c].copy_from_slice(&part.data()[t * c..(t + 1) * c]);
        }
    }
    Tensor::new(&[h, w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_zero_of_4x4_is_0_2_8_10() {
        let layout = ScanLayout::even(4, 4).unwrap();
        assert_eq!(layout.sequence(0), &[0, 2, 8, 10]);
        assert_eq!(layout.sequence(1), &[11, 9, 3, 1]);
        assert_eq!(layout.sequence(2), &[4, 12, 6, 14]);
        assert_eq!(layout.sequence(3), &[15, 7, 13, 5]);
    }

    #[test]
    fn odd_extents_rejected_by_even() {
        assert!(ScanLayout::even(3, 4).is_err());
        let cover = ScanLayout::covering(3, 3);
        let mut all: Vec<usize> = (0..4).flat_map(|k| cover.sequence(k).to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert_eq!(ScanLayout::covering(1, 1).sequence(1).len(), 0);
    }
}
