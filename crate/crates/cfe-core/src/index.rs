//! Flattened storage of values indexed by integer multi-indices
//! `j` with `|j_l| <= half_width` per axis.
//!
//! Layout contract shared by the spectral grid and the drift coefficient
//! arrays: row-major over axes in order, with each axis offset by
//! `+half_width`, so the all-zero multi-index sits at a computable center.

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBox {
    pub half_width: i64,
    pub dim: usize,
}

impl IndexBox {
    pub fn new(half_width: i64, dim: usize) -> Self {
        assert!(half_width >= 0 && dim >= 1 && dim <= MAX_DIM);
        IndexBox { half_width, dim }
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points_per_axis().pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear index of the all-zero multi-index.
    #[inline]
    pub fn center(&self) -> usize {
        (self.len() - 1) / 2
    }

    /// Row-major strides (last axis contiguous).
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let ppa = self.points_per_axis();
        let mut s = [0usize; MAX_DIM];
        let mut acc = 1usize;
        for ax in (0..self.dim).rev() {
            s[ax] = acc;
            acc *= ppa;
        }
        s
    }

    /// Linear index of `j`, or `None` if any component is out of range.
    #[inline]
    pub fn index_of(&self, j: &[i64]) -> Option<usize> {
        debug_assert_eq!(j.len(), self.dim);
        let ppa = self.points_per_axis();
        let mut lin = 0usize;
        for &jl in j.iter().take(self.dim) {
            if jl.abs() > self.half_width {
                return None;
            }
            lin = lin * ppa + (jl + self.half_width) as usize;
        }
        Some(lin)
    }

    /// Multi-index of a linear index.
    #[inline]
    pub fn multi_of(&self, mut lin: usize) -> [i64; MAX_DIM] {
        let ppa = self.points_per_axis();
        let mut j = [0i64; MAX_DIM];
        for ax in (0..self.dim).rev() {
            j[ax] = (lin % ppa) as i64 - self.half_width;
            lin /= ppa;
        }
        j
    }

    /// Iterate all multi-indices in linear order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, [i64; MAX_DIM])> + '_ {
        (0..self.len()).map(move |lin| (lin, self.multi_of(lin)))
    }

    /// Is `j > 0` in lexicographic order (first nonzero component positive)?
    /// Used to pick one representative of each conjugate pair `{j, -j}`.
    pub fn is_positive_lead(j: &[i64]) -> bool {
        for &c in j {
            if c > 0 {
                return true;
            }
            if c < 0 {
                return false;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_center() {
        for dim in 1..=3 {
            let b = IndexBox::new(2, dim);
            assert_eq!(b.len(), 5usize.pow(dim as u32));
            for (lin, j) in b.iter() {
                assert_eq!(b.index_of(&j[..dim]), Some(lin));
            }
            assert_eq!(b.multi_of(b.center())[..dim], vec![0i64; dim]);
        }
    }

    #[test]
    fn out_of_range() {
        let b = IndexBox::new(3, 2);
        assert_eq!(b.index_of(&[4, 0]), None);
        assert_eq!(b.index_of(&[-3, 3]), Some(b.points_per_axis() - 1));
        assert_eq!(b.index_of(&[3, -3]), Some(b.len() - b.points_per_axis()));
    }

    #[test]
    fn lead_ordering() {
        assert!(IndexBox::is_positive_lead(&[1, -5]));
        assert!(!IndexBox::is_positive_lead(&[0, 0]));
        assert!(!IndexBox::is_positive_lead(&[-1, 5]));
        assert!(IndexBox::is_positive_lead(&[0, 2]));
    }
}
