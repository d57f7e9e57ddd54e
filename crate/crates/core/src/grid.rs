//! Dense row-major 2-D value grids.
//!
//! Spectrograms, masks, and saliency maps all store their values as a
//! [`Grid`] with frames as rows and frequency bins as columns.

use std::ops::{Index, IndexMut};

use crate::num::Real;

/// Dense row-major `rows × cols` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    /// Grid of the given shape with every entry set to `fill`.
    pub fn new(rows: usize, cols: usize, fill: T) -> Self {
        Self { rows, cols, data: vec![fill; rows * cols] }
    }

    /// Grid over an existing row-major buffer.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid data length must equal rows*cols");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Borrow row `r` as a contiguous slice.
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// True when `other` has the same rows/cols.
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Elementwise transform into a new grid of the same shape.
    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().copied().map(f).collect() }
    }
}

impl<T: Real> Grid<T> {
    /// Mean of all entries (0 for an empty grid). Accumulates in `f64`.
    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        let sum: f64 = self.data.iter().map(|v| v.as_f64()).sum();
        T::of(sum / self.data.len() as f64)
    }

    /// Minimum and maximum entry, or `None` for an empty grid.
    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        let mut lo = first;
        let mut hi = first;
        for v in it {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        Some((lo, hi))
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let g = Grid::from_vec(2, 3, vec![0, 1, 2, 10, 11, 12]);
        assert_eq!(g[(0, 0)], 0);
        assert_eq!(g[(0, 2)], 2);
        assert_eq!(g[(1, 0)], 10);
        assert_eq!(g.row(1), &[10, 11, 12]);
    }

    #[test]
    fn mean_and_min_max() {
        let g = Grid::from_vec(2, 2, vec![1.0_f64, 2.0, 3.0, 6.0]);
        assert_eq!(g.mean(), 3.0);
        assert_eq!(g.min_max(), Some((1.0, 6.0)));
    }

    #[test]
    fn empty_grid_mean_is_zero() {
        let g: Grid<f64> = Grid::new(0, 5, 0.0);
        assert_eq!(g.mean(), 0.0);
        assert_eq!(g.min_max(), None);
        assert!(g.is_empty());
    }

    #[test]
    fn map_preserves_shape() {
        let g = Grid::from_vec(2, 2, vec![1.0_f64, -2.0, 3.0, -4.0]);
        let h = g.map(|v| v.abs());
        assert_eq!(h.rows(), 2);
        assert_eq!(h.cols(), 2);
        assert_eq!(h.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_bad_length() {
        let _ = Grid::from_vec(2, 3, vec![0.0_f64; 5]);
    }
}
