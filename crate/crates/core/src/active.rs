//! Active sets of regime differences.
//!
//! Entry `(j, k)` with `j` in `2..=m` (1-based regime) and `k` in `0..K`
//! says covariate `k` changes its coefficient when regime `j` starts.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveSet {
    n_regimes: usize,
    n_cov: usize,
    bits: Vec<bool>,
}

impl ActiveSet {
    pub fn empty(n_regimes: usize, n_cov: usize) -> Self {
        ActiveSet { n_regimes, n_cov, bits: vec![false; n_regimes.saturating_sub(1) * n_cov] }
    }

    pub fn full(n_regimes: usize, n_cov: usize) -> Self {
        ActiveSet { n_regimes, n_cov, bits: vec![true; n_regimes.saturating_sub(1) * n_cov] }
    }

    pub fn from_entries(n_regimes: usize, n_cov: usize, entries: &[(usize, usize)]) -> Self {
        let mut s = Self::empty(n_regimes, n_cov);
        for &(j, k) in entries {
            s.set(j, k, true);
        }
        s
    }

    /// Builds a set from a flat mask over the entries in lexicographic order.
    pub fn from_mask(n_regimes: usize, n_cov: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), n_regimes.saturating_sub(1) * n_cov);
        ActiveSet { n_regimes, n_cov, bits: mask }
    }

    pub fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    pub fn n_cov(&self) -> usize {
        self.n_cov
    }

    /// Number of candidate entries `(m - 1) K`.
    pub fn capacity(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        debug_assert!(j >= 2 && j <= self.n_regimes && k < self.n_cov);
        (j - 2) * self.n_cov + k
    }

    /// Inverse of [`ActiveSet::index`].
    #[inline]
    pub fn entry(&self, e: usize) -> (usize, usize) {
        (e / self.n_cov + 2, e % self.n_cov)
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        self.bits[self.index(j, k)]
    }

    pub fn contains_index(&self, e: usize) -> bool {
        self.bits[e]
    }

    pub fn set(&mut self, j: usize, k: usize, on: bool) {
        let e = self.index(j, k);
        self.bits[e] = on;
    }

    pub fn toggle_index(&mut self, e: usize) {
        self.bits[e] = !self.bits[e];
    }

    pub fn mask(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<(usize, usize)> {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(e, _)| self.entry(e)).collect()
    }

    /// Column of entry `e` in the full break design.
    #[inline]
    pub fn design_column(&self, e: usize) -> usize {
        self.n_cov + e
    }

    /// Columns of the restricted design: the base block followed by the
    /// active difference columns in lexicographic order.
    pub fn columns(&self) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.n_cov).collect();
        c.extend(self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(e, _)| self.design_column(e)));
        c
    }

    /// Regimes per covariate: one plus the number of active changes.
    pub fn regime_counts(&self) -> Vec<usize> {
        let mut c = vec![1; self.n_cov];
        for (e, b) in self.bits.iter().enumerate() {
            if *b {
                c[e % self.n_cov] += 1;
            }
        }
        c
    }

    /// Regimes with at least one active entry, plus the base regime.
    pub fn n_effective_regimes(&self) -> usize {
        1 + (2..=self.n_regimes)
            .filter(|&j| (0..self.n_cov).any(|k| self.contains(j, k)))
            .count()
    }
}

impl PartialOrd for ActiveSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic order on the sorted entry lists.
impl Ord for ActiveSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.entries().cmp(&other.entries())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_columns() {
        let s = ActiveSet::from_entries(3, 2, &[(2, 1), (3, 1)]);
        assert_eq!(s.regime_counts(), vec![1, 3]);
        assert_eq!(s.columns(), vec![0, 1, 3, 5]);
        assert_eq!(s.n_effective_regimes(), 3);
        assert_eq!(s.entries(), vec![(2, 1), (3, 1)]);
        let e = ActiveSet::empty(3, 2);
        assert_eq!(e.n_effective_regimes(), 1);
        assert!(e < s);
    }

    #[test]
    fn index_roundtrip() {
        let s = ActiveSet::empty(4, 3);
        for e in 0..s.capacity() {
            let (j, k) = s.entry(e);
            assert_eq!(s.index(j, k), e);
        }
    }
}
