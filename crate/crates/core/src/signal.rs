//! Signal grids, supports and norms shared by every other module.
//!
//! A signal is an `h x w` real matrix stored column-major, so entry
//! `(row, col)` lives at flat index `col * h + row`. The flat view is the
//! vector the measurement operators act on.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Norm index used by oracles and recovery loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn exponent(self) -> f64 {
        match self {
            Norm::L1 => 1.0,
            Norm::L2 => 2.0,
        }
    }

    /// `|v|^p`.
    #[inline]
    pub fn power(self, v: f64) -> f64 {
        match self {
            Norm::L1 => v.abs(),
            Norm::L2 => v * v,
        }
    }

    /// Inverse of [`Norm::power`] on nonnegative inputs.
    #[inline]
    pub fn root(self, v: f64) -> f64 {
        match self {
            Norm::L1 => v,
            Norm::L2 => v.max(0.0).sqrt(),
        }
    }

    pub fn from_index(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            _ => invalid(format!("norm index must be 1 or 2, got {p}")),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L1 => write!(f, "1"),
            Norm::L2 => write!(f, "2"),
        }
    }
}

/// Real-valued `h x w` grid in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl SignalMatrix {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return invalid(format!("grid dimensions must be positive, got {h}x{w}"));
        }
        if values.len() != h * w {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values for a {h}x{w} grid", h * w),
                found: values.len().to_string(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry at flat index {i}"));
        }
        Ok(Self { h, w, values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        assert!(h > 0 && w > 0, "grid dimensions must be positive");
        Self {
            h,
            w,
            values: vec![0.0; h * w],
        }
    }

    /// Builds a grid from row slices, e.g. `[[1, 3], [0, -1], [2, 1]]`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != w) {
            return invalid("ragged rows");
        }
        let mut values = vec![0.0; h * w];
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.as_ref().iter().enumerate() {
                values[c * h + r] = v;
            }
        }
        Self::new(h, w, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.h && col < self.w);
        col * self.h + row
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        assert!(v.is_finite(), "non-finite signal entry");
        let i = self.index(row, col);
        self.values[i] = v;
    }

    /// Flat column-major view.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.values[col * self.h..(col + 1) * self.h]
    }

    pub fn same_shape(&self, other: &SignalMatrix) -> bool {
        self.h == other.h && self.w == other.w
    }

    /// Set of nonzero positions.
    pub fn support(&self) -> Support {
        let mut s = Support::new();
        for c in 0..self.w {
            for r in 0..self.h {
                if self.get(r, c) != 0.0 {
                    s.insert(r, c);
                }
            }
        }
        s
    }

    /// `sum |x_i|^p`.
    pub fn power_sum(&self, norm: Norm) -> f64 {
        self.values.iter().map(|&v| norm.power(v)).sum()
    }

    /// `sum_{(r,c) in support} |x_rc|^p`; the support must be in range.
    pub fn power_sum_on(&self, support: &Support, norm: Norm) -> f64 {
        support.iter().map(|(r, c)| norm.power(self.get(r, c))).sum()
    }

    /// Entrywise `|x|^p`, used as path weights by the projections.
    pub fn powered(&self, norm: Norm) -> SignalMatrix {
        SignalMatrix {
            h: self.h,
            w: self.w,
            values: self.values.iter().map(|&v| norm.power(v)).collect(),
        }
    }

    pub fn sub(&self, other: &SignalMatrix) -> Result<SignalMatrix> {
        self.check_shape(other)?;
        Ok(SignalMatrix {
            h: self.h,
            w: self.w,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &SignalMatrix) -> Result<SignalMatrix> {
        self.check_shape(other)?;
        Ok(SignalMatrix {
            h: self.h,
            w: self.w,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> SignalMatrix {
        SignalMatrix {
            h: self.h,
            w: self.w,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Copy with the entries in `support` set to zero.
    pub fn without(&self, support: &Support) -> Result<SignalMatrix> {
        support.check_bounds(self.h, self.w)?;
        let mut out = self.clone();
        for (r, c) in support.iter() {
            out.set(r, c, 0.0);
        }
        Ok(out)
    }

    fn check_shape(&self, other: &SignalMatrix) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.h, self.w),
                found: format!("{}x{}", other.h, other.w),
            });
        }
        Ok(())
    }
}

/// Set of grid positions, iterated in `(col, row)` order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Support {
    // keyed (col, row) so BTreeSet order is the canonical iteration order
    cells: BTreeSet<(usize, usize)>,
}

impl Support {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every position of an `h x w` grid.
    pub fn full(h: usize, w: usize) -> Self {
        let mut s = Self::new();
        for c in 0..w {
            for r in 0..h {
                s.insert(r, c);
            }
        }
        s
    }

    /// Builds a support from per-column row lists.
    pub fn from_columns<C: AsRef<[usize]>>(columns: &[C]) -> Self {
        let mut s = Self::new();
        for (c, rows) in columns.iter().enumerate() {
            for &r in rows.as_ref() {
                s.insert(r, c);
            }
        }
        s
    }

    /// Returns false when the position was already present.
    pub fn insert(&mut self, row: usize, col: usize) -> bool {
        self.cells.insert((col, row))
    }

    pub fn remove(&mut self, row: usize, col: usize) -> bool {
        self.cells.remove(&(col, row))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells.contains(&(col, row))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Yields `(row, col)` pairs sorted by `(col, row)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().map(|&(c, r)| (r, c))
    }

    pub fn union(&self, other: &Support) -> Support {
        Support {
            cells: self.cells.union(&other.cells).copied().collect(),
        }
    }

    pub fn extend(&mut self, other: &Support) {
        self.cells.extend(other.cells.iter().copied());
    }

    pub fn is_subset(&self, other: &Support) -> bool {
        self.cells.is_subset(&other.cells)
    }

    /// Sorted rows of column `col`.
    pub fn column_rows(&self, col: usize) -> Vec<usize> {
        self.cells
            .range((col, 0)..(col + 1, 0))
            .map(|&(_, r)| r)
            .collect()
    }

    /// Rows per column for a grid of width `w`.
    pub fn columns(&self, w: usize) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); w];
        for &(c, r) in &self.cells {
            if c < w {
                cols[c].push(r);
            }
        }
        cols
    }

    pub fn column_counts(&self, w: usize) -> Vec<usize> {
        let mut counts = vec![0; w];
        for &(c, _) in &self.cells {
            if c < w {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn max_column_sparsity(&self) -> usize {
        let mut best = 0;
        let mut cur_col = usize::MAX;
        let mut cur = 0;
        for &(c, _) in &self.cells {
            if c != cur_col {
                cur_col = c;
                cur = 0;
            }
            cur += 1;
            best = best.max(cur);
        }
        best
    }

    pub fn check_bounds(&self, h: usize, w: usize) -> Result<()> {
        match self.cells.iter().find(|&&(c, r)| r >= h || c >= w) {
            Some(&(c, r)) => invalid(format!(
                "support position (row {r}, col {c}) outside {h}x{w} grid"
            )),
            None => Ok(()),
        }
    }
}

impl FromIterator<(usize, usize)> for Support {
    /// Collects `(row, col)` pairs.
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Support {
            cells: iter.into_iter().map(|(r, c)| (c, r)).collect(),
        }
    }
}

/// Text form `col:row[,row...];col:...`, columns ascending. The empty
/// support is the empty string.
impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first_col = true;
        let mut cur = usize::MAX;
        for &(c, r) in &self.cells {
            if c != cur {
                if !first_col {
                    write!(f, ";")?;
                }
                write!(f, "{c}:{r}")?;
                first_col = false;
                cur = c;
            } else {
                write!(f, ",{r}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Support {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = Support::new();
        let s = s.trim();
        if s.is_empty() {
            return Ok(out);
        }
        for group in s.split(';') {
            let (col, rows) = group
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("missing ':' in `{group}`")))?;
            let col: usize = col
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad column index `{col}`")))?;
            for row in rows.split(',') {
                let row: usize = row
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad row index `{row}`")))?;
                if !out.insert(row, col) {
                    return invalid(format!("duplicate position (row {row}, col {col})"));
                }
            }
        }
        Ok(out)
    }
}

/// `x` on `support`, zero elsewhere.
pub fn restrict(x: &SignalMatrix, support: &Support) -> Result<SignalMatrix> {
    support.check_bounds(x.rows(), x.cols())?;
    let mut out = SignalMatrix::zeros(x.rows(), x.cols());
    for (r, c) in support.iter() {
        out.set(r, c, x.get(r, c));
    }
    Ok(out)
}

/// l1 or l2 norm of the flattened signal.
pub fn lp_norm(x: &SignalMatrix, norm: Norm) -> f64 {
    match norm {
        Norm::L1 => x.as_slice().iter().map(|v| v.abs()).sum(),
        Norm::L2 => x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// `|| x - x_support ||_p^p`, i.e. the mass left outside `support`.
pub fn tail_power(x: &SignalMatrix, support: &Support, norm: Norm) -> f64 {
    let mut total = 0.0;
    for c in 0..x.cols() {
        for r in 0..x.rows() {
            if !support.contains(r, c) {
                total += norm.power(x.get(r, c));
            }
        }
    }
    total
}

/// Approximation factor and norm declared by an oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleQuality {
    pub factor: f64,
    pub norm: Norm,
}

impl OracleQuality {
    /// Head factor, must lie in `(0, 1]`.
    pub fn head(factor: f64, norm: Norm) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return invalid(format!("head factor must be in (0, 1], got {factor}"));
        }
        Ok(Self { factor, norm })
    }

    /// Tail factor, must be at least 1.
    pub fn tail(factor: f64, norm: Norm) -> Result<Self> {
        if !(factor >= 1.0 && factor.is_finite()) {
            return invalid(format!("tail factor must be >= 1, got {factor}"));
        }
        Ok(Self { factor, norm })
    }
}

/// `a >= b` up to relative tolerance `rel`.
#[inline]
pub(crate) fn ge_rel(a: f64, b: f64, rel: f64) -> bool {
    a >= b - rel * a.abs().max(b.abs())
}

/// `a <= b` up to relative tolerance `rel`.
#[inline]
pub(crate) fn le_rel(a: f64, b: f64, rel: f64) -> bool {
    a <= b + rel * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3() -> SignalMatrix {
        SignalMatrix::from_rows(&[[1.0, 3.0], [0.0, -1.0], [2.0, 1.0]]).unwrap()
    }

    #[test]
    fn column_major_layout() {
        let x = fig3();
        assert_eq!(x.as_slice(), &[1.0, 0.0, 2.0, 3.0, -1.0, 1.0]);
        assert_eq!(x.get(1, 1), -1.0);
        assert_eq!(x.index(2, 1), 5);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(SignalMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(SignalMatrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(SignalMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn restrict_first_row() {
        let x = fig3();
        let omega = Support::from_iter([(0, 0), (0, 1)]);
        let got = restrict(&x, &omega).unwrap();
        let want = SignalMatrix::from_rows(&[[1.0, 3.0], [0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn restrict_empty_and_full() {
        let x = fig3();
        assert_eq!(restrict(&x, &Support::new()).unwrap(), SignalMatrix::zeros(3, 2));
        assert_eq!(restrict(&x, &Support::full(3, 2)).unwrap(), x);
    }

    #[test]
    fn restrict_out_of_range() {
        let x = fig3();
        let omega = Support::from_iter([(3, 0)]);
        assert!(matches!(restrict(&x, &omega), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn norms() {
        assert_eq!(lp_norm(&SignalMatrix::zeros(2, 3), Norm::L2), 0.0);
        let v = SignalMatrix::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(lp_norm(&v, Norm::L2), 5.0);
        assert_eq!(lp_norm(&fig3(), Norm::L1), 8.0);
    }

    #[test]
    fn support_order_and_columns() {
        let s = Support::from_iter([(2, 1), (0, 1), (1, 0)]);
        let order: Vec<_> = s.iter().collect();
        assert_eq!(order, vec![(1, 0), (0, 1), (2, 1)]);
        assert_eq!(s.column_rows(1), vec![0, 2]);
        assert_eq!(s.column_counts(3), vec![1, 2, 0]);
        assert_eq!(s.max_column_sparsity(), 2);
    }

    #[test]
    fn support_text_form() {
        let s = Support::from_iter([(2, 0), (2, 1), (1, 2), (0, 2)]);
        assert_eq!(s.to_string(), "0:2;1:2;2:0,1");
        assert_eq!("0:2;1:2;2:0,1".parse::<Support>().unwrap(), s);
        assert_eq!("".parse::<Support>().unwrap(), Support::new());
        assert!("0:1,1".parse::<Support>().is_err());
        assert!("0-1".parse::<Support>().is_err());
    }

    #[test]
    fn oracle_quality_ranges() {
        assert!(OracleQuality::head(0.5, Norm::L2).is_ok());
        assert!(OracleQuality::head(0.0, Norm::L2).is_err());
        assert!(OracleQuality::head(1.1, Norm::L2).is_err());
        assert!(OracleQuality::tail(1.0, Norm::L1).is_ok());
        assert!(OracleQuality::tail(0.9, Norm::L1).is_err());
        assert!(Norm::from_index(3).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn signal_and_support() -> impl Strategy<Value = (SignalMatrix, Support)> {
            (1usize..=6, 1usize..=5).prop_flat_map(|(h, w)| {
                (
                    proptest::collection::vec(-5.0f64..5.0, h * w),
                    proptest::collection::vec(any::<bool>(), h * w),
                )
                    .prop_map(move |(v, mask)| {
                        let support = (0..h * w)
                            .filter(|&i| mask[i])
                            .map(|i| (i % h, i / h))
                            .collect();
                        (SignalMatrix::new(h, w, v).unwrap(), support)
                    })
            })
        }

        proptest! {
            #[test]
            fn restrict_is_idempotent((x, s) in signal_and_support()) {
                let once = restrict(&x, &s).unwrap();
                prop_assert_eq!(restrict(&once, &s).unwrap(), once);
            }

            #[test]
            fn head_and_tail_split_the_mass((x, s) in signal_and_support(), p in 1u32..=2) {
                let norm = Norm::from_index(p).unwrap();
                let total = x.power_sum(norm);
                let head = restrict(&x, &s).unwrap().power_sum(norm);
                let tail = x.sub(&restrict(&x, &s).unwrap()).unwrap().power_sum(norm);
                prop_assert!((total - head - tail).abs() <= 1e-12 * total.max(1e-300));
                prop_assert!((tail - tail_power(&x, &s, norm)).abs() <= 1e-12 * total.max(1e-300));
            }

            #[test]
            fn support_text_round_trip((_x, s) in signal_and_support()) {
                prop_assert_eq!(s.to_string().parse::<Support>().unwrap(), s);
            }
        }
    }
}
