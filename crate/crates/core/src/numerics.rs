//! Dense matrices, two-class probability pairs, and seeded randomness.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied to every two-class distribution.
pub const PROB_EPS: f64 = 1e-7;

/// Row-major dense matrix of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::InvalidInput(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows. An empty slice yields a 0x`cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} values, expected {cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    /// Copies the half-open column range `start..end`.
    pub fn select_columns(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let mut values = Vec::with_capacity(self.rows * (end - start));
        for row in self.row_iter() {
            values.extend_from_slice(&row[start..end]);
        }
        Self {
            rows: self.rows,
            cols: end - start,
            values,
        }
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.row_iter().map(|r| r[col]).collect()
    }

    /// Side-by-side concatenation `[self, other]`.
    pub fn hstack(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::InvalidInput(format!(
                "cannot hstack {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut values = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            values,
        })
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::InvalidInput(format!(
                "cannot vstack {} columns with {} columns",
                self.cols, other.cols
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            values,
        })
    }

    /// Per-column arithmetic mean, summed sequentially in row order.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Class index of a two-class distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    Negative,
    Positive,
}

/// A point on the two-class simplex: `p0` is negative/fake, `p1` positive/real.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbPair {
    pub p0: f64,
    pub p1: f64,
}

impl ProbPair {
    /// Clamped one-hot for the positive/real class.
    pub const POSITIVE: ProbPair = ProbPair {
        p0: 1.0 - (1.0 - PROB_EPS),
        p1: 1.0 - PROB_EPS,
    };
    /// Clamped one-hot for the negative/fake class.
    pub const NEGATIVE: ProbPair = ProbPair {
        p0: 1.0 - PROB_EPS,
        p1: PROB_EPS,
    };
    pub const UNIFORM: ProbPair = ProbPair { p0: 0.5, p1: 0.5 };

    /// Validates that the pair sums to one, then clamps into `[eps, 1 - eps]`.
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        if !p0.is_finite() || !p1.is_finite() || p0 < 0.0 || p1 < 0.0 {
            return Err(Error::InvalidInput(format!(
                "({p0}, {p1}) is not a probability pair"
            )));
        }
        if (p0 + p1 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "({p0}, {p1}) does not sum to one"
            )));
        }
        Ok(Self::from_positive(p1))
    }

    /// Pair with positive probability `p1`, clamped.
    pub fn from_positive(p1: f64) -> Self {
        let p1 = p1.clamp(PROB_EPS, 1.0 - PROB_EPS);
        Self { p0: 1.0 - p1, p1 }
    }

    pub fn one_hot(class: Class) -> Self {
        match class {
            Class::Negative => Self::NEGATIVE,
            Class::Positive => Self::POSITIVE,
        }
    }

    #[inline]
    pub fn get(&self, class: Class) -> f64 {
        match class {
            Class::Negative => self.p0,
            Class::Positive => self.p1,
        }
    }
}

/// Output of [`softmax2`] together with whether the clamp was active.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Softmax2 {
    pub probs: ProbPair,
    pub clamped: bool,
}

pub(crate) fn softmax2_unchecked(z0: f64, z1: f64) -> Softmax2 {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let p1 = e1 / (e0 + e1);
    let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p1);
    Softmax2 {
        probs: ProbPair::from_positive(p1),
        clamped,
    }
}

/// Stable two-class softmax, clamped to `[eps, 1 - eps]`.
pub fn softmax2(z0: f64, z1: f64) -> Result<ProbPair> {
    if !z0.is_finite() || !z1.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite logits ({z0}, {z1})"
        )));
    }
    Ok(softmax2_unchecked(z0, z1).probs)
}

/// KL divergence `KL(p || q)` between two clamped two-class distributions.
#[inline]
pub fn kl2(p: ProbPair, q: ProbPair) -> f64 {
    p.p0 * (p.p0 / q.p0).ln() + p.p1 * (p.p1 / q.p1).ln()
}

/// Exchanges the two components.
#[inline]
pub fn swap(p: ProbPair) -> ProbPair {
    ProbPair { p0: p.p1, p1: p.p0 }
}

/// Seed for every random stream in the library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Deterministically derives an independent child seed for a named sub-stream.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finalizer over the combined words
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }

    pub fn rng(self) -> SeededRng {
        SeededRng::new(self)
    }
}

/// Reproducible random stream; identical seeds produce identical draws.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: RngSeed) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed.0),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    /// `count` indices drawn uniformly with replacement from `0..n`.
    pub fn sample_with_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.index(n)).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_symmetric_logits() {
        let p = softmax2(0.0, 0.0).unwrap();
        assert_eq!(p, ProbPair::UNIFORM);
    }

    #[test]
    fn softmax_clamps_large_gap() {
        let p = softmax2(0.0, 100.0).unwrap();
        assert_eq!(p.p1, 1.0 - PROB_EPS);
        assert_abs_diff_eq!(p.p0, PROB_EPS, epsilon = 1e-15);
    }

    #[test]
    fn softmax_log_ratio() {
        let p = softmax2(1f64.ln(), 3f64.ln()).unwrap();
        // brute force: exp(ln 1) / (exp(ln 1) + exp(ln 3)) = 1 / 4
        let e0 = 1f64.ln().exp();
        let e1 = 3f64.ln().exp();
        assert_abs_diff_eq!(p.p0, e0 / (e0 + e1), epsilon = 1e-12);
        assert_abs_diff_eq!(p.p1, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax2(f64::NAN, 0.0), Err(Error::InvalidInput(_))));
        assert!(softmax2(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = ProbPair::new(0.3, 0.7).unwrap();
        assert_abs_diff_eq!(kl2(p, p), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_one_hot_vs_uniform_is_log2() {
        assert_abs_diff_eq!(
            kl2(ProbPair::POSITIVE, ProbPair::UNIFORM),
            2f64.ln(),
            epsilon = 1e-5
        );
    }

    #[test]
    fn kl_term_by_term() {
        let p = ProbPair::new(0.2, 0.8).unwrap();
        let q = ProbPair::new(0.6, 0.4).unwrap();
        let expected = [(0.2, 0.6), (0.8, 0.4)]
            .iter()
            .map(|&(a, b): &(f64, f64)| a * (a / b).ln())
            .sum::<f64>();
        assert_abs_diff_eq!(kl2(p, q), expected, epsilon = 1e-15);
        // 0.2 ln(1/3) + 0.8 ln 2
        assert_abs_diff_eq!(kl2(p, q), 0.334_795_286_714_334, epsilon = 1e-12);
    }

    #[test]
    fn swap_cases() {
        assert_eq!(swap(ProbPair::UNIFORM), ProbPair::UNIFORM);
        let p = ProbPair { p0: 0.2, p1: 0.8 };
        assert_eq!(swap(p), ProbPair { p0: 0.8, p1: 0.2 });
        let mut rng = RngSeed(3).rng();
        for _ in 0..100 {
            let p = ProbPair::from_positive(rng.uniform(0.0, 1.0));
            assert_eq!(swap(swap(p)), p);
        }
    }

    #[test]
    fn prob_pair_validation() {
        assert!(ProbPair::new(0.5, 0.6).is_err());
        assert!(ProbPair::new(-0.1, 1.1).is_err());
        let p = ProbPair::new(0.0, 1.0).unwrap();
        assert_eq!(p, ProbPair::POSITIVE);
    }

    #[test]
    fn matrix_shape_checked() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
        assert_eq!(m.column_means(), vec![2.0, 3.0]);
        let h = m.hstack(&m.select_columns(0, 1)).unwrap();
        assert_eq!(h.row(1), &[3.0, 4.0, 3.0]);
        let v = m.vstack(&m).unwrap();
        assert_eq!(v.rows(), 4);
        assert_eq!(m.select_rows(&[1, 1]).row(0), &[3.0, 4.0]);
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = RngSeed(42).rng();
        let mut b = RngSeed(42).rng();
        for _ in 0..50 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_ne!(RngSeed(42).derive(1), RngSeed(42).derive(2));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn pair() -> impl Strategy<Value = ProbPair> {
            (0.0f64..=1.0).prop_map(ProbPair::from_positive)
        }

        proptest! {
            #[test]
            fn kl_nonnegative(p in pair(), q in pair()) {
                let v = kl2(p, q);
                prop_assert!(v >= -1e-12);
                if (p.p1 - q.p1).abs() < 1e-12 {
                    prop_assert!(v.abs() < 1e-9);
                }
            }

            #[test]
            fn paired_term_identity(d in pair(), c in pair()) {
                let lhs = kl2(d, c) - kl2(d, swap(c));
                let rhs = (d.p1 - d.p0) * (c.p0 / c.p1).ln();
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }

            #[test]
            fn softmax_always_valid(z0 in -1e4f64..1e4, z1 in -1e4f64..1e4) {
                let p = softmax2(z0, z1).unwrap();
                prop_assert!((p.p0 + p.p1 - 1.0).abs() < 1e-9);
                prop_assert!(p.p0 >= PROB_EPS * (1.0 - 1e-9) && p.p1 >= PROB_EPS);
                prop_assert!(p.p0 <= 1.0 - PROB_EPS + 1e-12 && p.p1 <= 1.0 - PROB_EPS);
            }
        }
    }
}
