//! Dense vectors and the handful of operations the attacks and aggregators
//! are written in terms of.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonempty vector of finite `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Validates that `values` is nonempty and finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("vector"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Vector(values))
    }

    /// Builds a vector without checking finiteness. Callers uphold the invariant.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Vector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vectors have positive length");
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> Vector {
        assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Returns `self` padded with zeros up to `dim` entries.
    pub fn padded(&self, dim: usize) -> Vector {
        let mut values = self.0.clone();
        values.resize(dim.max(values.len()), 0.0);
        Vector(values)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += factor * x`
pub fn axpy(factor: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += factor * xi;
    }
}

/// Direction of `z`: `z / ‖z‖₂`, or the zero vector when `z = 0`.
///
/// At the origin the unit map is set-valued (the whole unit ball). The zero
/// vector is the representative used here; attack constructors that need
/// another member of the ball build it themselves.
pub fn unit_or_zero(z: &[f64]) -> Vector {
    let n = norm(z);
    if n > 0.0 {
        Vector::from_raw(z.iter().map(|v| v / n).collect())
    } else {
        Vector::from_raw(vec![0.0; z.len()])
    }
}

/// Shrinks `z` onto the ball of radius `delta`: `min{1, Δ/‖z‖₂}·z`.
pub fn clip_to(z: &[f64], delta: f64) -> Vector {
    assert!(delta >= 0.0, "clipping radius must be nonnegative");
    let n = norm(z);
    if n <= delta {
        return Vector::from_raw(z.to_vec());
    }
    let factor = delta / n;
    Vector::from_raw(z.iter().map(|v| v * factor).collect())
}

/// Orthogonal projection on the first `d` coordinates.
pub fn project_first(x: &[f64], d: usize) -> Result<Vector> {
    if d == 0 || d > x.len() {
        return Err(Error::InvalidDimension {
            requested: d,
            available: x.len(),
        });
    }
    Ok(Vector::from_raw(x[..d].to_vec()))
}

/// Correctly rounded sum of `values`.
///
/// The result depends only on the multiset of inputs, so it is identical
/// under any reordering.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    exact_sum_slice(&values)
}

/// [`exact_sum`] over a slice. Uses a 128-bit fixed-point accumulator when
/// the exponents span little enough, Shewchuk partials otherwise.
pub fn exact_sum_slice(values: &[f64]) -> f64 {
    fixed_point_sum(values).unwrap_or_else(|| shewchuk_sum(values))
}

const FRACTION: u64 = (1 << 52) - 1;

/// Biased exponent, with subnormals sharing the scale of the smallest normals.
fn scale_exponent(bits: u64) -> i32 {
    (((bits >> 52) & 0x7ff) as i32).max(1)
}

fn fixed_point_sum(values: &[f64]) -> Option<f64> {
    let (mut lo, mut hi) = (i32::MAX, i32::MIN);
    for &x in values {
        let bits = x.to_bits();
        if (bits >> 52) & 0x7ff == 0x7ff {
            return None;
        }
        if bits << 1 != 0 {
            let e = scale_exponent(bits);
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    if lo > hi {
        return Some(0.0);
    }
    let headroom = usize::BITS - values.len().leading_zeros();
    if 53 + (hi - lo) as u32 + headroom > 126 {
        return None;
    }
    let mut acc: i128 = 0;
    for &x in values {
        let bits = x.to_bits();
        if bits << 1 == 0 {
            continue;
        }
        let implicit = if (bits >> 52) & 0x7ff != 0 { 1u64 << 52 } else { 0 };
        let v = (((bits & FRACTION) | implicit) as i128) << (scale_exponent(bits) - lo);
        acc += if bits >> 63 == 1 { -v } else { v };
    }
    if acc == 0 {
        return Some(0.0);
    }
    let rounded = acc as f64;
    let scaled = rounded * 2f64.powi(lo - 1075);
    (scaled.is_normal() && rounded.is_finite()).then_some(scaled)
}

fn shewchuk_sum(values: &[f64]) -> f64 {
    // nonoverlapping partials of a double sum never exceed ~40 entries
    let mut partials = [0.0f64; 64];
    let mut len = 0;
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..len {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials[i] = x;
        len = i + 1;
    }
    round_partials(&partials[..len])
}

/// Coordinate-wise [`exact_sum`] of equally long rows.
pub fn exact_vector_sum<V: AsRef<[f64]>>(rows: &[V], dim: usize) -> Vector {
    let mut column = vec![0.0; rows.len()];
    let out = (0..dim)
        .map(|j| {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r.as_ref()[j];
            }
            exact_sum_slice(&column)
        })
        .collect();
    Vector::from_raw(out)
}

fn round_partials(partials: &[f64]) -> f64 {
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Half-way case: make sure rounding goes the way the remaining partials say.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}
