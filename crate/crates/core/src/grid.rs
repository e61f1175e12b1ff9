//! Discretization of the rebuffering and adaptation QoE functions.
//!
//! Both functions live on an `(N+1) x (N+1)` grid. Indices are 0-based here:
//!
//! * rebuffering cell `(i, j)` holds `S(p, tau)` at `p = i/N * P`, `tau = j/N * tau_max`;
//! * adaptation cell `(i, j)` holds `A(p, dp)` at `p = i/N * P`, `dp = (j - i)/N * P`,
//!   i.e. `j` is the bin of the quality switched *to*.
//!
//! Grids are vectorized row-major: `k = i * (N+1) + j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("quality_max and rebuffer_max must be positive and finite")]
    BadRange,
    #[error("{what} = {value} outside its domain {domain}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        domain: String,
    },
    #[error("grid has {got} values, expected {expected}")]
    WrongSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridSpec<T> {
    pub n_steps: usize,
    pub quality_max: T,
    pub rebuffer_max: T,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(n_steps: usize, quality_max: T, rebuffer_max: T) -> Result<Self, GridError> {
        let s = Self {
            n_steps,
            quality_max,
            rebuffer_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.n_steps < 2 {
            return Err(GridError::TooFewSteps(self.n_steps));
        }
        let ok = |v: T| v > T::zero() && v.is_finite();
        if !ok(self.quality_max) || !ok(self.rebuffer_max) {
            return Err(GridError::BadRange);
        }
        Ok(())
    }

    /// Samples per axis, `N + 1`.
    pub fn side(&self) -> usize {
        self.n_steps + 1
    }

    /// Length of a vectorized grid, `(N + 1)^2`.
    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.side() + j
    }

    pub fn quality_step(&self) -> T {
        self.quality_max / T::from_usize_lossy(self.n_steps)
    }

    pub fn rebuffer_step(&self) -> T {
        self.rebuffer_max / T::from_usize_lossy(self.n_steps)
    }

    pub fn quality_at(&self, i: usize) -> T {
        self.quality_max * T::from_usize_lossy(i) / T::from_usize_lossy(self.n_steps)
    }

    pub fn rebuffer_at(&self, j: usize) -> T {
        self.rebuffer_max * T::from_usize_lossy(j) / T::from_usize_lossy(self.n_steps)
    }
}

impl Default for GridSpec<f64> {
    fn default() -> Self {
        Self {
            n_steps: 10,
            quality_max: 100.0,
            rebuffer_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Rebuffering,
    Adaptation,
}

/// A discretized QoE function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QoEGrid<T> {
    pub kind: GridKind,
    pub spec: GridSpec<T>,
    values: Vec<T>,
}

impl<T: Scalar> QoEGrid<T> {
    pub fn zeros(kind: GridKind, spec: GridSpec<T>) -> Self {
        Self {
            kind,
            spec,
            values: vec![T::zero(); spec.len()],
        }
    }

    pub fn from_vec(kind: GridKind, spec: GridSpec<T>, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::WrongSize {
                expected: spec.len(),
                got: values.len(),
            });
        }
        Ok(Self { kind, spec, values })
    }

    /// Samples `f(i, j)` over all cells.
    pub fn from_fn(kind: GridKind, spec: GridSpec<T>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let side = spec.side();
        let mut values = Vec::with_capacity(spec.len());
        for i in 0..side {
            for j in 0..side {
                values.push(f(i, j));
            }
        }
        Self { kind, spec, values }
    }

    /// Samples a continuous function given in physical coordinates:
    /// `(p, tau)` for rebuffering, `(p, dp)` for adaptation.
    pub fn from_physical(kind: GridKind, spec: GridSpec<T>, f: impl Fn(T, T) -> T) -> Self {
        Self::from_fn(kind, spec, |i, j| {
            let p = spec.quality_at(i);
            match kind {
                GridKind::Rebuffering => f(p, spec.rebuffer_at(j)),
                GridKind::Adaptation => f(p, spec.quality_at(j) - p),
            }
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[self.spec.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.spec.index(i, j);
        self.values[k] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.values.chunks(self.spec.side()).map(<[T]>::to_vec).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    /// Convex combination `theta * self + (1 - theta) * other`.
    pub fn blend(&self, other: &Self, theta: T) -> Self {
        Self {
            kind: self.kind,
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| theta * a + (T::one() - theta) * b)
                .collect(),
        }
    }
}

/// Nearest-bin rounding with ties toward the larger index.
fn round_half_up<T: Scalar>(x: T) -> i64 {
    (x + T::lit(0.5)).floor().to_i64().unwrap_or(i64::MAX)
}

fn domain_err<T: Scalar>(what: &'static str, v: T, domain: String) -> GridError {
    GridError::OutOfDomain {
        what,
        value: v.as_f64(),
        domain,
    }
}

/// Quantizes a continuous event onto the grid (0-based cell).
///
/// `second` is the stall duration for rebuffering grids and the quality change
/// for adaptation grids. Stalls longer than `tau_max` clamp to the last column.
/// For adaptation the column is `i + dp * N / P` rounded, where `i` is the
/// already-rounded row.
pub fn bin_index<T: Scalar>(
    spec: &GridSpec<T>,
    p: T,
    second: T,
    kind: GridKind,
) -> Result<(usize, usize), GridError> {
    let n = spec.n_steps as i64;
    let nf = T::from_usize_lossy(spec.n_steps);
    if !(p >= T::zero() && p <= spec.quality_max) {
        return Err(domain_err("p", p, format!("[0, {}]", spec.quality_max)));
    }
    let i = round_half_up(p * nf / spec.quality_max).clamp(0, n);
    let j = match kind {
        GridKind::Rebuffering => {
            if !(second >= T::zero()) || !second.is_finite() {
                return Err(domain_err("tau", second, "[0, inf)".into()));
            }
            round_half_up(second * nf / spec.rebuffer_max).clamp(0, n)
        }
        GridKind::Adaptation => {
            let slack = spec.quality_max * T::lit(1e-12);
            if !(second >= -p - slack && second <= spec.quality_max - p + slack) {
                return Err(domain_err(
                    "dp",
                    second,
                    format!("[{}, {}]", -p, spec.quality_max - p),
                ));
            }
            round_half_up(T::from_i64(i).unwrap() + second * nf / spec.quality_max).clamp(0, n)
        }
    };
    Ok((i as usize, j as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec<f64> {
        GridSpec::default()
    }

    #[test]
    fn spec_validation() {
        assert_eq!(GridSpec::new(1, 100.0, 10.0), Err(GridError::TooFewSteps(1)));
        assert_eq!(GridSpec::new(4, 0.0, 10.0), Err(GridError::BadRange));
        assert_eq!(spec().len(), 121);
        assert_eq!(spec().quality_at(8), 80.0);
        assert_eq!(spec().rebuffer_at(4), 4.0);
    }

    #[test]
    fn bin_index_examples() {
        // 1-based (9, 5) in the usual notation
        assert_eq!(bin_index(&spec(), 80.0, 4.0, GridKind::Rebuffering), Ok((8, 4)));
        assert_eq!(bin_index(&spec(), 0.0, 0.0, GridKind::Rebuffering), Ok((0, 0)));
        // p=75 -> 7.5 rounds up to 8; column 8 - 2.5 = 5.5 rounds up to 6 (1-based (9, 7))
        assert_eq!(bin_index(&spec(), 75.0, -25.0, GridKind::Adaptation), Ok((8, 6)));
        assert_eq!(bin_index(&spec(), 80.0, -20.0, GridKind::Adaptation), Ok((8, 6)));
    }

    #[test]
    fn long_stalls_clamp_and_bad_inputs_fail() {
        assert_eq!(bin_index(&spec(), 50.0, 25.0, GridKind::Rebuffering), Ok((5, 10)));
        assert!(bin_index(&spec(), 101.0, 0.0, GridKind::Rebuffering).is_err());
        assert!(bin_index(&spec(), 50.0, -1.0, GridKind::Rebuffering).is_err());
        assert!(bin_index(&spec(), 30.0, -31.0, GridKind::Adaptation).is_err());
        assert!(bin_index(&spec(), 30.0, 71.0, GridKind::Adaptation).is_err());
        assert_eq!(bin_index(&spec(), 75.0, 25.0, GridKind::Adaptation), Ok((8, 10)));
    }

    #[test]
    fn physical_sampling_uses_destination_column() {
        let g = QoEGrid::from_physical(GridKind::Adaptation, spec(), |_, dp| dp);
        assert_eq!(g.get(8, 6), -20.0);
        assert_eq!(g.get(3, 3), 0.0);
        let s = QoEGrid::from_physical(GridKind::Rebuffering, spec(), |p, t| p * t);
        assert_eq!(s.get(8, 4), 320.0);
    }
}
