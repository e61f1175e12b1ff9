//! Linear constraint systems encoding the perceptual properties of the
//! rebuffering and adaptation QoE functions on a grid.
//!
//! Every system has the form `G x <= h`, `B x = c` over a row-major vectorized
//! grid (see [`crate::grid`]). Monotonicity-type properties only emit rows
//! between adjacent bins; the rest of the ordering follows by transitivity.
//! Superadditivity of stall penalties has no such shortcut and is emitted for
//! every admissible pair of durations.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridKind, GridSpec, QoEGrid};
use crate::linalg::SparseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("dimension mismatch: grid has {grid} values, system has {system} columns")]
    Dimension { grid: usize, system: usize },
    #[error("unknown constraint '{0}' (expected one of S1..S4, A1..A4)")]
    UnknownLabel(String),
    #[error("malformed constraint export at line {line}: {message}")]
    Import { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Individually switchable properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constraint {
    /// Stall penalty non-increasing in duration.
    S1,
    /// Stall penalty non-increasing in the quality before the stall.
    S2,
    /// Several short stalls hurt at least as much as one long one.
    S3,
    /// Higher quality still wins after a stall.
    S4,
    /// Adaptation sign (merged with A2 on the grid).
    A1,
    /// Adaptation non-decreasing in the quality change.
    A2,
    /// Adaptation non-increasing in the starting quality.
    A3,
    /// Rewards for upswitches no larger than penalties for downswitches.
    A4,
}

impl Constraint {
    pub const REBUFFERING: [Constraint; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];
    pub const ADAPTATION: [Constraint; 4] = [Self::A1, Self::A2, Self::A3, Self::A4];

    pub fn kind(self) -> GridKind {
        match self {
            Self::S1 | Self::S2 | Self::S3 | Self::S4 => GridKind::Rebuffering,
            _ => GridKind::Adaptation,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Constraint {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Self::S1,
            "S2" => Self::S2,
            "S3" => Self::S3,
            "S4" => Self::S4,
            "A1" => Self::A1,
            "A2" => Self::A2,
            "A3" => Self::A3,
            "A4" => Self::A4,
            _ => return Err(ConstraintError::UnknownLabel(s.to_string())),
        })
    }
}

pub type ConstraintSet = BTreeSet<Constraint>;

pub fn all_rebuffering() -> ConstraintSet {
    Constraint::REBUFFERING.into_iter().collect()
}

pub fn all_adaptation() -> ConstraintSet {
    Constraint::ADAPTATION.into_iter().collect()
}

/// Parses a comma separated list such as `S1,S2,A4`. An empty string or
/// `none` yields the empty set.
pub fn parse_constraint_list(s: &str) -> Result<ConstraintSet, ConstraintError> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        return Ok(ConstraintSet::new());
    }
    if t.eq_ignore_ascii_case("all") {
        return Ok(all_rebuffering().into_iter().chain(all_adaptation()).collect());
    }
    t.split(',').map(str::parse).collect()
}

/// Source tag of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowLabel {
    S1,
    S2,
    S3,
    S4,
    /// The merged sign + monotone-in-change rows.
    A12,
    A3,
    A4,
    ZeroAnchor,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
            Self::S4 => "S4",
            Self::A12 => "A1/A2",
            Self::A3 => "A3",
            Self::A4 => "A4",
            Self::ZeroAnchor => "zero-anchor",
        };
        f.write_str(s)
    }
}

impl FromStr for RowLabel {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "S1" => Self::S1,
            "S2" => Self::S2,
            "S3" => Self::S3,
            "S4" => Self::S4,
            "A1/A2" => Self::A12,
            "A3" => Self::A3,
            "A4" => Self::A4,
            "zero-anchor" => Self::ZeroAnchor,
            _ => return Err(ConstraintError::UnknownLabel(s.to_string())),
        })
    }
}

/// `G x <= h`, `B x = c` with per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem<T> {
    pub ineq_matrix: SparseMatrix<T>,
    pub ineq_bound: Vec<T>,
    pub ineq_labels: Vec<RowLabel>,
    pub eq_matrix: SparseMatrix<T>,
    pub eq_bound: Vec<T>,
    pub eq_labels: Vec<RowLabel>,
}

impl<T: Scalar> ConstraintSystem<T> {
    /// A system with no rows over `n` variables.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            ineq_matrix: SparseMatrix::zeros(0, n),
            ineq_bound: Vec::new(),
            ineq_labels: Vec::new(),
            eq_matrix: SparseMatrix::zeros(0, n),
            eq_bound: Vec::new(),
            eq_labels: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.ineq_matrix.ncols()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_bound.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_bound.len()
    }

    pub fn count_ineq(&self, label: RowLabel) -> usize {
        self.ineq_labels.iter().filter(|&&l| l == label).count()
    }

    /// Consistency of shapes; used by the solver before it starts.
    pub fn is_consistent(&self) -> bool {
        self.ineq_matrix.ncols() == self.eq_matrix.ncols()
            && self.ineq_matrix.nrows() == self.ineq_bound.len()
            && self.ineq_labels.len() == self.ineq_bound.len()
            && self.eq_matrix.nrows() == self.eq_bound.len()
            && self.eq_labels.len() == self.eq_bound.len()
    }

    /// Writes the system as sparse triplets plus bound vectors.
    ///
    /// ```text
    /// # ksqi constraint system v1
    /// vars <n>
    /// G <row> <col> <value>
    /// h <row> <bound> <label>
    /// B <row> <col> <value>
    /// c <row> <bound> <label>
    /// ```
    pub fn export_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# ksqi constraint system v1")?;
        writeln!(w, "vars {}", self.n_vars())?;
        writeln!(w, "rows {} {}", self.n_ineq(), self.n_eq())?;
        for (r, c, v) in self.ineq_matrix.triplets() {
            writeln!(w, "G {r} {c} {v}")?;
        }
        for (r, (h, l)) in self.ineq_bound.iter().zip(&self.ineq_labels).enumerate() {
            writeln!(w, "h {r} {h} {l}")?;
        }
        for (r, c, v) in self.eq_matrix.triplets() {
            writeln!(w, "B {r} {c} {v}")?;
        }
        for (r, (b, l)) in self.eq_bound.iter().zip(&self.eq_labels).enumerate() {
            writeln!(w, "c {r} {b} {l}")?;
        }
        Ok(())
    }

    pub fn import_triplets<R: BufRead>(r: R) -> Result<Self, ConstraintError> {
        let mut n_vars = None;
        let mut rows = None;
        let mut g = Vec::new();
        let mut b = Vec::new();
        let mut h: Vec<(usize, T, RowLabel)> = Vec::new();
        let mut c: Vec<(usize, T, RowLabel)> = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = k + 1;
            let err = |m: &str| ConstraintError::Import {
                line: lineno,
                message: m.to_string(),
            };
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let num = |s: &str| -> Result<T, ConstraintError> {
                s.parse::<f64>().map(T::lit).map_err(|_| err("bad number"))
            };
            let idx = |s: &str| -> Result<usize, ConstraintError> {
                s.parse::<usize>().map_err(|_| err("bad index"))
            };
            match (parts[0], parts.len()) {
                ("vars", 2) => n_vars = Some(idx(parts[1])?),
                ("rows", 3) => rows = Some((idx(parts[1])?, idx(parts[2])?)),
                ("G", 4) => g.push((idx(parts[1])?, idx(parts[2])?, num(parts[3])?)),
                ("B", 4) => b.push((idx(parts[1])?, idx(parts[2])?, num(parts[3])?)),
                ("h", 4) => h.push((idx(parts[1])?, num(parts[2])?, parts[3].parse()?)),
                ("c", 4) => c.push((idx(parts[1])?, num(parts[2])?, parts[3].parse()?)),
                _ => return Err(err("unrecognized record")),
            }
        }
        let n = n_vars.ok_or(ConstraintError::Import {
            line: 0,
            message: "missing vars header".into(),
        })?;
        let (mi, me) = rows.ok_or(ConstraintError::Import {
            line: 0,
            message: "missing rows header".into(),
        })?;
        let collect = |v: Vec<(usize, T, RowLabel)>, m: usize| -> Result<(Vec<T>, Vec<RowLabel>), ConstraintError> {
            let mut bounds = vec![T::nan(); m];
            let mut labels = vec![RowLabel::ZeroAnchor; m];
            for (r, val, l) in v {
                if r >= m {
                    return Err(ConstraintError::Import {
                        line: 0,
                        message: format!("row {r} out of range"),
                    });
                }
                bounds[r] = val;
                labels[r] = l;
            }
            if bounds.iter().any(|x| x.is_nan()) {
                return Err(ConstraintError::Import {
                    line: 0,
                    message: "missing bound rows".into(),
                });
            }
            Ok((bounds, labels))
        };
        let (ineq_bound, ineq_labels) = collect(h, mi)?;
        let (eq_bound, eq_labels) = collect(c, me)?;
        let oob = |t: &[(usize, usize, T)], m: usize| t.iter().any(|&(r, cc, _)| r >= m || cc >= n);
        if oob(&g, mi) || oob(&b, me) {
            return Err(ConstraintError::Import {
                line: 0,
                message: "triplet outside declared shape".into(),
            });
        }
        Ok(Self {
            ineq_matrix: SparseMatrix::from_triplets(mi, n, &g),
            ineq_bound,
            ineq_labels,
            eq_matrix: SparseMatrix::from_triplets(me, n, &b),
            eq_bound,
            eq_labels,
        })
    }
}

struct Builder<T> {
    n: usize,
    g: Vec<(usize, usize, T)>,
    h: Vec<T>,
    gl: Vec<RowLabel>,
    b: Vec<(usize, usize, T)>,
    c: Vec<T>,
    bl: Vec<RowLabel>,
}

impl<T: Scalar> Builder<T> {
    fn new(n: usize) -> Self {
        Self {
            n,
            g: Vec::new(),
            h: Vec::new(),
            gl: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
            bl: Vec::new(),
        }
    }

    fn ineq(&mut self, terms: &[(usize, T)], bound: T, label: RowLabel) {
        let r = self.h.len();
        self.g.extend(terms.iter().map(|&(c, v)| (r, c, v)));
        self.h.push(bound);
        self.gl.push(label);
    }

    fn eq(&mut self, col: usize, bound: T) {
        let r = self.c.len();
        self.b.push((r, col, T::one()));
        self.c.push(bound);
        self.bl.push(RowLabel::ZeroAnchor);
    }

    fn finish(self) -> ConstraintSystem<T> {
        ConstraintSystem {
            ineq_matrix: SparseMatrix::from_triplets(self.h.len(), self.n, &self.g),
            ineq_bound: self.h,
            ineq_labels: self.gl,
            eq_matrix: SparseMatrix::from_triplets(self.c.len(), self.n, &self.b),
            eq_bound: self.c,
            eq_labels: self.bl,
        }
    }
}

/// Builds the rebuffering system. The zero anchor `S(p, 0) = 0` is always
/// present; `enabled` selects which inequality families are emitted
/// (adaptation labels in it are ignored).
pub fn build_rebuffering_constraints<T: Scalar>(
    spec: &GridSpec<T>,
    enabled: &ConstraintSet,
) -> Result<ConstraintSystem<T>, ConstraintError> {
    spec.validate()?;
    let side = spec.side();
    let at = |i, j| spec.index(i, j);
    let one = T::one();
    let mut bld = Builder::new(spec.len());
    for i in 0..side {
        bld.eq(at(i, 0), T::zero());
    }
    if enabled.contains(&Constraint::S1) {
        for i in 0..side {
            for j in 0..spec.n_steps {
                bld.ineq(&[(at(i, j + 1), one), (at(i, j), -one)], T::zero(), RowLabel::S1);
            }
        }
    }
    if enabled.contains(&Constraint::S2) {
        for i in 0..spec.n_steps {
            for j in 0..side {
                bld.ineq(&[(at(i + 1, j), one), (at(i, j), -one)], T::zero(), RowLabel::S2);
            }
        }
    }
    if enabled.contains(&Constraint::S3) {
        // 0-based durations j1, j2 >= 1 with j1 + j2 <= N
        for i in 0..side {
            for j1 in 1..side {
                for j2 in j1..side {
                    let sum = j1 + j2;
                    if sum > spec.n_steps {
                        break;
                    }
                    let terms: Vec<(usize, T)> = if j1 == j2 {
                        vec![(at(i, j1), T::lit(2.0)), (at(i, sum), -one)]
                    } else {
                        vec![(at(i, j1), one), (at(i, j2), one), (at(i, sum), -one)]
                    };
                    bld.ineq(&terms, T::zero(), RowLabel::S3);
                }
            }
        }
    }
    if enabled.contains(&Constraint::S4) {
        let step = spec.quality_step();
        for i in 0..spec.n_steps {
            for j in 0..side {
                bld.ineq(&[(at(i, j), one), (at(i + 1, j), -one)], step, RowLabel::S4);
            }
        }
    }
    Ok(bld.finish())
}

/// Builds the adaptation system. The zero diagonal `A(p, 0) = 0` is always
/// present. `A1` and `A2` share one row family: monotone non-decreasing in the
/// destination bin, which together with the zero diagonal gives the sign
/// pattern in its non-strict form.
pub fn build_adaptation_constraints<T: Scalar>(
    spec: &GridSpec<T>,
    enabled: &ConstraintSet,
) -> Result<ConstraintSystem<T>, ConstraintError> {
    spec.validate()?;
    let side = spec.side();
    let at = |i, j| spec.index(i, j);
    let one = T::one();
    let mut bld = Builder::new(spec.len());
    for i in 0..side {
        bld.eq(at(i, i), T::zero());
    }
    if enabled.contains(&Constraint::A1) || enabled.contains(&Constraint::A2) {
        for i in 0..side {
            for j in 0..spec.n_steps {
                bld.ineq(&[(at(i, j), one), (at(i, j + 1), -one)], T::zero(), RowLabel::A12);
            }
        }
    }
    if enabled.contains(&Constraint::A3) {
        for i in 0..spec.n_steps {
            for j in 0..spec.n_steps {
                bld.ineq(&[(at(i + 1, j + 1), one), (at(i, j), -one)], T::zero(), RowLabel::A3);
            }
        }
    }
    if enabled.contains(&Constraint::A4) {
        for i in 0..side {
            for d in 1..=i {
                bld.ineq(&[(at(i, i - d), one), (at(i - d, i), one)], T::zero(), RowLabel::A4);
            }
        }
    }
    Ok(bld.finish())
}

/// Builds the system matching a grid kind from a mixed constraint set.
pub fn build_constraints<T: Scalar>(
    spec: &GridSpec<T>,
    kind: GridKind,
    enabled: &ConstraintSet,
) -> Result<ConstraintSystem<T>, ConstraintError> {
    match kind {
        GridKind::Rebuffering => build_rebuffering_constraints(spec, enabled),
        GridKind::Adaptation => build_adaptation_constraints(spec, enabled),
    }
}

/// A violated row and by how much.
#[derive(Debug, Clone, PartialEq)]
pub struct RowViolation<T> {
    pub label: RowLabel,
    pub equality: bool,
    pub row: usize,
    /// `(Gx - h)_r` for inequalities, `|(Bx - c)_r|` for equalities.
    pub residual: T,
}

/// Lists rows violated by more than `tol`.
pub fn check_feasible<T: Scalar>(
    grid: &QoEGrid<T>,
    cs: &ConstraintSystem<T>,
    tol: T,
) -> Result<Vec<RowViolation<T>>, ConstraintError> {
    check_vector(grid.as_slice(), cs, tol)
}

pub fn check_vector<T: Scalar>(
    x: &[T],
    cs: &ConstraintSystem<T>,
    tol: T,
) -> Result<Vec<RowViolation<T>>, ConstraintError> {
    if x.len() != cs.n_vars() {
        return Err(ConstraintError::Dimension {
            grid: x.len(),
            system: cs.n_vars(),
        });
    }
    let mut out = Vec::new();
    let gx = cs.ineq_matrix.mul_vec(x);
    for (r, (v, h)) in gx.iter().zip(&cs.ineq_bound).enumerate() {
        let res = *v - *h;
        if !(res <= tol) {
            out.push(RowViolation {
                label: cs.ineq_labels[r],
                equality: false,
                row: r,
                residual: res,
            });
        }
    }
    let bx = cs.eq_matrix.mul_vec(x);
    for (r, (v, c)) in bx.iter().zip(&cs.eq_bound).enumerate() {
        let res = (*v - *c).abs();
        if !(res <= tol) {
            out.push(RowViolation {
                label: cs.eq_labels[r],
                equality: true,
                row: r,
                residual: res,
            });
        }
    }
    Ok(out)
}

/// Number of `(j1, j2)` pairs with `1 <= j1 <= j2`, `j1 + j2 <= N`
/// (0-based durations) for which a superadditivity row exists.
pub fn superadditive_pairs(n_steps: usize) -> usize {
    (1..=n_steps)
        .map(|j1| (j1..=n_steps).filter(|j2| j1 + j2 <= n_steps).count())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize) -> GridSpec<f64> {
        GridSpec::new(n, 100.0, 10.0).unwrap()
    }

    #[test]
    fn counts_at_n2() {
        let s = build_rebuffering_constraints(&spec(2), &all_rebuffering()).unwrap();
        assert_eq!(s.n_eq(), 3);
        assert_eq!(s.count_ineq(RowLabel::S1), 6);
        assert_eq!(s.count_ineq(RowLabel::S2), 6);
        assert_eq!(s.count_ineq(RowLabel::S3), 3);
        assert_eq!(s.count_ineq(RowLabel::S4), 6);

        let a = build_adaptation_constraints(&spec(2), &all_adaptation()).unwrap();
        assert_eq!(a.n_eq(), 3);
        assert_eq!(a.count_ineq(RowLabel::A12), 6);
        assert_eq!(a.count_ineq(RowLabel::A3), 4);
        assert_eq!(a.count_ineq(RowLabel::A4), 3);
    }

    #[test]
    fn closed_form_counts() {
        for n in 2..=10 {
            let s = build_rebuffering_constraints(&spec(n), &all_rebuffering()).unwrap();
            assert_eq!(s.n_eq(), n + 1);
            assert_eq!(s.count_ineq(RowLabel::S1), (n + 1) * n);
            assert_eq!(s.count_ineq(RowLabel::S2), n * (n + 1));
            assert_eq!(s.count_ineq(RowLabel::S4), n * (n + 1));
            let pairs = (2..=n + 1)
                .flat_map(|a| (a..=n + 1).map(move |b| (a, b)))
                .filter(|(a, b)| a + b <= n + 2)
                .count();
            assert_eq!(s.count_ineq(RowLabel::S3), (n + 1) * pairs);
            assert_eq!(superadditive_pairs(n), pairs);
            let a = build_adaptation_constraints(&spec(n), &all_adaptation()).unwrap();
            assert_eq!(a.n_eq(), n + 1);
            assert_eq!(a.count_ineq(RowLabel::A12), (n + 1) * n);
            assert_eq!(a.count_ineq(RowLabel::A3), n * n);
            assert_eq!(a.count_ineq(RowLabel::A4), n * (n + 1) / 2);
        }
    }

    #[test]
    fn row_structure() {
        let s = build_rebuffering_constraints(&spec(6), &all_rebuffering()).unwrap();
        let a = build_adaptation_constraints(&spec(6), &all_adaptation()).unwrap();
        for cs in [&s, &a] {
            assert!(cs.is_consistent());
            for r in 0..cs.n_ineq() {
                assert!(cs.ineq_matrix.row_nnz(r) <= 3);
            }
            for r in 0..cs.n_eq() {
                assert_eq!(cs.eq_matrix.row_nnz(r), 1);
            }
        }
    }

    #[test]
    fn empty_enabled_set_keeps_anchor_only() {
        let s = build_rebuffering_constraints(&spec(4), &ConstraintSet::new()).unwrap();
        assert_eq!(s.n_ineq(), 0);
        assert_eq!(s.n_eq(), 5);
        assert!(build_rebuffering_constraints(&GridSpec { n_steps: 1, quality_max: 1.0, rebuffer_max: 1.0 }, &ConstraintSet::new()).is_err());
    }

    #[test]
    fn zero_grid_is_feasible() {
        for kind in [GridKind::Rebuffering, GridKind::Adaptation] {
            let all = all_rebuffering().into_iter().chain(all_adaptation()).collect();
            let cs = build_constraints(&spec(5), kind, &all).unwrap();
            let g = QoEGrid::zeros(kind, spec(5));
            assert!(check_feasible(&g, &cs, 0.0).unwrap().is_empty());
        }
    }

    #[test]
    fn single_positive_cell_violates_s1_by_half() {
        let cs = build_rebuffering_constraints(&spec(2), &all_rebuffering()).unwrap();
        let mut g = QoEGrid::zeros(GridKind::Rebuffering, spec(2));
        g.set(0, 1, 0.5);
        let v = check_feasible(&g, &cs, 1e-9).unwrap();
        assert!(v.iter().all(|r| !r.equality));
        let s1: Vec<_> = v.iter().filter(|r| r.label == RowLabel::S1).collect();
        assert_eq!(s1.len(), 1);
        assert_eq!(s1[0].residual, 0.5);
    }

    #[test]
    fn linear_in_tau_closed_form() {
        // The form -tau * (1 - p / 2P) grows with p, which breaks S2, while the
        // form -tau * (1 + p / 2P) satisfies everything; both are linear in tau
        // so S3 holds with equality.
        let sp = spec(10);
        let cs = build_rebuffering_constraints(&sp, &all_rebuffering()).unwrap();
        let bad = QoEGrid::from_physical(GridKind::Rebuffering, sp, |p, t| -t * (1.0 - p / 200.0));
        let good = QoEGrid::from_physical(GridKind::Rebuffering, sp, |p, t| -t * (1.0 + p / 200.0));
        let v = check_feasible(&bad, &cs, 1e-9).unwrap();
        assert!(!v.is_empty());
        assert!(v.iter().all(|r| r.label == RowLabel::S2));
        assert!(check_feasible(&good, &cs, 1e-9).unwrap().is_empty());
        let gx = cs.ineq_matrix.mul_vec(good.as_slice());
        for (r, l) in cs.ineq_labels.iter().enumerate() {
            if *l == RowLabel::S3 {
                assert!(gx[r].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn half_slope_adaptation_is_feasible_with_equality() {
        let sp = spec(10);
        let cs = build_adaptation_constraints(&sp, &all_adaptation()).unwrap();
        let g = QoEGrid::from_physical(GridKind::Adaptation, sp, |_, dp| dp / 2.0);
        assert!(check_feasible(&g, &cs, 1e-12).unwrap().is_empty());
        let gx = cs.ineq_matrix.mul_vec(g.as_slice());
        for (r, l) in cs.ineq_labels.iter().enumerate() {
            if *l == RowLabel::A4 || *l == RowLabel::A3 {
                assert!(gx[r].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_upswitch_is_reported() {
        let sp = spec(2);
        let cs = build_adaptation_constraints(&sp, &all_adaptation()).unwrap();
        let mut g = QoEGrid::zeros(GridKind::Adaptation, sp);
        g.set(1, 2, -1.0);
        let v = check_feasible(&g, &cs, 1e-9).unwrap();
        assert!(v.iter().any(|r| r.label == RowLabel::A12));
    }

    #[test]
    fn dimension_mismatch() {
        let cs = build_rebuffering_constraints(&spec(2), &all_rebuffering()).unwrap();
        let g = QoEGrid::zeros(GridKind::Rebuffering, spec(3));
        assert!(matches!(check_feasible(&g, &cs, 0.0), Err(ConstraintError::Dimension { .. })));
    }

    #[test]
    fn adjacent_rows_equivalent_to_all_pairs_at_n3() {
        // Brute force: for the monotone families the adjacent-only system
        // accepts exactly the grids that satisfy every pairwise ordering.
        let sp = spec(3);
        let side = sp.side();
        let cs_s = build_rebuffering_constraints(&sp, &[Constraint::S1, Constraint::S2, Constraint::S4].into()).unwrap();
        let cs_a = build_adaptation_constraints(&sp, &[Constraint::A1, Constraint::A3].into()).unwrap();
        let mut rng = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng % 7) as f64 - 3.0
        };
        for _ in 0..4000 {
            let mut s = QoEGrid::from_fn(GridKind::Rebuffering, sp, |_, _| next() * 20.0);
            for i in 0..side {
                s.set(i, 0, 0.0);
            }
            let adjacent_ok = check_feasible(&s, &cs_s, 0.0).unwrap().is_empty();
            let mut all_ok = true;
            for i in 0..side {
                for j1 in 0..side {
                    for j2 in j1..side {
                        all_ok &= s.get(i, j1) >= s.get(i, j2);
                    }
                }
            }
            for j in 0..side {
                for i1 in 0..side {
                    for i2 in i1..side {
                        all_ok &= s.get(i1, j) >= s.get(i2, j);
                        all_ok &= s.get(i1, j) + sp.quality_at(i1) <= s.get(i2, j) + sp.quality_at(i2);
                    }
                }
            }
            assert_eq!(adjacent_ok, all_ok);

            let mut a = QoEGrid::from_fn(GridKind::Adaptation, sp, |_, _| next());
            for i in 0..side {
                a.set(i, i, 0.0);
            }
            let adjacent_ok = check_feasible(&a, &cs_a, 0.0).unwrap().is_empty();
            let mut all_ok = true;
            for i in 0..side {
                for j1 in 0..side {
                    for j2 in j1..side {
                        all_ok &= a.get(i, j1) <= a.get(i, j2);
                    }
                }
            }
            for i1 in 0..side {
                for i2 in i1..side {
                    for j1 in 0..side {
                        let j2 = j1 as i64 + (i2 - i1) as i64;
                        if (0..side as i64).contains(&j2) {
                            all_ok &= a.get(i1, j1) >= a.get(i2, j2 as usize);
                        }
                    }
                }
            }
            assert_eq!(adjacent_ok, all_ok);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let cs = build_rebuffering_constraints(&spec(3), &all_rebuffering()).unwrap();
        let mut buf = Vec::new();
        cs.export_triplets(&mut buf).unwrap();
        let back = ConstraintSystem::<f64>::import_triplets(&buf[..]).unwrap();
        assert_eq!(back, cs);
        assert!(ConstraintSystem::<f64>::import_triplets(&b"vars 3\nG 0 0 x\n"[..]).is_err());
    }

    #[test]
    fn parse_lists() {
        assert_eq!(parse_constraint_list("S1,S2").unwrap(), [Constraint::S1, Constraint::S2].into());
        assert!(parse_constraint_list("none").unwrap().is_empty());
        assert_eq!(parse_constraint_list("all").unwrap().len(), 8);
        assert!(parse_constraint_list("S9").is_err());
    }

    fn feasible_s(sp: GridSpec<f64>) -> impl Strategy<Value = QoEGrid<f64>> {
        // per-row concave stall curve scaled by a non-decreasing quality weight
        let side = sp.side();
        (
            proptest::collection::vec(0.0..3.0f64, side - 1),
            0.5..1.5f64,
            0.0..0.04f64,
        )
            .prop_map(move |(mut incr, base, slope)| {
                incr.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let mut curve = vec![0.0];
                for d in &incr {
                    curve.push(curve.last().unwrap() + d);
                }
                QoEGrid::from_fn(GridKind::Rebuffering, sp, |i, j| -(base + slope * i as f64) * curve[j])
            })
    }

    fn feasible_a(sp: GridSpec<f64>) -> impl Strategy<Value = QoEGrid<f64>> {
        (0.1..0.3f64, 0.0..0.1f64, 0.35..0.5f64, 0.0..0.2f64).prop_map(move |(g0, gs, h0, hs)| {
            QoEGrid::from_physical(GridKind::Adaptation, sp, |p, dp| {
                let u = p / 100.0;
                if dp >= 0.0 {
                    (g0 - gs * u) * dp
                } else {
                    (h0 + hs * u) * dp
                }
            })
        })
    }

    proptest! {
        #[test]
        fn feasible_set_is_convex_s(g1 in feasible_s(spec(6)), g2 in feasible_s(spec(6)), theta in 0.0..=1.0f64) {
            let cs = build_rebuffering_constraints(&spec(6), &all_rebuffering()).unwrap();
            prop_assert!(check_feasible(&g1, &cs, 1e-9).unwrap().is_empty());
            prop_assert!(check_feasible(&g2, &cs, 1e-9).unwrap().is_empty());
            prop_assert!(check_feasible(&g1.blend(&g2, theta), &cs, 1e-9).unwrap().is_empty());
        }

        #[test]
        fn feasible_set_is_convex_a(g1 in feasible_a(spec(6)), g2 in feasible_a(spec(6)), theta in 0.0..=1.0f64) {
            let cs = build_adaptation_constraints(&spec(6), &all_adaptation()).unwrap();
            prop_assert!(check_feasible(&g1, &cs, 1e-9).unwrap().is_empty());
            prop_assert!(check_feasible(&g1.blend(&g2, theta), &cs, 1e-9).unwrap().is_empty());
        }

        #[test]
        fn adaptation_feasibility_implies_sign_pattern(vals in proptest::collection::vec(-5.0..5.0f64, 16)) {
            let sp = spec(3);
            let cs = build_adaptation_constraints(&sp, &all_adaptation()).unwrap();
            let mut g = QoEGrid::from_vec(GridKind::Adaptation, sp, vals).unwrap();
            for i in 0..4 { g.set(i, i, 0.0); }
            // make rows monotone so a decent share of samples are feasible
            for i in 0..4 {
                let mut row: Vec<f64> = (0..4).map(|j| g.get(i, j)).collect();
                row.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let shift = row[i];
                for j in 0..4 { g.set(i, j, row[j] - shift); }
            }
            if check_feasible(&g, &cs, 0.0).unwrap().is_empty() {
                for i in 0..4 {
                    for j in 0..4 {
                        if j < i { prop_assert!(g.get(i, j) <= 0.0); }
                        if j > i { prop_assert!(g.get(i, j) >= 0.0); }
                    }
                }
            }
        }
    }
}
