//! Convex quadratic programming by operator splitting.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x^T P x + q^T x
//! subject to  B x  = c
//!             G x <= h
//! ```
//!
//! with an ADMM scheme in the style of OSQP: the constraints are stacked into
//! `l <= A x <= u`, each iteration solves one regularized linear system, and the
//! step size is rescaled from the primal/dual residual ratio. Once the iterates
//! are close, an active-set polish solves the reduced KKT system directly and is
//! accepted only if it certifies the requested residuals.

use std::io::Write;

use thiserror::Error;

use crate::constraints::ConstraintSystem;
use crate::linalg::{Cholesky, DenseMatrix, Ldl, LinalgError, SparseMatrix};
use crate::scalar::{dot, norm_inf, Scalar};

#[derive(Debug, Error)]
pub enum QpError {
    #[error("quadratic matrix is {rows}x{cols}, expected square of size {n}")]
    Shape { rows: usize, cols: usize, n: usize },
    #[error("linear term has length {got}, expected {expected}")]
    LinearLength { expected: usize, got: usize },
    #[error("constraint system is inconsistent with {0} variables")]
    Constraints(usize),
    #[error("quadratic matrix is not symmetric (max asymmetry {0})")]
    Asymmetric(f64),
    #[error("tolerances must be positive")]
    BadTolerance,
    #[error("inequality dual {index} is negative ({value})")]
    NegativeDual { index: usize, value: f64 },
    #[error("dual vectors have lengths ({ineq}, {eq}), expected ({want_ineq}, {want_eq})")]
    DualLength {
        ineq: usize,
        eq: usize,
        want_ineq: usize,
        want_eq: usize,
    },
    #[error("factorization failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("trace output failed: {0}")]
    Trace(#[from] std::io::Error),
}

const POLISH_ROUNDS: usize = 12;

/// `min 1/2 x^T P x + q^T x` over a constraint system.
#[derive(Debug, Clone)]
pub struct QpProblem<T> {
    pub quad_matrix: DenseMatrix<T>,
    pub lin_vector: Vec<T>,
    pub constraints: ConstraintSystem<T>,
}

impl<T: Scalar> QpProblem<T> {
    pub fn new(
        quad_matrix: DenseMatrix<T>,
        lin_vector: Vec<T>,
        constraints: ConstraintSystem<T>,
    ) -> Result<Self, QpError> {
        let p = Self {
            quad_matrix,
            lin_vector,
            constraints,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_vars(&self) -> usize {
        self.lin_vector.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.lin_vector.len();
        let (r, c) = (self.quad_matrix.nrows(), self.quad_matrix.ncols());
        if r != n || c != n {
            return Err(QpError::Shape { rows: r, cols: c, n });
        }
        if !self.constraints.is_consistent() || self.constraints.n_vars() != n {
            return Err(QpError::Constraints(n));
        }
        let asym = self.quad_matrix.asymmetry();
        let scale = self.quad_matrix.max_abs().max(T::min_positive_value());
        if asym > T::lit(1e-12) * scale {
            return Err(QpError::Asymmetric(asym.as_f64()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[T]) -> T {
        T::lit(0.5) * self.quad_matrix.quad_form(x) + dot(&self.lin_vector, x)
    }

    /// The same problem with objective multiplied by `k > 0`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            quad_matrix: self.quad_matrix.scaled(k),
            lin_vector: self.lin_vector.iter().map(|&v| v * k).collect(),
            constraints: self.constraints.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolverReport<T> {
    pub solution: Vec<T>,
    pub status: SolveStatus,
    /// `max(||Bx - c||_inf, ||max(Gx - h, 0)||_inf)` at `solution`.
    pub primal_residual: T,
    /// `||Px + q + G^T lambda + B^T nu||_inf` at `solution`.
    pub dual_residual: T,
    pub complementarity: T,
    pub iterations: usize,
    pub ineq_duals: Vec<T>,
    pub eq_duals: Vec<T>,
    pub objective: T,
    /// Whether the returned point came from the active-set polish.
    pub polished: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings<T> {
    pub tol_primal: T,
    pub tol_dual: T,
    pub max_iter: usize,
    pub rho: T,
    pub sigma: T,
    /// Over-relaxation parameter in `(0, 2)`.
    pub alpha: T,
    /// Iterations between residual checks.
    pub check_every: usize,
    /// Iterations between step-size updates; 0 disables adaptation.
    pub adapt_every: usize,
    pub polish: bool,
    pub infeasibility_tol: T,
}

impl<T: Scalar> QpSettings<T> {
    pub fn with_tolerances(tol_primal: T, tol_dual: T, max_iter: usize) -> Self {
        Self {
            tol_primal,
            tol_dual,
            max_iter,
            ..Self::default()
        }
    }
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tol_primal: T::lit(1e-8),
            tol_dual: T::lit(1e-8),
            max_iter: 200_000,
            rho: T::lit(0.1),
            sigma: T::lit(1e-6),
            alpha: T::lit(1.6),
            check_every: 10,
            adapt_every: 50,
            polish: true,
            infeasibility_tol: T::lit(1e-7),
        }
    }
}

/// Primal feasibility, stationarity and complementary slackness, all as
/// infinity norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals<T> {
    pub primal: T,
    pub dual: T,
    pub complementarity: T,
}

impl<T: Scalar> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

/// Evaluates the KKT conditions at `(x, lambda, nu)`.
pub fn kkt_residuals<T: Scalar>(
    p: &QpProblem<T>,
    x: &[T],
    ineq_duals: &[T],
    eq_duals: &[T],
) -> Result<KktResiduals<T>, QpError> {
    let cs = &p.constraints;
    if x.len() != p.n_vars() {
        return Err(QpError::LinearLength {
            expected: p.n_vars(),
            got: x.len(),
        });
    }
    if ineq_duals.len() != cs.n_ineq() || eq_duals.len() != cs.n_eq() {
        return Err(QpError::DualLength {
            ineq: ineq_duals.len(),
            eq: eq_duals.len(),
            want_ineq: cs.n_ineq(),
            want_eq: cs.n_eq(),
        });
    }
    if let Some((index, &v)) = ineq_duals.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
        return Err(QpError::NegativeDual {
            index,
            value: v.as_f64(),
        });
    }
    Ok(kkt_unchecked(p, x, ineq_duals, eq_duals))
}

fn kkt_unchecked<T: Scalar>(p: &QpProblem<T>, x: &[T], lam: &[T], nu: &[T]) -> KktResiduals<T> {
    let cs = &p.constraints;
    let gx = cs.ineq_matrix.mul_vec(x);
    let bx = cs.eq_matrix.mul_vec(x);
    let mut primal = T::zero();
    let mut comp = T::zero();
    for ((g, h), l) in gx.iter().zip(&cs.ineq_bound).zip(lam) {
        let slack = *g - *h;
        primal = primal.max(slack);
        comp = comp.max((*l * slack).abs());
    }
    for (b, c) in bx.iter().zip(&cs.eq_bound) {
        primal = primal.max((*b - *c).abs());
    }
    let mut stat = p.quad_matrix.mul_vec(x);
    for (s, (qi, (gl, bn))) in stat.iter_mut().zip(
        p.lin_vector
            .iter()
            .zip(cs.ineq_matrix.mul_t_vec(lam).into_iter().zip(cs.eq_matrix.mul_t_vec(nu))),
    ) {
        *s = *s + *qi + gl + bn;
    }
    KktResiduals {
        primal,
        dual: norm_inf(&stat),
        complementarity: comp,
    }
}

/// Solves with default step parameters and the given stopping rule.
pub fn solve_qp<T: Scalar>(
    p: &QpProblem<T>,
    tol_primal: T,
    tol_dual: T,
    max_iter: usize,
) -> Result<SolverReport<T>, QpError> {
    solve_qp_with(p, &QpSettings::with_tolerances(tol_primal, tol_dual, max_iter), None)
}

/// Solves with explicit settings, optionally writing a CSV residual trace
/// (`iteration,primal_residual,dual_residual,rho,objective`).
pub fn solve_qp_with<T: Scalar>(
    p: &QpProblem<T>,
    settings: &QpSettings<T>,
    trace: Option<&mut dyn Write>,
) -> Result<SolverReport<T>, QpError> {
    p.validate()?;
    if !(settings.tol_primal > T::zero() && settings.tol_dual > T::zero()) {
        return Err(QpError::BadTolerance);
    }
    Admm::new(p, settings).run(trace)
}

struct Admm<'a, T> {
    p: &'a QpProblem<T>,
    s: &'a QpSettings<T>,
    /// `[B; G]`
    a: SparseMatrix<T>,
    at_rows: usize,
    n_eq: usize,
    /// Only equality rows have a finite lower bound, equal to this one.
    upper: Vec<T>,
    rho: T,
    rho_vec: Vec<T>,
    factor: Cholesky<T>,
}

const EQ_RHO_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

impl<'a, T: Scalar> Admm<'a, T> {
    fn new(p: &'a QpProblem<T>, s: &'a QpSettings<T>) -> Self {
        let cs = &p.constraints;
        let a = cs.eq_matrix.vstack(&cs.ineq_matrix);
        let n_eq = cs.n_eq();
        let upper: Vec<T> = cs.eq_bound.iter().chain(&cs.ineq_bound).copied().collect();
        let at_rows = a.nrows();
        let mut me = Self {
            p,
            s,
            a,
            at_rows,
            n_eq,
            upper,
            rho: s.rho,
            rho_vec: Vec::new(),
            // placeholder until the first factorization below
            factor: Cholesky::factor(&DenseMatrix::identity(0)).expect("empty factor"),
        };
        me.set_rho(s.rho);
        me
    }

    fn set_rho(&mut self, rho: T) {
        self.rho = rho;
        let eq = rho * T::lit(EQ_RHO_SCALE);
        self.rho_vec = (0..self.at_rows)
            .map(|r| if r < self.n_eq { eq } else { rho })
            .collect();
        let mut k = self.p.quad_matrix.add_scaled(&self.a.gram_weighted(&self.rho_vec), T::one());
        k.add_diagonal(self.s.sigma);
        self.factor = Cholesky::factor(&k).expect("P + sigma I + A^T R A is positive definite");
    }

    fn project(&self, r: usize, v: T) -> T {
        if r < self.n_eq {
            self.upper[r]
        } else {
            v.min(self.upper[r])
        }
    }

    fn run(mut self, mut trace: Option<&mut dyn Write>) -> Result<SolverReport<T>, QpError> {
        let n = self.p.n_vars();
        let m = self.at_rows;
        let (alpha, sigma) = (self.s.alpha, self.s.sigma);
        let one = T::one();
        let mut x = vec![T::zero(); n];
        let mut z = vec![T::zero(); m];
        for r in 0..m {
            z[r] = self.project(r, z[r]);
        }
        let mut y = vec![T::zero(); m];
        let mut y_prev = y.clone();
        let mut best: Option<(T, Vec<T>, Vec<T>)> = None;
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "iteration,primal_residual,dual_residual,rho,objective")?;
        }
        let mut last_polish_fail = 0usize;

        for it in 1..=self.s.max_iter {
            y_prev.clone_from(&y);
            // x-update
            let rz_y: Vec<T> = (0..m).map(|r| self.rho_vec[r] * z[r] - y[r]).collect();
            let at = self.a.mul_t_vec(&rz_y);
            let rhs: Vec<T> = (0..n)
                .map(|i| sigma * x[i] - self.p.lin_vector[i] + at[i])
                .collect();
            let x_tilde = self.factor.solve(&rhs);
            let z_tilde = self.a.mul_vec(&x_tilde);
            for i in 0..n {
                x[i] = alpha * x_tilde[i] + (one - alpha) * x[i];
            }
            for r in 0..m {
                let relaxed = alpha * z_tilde[r] + (one - alpha) * z[r];
                let z_new = self.project(r, relaxed + y[r] / self.rho_vec[r]);
                y[r] = y[r] + self.rho_vec[r] * (relaxed - z_new);
                z[r] = z_new;
            }

            let check = it % self.s.check_every == 0 || it == self.s.max_iter;
            if !check {
                continue;
            }
            let ax = self.a.mul_vec(&x);
            let px = self.p.quad_matrix.mul_vec(&x);
            let aty = self.a.mul_t_vec(&y);
            let r_prim = ax
                .iter()
                .zip(&z)
                .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
            let r_dual = (0..n).fold(T::zero(), |acc, i| {
                acc.max((px[i] + self.p.lin_vector[i] + aty[i]).abs())
            });
            if let Some(w) = trace.as_deref_mut() {
                writeln!(w, "{it},{},{},{},{}", r_prim, r_dual, self.rho, self.p.objective(&x))?;
            }

            let (lam, nu) = self.split_duals(&y);
            let kkt = kkt_unchecked(self.p, &x, &lam, &nu);
            let score = kkt.primal.max(kkt.dual);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, x.clone(), y.clone()));
            }
            if kkt.primal <= self.s.tol_primal && kkt.dual <= self.s.tol_dual {
                // the polished point is exact up to rounding when the active set is right
                if self.s.polish {
                    if let Some(rep) = self.polish(&z, &y, it) {
                        if rep.primal_residual.max(rep.dual_residual).max(rep.complementarity)
                            <= kkt.primal.max(kkt.dual).max(kkt.complementarity)
                        {
                            return Ok(rep);
                        }
                    }
                }
                return Ok(self.report(x, lam, nu, SolveStatus::Optimal, it, false));
            }

            let near = r_prim <= T::lit(1e-3).max(self.s.tol_primal) && r_dual <= T::lit(1e-3).max(self.s.tol_dual);
            if self.s.polish && near && it >= last_polish_fail + 10 * self.s.check_every {
                if let Some(rep) = self.polish(&z, &y, it) {
                    return Ok(rep);
                }
                last_polish_fail = it;
            }

            if self.infeasible(&y, &y_prev) {
                return Ok(self.report(x, lam, nu, SolveStatus::Infeasible, it, false));
            }

            if self.s.adapt_every > 0 && it % self.s.adapt_every == 0 {
                // constraints are often active at zero, so the scales are floored at 1
                let tiny = T::lit(1e-30);
                let prim_scale = norm_inf(&ax).max(norm_inf(&z)).max(one);
                let dual_scale = norm_inf(&px)
                    .max(norm_inf(&aty))
                    .max(norm_inf(&self.p.lin_vector))
                    .max(one);
                let ratio = ((r_prim / prim_scale).max(tiny) / (r_dual / dual_scale).max(tiny)).sqrt();
                let new_rho = (self.rho * ratio).max(T::lit(RHO_MIN)).min(T::lit(RHO_MAX));
                if new_rho.is_finite() && (new_rho > self.rho * T::lit(5.0) || new_rho < self.rho * T::lit(0.2)) {
                    self.set_rho(new_rho);
                }
            }
        }

        let (_, x, y) = best.unwrap_or((T::zero(), x, y));
        if self.s.polish {
            let z = self.a.mul_vec(&x);
            let z: Vec<T> = z.iter().enumerate().map(|(r, &v)| self.project(r, v)).collect();
            if let Some(rep) = self.polish(&z, &y, self.s.max_iter) {
                return Ok(rep);
            }
        }
        let (lam, nu) = self.split_duals(&y);
        Ok(self.report(x, lam, nu, SolveStatus::MaxIterations, self.s.max_iter, false))
    }

    fn split_duals(&self, y: &[T]) -> (Vec<T>, Vec<T>) {
        let nu = y[..self.n_eq].to_vec();
        let lam = y[self.n_eq..].iter().map(|&v| v.max(T::zero())).collect();
        (lam, nu)
    }

    fn infeasible(&self, y: &[T], y_prev: &[T]) -> bool {
        let dy: Vec<T> = y.iter().zip(y_prev).map(|(a, b)| *a - *b).collect();
        let norm = norm_inf(&dy);
        if !(norm > T::lit(1e-12)) {
            return false;
        }
        let eps = self.s.infeasibility_tol * norm;
        // inequality rows have no finite lower bound, so a certificate needs dy >= 0 there
        if dy[self.n_eq..].iter().any(|&v| v < -eps) {
            return false;
        }
        let atdy = self.a.mul_t_vec(&dy);
        if norm_inf(&atdy) > eps {
            return false;
        }
        let mut support = T::zero();
        for r in 0..dy.len() {
            support = support
                + if r < self.n_eq {
                    self.upper[r] * dy[r]
                } else {
                    self.upper[r] * dy[r].max(T::zero())
                };
        }
        support < -eps
    }

    /// Guesses the active set from `(z, y)` and solves the equality-constrained
    /// problem on it.
    /// Solves the equality-constrained KKT system on a guessed active set,
    /// then corrects the guess a few times (drop rows with negative
    /// multipliers, add violated rows).
    fn polish(&self, z: &[T], y: &[T], it: usize) -> Option<SolverReport<T>> {
        let mut active: Vec<usize> = (0..self.at_rows)
            .filter(|&r| r < self.n_eq || self.upper[r] - z[r] < y[r])
            .collect();
        for _ in 0..POLISH_ROUNDS {
            let (x, yfull) = self.solve_active(&active)?;
            let ax = self.a.mul_vec(&x);
            let mut next: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&r| r < self.n_eq || yfull[r] >= -self.s.tol_dual)
                .collect();
            next.extend((self.n_eq..self.at_rows).filter(|r| !active.contains(r) && ax[*r] - self.upper[*r] > self.s.tol_primal));
            next.sort_unstable();
            if next == active {
                if x.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let (lam, nu) = self.split_duals(&yfull);
                let res = kkt_unchecked(self.p, &x, &lam, &nu);
                let ok = res.primal <= self.s.tol_primal && res.dual <= self.s.tol_dual;
                return ok.then(|| self.report(x, lam, nu, SolveStatus::Optimal, it, true));
            }
            active = next;
        }
        None
    }

    fn solve_active(&self, active: &[usize]) -> Option<(Vec<T>, Vec<T>)> {
        let n = self.p.n_vars();
        let k = active.len();
        let delta = T::lit(1e-9).max(T::epsilon().sqrt() * T::lit(1e-2));
        let a_act = self.a.select_rows(active);
        let mut kkt = DenseMatrix::zeros(n + k, n + k);
        for i in 0..n {
            for j in 0..n {
                kkt.set(i, j, self.p.quad_matrix.get(i, j));
            }
        }
        for (r, c, v) in a_act.triplets() {
            kkt.set(n + r, c, v);
            kkt.set(c, n + r, v);
        }
        let mut reg = kkt.clone();
        for i in 0..n {
            reg.add_to(i, i, delta);
        }
        for i in n..n + k {
            reg.add_to(i, i, -delta);
        }
        let ldl = Ldl::factor(&reg).ok()?;
        let mut rhs: Vec<T> = self.p.lin_vector.iter().map(|&v| -v).collect();
        rhs.extend(active.iter().map(|&r| self.upper[r]));
        let mut sol = ldl.solve(&rhs);
        for _ in 0..25 {
            let ks = kkt.mul_vec(&sol);
            let res: Vec<T> = rhs.iter().zip(&ks).map(|(a, b)| *a - *b).collect();
            if norm_inf(&res) <= T::epsilon() * T::lit(10.0) * (T::one() + norm_inf(&rhs)) {
                break;
            }
            let corr = ldl.solve(&res);
            for (s, c) in sol.iter_mut().zip(corr) {
                *s = *s + c;
            }
        }
        let x: Vec<T> = sol[..n].to_vec();
        let mut yfull = vec![T::zero(); self.at_rows];
        for (k_i, &r) in active.iter().enumerate() {
            yfull[r] = sol[n + k_i];
        }
        Some((x, yfull))
    }

    fn report(
        &self,
        x: Vec<T>,
        lam: Vec<T>,
        nu: Vec<T>,
        status: SolveStatus,
        iterations: usize,
        polished: bool,
    ) -> SolverReport<T> {
        let r = kkt_unchecked(self.p, &x, &lam, &nu);
        SolverReport {
            objective: self.p.objective(&x),
            primal_residual: r.primal.max(T::zero()),
            dual_residual: r.dual,
            complementarity: r.complementarity,
            solution: x,
            status,
            iterations,
            ineq_duals: lam,
            eq_duals: nu,
            polished,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::RowLabel;

    fn system(n: usize, g: &[(usize, usize, f64)], h: Vec<f64>, b: &[(usize, usize, f64)], c: Vec<f64>) -> ConstraintSystem<f64> {
        ConstraintSystem {
            ineq_matrix: SparseMatrix::from_triplets(h.len(), n, g),
            ineq_labels: vec![RowLabel::S1; h.len()],
            ineq_bound: h,
            eq_matrix: SparseMatrix::from_triplets(c.len(), n, b),
            eq_labels: vec![RowLabel::ZeroAnchor; c.len()],
            eq_bound: c,
        }
    }

    fn dist_problem(target: &[f64], cs: ConstraintSystem<f64>) -> QpProblem<f64> {
        // ||x - t||^2 = x^T x - 2 t^T x + const
        let n = target.len();
        QpProblem::new(
            DenseMatrix::identity(n).scaled(2.0),
            target.iter().map(|t| -2.0 * t).collect(),
            cs,
        )
        .unwrap()
    }

    #[test]
    fn active_bound() {
        let p = dist_problem(&[1.0], system(1, &[(0, 0, 1.0)], vec![0.0], &[], vec![]));
        let r = solve_qp(&p, 1e-8, 1e-8, 200_000).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.solution[0].abs() <= 1e-8);
        assert!((r.ineq_duals[0] - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn projection_onto_line() {
        let p = dist_problem(&[1.0, 2.0], system(2, &[], vec![], &[(0, 0, 1.0), (0, 1, -1.0)], vec![0.0]));
        let r = solve_qp(&p, 1e-8, 1e-8, 200_000).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.5).abs() <= 1e-8);
        assert!((r.solution[1] - 1.5).abs() <= 1e-8);
    }

    #[test]
    fn hand_kkt_point() {
        let p = dist_problem(&[1.0], system(1, &[(0, 0, 1.0)], vec![0.0], &[], vec![]));
        let r = kkt_residuals(&p, &[0.0], &[2.0], &[]).unwrap();
        assert_eq!(r, KktResiduals { primal: 0.0, dual: 0.0, complementarity: 0.0 });
        let r = kkt_residuals(&p, &[-1.0], &[0.0], &[]).unwrap();
        assert_eq!(r.primal, 0.0);
        assert!(r.dual > 0.0);
        let r = kkt_residuals(&p, &[0.5], &[0.0], &[]).unwrap();
        assert!(r.primal > 0.0);
        assert!(matches!(kkt_residuals(&p, &[0.0], &[-1.0], &[]), Err(QpError::NegativeDual { index: 0, .. })));
    }

    #[test]
    fn detects_infeasibility() {
        // x <= -1 and -x <= -1
        let p = dist_problem(&[0.0], system(1, &[(0, 0, 1.0), (1, 0, -1.0)], vec![-1.0, -1.0], &[], vec![]));
        let r = solve_qp(&p, 1e-8, 1e-8, 50_000).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_bad_input() {
        let cs = system(2, &[], vec![], &[], vec![]);
        assert!(matches!(
            QpProblem::new(DenseMatrix::identity(3), vec![0.0; 2], cs.clone()),
            Err(QpError::Shape { .. })
        ));
        let asym = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        assert!(matches!(QpProblem::new(asym, vec![0.0; 2], cs.clone()), Err(QpError::Asymmetric(_))));
        let p = QpProblem::new(DenseMatrix::identity(2), vec![0.0; 2], cs).unwrap();
        assert!(matches!(solve_qp(&p, 0.0, 1e-8, 10), Err(QpError::BadTolerance)));
    }

    #[test]
    fn trace_is_csv() {
        let p = dist_problem(&[1.0, -1.0], system(2, &[(0, 0, 1.0)], vec![0.0], &[], vec![]));
        let mut buf = Vec::new();
        let s = QpSettings { polish: false, ..QpSettings::default() };
        let r = solve_qp_with(&p, &s, Some(&mut buf)).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,primal_residual,dual_residual,rho,objective"));
        assert!(lines.all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn unpolished_run_reaches_tolerance() {
        let p = dist_problem(
            &[1.0, 3.0, 2.0],
            system(3, &[(0, 1, 1.0), (0, 0, -1.0), (1, 2, 1.0), (1, 1, -1.0)], vec![0.0, 0.0], &[], vec![]),
        );
        let s = QpSettings { polish: false, ..QpSettings::default() };
        let r = solve_qp_with(&p, &s, None).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(!r.polished);
        let expect = [2.0, 2.0, 2.0];
        for (a, b) in r.solution.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.solution);
        }
    }
}
