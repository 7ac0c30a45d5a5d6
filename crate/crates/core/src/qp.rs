//! Dense quadratic programming for small problems.
//!
//! Maximizes `1/2 x'Qx + b'x + r` subject to `a_i'x <= c_i` and box bounds with
//! a primal active-set method. Feasibility is found first by minimizing a single
//! slack variable. Zero and negative curvature inside the working subspace are
//! followed as rays until a constraint blocks them, so semidefinite and
//! indefinite objectives are handled without regularization; for indefinite
//! `Q` the result is a local maximizer and the status says so.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance on constraint violation and relative optimality.
pub const DEFAULT_TOL: f64 = 1e-6;

/// `1/2 x'Qx + b'x + r` with symmetric `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub r: f64,
}

impl QuadForm {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, r: f64) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != b.len() {
            return Err(Error::Dimension { what: "quadratic form", expected: b.len(), got: q.nrows() });
        }
        check_symmetric(&q)?;
        Ok(QuadForm { q, b, r })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.q[(i, j)] * x[j];
            }
            quad += x[i] * row;
        }
        0.5 * quad + self.b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>() + self.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

/// Rows `a'x <= b` plus per-coordinate box bounds (possibly infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraintSet {
    pub rows: Vec<LinearConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearConstraintSet {
    /// Unconstrained set in `dim` variables.
    pub fn new(dim: usize) -> Self {
        LinearConstraintSet { rows: Vec::new(), lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        LinearConstraintSet { rows: Vec::new(), lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn push(&mut self, coeffs: Vec<f64>, bound: f64) {
        debug_assert_eq!(coeffs.len(), self.dim());
        self.rows.push(LinearConstraint { coeffs, bound });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.upper.len() != n {
            return Err(Error::Dimension { what: "upper bounds", expected: n, got: self.upper.len() });
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::Invalid(format!("box bounds of coordinate {i} are inconsistent")));
            }
        }
        for (k, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(Error::Dimension { what: "constraint row", expected: n, got: row.coeffs.len() });
            }
            if row.coeffs.iter().any(|v| !v.is_finite()) || row.bound.is_nan() {
                return Err(Error::Invalid(format!("constraint row {k} has non-finite coefficients")));
            }
        }
        Ok(())
    }

    /// Largest violation over all rows and bounds; 0 when feasible.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, x)| a * x).sum();
            worst = worst.max(lhs - row.bound);
        }
        worst
    }

    pub fn is_satisfied(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    fn has_finite_box(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    /// `Q` is negative semidefinite; the point is a global maximizer.
    Optimal,
    /// `Q` has a positive eigenvalue; the point is a local maximizer.
    NonConcave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub negative_semidefinite: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

fn check_symmetric(q: &DMatrix<f64>) -> Result<()> {
    let scale = q.amax().max(1.0);
    for i in 0..q.nrows() {
        for j in 0..i {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Eigenvalue test for negative semidefiniteness (sign tolerance 1e-10, relative).
pub fn concavity_report(q: &DMatrix<f64>) -> Result<ConcavityReport> {
    if q.nrows() != q.ncols() {
        return Err(Error::Dimension { what: "square matrix", expected: q.nrows(), got: q.ncols() });
    }
    check_symmetric(q)?;
    if q.nrows() == 0 {
        return Ok(ConcavityReport { negative_semidefinite: true, min_eigenvalue: 0.0, max_eigenvalue: 0.0 });
    }
    let eig = SymmetricEigen::new(q.clone()).eigenvalues;
    let min = eig.min();
    let max = eig.max();
    let scale = eig.amax().max(1.0);
    Ok(ConcavityReport { negative_semidefinite: max <= 1e-10 * scale, min_eigenvalue: min, max_eigenvalue: max })
}

/// Inequality rows `a'x <= b` stored densely.
struct Rows {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    fn with_dim(n: usize) -> Self {
        Rows { n, a: Vec::new(), b: Vec::new() }
    }

    fn len(&self) -> usize {
        self.b.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    fn push(&mut self, row: impl IntoIterator<Item = f64>, bound: f64) {
        let before = self.a.len();
        self.a.extend(row);
        debug_assert_eq!(self.a.len() - before, self.n);
        self.b.push(bound);
    }

    fn from_set(set: &LinearConstraintSet) -> Self {
        let n = set.dim();
        let mut rows = Rows::with_dim(n);
        for i in 0..n {
            if set.lower[i].is_finite() {
                rows.push((0..n).map(|k| if k == i { -1.0 } else { 0.0 }), -set.lower[i]);
            }
            if set.upper[i].is_finite() {
                rows.push((0..n).map(|k| if k == i { 1.0 } else { 0.0 }), set.upper[i]);
            }
        }
        for row in &set.rows {
            rows.push(row.coeffs.iter().copied(), row.bound);
        }
        rows
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal basis of the null space of the working rows.
fn null_basis(rows: &Rows, working: &[usize]) -> Vec<Vec<f64>> {
    let n = rows.n;
    let mut span: Vec<Vec<f64>> = Vec::with_capacity(working.len());
    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for _ in 0..2 {
            for q in basis {
                let c = dot(v, q);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
    };
    for &i in working {
        let mut v = rows.row(i).to_vec();
        let orig = norm(&v);
        orthogonalize(&mut v, &span);
        let nv = norm(&v);
        if nv > 1e-10 * orig.max(1e-300) {
            v.iter_mut().for_each(|x| *x /= nv);
            span.push(v);
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - span.len());
    for e in 0..n {
        if span.len() + basis.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        orthogonalize(&mut v, &span);
        orthogonalize(&mut v, &basis);
        let nv = norm(&v);
        if nv > 1e-6 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    basis
}

enum Step {
    /// Newton step inside the working subspace, capped at unit length.
    Newton(Vec<f64>),
    /// Descent ray along zero or negative curvature.
    Ray(Vec<f64>),
}

/// Minimizes `1/2 x'Gx + g'x` over `rows` from the feasible point `x`.
fn active_set(hess: &DMatrix<f64>, lin: &[f64], rows: &Rows, x: &mut [f64], max_iter: usize) -> Result<usize> {
    let n = rows.n;
    let m = rows.len();
    let hess_scale = hess.amax().max(1.0) * n as f64;
    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; m];
    let row_norms: Vec<f64> = (0..m).map(|i| norm(rows.row(i))).collect();
    for iter in 0..max_iter {
        // gradient h = Gx + g
        let h: Vec<f64> = (0..n).map(|i| lin[i] + (0..n).map(|j| hess[(i, j)] * x[j]).sum::<f64>()).collect();
        let h_scale = 1.0 + h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let z = null_basis(rows, &working);
        let step =
            if z.is_empty() { Step::Newton(vec![0.0; n]) } else { reduced_step(hess, &h, &z, hess_scale, h_scale) };

        let (p, capped) = match step {
            Step::Newton(p) => {
                let x_scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if p.iter().all(|v| v.abs() <= 1e-11 * x_scale) {
                    // stationary on the working face: check multipliers
                    if working.is_empty() {
                        return Ok(iter);
                    }
                    let k = working.len();
                    let aw = DMatrix::from_fn(k, n, |r, c| rows.row(working[r])[c]);
                    let gram = &aw * aw.transpose();
                    let rhs = -(&aw * DVector::from_column_slice(&h));
                    let lambda = match gram.clone().cholesky() {
                        Some(ch) => ch.solve(&rhs),
                        None => gram.lu().solve(&rhs).ok_or(Error::NoConvergence(iter))?,
                    };
                    let (idx, min) =
                        lambda
                            .iter()
                            .enumerate()
                            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
                    if min >= -1e-9 * h_scale {
                        return Ok(iter);
                    }
                    let dropped = working.remove(idx);
                    in_working[dropped] = false;
                    continue;
                }
                (p, true)
            }
            Step::Ray(p) => (p, false),
        };

        // ratio test; ties keep the lowest row index
        let p_norm = norm(&p);
        let mut alpha = if capped { 1.0 } else { f64::INFINITY };
        let mut blocking = None;
        for i in 0..m {
            if in_working[i] {
                continue;
            }
            let a = rows.row(i);
            let ap = dot(a, &p);
            if ap <= 1e-12 * row_norms[i] * p_norm {
                continue;
            }
            let slack = (rows.b[i] - dot(a, x)).max(0.0);
            let step = slack / ap;
            if step < alpha {
                alpha = step;
                blocking = Some(i);
            }
        }
        if alpha.is_infinite() {
            return Err(Error::Unbounded);
        }
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        if let Some(i) = blocking {
            working.push(i);
            in_working[i] = true;
        }
    }
    Err(Error::NoConvergence(max_iter))
}

fn reduced_step(hess: &DMatrix<f64>, h: &[f64], z: &[Vec<f64>], hess_scale: f64, h_scale: f64) -> Step {
    let n = h.len();
    let nz = z.len();
    let zm = DMatrix::from_fn(n, nz, |i, j| z[j][i]);
    let reduced_h = zm.transpose() * hess * &zm;
    let reduced_g = zm.transpose() * DVector::from_column_slice(h);
    let eig = SymmetricEigen::new(reduced_h);
    let curv_tol = 1e-10 * hess_scale;
    let lift = |v: &DVector<f64>| -> Vec<f64> { (&zm * v).iter().copied().collect() };

    // most negative curvature first
    let (neg_idx, neg_val) =
        eig.eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if neg_val < -curv_tol {
        let mut v = eig.eigenvectors.column(neg_idx).into_owned();
        let gv = reduced_g.dot(&v);
        let flip = if gv != 0.0 { gv > 0.0 } else { v.iter().find(|c| c.abs() > 1e-12).is_some_and(|c| *c < 0.0) };
        if flip {
            v = -v;
        }
        return Step::Ray(lift(&v));
    }

    // zero curvature with a gradient component: steepest descent there
    let mut flat = DVector::<f64>::zeros(nz);
    let mut newton = DVector::<f64>::zeros(nz);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let c = reduced_g.dot(&v);
        if lam <= curv_tol {
            flat -= v * c;
        } else {
            newton -= v * (c / lam);
        }
    }
    if flat.amax() > 1e-9 * h_scale {
        return Step::Ray(lift(&flat));
    }
    Step::Newton(lift(&newton))
}

fn max_iterations(n: usize, m: usize) -> usize {
    50 * (n + m) + 200
}

/// Finds a point satisfying `rows` starting near `start`.
fn phase_one(rows: &Rows, set: &LinearConstraintSet, start: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = rows.n;
    let x0: Vec<f64> = (0..n).map(|i| start[i].clamp(set.lower[i], set.upper[i])).collect();
    let violation = (0..rows.len()).map(|i| dot(rows.row(i), &x0) - rows.b[i]).fold(0.0f64, f64::max);
    if violation <= 0.0 {
        return Ok(x0);
    }
    // minimize t subject to a'x - t <= b for general rows, box rows unchanged, t >= 0
    let n1 = n + 1;
    let mut ext = Rows::with_dim(n1);
    let box_rows =
        set.lower.iter().filter(|v| v.is_finite()).count() + set.upper.iter().filter(|v| v.is_finite()).count();
    for i in 0..rows.len() {
        let t_coeff = if i < box_rows { 0.0 } else { -1.0 };
        ext.push(rows.row(i).iter().copied().chain(std::iter::once(t_coeff)), rows.b[i]);
    }
    ext.push((0..n1).map(|k| if k == n { -1.0 } else { 0.0 }), 0.0);
    let mut x: Vec<f64> = x0.into_iter().chain(std::iter::once(violation)).collect();
    let hess = DMatrix::zeros(n1, n1);
    let mut lin = vec![0.0; n1];
    lin[n] = 1.0;
    active_set(&hess, &lin, &ext, &mut x, max_iterations(n1, ext.len()))?;
    let t = x[n];
    x.truncate(n);
    let residual = set.max_violation(&x);
    if t > tol || residual > tol {
        return Err(Error::InfeasibleConstraints(residual.max(t)));
    }
    Ok(x)
}

/// Maximizes `form` over `constraints`. `tol` bounds the accepted constraint
/// violation of the returned point.
pub fn maximize_quadratic(form: &QuadForm, constraints: &LinearConstraintSet, tol: f64) -> Result<QpSolution> {
    maximize_quadratic_from(form, constraints, tol, None)
}

/// As [`maximize_quadratic`], with an optional initial point for the feasibility search.
pub fn maximize_quadratic_from(
    form: &QuadForm,
    constraints: &LinearConstraintSet,
    tol: f64,
    start: Option<&[f64]>,
) -> Result<QpSolution> {
    let n = form.dim();
    if constraints.dim() != n {
        return Err(Error::Dimension { what: "constraint set", expected: n, got: constraints.dim() });
    }
    constraints.validate()?;
    let report = concavity_report(&form.q)?;
    let rows = Rows::from_set(constraints);
    let zeros = vec![0.0; n];
    let mut x = phase_one(&rows, constraints, start.unwrap_or(&zeros), tol)?;
    let hess = -&form.q;
    let lin: Vec<f64> = form.b.iter().map(|v| -v).collect();
    let iterations = active_set(&hess, &lin, &rows, &mut x, max_iterations(n, rows.len()))?;
    let value = form.value(&x);
    Ok(QpSolution {
        x,
        value,
        status: if report.negative_semidefinite { QpStatus::Optimal } else { QpStatus::NonConcave },
        iterations,
    })
}

/// Exhaustive search over the uniform grid `lower + k * resolution` inside
/// the (finite) box. Points violating a linear row are skipped. Returns the
/// lexicographically first best point.
pub fn grid_oracle(form: &QuadForm, constraints: &LinearConstraintSet, resolution: f64) -> Result<(Vec<f64>, f64)> {
    let n = form.dim();
    if n > 4 {
        return Err(Error::OracleDimension(n));
    }
    if constraints.dim() != n {
        return Err(Error::Dimension { what: "constraint set", expected: n, got: constraints.dim() });
    }
    constraints.validate()?;
    if !constraints.has_finite_box() {
        return Err(Error::Invalid("grid oracle needs finite box bounds".into()));
    }
    if !(resolution > 0.0) {
        return Err(Error::Invalid("resolution must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (lo, hi) = (constraints.lower[i], constraints.upper[i]);
            let count = ((hi - lo) / resolution + 1e-9).floor() as usize + 1;
            (0..count).map(|k| lo + k as f64 * resolution).collect()
        })
        .collect();
    let total: f64 = axes.iter().map(|a| a.len() as f64).product();
    if total > 5e8 {
        return Err(Error::TooManyCombinations(total, 5e8));
    }
    let mut idx = vec![0usize; n];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let feasible =
            constraints.rows.iter().all(|row| dot(&row.coeffs, &x) <= row.bound + 1e-9 * (1.0 + row.bound.abs()));
        if feasible {
            let v = form.value(&x);
            if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((x.clone(), v));
            }
        }
        // odometer, last coordinate fastest
        let mut d = n;
        loop {
            if d == 0 {
                return best.ok_or(Error::EmptyFeasibleSet);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                x[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            x[d] = axes[d][0];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_d() -> QuadForm {
        QuadForm::new(DMatrix::from_element(1, 1, -2.0), DVector::from_element(1, 2.0), 0.5).unwrap()
    }

    #[test]
    fn parabola_vertex() {
        let sol = maximize_quadratic(&one_d(), &LinearConstraintSet::boxed(vec![0.0], vec![5.0]), DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.value, 1.5, epsilon = 1e-9);
        assert_eq!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn parabola_active_bound() {
        let sol = maximize_quadratic(&one_d(), &LinearConstraintSet::boxed(vec![2.0], vec![5.0]), DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn grid_hits_vertex() {
        let (x, v) = grid_oracle(&one_d(), &LinearConstraintSet::boxed(vec![0.0], vec![5.0]), 0.5).unwrap();
        assert_eq!(x, vec![1.0]);
        assert_eq!(v, 1.5);
    }

    #[test]
    fn grid_singleton_box() {
        let form = QuadForm::new(-DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 2.0]), 3.0).unwrap();
        let set = LinearConstraintSet::boxed(vec![0.5, 0.25], vec![0.5, 0.25]);
        let (x, v) = grid_oracle(&form, &set, 0.1).unwrap();
        assert_eq!(x, vec![0.5, 0.25]);
        assert_eq!(v, form.value(&[0.5, 0.25]));
    }

    #[test]
    fn grid_rejects_large_dimension_and_open_box() {
        let form = QuadForm::new(-DMatrix::identity(5, 5), DVector::zeros(5), 0.0).unwrap();
        assert!(matches!(
            grid_oracle(&form, &LinearConstraintSet::boxed(vec![0.0; 5], vec![1.0; 5]), 0.5),
            Err(Error::OracleDimension(5))
        ));
        assert!(grid_oracle(&one_d(), &LinearConstraintSet::new(1), 0.5).is_err());
    }

    #[test]
    fn concavity_reports() {
        let r = concavity_report(&DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0]))).unwrap();
        assert!(r.negative_semidefinite);
        assert_abs_diff_eq!(r.min_eigenvalue, -1.0, epsilon = 1e-12);
        assert!(
            !concavity_report(&DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])))
                .unwrap()
                .negative_semidefinite
        );
        assert!(concavity_report(&DMatrix::zeros(3, 3)).unwrap().negative_semidefinite);
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(concavity_report(&asym).is_err());
    }

    #[test]
    fn infeasible_set_detected() {
        let mut set = LinearConstraintSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]);
        set.push(vec![-1.0, -1.0], -3.0); // x + y >= 3
        let form = QuadForm::new(-DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap();
        assert!(matches!(maximize_quadratic(&form, &set, DEFAULT_TOL), Err(Error::InfeasibleConstraints(_))));
    }

    #[test]
    fn unbounded_linear_objective() {
        let form = QuadForm::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 0.0]), 0.0).unwrap();
        let set = LinearConstraintSet::boxed(vec![0.0, 0.0], vec![f64::INFINITY, 1.0]);
        assert!(matches!(maximize_quadratic(&form, &set, DEFAULT_TOL), Err(Error::Unbounded)));
    }

    #[test]
    fn linear_program_vertex() {
        // max x + 2y s.t. x + y <= 4, x <= 3, y <= 3, x,y >= 0  ->  (1, 3)
        let form = QuadForm::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 2.0]), 0.0).unwrap();
        let mut set = LinearConstraintSet::boxed(vec![0.0, 0.0], vec![3.0, 3.0]);
        set.push(vec![1.0, 1.0], 4.0);
        let sol = maximize_quadratic(&form, &set, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn semidefinite_objective() {
        // max -(x - 1)^2 + y with y <= 2 - x: optimum x = 0.5, y = 1.5
        let form = QuadForm::new(
            DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![2.0, 1.0]),
            -1.0,
        )
        .unwrap();
        let mut set = LinearConstraintSet::new(2);
        set.push(vec![1.0, 1.0], 2.0);
        let sol = maximize_quadratic(&form, &set, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn nonconcave_flagged_and_bounded() {
        let form = QuadForm::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), 0.0).unwrap();
        let sol = maximize_quadratic(&form, &LinearConstraintSet::boxed(vec![-1.0], vec![2.0]), DEFAULT_TOL).unwrap();
        assert_eq!(sol.status, QpStatus::NonConcave);
        assert!(sol.x[0] == 2.0 || sol.x[0] == -1.0);
    }

    #[test]
    fn interior_optimum_matches_closed_form() {
        let q = DMatrix::from_row_slice(3, 3, &[-4.0, 1.0, 0.5, 1.0, -3.0, 0.2, 0.5, 0.2, -2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let expected = -q.clone().lu().solve(&b).unwrap();
        let form = QuadForm::new(q, b, 0.0).unwrap();
        let sol =
            maximize_quadratic(&form, &LinearConstraintSet::boxed(vec![-10.0; 3], vec![10.0; 3]), DEFAULT_TOL).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(sol.x[i], expected[i], epsilon = 1e-9);
        }
    }
}
