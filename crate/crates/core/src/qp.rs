//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//! minimize   ½ xᵀ G x + gᵀ x
//! subject to aᵢᵀ x ≤ bᵢ   for every enabled row i
//! ```
//!
//! and returns one nonnegative multiplier per row, so that at the optimum
//! `G x + g + Σ λᵢ aᵢ = 0`. The dual method starts from the unconstrained
//! minimizer and adds violated rows one at a time, which keeps it fast when
//! only a handful of the (possibly thousands of) scenario rows bind.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cholesky-based factor of the Hessian: `J = L⁻ᵀ` with `G = L Lᵀ`.
///
/// Reused across every solve that shares the Hessian (all removal
/// candidates of one scenario program do).
#[derive(Clone, Debug)]
pub struct HessianFactor<T: Real> {
    dim: usize,
    // column-major, upper triangular
    inv_chol_t: Vec<T>,
    /// Diagonal shift added to make the Hessian positive definite.
    pub regularization: T,
}

impl<T: Real> HessianFactor<T> {
    /// Factors `hessian`. A PSD-but-singular Hessian gets a diagonal shift
    /// of `1e-10 · max(1, max diag)`, doubled until the factorization succeeds.
    pub fn new(hessian: &DMatrix<T>) -> Result<Self> {
        let dim = hessian.nrows();
        if hessian.ncols() != dim {
            return Err(Error::Dimension {
                context: "QP Hessian must be square",
                expected: dim,
                actual: hessian.ncols(),
            });
        }
        let scale = (0..dim).map(|i| hessian[(i, i)].abs()).fold(T::one(), |a, b| a.max(b));
        let mut shift = T::zero();
        for _ in 0..60 {
            let mut h = hessian.clone();
            for i in 0..dim {
                h[(i, i)] += shift;
            }
            if let Some(chol) = h.cholesky() {
                let l = chol.l();
                let l_inv = l
                    .solve_lower_triangular(&DMatrix::identity(dim, dim))
                    .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
                let j = l_inv.transpose();
                return Ok(Self {
                    dim,
                    inv_chol_t: j.as_slice().to_vec(),
                    regularization: shift,
                });
            }
            shift = if shift == T::zero() {
                T::lit(1e-10) * scale
            } else {
                shift * T::lit(2.0)
            };
        }
        Err(Error::Numerical("Hessian is not positive semidefinite".into()))
    }

    /// Block-diagonal factor `diag(self, d·I)` for a Hessian `diag(G, d⁻²·I)`.
    pub(crate) fn extend_diagonal(&self, extra: usize, inv_sqrt: T) -> Self {
        let n = self.dim + extra;
        let mut j = vec![T::zero(); n * n];
        for c in 0..self.dim {
            for r in 0..=c {
                j[c * n + r] = self.inv_chol_t[c * self.dim + r];
            }
        }
        for e in self.dim..n {
            j[e * n + e] = inv_sqrt;
        }
        Self {
            dim: n,
            inv_chol_t: j,
            regularization: self.regularization,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `G⁻¹ v = J Jᵀ v`
    fn solve(&self, v: &[T]) -> Vec<T> {
        let n = self.dim;
        let j = &self.inv_chol_t;
        let mut tmp = vec![T::zero(); n];
        for c in 0..n {
            tmp[c] = dot(&j[c * n..c * n + c + 1], &v[..c + 1]);
        }
        let mut out = vec![T::zero(); n];
        for c in 0..n {
            axpy(tmp[c], &j[c * n..c * n + c + 1], &mut out[..c + 1]);
        }
        out
    }
}

/// Solver settings.
#[derive(Clone, Copy, Debug)]
pub struct QpOptions<T> {
    /// A row counts as violated when `aᵀx − b > tol · max(1, ‖a‖)`.
    pub feasibility_tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for QpOptions<T> {
    fn default() -> Self {
        Self {
            feasibility_tolerance: T::solver_tolerance(),
            max_iterations: 100_000,
        }
    }
}

/// Constraint rows `a_i x ≤ b_i`, row-major.
#[derive(Clone, Debug, Default)]
pub struct Rows<T> {
    pub dim: usize,
    pub coefficients: Vec<T>,
    pub bounds: Vec<T>,
}

impl<T: Real> Rows<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coefficients: Vec::new(),
            bounds: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[T], bound: T) {
        debug_assert_eq!(row.len(), self.dim);
        self.coefficients.extend_from_slice(row);
        self.bounds.push(bound);
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.coefficients[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug)]
pub struct QpResult<T> {
    pub x: Vec<T>,
    /// `½ xᵀGx + gᵀx`
    pub objective: T,
    /// One multiplier per row; zero for rows that are inactive or disabled.
    pub multipliers: Vec<T>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub enum QpOutcome<T> {
    Optimal(QpResult<T>),
    Infeasible,
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Rotation `(c, s)` mapping `(a, b)` to `(h, 0)`.
#[inline]
fn givens<T: Real>(a: T, b: T) -> (T, T, T) {
    let h = a.hypot(b);
    (a / h, b / h, h)
}

#[inline]
fn rotate_columns<T: Real>(j: &mut [T], n: usize, c1: usize, c2: usize, c: T, s: T) {
    let (left, right) = j.split_at_mut(c2 * n);
    let x = &mut left[c1 * n..c1 * n + n];
    let y = &mut right[..n];
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a + s * b;
        *yi = -s * a + c * b;
    }
}

/// Minimizes `½ xᵀGx + gᵀx` subject to the enabled rows.
///
/// `enabled[i] == false` drops row `i`; pass `None` to use every row.
pub fn solve_qp<T: Real>(
    factor: &HessianFactor<T>,
    hessian: &DMatrix<T>,
    gradient: &DVector<T>,
    rows: &Rows<T>,
    enabled: Option<&[bool]>,
    options: &QpOptions<T>,
) -> Result<QpOutcome<T>> {
    let n = factor.dim;
    if gradient.len() != n || rows.dim != n {
        return Err(Error::Dimension {
            context: "QP data",
            expected: n,
            actual: if gradient.len() != n { gradient.len() } else { rows.dim },
        });
    }
    let row_count = rows.len();
    if let Some(mask) = enabled {
        if mask.len() != row_count {
            return Err(Error::Dimension {
                context: "QP row mask",
                expected: row_count,
                actual: mask.len(),
            });
        }
    }
    let is_enabled = |i: usize| enabled.is_none_or(|m| m[i]);
    let zero = T::zero();
    let tol = options.feasibility_tolerance;

    let norms: Vec<T> = (0..row_count)
        .map(|i| if is_enabled(i) { dot(rows.row(i), rows.row(i)).sqrt() } else { zero })
        .collect();

    // unconstrained minimizer
    let neg_g: Vec<T> = gradient.iter().map(|v| -*v).collect();
    let mut x = factor.solve(&neg_g);

    let mut j = factor.inv_chol_t.clone();
    let mut r = vec![zero; n * n]; // column-major upper triangular, first q columns used
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<T> = Vec::with_capacity(n + 1);
    let mut in_active = vec![false; row_count];

    let mut d = vec![zero; n];
    let mut z = vec![zero; n];
    let mut rv = vec![zero; n];
    let mut np = vec![zero; n];
    let mut iterations = 0usize;

    loop {
        // step 1: most violated enabled row (normalized)
        let mut p = None;
        let mut worst = zero;
        for i in 0..row_count {
            if in_active[i] || !is_enabled(i) {
                continue;
            }
            let viol = dot(rows.row(i), &x) - rows.bounds[i];
            let scale = norms[i].max(T::one());
            if viol > tol * scale {
                let normalized = if norms[i] > zero { viol / norms[i] } else { viol };
                if normalized > worst {
                    worst = normalized;
                    p = Some(i);
                }
            }
        }
        let Some(p) = p else { break };
        if norms[p] == zero {
            return Ok(QpOutcome::Infeasible);
        }
        // constraint in ≥ form: nᵀx ≥ b' with n = −a, b' = −b
        for (k, v) in rows.row(p).iter().enumerate() {
            np[k] = -*v;
        }
        let bp = -rows.bounds[p];
        u.push(zero);

        loop {
            iterations += 1;
            if iterations > options.max_iterations {
                return Err(Error::Numerical(format!(
                    "QP solver exceeded {} iterations",
                    options.max_iterations
                )));
            }
            let q = active.len();
            // d = Jᵀ n_p
            for c in 0..n {
                d[c] = dot(&j[c * n..c * n + n], &np);
            }
            // z = J₂ d₂
            z.iter_mut().for_each(|v| *v = zero);
            for c in q..n {
                axpy(d[c], &j[c * n..c * n + n], &mut z);
            }
            // r = R⁻¹ d₁
            for i in (0..q).rev() {
                let mut s = d[i];
                for c in (i + 1)..q {
                    s -= r[c * n + i] * rv[c];
                }
                rv[i] = s / r[i * n + i];
            }
            // partial step length
            let mut t1 = None;
            let mut drop = 0;
            for i in 0..q {
                if rv[i] > zero {
                    let ratio = u[i] / rv[i];
                    if t1.is_none_or(|t| ratio < t) {
                        t1 = Some(ratio);
                        drop = i;
                    }
                }
            }
            // full step length
            let zn = dot(&z, &np);
            let znorm = dot(&z, &z).sqrt();
            let slack = dot(&np, &x) - bp;
            let t2 = if znorm <= T::default_epsilon() * T::lit(16.0) * norms[p] || zn <= zero {
                None
            } else {
                Some(-slack / zn)
            };

            match (t1, t2) {
                (None, None) => return Ok(QpOutcome::Infeasible),
                (Some(t), None) => {
                    // dual step only
                    for i in 0..q {
                        u[i] -= t * rv[i];
                    }
                    u[q] += t;
                    drop_constraint(&mut j, &mut r, n, &mut active, &mut u, &mut in_active, drop);
                }
                (t1, Some(t2v)) => {
                    let full = t1.is_none_or(|t| t2v <= t);
                    let t = if full { t2v } else { t1.unwrap() };
                    axpy(t, &z, &mut x);
                    for i in 0..q {
                        u[i] -= t * rv[i];
                    }
                    u[q] += t;
                    if full {
                        add_constraint(&mut j, &mut r, n, q, &mut d);
                        active.push(p);
                        in_active[p] = true;
                        break;
                    }
                    drop_constraint(&mut j, &mut r, n, &mut active, &mut u, &mut in_active, drop);
                }
            }
        }
    }

    let mut multipliers = vec![zero; row_count];
    for (pos, &i) in active.iter().enumerate() {
        multipliers[i] = u[pos].max(zero);
    }
    let gx = hessian * DVector::from_column_slice(&x);
    let objective = T::lit(0.5) * dot(gx.as_slice(), &x) + dot(gradient.as_slice(), &x);
    Ok(QpOutcome::Optimal(QpResult {
        x,
        objective,
        multipliers,
        active,
        iterations,
    }))
}

/// Appends `d` as a new column of R, rotating `d[q+1..]` to zero.
fn add_constraint<T: Real>(j: &mut [T], r: &mut [T], n: usize, q: usize, d: &mut [T]) {
    for i in ((q + 1)..n).rev() {
        if d[i] == T::zero() {
            continue;
        }
        let (c, s, h) = givens(d[i - 1], d[i]);
        d[i - 1] = h;
        d[i] = T::zero();
        rotate_columns(j, n, i - 1, i, c, s);
    }
    for i in 0..=q {
        r[q * n + i] = d[i];
    }
}

/// Removes active constraint at position `pos` and restores triangular R.
fn drop_constraint<T: Real>(
    j: &mut [T],
    r: &mut [T],
    n: usize,
    active: &mut Vec<usize>,
    u: &mut Vec<T>,
    in_active: &mut [bool],
    pos: usize,
) {
    let q = active.len();
    in_active[active[pos]] = false;
    active.remove(pos);
    u.remove(pos);
    // shift columns left
    for c in pos..q - 1 {
        for i in 0..n {
            r[c * n + i] = r[(c + 1) * n + i];
        }
    }
    for i in 0..n {
        r[(q - 1) * n + i] = T::zero();
    }
    // R is now upper Hessenberg in columns pos..q-1
    for c in pos..q - 1 {
        let a = r[c * n + c];
        let b = r[c * n + c + 1];
        if b == T::zero() {
            continue;
        }
        let (cs, sn, _) = givens(a, b);
        for col in c..q - 1 {
            let x = r[col * n + c];
            let y = r[col * n + c + 1];
            r[col * n + c] = cs * x + sn * y;
            r[col * n + c + 1] = -sn * x + cs * y;
        }
        r[c * n + c + 1] = T::zero();
        rotate_columns(j, n, c, c + 1, cs, sn);
    }
}

/// KKT residuals of a candidate solution, for verification.
#[derive(Clone, Copy, Debug)]
pub struct KktResiduals<T> {
    pub stationarity: T,
    pub primal: T,
    pub dual: T,
    pub complementarity: T,
}

impl<T: Real> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals<T: Real>(
    hessian: &DMatrix<T>,
    gradient: &DVector<T>,
    rows: &Rows<T>,
    enabled: Option<&[bool]>,
    x: &[T],
    multipliers: &[T],
) -> KktResiduals<T> {
    let n = x.len();
    let mut grad = hessian * DVector::from_column_slice(x) + gradient;
    let mut primal = T::zero();
    let mut dual = T::zero();
    let mut comp = T::zero();
    for i in 0..rows.len() {
        let lambda = multipliers[i];
        dual = dual.max(-lambda);
        let on = enabled.is_none_or(|m| m[i]);
        if !on {
            dual = dual.max(lambda.abs());
            continue;
        }
        let slack = rows.bounds[i] - dot(rows.row(i), x);
        primal = primal.max(-slack);
        comp = comp.max((lambda * slack).abs());
        for k in 0..n {
            grad[k] += lambda * rows.row(i)[k];
        }
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        dual,
        complementarity: comp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(h: &DMatrix<f64>, g: &DVector<f64>, rows: &Rows<f64>) -> QpOutcome<f64> {
        let f = HessianFactor::new(h).unwrap();
        solve_qp(&f, h, g, rows, None, &QpOptions::default()).unwrap()
    }

    #[test]
    fn scalar_active_bound() {
        // minimize u² s.t. u ≥ 1
        let h = dmatrix![2.0];
        let g = dvector![0.0];
        let mut rows = Rows::new(1);
        rows.push(&[-1.0], -1.0);
        let QpOutcome::Optimal(res) = solve(&h, &g, &rows) else { panic!() };
        assert!((res.x[0] - 1.0).abs() < 1e-12);
        assert!((res.objective - 1.0).abs() < 1e-12);
        assert!((res.multipliers[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_minimum() {
        // minimize uᵀu + 2·1ᵀu
        let h = DMatrix::identity(3, 3) * 2.0;
        let g = DVector::from_element(3, 2.0);
        let QpOutcome::Optimal(res) = solve(&h, &g, &Rows::new(3)) else { panic!() };
        for v in &res.x {
            assert!((v + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_detected() {
        let h = dmatrix![2.0];
        let mut rows = Rows::new(1);
        rows.push(&[1.0], 0.0);
        rows.push(&[-1.0], -1.0);
        assert!(matches!(solve(&h, &dvector![0.0], &rows), QpOutcome::Infeasible));
    }

    #[test]
    fn mask_drops_rows() {
        let h = dmatrix![2.0];
        let g = dvector![0.0];
        let mut rows = Rows::new(1);
        rows.push(&[-1.0], -1.0);
        let f = HessianFactor::new(&h).unwrap();
        let out = solve_qp(&f, &h, &g, &rows, Some(&[false]), &QpOptions::default()).unwrap();
        let QpOutcome::Optimal(res) = out else { panic!() };
        assert_eq!(res.x[0], 0.0);
        assert_eq!(res.multipliers[0], 0.0);
    }

    #[test]
    fn singular_hessian_is_regularized() {
        let h = dmatrix![2.0, 0.0; 0.0, 0.0];
        let f = HessianFactor::new(&h).unwrap();
        assert!(f.regularization > 0.0 && f.regularization < 1e-6);
    }

    // Enumerate every active set, keep KKT points; the convex QP has exactly one.
    fn enumerate_oracle(h: &DMatrix<f64>, g: &DVector<f64>, rows: &Rows<f64>) -> Option<Vec<f64>> {
        let n = g.len();
        let m = rows.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            if act.len() > n {
                continue;
            }
            let k = act.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            let mut rhs = DVector::zeros(n + k);
            for i in 0..n {
                rhs[i] = -g[i];
            }
            for (c, &ri) in act.iter().enumerate() {
                for i in 0..n {
                    kkt[(i, n + c)] = rows.row(ri)[i];
                    kkt[(n + c, i)] = rows.row(ri)[i];
                }
                rhs[n + c] = rows.bounds[ri];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
            if sol.rows(n, k).iter().any(|l| *l < -1e-9) {
                continue;
            }
            if (0..m).any(|i| dot(rows.row(i), &x) > rows.bounds[i] + 1e-9) {
                continue;
            }
            let obj = 0.5 * (h * DVector::from_column_slice(&x)).dot(&DVector::from_column_slice(&x)) + g.dot(&DVector::from_column_slice(&x));
            if best.as_ref().is_none_or(|b| obj < b.0) {
                best = Some((obj, x));
            }
        }
        best.map(|b| b.1)
    }

    #[test]
    fn random_box_qps_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..300 {
            let n = rng.random_range(1..=6);
            let extra = rng.random_range(0..=3);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let mut rows = Rows::new(n);
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                rows.push(&e, rng.random_range(0.1..1.0));
                e[i] = -1.0;
                rows.push(&e, rng.random_range(0.1..1.0));
            }
            for _ in 0..extra {
                let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                rows.push(&row, rng.random_range(0.0..0.5));
            }
            let oracle = enumerate_oracle(&h, &g, &rows).expect("box QP feasible");
            let QpOutcome::Optimal(res) = solve(&h, &g, &rows) else { panic!("trial {trial}") };
            for i in 0..n {
                assert!((res.x[i] - oracle[i]).abs() < 1e-5, "trial {trial}: {:?} vs {:?}", res.x, oracle);
            }
            let kkt = kkt_residuals(&h, &g, &rows, None, &res.x, &res.multipliers);
            assert!(kkt.max() < 1e-6, "trial {trial}: {kkt:?}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let h = dmatrix![2.0f32, 0.5; 0.5, 1.0];
        let g = dvector![-1.0f32, -1.0];
        let mut rows = Rows::new(2);
        rows.push(&[1.0, 1.0], 0.5);
        let f = HessianFactor::new(&h).unwrap();
        let QpOutcome::Optimal(res) = solve_qp(&f, &h, &g, &rows, None, &QpOptions::default()).unwrap() else {
            panic!()
        };
        let kkt = kkt_residuals(&h, &g, &rows, None, &res.x, &res.multipliers);
        assert!(kkt.max() < 1e-4);
    }
}
