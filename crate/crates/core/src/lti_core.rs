//! Problem data model: generator, control/observation/input-weighting
//! operators, linear cost terms, and the weighted inner products that
//! define all adjoints.
//!
//! The state space carries the inner product `<x, y> = x^T W y` and the
//! input space `<u, s> = u^T R u` with `W = state_weight`,
//! `R = input_weight` (both identity by default). Adjoints are realized
//! as weighted transposes, e.g. `A* = W^{-1} A^T W`. The codomains of C
//! and K carry the Euclidean inner product, so `|Cx|^2 = x^T C^T C x`
//! and `|Ku|^2 = u^T K^T K u`; models that need a weighted output norm
//! fold the weight into C (see the string model).
//!
//! Riccati-type quadratic forms are handled throughout in their
//! quadratic-form representation: the matrix `P` stored by the solvers
//! satisfies `value(x) = x^T P x`, which equals `<P_op x, x>` for the
//! weighted-self-adjoint operator `P_op = W^{-1} P`. With this
//! convention the Riccati equations keep their plain-transpose form for
//! any state weight, and the operator combination `B (K*K)^{-1} B* P_op`
//! becomes `B (K^T K)^{-1} B^T P`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative coercivity floor for `K^T K`.
pub const COERCIVITY_RTOL: f64 = 1e-10;

/// Which operator an adjoint is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorTag {
    A,
    B,
    C,
}

/// Data of the generalized linear-quadratic problem
/// `min ∫ |Cx|^2 + |Ku|^2 + 2<z,x> + 2<v,u>  s.t.  dx/dt = Ax + Bu`.
#[derive(Debug, Clone)]
pub struct GenLQProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
    z: DVector<f64>,
    v: DVector<f64>,
    state_weight: DMatrix<f64>,
    input_weight: DMatrix<f64>,
    // Cached factorizations and derived operators.
    w_chol: Cholesky<f64, Dyn>,
    r_chol: Cholesky<f64, Dyn>,
    ktk: DMatrix<f64>,
    ktk_chol: Cholesky<f64, Dyn>,
    gain: DMatrix<f64>,
    ctc: DMatrix<f64>,
}

impl GenLQProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        k: DMatrix<f64>,
        z: DVector<f64>,
        v: DVector<f64>,
        state_weight: Option<DMatrix<f64>>,
        input_weight: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::with_coercivity_floor(
            a,
            b,
            c,
            k,
            z,
            v,
            state_weight,
            input_weight,
            COERCIVITY_RTOL,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_coercivity_floor(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        k: DMatrix<f64>,
        z: DVector<f64>,
        v: DVector<f64>,
        state_weight: Option<DMatrix<f64>>,
        input_weight: Option<DMatrix<f64>>,
        coercivity_rtol: f64,
    ) -> Result<Self> {
        const OP: &str = "lti_core.construct";
        let n = a.nrows();
        let m = b.ncols();
        check_dims(OP, "a", &a, (n, n))?;
        check_dims(OP, "b", &b, (n, m))?;
        check_dims(OP, "c", &c, (c.nrows(), n))?;
        check_dims(OP, "k", &k, (k.nrows(), m))?;
        if k.nrows() < m {
            return Err(Error::DimensionMismatch {
                op: OP,
                field: "k",
                expected: format!("at least {m} rows (q >= m)"),
                got: format!("{}", k.nrows()),
            });
        }
        check_len(OP, "z", &z, n)?;
        check_len(OP, "v", &v, m)?;
        let state_weight = state_weight.unwrap_or_else(|| DMatrix::identity(n, n));
        let input_weight = input_weight.unwrap_or_else(|| DMatrix::identity(m, m));
        check_dims(OP, "state_weight", &state_weight, (n, n))?;
        check_dims(OP, "input_weight", &input_weight, (m, m))?;

        let w_chol = spd_cholesky(OP, "state_weight", &state_weight)?;
        let r_chol = spd_cholesky(OP, "input_weight", &input_weight)?;

        let ktk = k.transpose() * &k;
        // Coercivity of K*K = R^{-1} K^T K in the input inner product:
        // generalized eigenvalues of (K^T K, R).
        let l_inv_ktk = {
            let tmp = r_chol.l().solve_lower_triangular(&ktk).expect("tri solve");
            r_chol
                .l()
                .solve_lower_triangular(&tmp.transpose())
                .expect("tri solve")
        };
        let min_eig = linalg::min_sym_eig(&l_inv_ktk);
        let floor = coercivity_rtol * linalg::spectral_norm(&ktk).max(f64::MIN_POSITIVE);
        if !(min_eig > floor) || !min_eig.is_finite() {
            return Err(Error::NotCoercive {
                op: OP,
                min_eig,
                floor,
            });
        }
        let ktk_chol = Cholesky::new(ktk.clone()).ok_or(Error::NotCoercive {
            op: OP,
            min_eig,
            floor,
        })?;
        let gain = &b * ktk_chol.solve(&b.transpose());
        let ctc = c.transpose() * &c;

        Ok(Self {
            a,
            b,
            c,
            k,
            z,
            v,
            state_weight,
            input_weight,
            w_chol,
            r_chol,
            ktk,
            ktk_chol,
            gain,
            ctc,
        })
    }

    /// Scalar (1x1) problem; all weights identity.
    pub fn from_scalars(a: f64, b: f64, c: f64, k: f64, z: f64, v: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, k),
            DVector::from_element(1, z),
            DVector::from_element(1, v),
            None,
            None,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn state_weight(&self) -> &DMatrix<f64> {
        &self.state_weight
    }

    pub fn input_weight(&self) -> &DMatrix<f64> {
        &self.input_weight
    }

    /// `K^T K`, the Euclidean Gram matrix of the input weighting.
    pub fn ktk(&self) -> &DMatrix<f64> {
        &self.ktk
    }

    /// `C^T C`.
    pub fn ctc(&self) -> &DMatrix<f64> {
        &self.ctc
    }

    /// `B (K^T K)^{-1} B^T`; the quadratic-form version of `B (K*K)^{-1} B*`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Solve `(K^T K) s = y`.
    pub fn solve_ktk(&self, y: &DVector<f64>) -> DVector<f64> {
        self.ktk_chol.solve(y)
    }

    /// Weighted state inner product `x^T W y`.
    pub fn state_ip(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.state_weight * y)[(0, 0)]
    }

    pub fn state_norm(&self, x: &DVector<f64>) -> f64 {
        self.state_ip(x, x).max(0.0).sqrt()
    }

    /// Weighted input inner product `u^T R s`.
    pub fn input_ip(&self, u: &DVector<f64>, s: &DVector<f64>) -> f64 {
        (u.transpose() * &self.input_weight * s)[(0, 0)]
    }

    pub fn input_norm(&self, u: &DVector<f64>) -> f64 {
        self.input_ip(u, u).max(0.0).sqrt()
    }

    /// Cholesky factor L of the state weight (W = L L^T).
    pub fn state_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.w_chol
    }

    pub fn input_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.r_chol
    }

    /// Apply `W^{-1}`.
    pub fn solve_state_weight(&self, y: &DVector<f64>) -> DVector<f64> {
        self.w_chol.solve(y)
    }

    /// Weighted adjoint of A, B or C.
    ///
    /// `A* = W^{-1} A^T W`, `B* = R^{-1} B^T W`, `C* = W^{-1} C^T`.
    pub fn adjoint(&self, which: OperatorTag) -> DMatrix<f64> {
        match which {
            OperatorTag::A => self.w_chol.solve(&(self.a.transpose() * &self.state_weight)),
            OperatorTag::B => self.r_chol.solve(&(self.b.transpose() * &self.state_weight)),
            OperatorTag::C => self.w_chol.solve(&self.c.transpose()),
        }
    }

    /// Running cost `|Cx|^2 + |Ku|^2 + 2<z,x> + 2<v,u>`.
    pub fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        const OP: &str = "lti_core.running_cost";
        check_len(OP, "x", x, self.state_dim())?;
        check_len(OP, "u", u, self.input_dim())?;
        let cx = &self.c * x;
        let ku = &self.k * u;
        Ok(cx.norm_squared()
            + ku.norm_squared()
            + 2.0 * self.state_ip(&self.z, x)
            + 2.0 * self.input_ip(&self.v, u))
    }

    /// `|Ax + Bu|` in the state norm; zero iff (x, u) is a controlled
    /// equilibrium.
    pub fn equilibrium_residual(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        const OP: &str = "lti_core.equilibrium_residual";
        check_len(OP, "x", x, self.state_dim())?;
        check_len(OP, "u", u, self.input_dim())?;
        Ok(self.state_norm(&(&self.a * x + &self.b * u)))
    }

    /// Replace the linear cost terms (used by the steady-state shift).
    pub fn with_linear_terms(&self, z: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.k.clone(),
            z,
            v,
            Some(self.state_weight.clone()),
            Some(self.input_weight.clone()),
        )
    }

    /// Operator norm of a state-space map M in the weighted norm:
    /// `sigma_max(L^T M L^{-T})` with `W = L L^T`.
    pub fn weighted_operator_norm(&self, m: &DMatrix<f64>) -> f64 {
        let l = self.w_chol.l();
        let lt_m = l.transpose() * m;
        // right-multiply by L^{-T}: solve X L^T = lt_m  =>  L X^T = lt_m^T
        let xt = l
            .solve_lower_triangular(&lt_m.transpose())
            .expect("tri solve");
        linalg::spectral_norm(&xt.transpose())
    }
}

fn check_dims(
    op: &'static str,
    field: &'static str,
    m: &DMatrix<f64>,
    expected: (usize, usize),
) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::DimensionMismatch {
            op,
            field,
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn check_len(op: &'static str, field: &'static str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            op,
            field,
            expected: format!("{n}"),
            got: format!("{}", v.len()),
        });
    }
    Ok(())
}

fn spd_cholesky(
    op: &'static str,
    field: &'static str,
    m: &DMatrix<f64>,
) -> Result<Cholesky<f64, Dyn>> {
    if linalg::asymmetry(m) > 1e-10 {
        return Err(Error::NotPositiveDefinite {
            op,
            field,
            min_eig: f64::NAN,
        });
    }
    let min_eig = linalg::min_sym_eig(m);
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite { op, field, min_eig });
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { op, field, min_eig })
}

/// A finite-horizon instance: problem, horizon T, initial state, grid step.
#[derive(Debug, Clone)]
pub struct OcpInstance {
    pub problem: GenLQProblem,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub dt: f64,
}

impl OcpInstance {
    pub fn new(problem: GenLQProblem, horizon: f64, x0: DVector<f64>, dt: f64) -> Result<Self> {
        const OP: &str = "lti_core.instance";
        if !(dt > 0.0 && horizon >= dt) {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!("need horizon >= dt > 0, got horizon = {horizon}, dt = {dt}"),
            });
        }
        check_len(OP, "x0", &x0, problem.state_dim())?;
        Ok(Self {
            problem,
            horizon,
            x0,
            dt,
        })
    }

    /// Number of grid steps; the horizon is rounded to a whole number of
    /// steps (within one part in 1e-9 it is taken as given).
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

// ---------------------------------------------------------------------
// JSON serialization contract
// ---------------------------------------------------------------------

/// Serde mirror of the problem/instance JSON document. Matrices are
/// row-major arrays of arrays; weights are optional and default to the
/// identity; `horizon`, `x0`, `dt` are present only for instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemJson {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_weight: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_weight: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn rows_to_matrix(op: &'static str, field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    for r in rows {
        if r.len() != ncols {
            return Err(Error::InvalidParameter {
                op,
                what: format!("ragged rows in matrix `{field}`"),
            });
        }
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().cloned(),
    ))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

impl ProblemJson {
    pub fn into_problem(self) -> Result<GenLQProblem> {
        const OP: &str = "lti_core.parse";
        GenLQProblem::new(
            rows_to_matrix(OP, "a", &self.a)?,
            rows_to_matrix(OP, "b", &self.b)?,
            rows_to_matrix(OP, "c", &self.c)?,
            rows_to_matrix(OP, "k", &self.k)?,
            DVector::from_vec(self.z),
            DVector::from_vec(self.v),
            self.state_weight
                .as_deref()
                .map(|w| rows_to_matrix(OP, "state_weight", w))
                .transpose()?,
            self.input_weight
                .as_deref()
                .map(|w| rows_to_matrix(OP, "input_weight", w))
                .transpose()?,
        )
    }

    pub fn into_instance(self) -> Result<OcpInstance> {
        const OP: &str = "lti_core.parse";
        let horizon = self.horizon.ok_or_else(|| Error::InvalidParameter {
            op: OP,
            what: "missing `horizon` for instance".into(),
        })?;
        let dt = self.dt.ok_or_else(|| Error::InvalidParameter {
            op: OP,
            what: "missing `dt` for instance".into(),
        })?;
        let x0 = self.x0.clone().ok_or_else(|| Error::InvalidParameter {
            op: OP,
            what: "missing `x0` for instance".into(),
        })?;
        let problem = self.into_problem()?;
        OcpInstance::new(problem, horizon, DVector::from_vec(x0), dt)
    }

    pub fn from_problem(p: &GenLQProblem) -> Self {
        let identity_w = p.state_weight == DMatrix::identity(p.state_dim(), p.state_dim());
        let identity_r = p.input_weight == DMatrix::identity(p.input_dim(), p.input_dim());
        Self {
            a: matrix_to_rows(&p.a),
            b: matrix_to_rows(&p.b),
            c: matrix_to_rows(&p.c),
            k: matrix_to_rows(&p.k),
            z: p.z.iter().cloned().collect(),
            v: p.v.iter().cloned().collect(),
            state_weight: (!identity_w).then(|| matrix_to_rows(&p.state_weight)),
            input_weight: (!identity_r).then(|| matrix_to_rows(&p.input_weight)),
            horizon: None,
            x0: None,
            dt: None,
        }
    }

    pub fn from_instance(inst: &OcpInstance) -> Self {
        let mut doc = Self::from_problem(&inst.problem);
        doc.horizon = Some(inst.horizon);
        doc.x0 = Some(inst.x0.iter().cloned().collect());
        doc.dt = Some(inst.dt);
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, weighted: bool) -> GenLQProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut randm = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0_f64))
        };
        let a = randm(n, n);
        let b = randm(n, n);
        let c = randm(n, n);
        let k = DMatrix::identity(n, n) + randm(n, n) * 0.1;
        let w = if weighted {
            let m = randm(n, n);
            DMatrix::identity(n, n) + m.transpose() * m * 0.5
        } else {
            DMatrix::identity(n, n)
        };
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let z = DVector::from_fn(n, |_, _| rng2.gen_range(-1.0..1.0_f64));
        let v = DVector::from_fn(n, |_, _| rng2.gen_range(-1.0..1.0_f64));
        GenLQProblem::new(a, b, c, k, z, v, Some(w), None).unwrap()
    }

    #[test]
    fn running_cost_examples() {
        // All terms vanish.
        let p = GenLQProblem::from_scalars(0.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let zero = DVector::from_element(1, 0.0);
        assert_eq!(p.running_cost(&zero, &zero).unwrap(), 0.0);

        // 1/4 + 1/4 - 1 = -1/2.
        let p = GenLQProblem::from_scalars(0.0, 1.0, 1.0, 1.0, -1.0, 0.0).unwrap();
        let half = DVector::from_element(1, 0.5);
        assert_relative_eq!(
            p.running_cost(&half, &half).unwrap(),
            -0.5,
            epsilon = 1e-14
        );

        // 4 + 9 + 2 + 2 = 17.
        let p = GenLQProblem::from_scalars(0.0, 1.0, 2.0, 3.0, 1.0, 1.0).unwrap();
        let one = DVector::from_element(1, 1.0);
        assert_relative_eq!(p.running_cost(&one, &one).unwrap(), 17.0, epsilon = 1e-14);
    }

    #[test]
    fn running_cost_dimension_error_names_field() {
        let p = GenLQProblem::from_scalars(0.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let bad = DVector::from_element(2, 0.0);
        let ok = DVector::from_element(1, 0.0);
        let err = p.running_cost(&bad, &ok).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn adjoint_examples() {
        // Euclidean adjoint is the transpose.
        let p = random_problem(1, 4, false);
        let a_star = p.adjoint(OperatorTag::A);
        assert_relative_eq!(a_star, p.a().transpose(), epsilon = 1e-13);

        // W = diag(2,1), A = [[0,1],[0,0]] -> W^{-1} A^T W = [[0,0],[2,0]].
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let p = GenLQProblem::new(
            a,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
            Some(w),
            None,
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        assert_relative_eq!(p.adjoint(OperatorTag::A), expected, epsilon = 1e-13);
    }

    #[test]
    fn adjoint_is_involution_and_pairs_correctly() {
        for seed in 0..5 {
            let p = random_problem(seed, 8, true);
            let a_star = p.adjoint(OperatorTag::A);
            // Involution: (A*)* = A, adjoint taken w.r.t. the same W.
            let a_star_star = p
                .state_chol()
                .solve(&(a_star.transpose() * p.state_weight()));
            let scale = p.a().amax();
            assert!((a_star_star - p.a()).amax() <= 1e-12 * (1.0 + scale));

            // Pairing <Sx, y> = <x, S*y> for random x, y.
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0_f64));
            let y = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0_f64));
            let lhs = p.state_ip(&(p.a() * &x), &y);
            let rhs = p.state_ip(&x, &(&a_star * &y));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn equilibrium_residual_examples() {
        let p = GenLQProblem::from_scalars(-1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let zero = DVector::from_element(1, 0.0);
        let one = DVector::from_element(1, 1.0);
        assert_eq!(p.equilibrium_residual(&zero, &zero).unwrap(), 0.0);
        assert_relative_eq!(p.equilibrium_residual(&one, &one).unwrap(), 0.0);
        assert_relative_eq!(
            p.equilibrium_residual(&one, &zero).unwrap(),
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn singular_ktk_is_rejected() {
        let err = GenLQProblem::from_scalars(0.0, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::NotCoercive { .. }), "{err}");
    }

    #[test]
    fn strict_convexity_in_u() {
        let p = random_problem(7, 6, false);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0_f64));
        // Coercivity constant of K*K in the input inner product.
        let coercivity = linalg::min_sym_eig(p.ktk());
        for _ in 0..20 {
            let u1 = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0_f64));
            let u2 = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0_f64));
            if (&u1 - &u2).norm() < 1e-12 {
                continue;
            }
            let mid = (&u1 + &u2) * 0.5;
            let mid_cost = p.running_cost(&x, &mid).unwrap();
            let avg_cost = 0.5 * p.running_cost(&x, &u1).unwrap()
                + 0.5 * p.running_cost(&x, &u2).unwrap();
            let margin = coercivity * (&u1 - &u2).norm_squared() / 4.0;
            assert!(
                mid_cost <= avg_cost - margin + 1e-10,
                "midpoint {mid_cost} vs average {avg_cost}, margin {margin}"
            );
        }
    }

    #[test]
    fn json_round_trip() {
        let p = random_problem(3, 4, true);
        let doc = ProblemJson::from_problem(&p);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ProblemJson = serde_json::from_str(&text).unwrap();
        let q = back.into_problem().unwrap();
        assert_relative_eq!(p.a(), q.a(), epsilon = 1e-15);
        assert_relative_eq!(p.state_weight(), q.state_weight(), epsilon = 1e-15);
        assert_relative_eq!(p.z(), q.z(), epsilon = 1e-15);
    }
}
