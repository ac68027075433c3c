//! Optimal steady state problem `min l(x, u) s.t. Ax + Bu = 0`, its
//! projection certificate, the adjoint steady state `w` solving
//! `A* w = z + C*C x_e`, `B* w = v + K*K u_e`, and the truncated family
//! on which `|w|` blows up as the truncation grows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_RTOL};
use crate::lti_core::{GenLQProblem, OperatorTag};
use crate::models;
use crate::structural;

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub x_e: DVector<f64>,
    pub u_e: DVector<f64>,
    pub equilibrium_residual: f64,
    pub projection_residual: f64,
    pub w: Option<DVector<f64>>,
    pub w_residual: Option<f64>,
    /// Set when (A, B) fails the Hautus test, in which case nothing
    /// backs the solvability of the adjoint system and `w_residual` may
    /// be large.
    pub existence_uncertain: bool,
}

impl SteadyState {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "x_e": self.x_e.iter().cloned().collect::<Vec<f64>>(),
            "u_e": self.u_e.iter().cloned().collect::<Vec<f64>>(),
            "equilibrium_residual": self.equilibrium_residual,
            "projection_residual": self.projection_residual,
            "w": self.w.as_ref().map(|w| w.iter().cloned().collect::<Vec<f64>>()),
            "w_residual": self.w_residual,
            "w_norm": self.w.as_ref().map(|w| w.norm()),
            "existence_uncertain": self.existence_uncertain,
        })
    }
}

/// Gradient pair `(z + C*C x_e, v + K*K u_e)` in primal coordinates.
fn gradient_pair(
    problem: &GenLQProblem,
    x_e: &DVector<f64>,
    u_e: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let gx = problem.z() + problem.solve_state_weight(&(problem.ctc() * x_e));
    let gu = problem.v()
        + problem
            .input_chol()
            .solve(&(problem.ktk() * u_e));
    (gx, gu)
}

/// Norm of the weighted orthogonal projection of the gradient pair onto
/// `ker [A B]`; vanishing projection is the optimality certificate.
fn projection_residual(
    problem: &GenLQProblem,
    x_e: &DVector<f64>,
    u_e: &DVector<f64>,
) -> f64 {
    let n = problem.state_dim();
    let m = problem.input_dim();
    let mut ab = DMatrix::zeros(n, n + m);
    ab.view_mut((0, 0), (n, n)).copy_from(problem.a());
    ab.view_mut((0, n), (n, m)).copy_from(problem.b());
    let kernel = linalg::null_space_basis(&ab, RANK_RTOL);
    if kernel.ncols() == 0 {
        return 0.0;
    }
    let (gx, gu) = gradient_pair(problem, x_e, u_e);
    // Weighted Gram matrix Z^T diag(W, R) Z and moment Z^T diag(W, R) g.
    let mut dz = DMatrix::zeros(n + m, kernel.ncols());
    for j in 0..kernel.ncols() {
        let zx = kernel.view((0, j), (n, 1)).into_owned();
        let zu = kernel.view((n, j), (m, 1)).into_owned();
        dz.view_mut((0, j), (n, 1))
            .copy_from(&(problem.state_weight() * zx));
        dz.view_mut((n, j), (m, 1))
            .copy_from(&(problem.input_weight() * zu));
    }
    let gram = kernel.transpose() * &dz;
    let mut g = DVector::zeros(n + m);
    g.rows_mut(0, n).copy_from(&gx);
    g.rows_mut(n, m).copy_from(&gu);
    let moment = dz.transpose() * &g;
    let coeffs = gram
        .clone()
        .lu()
        .solve(&moment)
        .unwrap_or_else(|| linalg::pinv_solve(&gram, &moment, RANK_RTOL));
    let proj = &kernel * coeffs;
    let px = proj.rows(0, n).into_owned();
    let pu = proj.rows(n, m).into_owned();
    (problem.state_ip(&px, &px) + problem.input_ip(&pu, &pu))
        .max(0.0)
        .sqrt()
}

/// Solve the optimal steady state problem through its KKT system.
pub fn solve_ossp(problem: &GenLQProblem) -> Result<SteadyState> {
    const OP: &str = "steady_state.solve_ossp";
    let n = problem.state_dim();
    let m = problem.input_dim();
    let dim = 2 * n + m;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n))
        .copy_from(&(problem.ctc() * 2.0));
    kkt.view_mut((n, n), (m, m))
        .copy_from(&(problem.ktk() * 2.0));
    kkt.view_mut((0, n + m), (n, n))
        .copy_from(&problem.a().transpose());
    kkt.view_mut((n, n + m), (m, n))
        .copy_from(&problem.b().transpose());
    kkt.view_mut((n + m, 0), (n, n)).copy_from(problem.a());
    kkt.view_mut((n + m, n), (n, m)).copy_from(problem.b());

    let sv = kkt.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > RANK_RTOL * smax) {
        return Err(Error::SingularKkt {
            op: OP,
            ratio: smin / smax,
        });
    }

    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n)
        .copy_from(&(-(problem.state_weight() * problem.z()) * 2.0));
    rhs.rows_mut(n, m)
        .copy_from(&(-(problem.input_weight() * problem.v()) * 2.0));
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularKkt { op: OP, ratio: 0.0 })?;
    let x_e = sol.rows(0, n).into_owned();
    let u_e = sol.rows(n, m).into_owned();

    Ok(SteadyState {
        equilibrium_residual: problem.equilibrium_residual(&x_e, &u_e)?,
        projection_residual: projection_residual(problem, &x_e, &u_e),
        x_e,
        u_e,
        w: None,
        w_residual: None,
        existence_uncertain: false,
    })
}

/// Solve the adjoint steady state in the (weighted) least-squares sense
/// and attach it to `steady`. The minimum-norm representative is chosen;
/// only `A* w` and `B* w` enter downstream formulas, so any solution
/// gives the same feedback.
pub fn solve_adjoint_steady(problem: &GenLQProblem, steady: &SteadyState) -> Result<SteadyState> {
    let n = problem.state_dim();
    let m = problem.input_dim();
    // Rows L_W^{-1} A^T W and L_R^{-1} B^T W; right-hand sides
    // L_W^{-1}(W z + C^T C x_e) and L_R^{-1}(R v + K^T K u_e).
    let r1 = problem.state_weight() * problem.z() + problem.ctc() * &steady.x_e;
    let r2 = problem.input_weight() * problem.v() + problem.ktk() * &steady.u_e;
    let lw = problem.state_chol().l();
    let lr = problem.input_chol().l();
    let row_x = lw
        .solve_lower_triangular(&(problem.a().transpose() * problem.state_weight()))
        .expect("tri solve");
    let row_u = lr
        .solve_lower_triangular(&(problem.b().transpose() * problem.state_weight()))
        .expect("tri solve");
    let mut stacked = DMatrix::zeros(n + m, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&row_x);
    stacked.view_mut((n, 0), (m, n)).copy_from(&row_u);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n)
        .copy_from(&lw.solve_lower_triangular(&r1).expect("tri solve"));
    rhs.rows_mut(n, m)
        .copy_from(&lr.solve_lower_triangular(&r2).expect("tri solve"));
    let w = linalg::pinv_solve(&stacked, &rhs, RANK_RTOL);

    let (gx, gu) = gradient_pair(problem, &steady.x_e, &steady.u_e);
    let res_x = problem.adjoint(OperatorTag::A) * &w - gx;
    let res_u = problem.adjoint(OperatorTag::B) * &w - gu;
    let w_residual = problem.state_norm(&res_x) + problem.input_norm(&res_u);

    let mut out = steady.clone();
    out.existence_uncertain = !structural::hautus_stabilizable(problem);
    out.w = Some(w);
    out.w_residual = Some(w_residual);
    Ok(out)
}

/// Convenience: OSSP plus adjoint steady state.
pub fn solve_full(problem: &GenLQProblem) -> Result<SteadyState> {
    let s = solve_ossp(problem)?;
    solve_adjoint_steady(problem, &s)
}

/// Shift the linear cost terms so the optimal steady state moves to the
/// origin: `z <- z + C*C x_e`, `v <- v + K*K u_e`.
pub fn shift_problem(problem: &GenLQProblem, steady: &SteadyState) -> Result<GenLQProblem> {
    let (gx, gu) = gradient_pair(problem, &steady.x_e, &steady.u_e);
    problem.with_linear_terms(gx, gu)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CounterexampleRow {
    pub n: usize,
    pub w_norm: f64,
    pub w_residual: f64,
}

/// Run the truncated diagonal family at sizes 2, 4, ..., `max_dim` and
/// tabulate the adjoint steady-state growth. Each truncation is finite
/// dimensional so the per-size residual stays tiny while `|w|` grows
/// without bound.
pub fn counterexample_scan(max_dim: usize) -> Result<Vec<CounterexampleRow>> {
    const OP: &str = "steady_state.counterexample_scan";
    if max_dim < 2 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("max_dim must be >= 2, got {max_dim}"),
        });
    }
    let mut rows = Vec::new();
    let mut n = 2;
    while n <= max_dim {
        let problem = models::build_appendix_b(n)?;
        let steady = solve_full(&problem)?;
        rows.push(CounterexampleRow {
            n,
            w_norm: steady.w.as_ref().expect("w computed").norm(),
            w_residual: steady.w_residual.expect("residual computed"),
        });
        n += 2;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_linear_terms_give_origin() {
        let p = GenLQProblem::from_scalars(-1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let s = solve_ossp(&p).unwrap();
        assert_relative_eq!(s.x_e[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.u_e[0], 0.0, epsilon = 1e-12);
        assert!(s.projection_residual <= 1e-8);
    }

    #[test]
    fn scalar_tracking_example() {
        // Constraint u = x reduces to min 2x^2 - 2x, so (1/2, 1/2).
        let p = GenLQProblem::from_scalars(-1.0, 1.0, 1.0, 1.0, -1.0, 0.0).unwrap();
        let s = solve_full(&p).unwrap();
        assert_relative_eq!(s.x_e[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.u_e[0], 0.5, epsilon = 1e-12);
        assert!(s.equilibrium_residual <= 1e-9 * 2.0);
        assert!(s.projection_residual <= 1e-8);
        // w = 1/2 solves both adjoint equations.
        assert_relative_eq!(s.w.as_ref().unwrap()[0], 0.5, epsilon = 1e-10);
        assert!(s.w_residual.unwrap() <= 1e-10);
        assert!(!s.existence_uncertain);
    }

    #[test]
    fn shift_moves_steady_state_to_origin() {
        let p = GenLQProblem::from_scalars(-1.0, 1.0, 1.0, 1.0, -1.0, 0.0).unwrap();
        let s = solve_ossp(&p).unwrap();
        let shifted = shift_problem(&p, &s).unwrap();
        assert_relative_eq!(shifted.z()[0], -0.5, epsilon = 1e-12);
        assert_relative_eq!(shifted.v()[0], 0.5, epsilon = 1e-12);
        let s2 = solve_ossp(&shifted).unwrap();
        assert!(s2.x_e.norm() <= 1e-9, "x_e = {}", s2.x_e);
        assert!(s2.u_e.norm() <= 1e-9, "u_e = {}", s2.u_e);
        // Shifting by a zero steady state is the identity.
        let q = GenLQProblem::from_scalars(-1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let sq = solve_ossp(&q).unwrap();
        let unchanged = shift_problem(&q, &sq).unwrap();
        assert_relative_eq!(unchanged.z()[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(unchanged.v()[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn minimality_against_random_feasible_pairs() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 1.0]);
        let p = GenLQProblem::new(
            a.clone(),
            b.clone(),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, 0.5]),
            DVector::from_vec(vec![0.2, -0.3]),
            None,
            None,
        )
        .unwrap();
        let s = solve_ossp(&p).unwrap();
        let best = p.running_cost(&s.x_e, &s.u_e).unwrap();
        let mut ab = DMatrix::zeros(2, 4);
        ab.view_mut((0, 0), (2, 2)).copy_from(&a);
        ab.view_mut((0, 2), (2, 2)).copy_from(&b);
        let kernel = linalg::null_space_basis(&ab, RANK_RTOL);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let xi = DVector::from_fn(kernel.ncols(), |_, _| rng.gen_range(-2.0..2.0_f64));
            let dir = &kernel * xi;
            let x = &s.x_e + dir.rows(0, 2).into_owned();
            let u = &s.u_e + dir.rows(2, 2).into_owned();
            let cost = p.running_cost(&x, &u).unwrap();
            assert!(cost >= best - 1e-10, "feasible pair beat the optimum");
        }
    }

    #[test]
    fn singular_kkt_detected() {
        // A = 0, B = 0 and an unobserved direction: no unique minimizer.
        let p = GenLQProblem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            None,
            None,
        )
        .unwrap();
        let err = solve_ossp(&p).unwrap_err();
        assert!(matches!(err, Error::SingularKkt { .. }), "{err}");
    }

    #[test]
    fn appendix_b_small_truncations() {
        let rows = counterexample_scan(8).unwrap();
        assert_eq!(rows.len(), 4);
        // |w|^2 = N (N + 1) / 2; at N = 4 that is 10.
        let r4 = &rows[1];
        assert_eq!(r4.n, 4);
        assert_relative_eq!(r4.w_norm * r4.w_norm, 10.0, epsilon = 1e-8);
        for r in &rows {
            assert!(r.w_residual <= 1e-8, "N = {}, residual = {}", r.n, r.w_residual);
        }
        // Strictly increasing norms.
        for pair in rows.windows(2) {
            assert!(pair[1].w_norm > pair[0].w_norm);
        }
        // Steady state itself is at the origin for every truncation.
        let p8 = models::build_appendix_b(8).unwrap();
        let s8 = solve_ossp(&p8).unwrap();
        assert!(s8.x_e.norm() <= 1e-10);
        assert!(s8.u_e.norm() <= 1e-10);
    }
}
