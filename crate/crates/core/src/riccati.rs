//! Differential and algebraic Riccati equations.
//!
//! The quadratic-form matrix `P` (see `lti_core`) satisfies
//!
//! ```text
//! dP/dt = A^T P + P A - P G P + C^T C,     G = B (K^T K)^{-1} B^T,
//! ```
//!
//! integrated by fixed-step RK4 with symmetrization after every step.
//! The algebraic equation is solved by Newton-Kleinman iterations warm
//! started from the differential flow, with each Lyapunov step solved
//! through its Kronecker-vectorized linear system. That route is O(n^6)
//! in the worst case and is the scalability boundary of this crate;
//! it is comfortable for the intended n <= ~64.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step_mat, Stage};
use crate::linalg;
use crate::lti_core::GenLQProblem;
use crate::structural;

/// Absolute per-step tolerance factor for the Richardson half-step check.
const RICHARDSON_RTOL: f64 = 1e-3;
/// Steps between Richardson checks (skipping the stiff initial layer).
const RICHARDSON_CADENCE: usize = 32;
/// Cap on stored samples per `integrate_dre` call; longer runs are
/// decimated by an integer stride.
const MAX_STORED_SAMPLES: usize = 8192;

/// Fitted exponential envelope `|P(t) - P_min| <= m exp(-beta t)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DecayFit {
    pub m: f64,
    pub beta: f64,
    pub r2: f64,
}

/// Grid-sampled differential Riccati solution, optionally augmented with
/// the algebraic solution and a decay fit.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    pub p_samples: Vec<DMatrix<f64>>,
    pub p_min: Option<DMatrix<f64>>,
    pub are_residual: Option<f64>,
    pub decay_fit: Option<DecayFit>,
}

impl RiccatiSolution {
    pub fn final_p(&self) -> &DMatrix<f64> {
        self.p_samples.last().expect("non-empty grid")
    }
}

pub(crate) fn dre_rhs(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let at_p = a.transpose() * p;
    let pg = p * g;
    &at_p + at_p.transpose() - pg * p + q
}

/// One RK4 step of the matrix DRE followed by symmetrization.
pub(crate) fn dre_step(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
    dt: f64,
) -> DMatrix<f64> {
    let next = rk4_step_mat(p, dt, |_: Stage, m| dre_rhs(a, g, q, m));
    linalg::sym_part(&next)
}

fn check_finite(op: &'static str, p: &DMatrix<f64>, t: f64) -> Result<()> {
    if p.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEncountered { op, t })
    }
}

fn richardson_check(
    op: &'static str,
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
    t: f64,
    dt: f64,
) -> Result<()> {
    let full = dre_step(a, g, q, p, dt);
    let half = dre_step(a, g, q, &dre_step(a, g, q, p, dt / 2.0), dt / 2.0);
    let err = (&full - &half).norm() / 15.0;
    let tol = RICHARDSON_RTOL * (1.0 + p.norm());
    if !err.is_finite() || err > tol {
        return Err(Error::StepSizeTooLarge {
            op,
            t,
            error: err,
            tol,
        });
    }
    Ok(())
}

/// Integrate the DRE from `p0` over `[0, horizon]` with step `dt`.
///
/// Samples are stored every `stride` steps (stride chosen so at most
/// `MAX_STORED_SAMPLES` are kept); the final time is always included.
pub fn integrate_dre(
    problem: &GenLQProblem,
    horizon: f64,
    p0: &DMatrix<f64>,
    dt: f64,
) -> Result<RiccatiSolution> {
    const OP: &str = "riccati.integrate_dre";
    let n = problem.state_dim();
    if !(dt > 0.0 && horizon >= dt) {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("need horizon >= dt > 0, got horizon = {horizon}, dt = {dt}"),
        });
    }
    if p0.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            op: OP,
            field: "p0",
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", p0.nrows(), p0.ncols()),
        });
    }
    if linalg::asymmetry(p0) > 1e-10 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: "p0 must be symmetric".into(),
        });
    }
    let min_eig = linalg::min_sym_eig(p0);
    if min_eig < -1e-10 * (1.0 + p0.norm()) {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("p0 must be PSD (min eigenvalue {min_eig:.3e})"),
        });
    }

    let a = problem.a();
    let g = problem.gain();
    let q = problem.ctc();
    let steps = (horizon / dt).round().max(1.0) as usize;
    let stride = steps.div_ceil(MAX_STORED_SAMPLES).max(1);

    let mut p = linalg::sym_part(p0);
    let mut grid = vec![0.0];
    let mut samples = vec![p.clone()];
    for i in 0..steps {
        let t = i as f64 * dt;
        if i > 0 && i % RICHARDSON_CADENCE == 0 {
            richardson_check(OP, a, g, q, &p, t, dt)?;
        }
        p = dre_step(a, g, q, &p, dt);
        check_finite(OP, &p, t + dt)?;
        if (i + 1) % stride == 0 || i + 1 == steps {
            grid.push((i + 1) as f64 * dt);
            samples.push(p.clone());
        }
    }
    Ok(RiccatiSolution {
        grid,
        p_samples: samples,
        p_min: None,
        are_residual: None,
        decay_fit: None,
    })
}

/// Frobenius norm of the ARE residual `A^T P + P A - P G P + C^T C`.
pub fn are_residual_norm(problem: &GenLQProblem, p: &DMatrix<f64>) -> f64 {
    dre_rhs(problem.a(), problem.gain(), problem.ctc(), p).norm()
}

/// Solve the Lyapunov equation `M^T X + X M = RHS` by LU on the
/// Kronecker-vectorized system.
pub(crate) fn lyapunov_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const OP: &str = "riccati.lyapunov";
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    // vec(M^T X) = (I kron M^T) vec(X); vec(X M) = (M^T kron I) vec(X).
    let kron = eye.kronecker(&mt) + mt.kronecker(&eye);
    let b = DVector::from_column_slice(rhs.as_slice());
    let lu = kron.lu();
    let x = lu.solve(&b).ok_or(Error::SingularKkt { op: OP, ratio: 0.0 })?;
    Ok(linalg::sym_part(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

fn warm_start_dt(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let sa = linalg::spectral_norm(a);
    let sgq = (linalg::spectral_norm(g) * linalg::spectral_norm(q)).sqrt();
    1.0 / (2.0 * sa + 2.0 * sgq + 1.0)
}

/// Minimal nonnegative solution of the ARE with its residual norm.
///
/// Warm starts from the differential flow with `P(0) = 0` (integrated
/// until successive samples differ by `< 1e-3`), then runs
/// Newton-Kleinman until the residual stops improving or passes
/// `1e-10 (1 + |C^T C|)`.
pub fn solve_are(problem: &GenLQProblem) -> Result<(DMatrix<f64>, f64)> {
    const OP: &str = "riccati.solve_are";
    if !structural::hautus_stabilizable(problem) {
        return Err(Error::NotStabilizable { op: OP });
    }
    let a = problem.a();
    let g = problem.gain();
    let q = problem.ctc();
    let n = problem.state_dim();
    let scale = 1.0 + q.norm();
    let gate = 1e-8 * scale;
    let target = 1e-10 * scale;

    // Trivial fixed point: zero observation cost.
    let mut p = DMatrix::<f64>::zeros(n, n);
    if are_residual_norm(problem, &p) <= target {
        return Ok((p.clone(), are_residual_norm(problem, &p)));
    }

    // Warm start along the differential flow.
    let dt = warm_start_dt(a, g, q);
    let sample_every = (0.5 / dt).round().max(1.0) as usize;
    let mut last_sample = p.clone();
    let max_samples = 5000;
    'warm: for _ in 0..max_samples {
        for i in 0..sample_every {
            p = dre_step(a, g, q, &p, dt);
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteEncountered {
                    op: OP,
                    t: i as f64 * dt,
                });
            }
        }
        let diff = (&p - &last_sample).norm();
        if diff < 1e-3 || diff < 1e-6 * p.norm() {
            break 'warm;
        }
        last_sample = p.clone();
    }

    // Newton-Kleinman.
    let mut residual = are_residual_norm(problem, &p);
    let mut non_decreasing = 0usize;
    for _ in 0..60 {
        if residual <= target {
            break;
        }
        let closed = a - g * &p;
        if linalg::spectral_abscissa(&closed) >= 0.0 {
            return Err(Error::NewtonStalled { op: OP, residual });
        }
        let rhs = -(q + &p * g * &p);
        let next = lyapunov_solve(&closed, &rhs)?;
        let next_residual = are_residual_norm(problem, &next);
        if next_residual >= residual {
            non_decreasing += 1;
            if next_residual <= gate {
                // Converged to limiting accuracy.
                p = next;
                residual = next_residual.min(residual);
                break;
            }
            if non_decreasing >= 5 {
                return Err(Error::NewtonStalled {
                    op: OP,
                    residual: next_residual,
                });
            }
        } else {
            non_decreasing = 0;
        }
        p = next;
        residual = next_residual;
    }
    if residual > gate {
        return Err(Error::NewtonStalled { op: OP, residual });
    }
    // Under detectability the closed loop must be Hurwitz.
    if structural::hautus_detectable(problem) {
        let closed = a - g * &p;
        let abscissa = linalg::spectral_abscissa(&closed);
        if abscissa >= 0.0 {
            return Err(Error::NewtonStalled { op: OP, residual });
        }
    }
    Ok((p, residual))
}

/// Fit `|P(t) - P_min| <= m exp(-beta t)` on the sampled grid.
///
/// The regression runs over samples whose deviation norm lies in
/// `[1e-10, 0.5 |P_min|]`; `m` is then inflated so the envelope
/// dominates every sample in that window.
pub fn fit_decay(solution: &RiccatiSolution) -> Result<DecayFit> {
    const OP: &str = "riccati.fit_decay";
    let p_min = solution.p_min.as_ref().ok_or(Error::InvalidParameter {
        op: OP,
        what: "solution has no p_min; run solve_are first".into(),
    })?;
    let norms: Vec<f64> = solution
        .p_samples
        .iter()
        .map(|p| (p - p_min).norm())
        .collect();
    let above_floor = norms.iter().filter(|&&d| d > 1e-12).count();
    if above_floor < 10 {
        return Err(Error::InsufficientDecay { op: OP, beta: 0.0 });
    }
    let upper = 0.5 * p_min.norm();
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (t, d) in solution.grid.iter().zip(&norms) {
        if *d >= 1e-10 && *d <= upper {
            ts.push(*t);
            logs.push(d.ln());
        }
    }
    if ts.len() < 10 {
        return Err(Error::InsufficientDecay { op: OP, beta: 0.0 });
    }
    let (slope, intercept, r2) = linalg::line_fit(&ts, &logs);
    let beta = -slope;
    if !(beta > 0.0) {
        return Err(Error::InsufficientDecay { op: OP, beta });
    }
    let mut m = intercept.exp();
    let mut inflate: f64 = 1.0;
    for (t, lg) in ts.iter().zip(&logs) {
        let envelope = m * (-beta * t).exp();
        inflate = inflate.max(lg.exp() / envelope);
    }
    m *= inflate;
    Ok(DecayFit { m, beta, r2 })
}

// ---------------------------------------------------------------------
// Half-grid flows used by the trajectory modules
// ---------------------------------------------------------------------

/// Checkpointed DRE trajectory on the half grid (step `dt/2`), with
/// `P(0) = 0`. Memory is O(sqrt(steps) * n^2); any contiguous window can
/// be replayed from the nearest checkpoint.
pub(crate) struct HalfGridFlow {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
    pub half_dt: f64,
    pub half_steps: usize,
    seg_len: usize,
    checkpoints: Vec<DMatrix<f64>>,
    p_final: DMatrix<f64>,
}

impl HalfGridFlow {
    /// Forward integration; `visit(half_idx, p)` is called at every
    /// half-grid point including index 0.
    pub fn new_with(
        problem: &GenLQProblem,
        horizon: f64,
        dt: f64,
        mut visit: impl FnMut(usize, &DMatrix<f64>),
    ) -> Result<Self> {
        const OP: &str = "riccati.flow";
        let steps = (horizon / dt).round().max(1.0) as usize;
        let half_steps = 2 * steps;
        let half_dt = dt / 2.0;
        let mut seg_len = ((half_steps as f64).sqrt().ceil() as usize).max(2);
        if seg_len % 2 == 1 {
            seg_len += 1;
        }
        let a = problem.a().clone();
        let g = problem.gain().clone();
        let q = problem.ctc().clone();
        let mut p = DMatrix::<f64>::zeros(problem.state_dim(), problem.state_dim());
        let mut checkpoints = vec![p.clone()];
        visit(0, &p);
        for i in 1..=half_steps {
            if i % (2 * RICHARDSON_CADENCE) == 1 && i > 2 * RICHARDSON_CADENCE {
                richardson_check(OP, &a, &g, &q, &p, i as f64 * half_dt, half_dt)?;
            }
            p = dre_step(&a, &g, &q, &p, half_dt);
            if i % 64 == 0 || i == half_steps {
                check_finite(OP, &p, i as f64 * half_dt)?;
            }
            if i % seg_len == 0 {
                checkpoints.push(p.clone());
            }
            visit(i, &p);
        }
        Ok(Self {
            a,
            g,
            q,
            half_dt,
            half_steps,
            seg_len,
            checkpoints,
            p_final: p,
        })
    }

    pub fn new(problem: &GenLQProblem, horizon: f64, dt: f64) -> Result<Self> {
        Self::new_with(problem, horizon, dt, |_, _| {})
    }

    /// `P` at the final time (quadratic-form representation).
    pub fn p_final(&self) -> &DMatrix<f64> {
        &self.p_final
    }

    /// Recompute the fine values of segment `j`: half indices
    /// `j*seg_len ..= min((j+1)*seg_len, half_steps)`.
    fn segment(&self, j: usize) -> Vec<DMatrix<f64>> {
        let start = j * self.seg_len;
        let end = ((j + 1) * self.seg_len).min(self.half_steps);
        let mut p = self.checkpoints[j].clone();
        let mut out = Vec::with_capacity(end - start + 1);
        out.push(p.clone());
        for _ in start..end {
            p = dre_step(&self.a, &self.g, &self.q, &p, self.half_dt);
            out.push(p.clone());
        }
        out
    }

    pub fn reverse_cursor(&self) -> ReverseCursor<'_> {
        ReverseCursor {
            flow: self,
            seg_idx: usize::MAX,
            cache: Vec::new(),
        }
    }
}

/// Streams `P` triples in descending half-index order by replaying
/// checkpointed segments. Access must be by non-increasing even index.
pub(crate) struct ReverseCursor<'a> {
    flow: &'a HalfGridFlow,
    seg_idx: usize,
    cache: Vec<DMatrix<f64>>,
}

impl ReverseCursor<'_> {
    /// `P` at half indices `(top, top-1, top-2)`; `top` must be even and
    /// `>= 2`.
    pub fn triple(&mut self, top: usize) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        assert!(top >= 2 && top <= self.flow.half_steps && top % 2 == 0);
        let j = (top - 1) / self.flow.seg_len;
        if j != self.seg_idx {
            debug_assert!(self.seg_idx == usize::MAX || j < self.seg_idx);
            self.cache = self.flow.segment(j);
            self.seg_idx = j;
        }
        let base = j * self.flow.seg_len;
        (
            &self.cache[top - base],
            &self.cache[top - 1 - base],
            &self.cache[top - 2 - base],
        )
    }
}

/// Fully stored half-grid DRE trajectory for the evolution-operator
/// probes; memory is (2 steps + 1) n^2 doubles.
pub(crate) struct StoredFlow {
    pub ps: Vec<DMatrix<f64>>,
}

impl StoredFlow {
    pub fn new(problem: &GenLQProblem, horizon: f64, dt: f64) -> Result<Self> {
        const OP: &str = "riccati.stored_flow";
        let steps = (horizon / dt).round().max(1.0) as usize;
        let n = problem.state_dim();
        let entries = (2 * steps + 1) * n * n;
        if entries > 60_000_000 {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!(
                    "stored flow would need {entries} matrix entries; coarsen dt or shorten the horizon"
                ),
            });
        }
        let mut ps = Vec::with_capacity(2 * steps + 1);
        HalfGridFlow::new_with(problem, horizon, dt, |_, p| ps.push(p.clone()))?;
        Ok(Self { ps })
    }

    pub fn p(&self, half_idx: usize) -> &DMatrix<f64> {
        &self.ps[half_idx]
    }

    pub fn half_steps(&self) -> usize {
        self.ps.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_unit() -> GenLQProblem {
        GenLQProblem::from_scalars(0.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn dre_matches_tanh() {
        // dP/dt = 1 - P^2, P(0) = 0  =>  P(t) = tanh(t).
        let p = scalar_unit();
        let sol = integrate_dre(&p, 1.0, &DMatrix::zeros(1, 1), 1e-3).unwrap();
        let p1 = sol.final_p()[(0, 0)];
        assert_relative_eq!(p1, 1.0f64.tanh(), epsilon = 1e-8);
        assert_relative_eq!(p1, 0.7615942, epsilon = 1e-7);
    }

    #[test]
    fn zero_observation_keeps_zero_fixed_point() {
        let p = GenLQProblem::from_scalars(0.7, 1.3, 0.0, 1.0, 0.0, 0.0).unwrap();
        let sol = integrate_dre(&p, 2.0, &DMatrix::zeros(1, 1), 1e-3).unwrap();
        for m in &sol.p_samples {
            assert_eq!(m[(0, 0)], 0.0);
        }
    }

    #[test]
    fn tanh_decay_bound_holds_on_grid() {
        // 1 - tanh(t) <= 2 exp(-2t).
        let p = scalar_unit();
        let sol = integrate_dre(&p, 5.0, &DMatrix::zeros(1, 1), 1e-3).unwrap();
        for (t, m) in sol.grid.iter().zip(&sol.p_samples) {
            assert!(1.0 - m[(0, 0)] <= 2.0 * (-2.0 * t).exp() + 1e-12);
        }
    }

    #[test]
    fn dre_is_fourth_order_on_tanh() {
        let p = scalar_unit();
        let mut errs = Vec::new();
        let dts = [0.02, 0.04, 0.08];
        for &dt in &dts {
            let sol = integrate_dre(&p, 1.0, &DMatrix::zeros(1, 1), dt).unwrap();
            errs.push((sol.final_p()[(0, 0)] - 1.0f64.tanh()).abs());
        }
        let (slope, _, _) = linalg::line_fit(
            &dts.iter().map(|d| d.ln()).collect::<Vec<_>>(),
            &errs.iter().map(|e| e.ln()).collect::<Vec<_>>(),
        );
        assert!((3.5..=4.5).contains(&slope), "observed order {slope}");
    }

    #[test]
    fn oversized_step_is_rejected() {
        let p = GenLQProblem::from_scalars(10.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let err = integrate_dre(&p, 40.0, &DMatrix::zeros(1, 1), 0.5).unwrap_err();
        assert!(
            matches!(
                err,
                Error::StepSizeTooLarge { .. } | Error::NonFiniteEncountered { .. }
            ),
            "{err}"
        );
    }

    #[test]
    fn are_scalar_cases() {
        // A = 0: -P^2 + 1 = 0 => P = 1.
        let (p, res) = solve_are(&scalar_unit()).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-10);
        assert!(res <= 1e-8 * 2.0);

        // A = 1: 2P - P^2 + 1 = 0 => P = 1 + sqrt(2).
        let prob = GenLQProblem::from_scalars(1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let (p, _) = solve_are(&prob).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0 + 2.0f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn are_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let prob = GenLQProblem::new(
            a,
            b,
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            None,
            None,
        )
        .unwrap();
        let (p, _) = solve_are(&prob).unwrap();
        let s3 = 3.0f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]);
        assert_relative_eq!(p, expected, epsilon = 1e-8);
    }

    #[test]
    fn fit_decay_scalar_rate_is_two() {
        let prob = scalar_unit();
        let mut sol = integrate_dre(&prob, 8.0, &DMatrix::zeros(1, 1), 1e-3).unwrap();
        let (p_min, res) = solve_are(&prob).unwrap();
        sol.p_min = Some(p_min);
        sol.are_residual = Some(res);
        let fit = fit_decay(&sol).unwrap();
        assert!(
            (1.8..=2.2).contains(&fit.beta),
            "beta = {}, r2 = {}",
            fit.beta,
            fit.r2
        );
        assert!(fit.r2 > 0.99);
    }

    #[test]
    fn fit_decay_rejects_stationary_start() {
        let prob = scalar_unit();
        let p_min = DMatrix::from_element(1, 1, 1.0);
        let mut sol = integrate_dre(&prob, 4.0, &p_min, 1e-3).unwrap();
        sol.p_min = Some(p_min);
        let err = fit_decay(&sol).unwrap_err();
        assert!(matches!(err, Error::InsufficientDecay { .. }), "{err}");
    }

    #[test]
    fn reverse_cursor_matches_stored_flow() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let prob = GenLQProblem::new(
            a,
            b,
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            None,
            None,
        )
        .unwrap();
        let stored = StoredFlow::new(&prob, 1.0, 0.01).unwrap();
        let flow = HalfGridFlow::new(&prob, 1.0, 0.01).unwrap();
        let mut cursor = flow.reverse_cursor();
        let h = stored.half_steps();
        let mut top = h;
        while top >= 2 {
            let (p0, p1, p2) = cursor.triple(top);
            assert_relative_eq!(p0, stored.p(top), epsilon = 1e-14);
            assert_relative_eq!(p1, stored.p(top - 1), epsilon = 1e-14);
            assert_relative_eq!(p2, stored.p(top - 2), epsilon = 1e-14);
            top -= 2;
        }
    }
}
