//! Finite-horizon optimal control.
//!
//! The optimal control is produced in feedback form
//!
//! ```text
//! u*(t) = -(K^T K)^{-1} B^T [ P(T-t) (x*(t) - x_e) + eta(t) ] + u_e
//! ```
//!
//! where `P` is the quadratic-form Riccati matrix with `P(0) = 0` and
//! `eta(t)` is the feedforward vector obtained from one forward
//! integration of the auxiliary adjoint flow started at the adjoint
//! steady state. An independent direct-transcription oracle solves the
//! same discretized problem as a strictly convex quadratic program by a
//! backward affine sweep over the per-node inputs and cross-validates
//! the feedback route.
//!
//! Everything runs on the shifted problem (steady state moved to the
//! origin) and is unshifted on output. The Riccati flow is integrated on
//! the half grid so closed-loop RK4 stages see exact flow values, and is
//! checkpointed so long horizons do not hold the full operator
//! trajectory in memory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::{hermite_midpoint, lti_step_maps, rk4_step_lti, rk4_step_vec, Stage};
use crate::linalg;
use crate::lti_core::{GenLQProblem, OcpInstance};
use crate::riccati::{HalfGridFlow, StoredFlow};
use crate::steady_state::{self, SteadyState};
use crate::structural;

#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub grid: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Transformed input of the shifted problem:
    /// `u_tilde = (u - u_e) + (K^T K)^{-1} B^T P(T-t) (x - x_e)`.
    pub u_tilde: Vec<DVector<f64>>,
    /// Trapezoidal quadrature of the running cost along the trajectory.
    pub cost: f64,
    /// Gap in the cost identity
    /// `int l~ = int |K u_tilde|^2 + <P(T) x0~, x0~> + 2<w, x~(T) - x0~>`
    /// evaluated on the shifted problem.
    pub cost_identity_residual: f64,
}

impl TrajectoryBundle {
    pub fn sup_state_gap(&self, other: &TrajectoryBundle) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn sup_state_norm(&self) -> f64 {
        self.x.iter().map(|a| a.amax()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Forward,
    Adjoint,
}

/// Sampled operator norms of a closed-loop evolution family.
#[derive(Debug, Clone)]
pub struct EvolutionOperatorProbe {
    pub kind: ProbeKind,
    /// (tau, t, norm) with 0 <= tau <= t <= T; norms in the state
    /// geometry.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Shared context for one (problem, horizon, dt): steady state, adjoint
/// steady state, checkpointed Riccati flow, and feedforward trajectory.
pub struct FeedbackSynthesis {
    problem: GenLQProblem,
    pub steady: SteadyState,
    pub horizon: f64,
    pub dt: f64,
    steps: usize,
    flow: HalfGridFlow,
    /// Dual feedforward state `zeta_hat` at every half index;
    /// `eta_hat(t) = zeta_hat(T - t)`.
    zeta_half: Vec<DVector<f64>>,
    /// `(K^T K)^{-1} B^T`.
    kband: DMatrix<f64>,
}

impl FeedbackSynthesis {
    pub fn prepare(problem: &GenLQProblem, horizon: f64, dt: f64) -> Result<Self> {
        const OP: &str = "ocp.prepare";
        if !(dt > 0.0 && horizon >= dt) {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!("need horizon >= dt > 0, got horizon = {horizon}, dt = {dt}"),
            });
        }
        let steady = steady_state::solve_full(problem)?;
        let steps = (horizon / dt).round().max(1.0) as usize;
        let n = problem.state_dim();

        // Feedforward flow in dual coordinates:
        // zeta'(s) = (A^T - P(s) G) zeta, zeta(0) = W w,
        // stepped on the node grid while the Riccati flow is built;
        // half-grid values by cubic Hermite interpolation.
        let w_hat = problem.state_weight() * steady.w.as_ref().expect("adjoint steady state");
        let a_t = problem.a().transpose();
        let g = problem.gain().clone();
        let mut zeta_nodes: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
        let mut zeta_rhs: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
        let mut p_buf: Vec<DMatrix<f64>> = Vec::with_capacity(3);
        let mut zeta = w_hat.clone();
        let flow = HalfGridFlow::new_with(problem, horizon, dt, |i, p| {
            if i == 0 {
                zeta_rhs.push(&a_t * &zeta - &g * (p * &zeta));
                zeta_nodes.push(zeta.clone());
                p_buf.push(p.clone());
                return;
            }
            p_buf.push(p.clone());
            if i % 2 == 0 {
                zeta = rk4_step_vec(&zeta, dt, |stage, s| {
                    let p_stage = match stage {
                        Stage::Start => &p_buf[0],
                        Stage::Mid => &p_buf[1],
                        Stage::End => &p_buf[2],
                    };
                    &a_t * s - &g * (p_stage * s)
                });
                zeta_rhs.push(&a_t * &zeta - &g * (&p_buf[2] * &zeta));
                zeta_nodes.push(zeta.clone());
                p_buf.rotate_left(2);
                p_buf.truncate(1);
            }
        })?;

        let h = 2 * steps;
        let mut zeta_half = vec![DVector::zeros(n); h + 1];
        for i in 0..=steps {
            zeta_half[2 * i] = zeta_nodes[i].clone();
        }
        for i in 0..steps {
            zeta_half[2 * i + 1] = hermite_midpoint(
                &zeta_nodes[i],
                &zeta_rhs[i],
                &zeta_nodes[i + 1],
                &zeta_rhs[i + 1],
                dt,
            );
        }

        let mut kband = DMatrix::zeros(problem.input_dim(), n);
        let bt = problem.b().transpose();
        for j in 0..n {
            kband.set_column(j, &problem.solve_ktk(&bt.column(j).into_owned()));
        }

        Ok(Self {
            problem: problem.clone(),
            steady,
            horizon,
            dt,
            steps,
            flow,
            zeta_half,
            kband,
        })
    }

    pub fn problem(&self) -> &GenLQProblem {
        &self.problem
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `P(T)` in quadratic-form representation.
    pub fn p_final(&self) -> &DMatrix<f64> {
        self.flow.p_final()
    }

    /// Optimal transformed input `-(K^T K)^{-1} B^T eta(t)` at node `k`.
    pub fn optimal_u_tilde_at(&self, k: usize) -> DVector<f64> {
        -(&self.kband * &self.zeta_half[2 * (self.steps - k)])
    }

    /// Closed-loop optimal trajectory for one initial state.
    pub fn solve_feedback_for(&self, x0: &DVector<f64>) -> Result<TrajectoryBundle> {
        Ok(self
            .run_batch(vec![Job::feedback(x0 - &self.steady.x_e)])?
            .pop()
            .unwrap())
    }

    /// Closed-loop optimal trajectories for several initial states; the
    /// Riccati flow is replayed once for the whole batch.
    pub fn solve_feedback_batch(&self, x0s: &[DVector<f64>]) -> Result<Vec<TrajectoryBundle>> {
        self.run_batch(
            x0s.iter()
                .map(|x0| Job::feedback(x0 - &self.steady.x_e))
                .collect(),
        )
    }

    /// Open-loop rollout of node-sampled inputs (piecewise linear in
    /// time) from `x0`.
    pub fn rollout(&self, x0: &DVector<f64>, u_nodes: &[DVector<f64>]) -> Result<TrajectoryBundle> {
        const OP: &str = "ocp.rollout";
        if u_nodes.len() != self.steps + 1 {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!(
                    "input must have {} node samples, got {}",
                    self.steps + 1,
                    u_nodes.len()
                ),
            });
        }
        Ok(self
            .run_batch(vec![Job::open_loop(x0.clone(), u_nodes.to_vec())])?
            .pop()
            .unwrap())
    }

    /// Advance all jobs through one reverse replay of the Riccati flow.
    fn run_batch(&self, mut jobs: Vec<Job>) -> Result<Vec<TrajectoryBundle>> {
        const OP: &str = "ocp.rollout";
        let h = 2 * self.steps;
        let n = self.problem.state_dim();
        let p_zero = DMatrix::zeros(n, n);
        let mut cursor = self.flow.reverse_cursor();
        for k in 0..self.steps {
            let top = h - 2 * k;
            let (p_now, p_mid, p_next) = cursor.triple(top);
            let etas = (
                &self.zeta_half[top],
                &self.zeta_half[top - 1],
                &self.zeta_half[top - 2],
            );
            for job in &mut jobs {
                job.record_node(self, k, p_now);
                job.advance(self, (p_now, p_mid, p_next), etas);
            }
            if k % 64 == 63 {
                for job in &jobs {
                    if !job.state.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFiniteEncountered {
                            op: OP,
                            t: (k + 1) as f64 * self.dt,
                        });
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(jobs.len());
        for mut job in jobs {
            job.record_node(self, self.steps, &p_zero);
            if !job.x_nodes.last().unwrap().iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteEncountered {
                    op: OP,
                    t: self.horizon,
                });
            }
            out.push(self.assemble(job));
        }
        Ok(out)
    }

    fn assemble(&self, job: Job) -> TrajectoryBundle {
        let x_e = &self.steady.x_e;
        let u_e = &self.steady.u_e;
        let n_nodes = self.steps + 1;
        let shifted = matches!(job.kind, JobKind::Feedback);
        let mut grid = Vec::with_capacity(n_nodes);
        let mut cost_samples = Vec::with_capacity(n_nodes);
        let mut x_out = Vec::with_capacity(n_nodes);
        let mut u_out = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            grid.push(k as f64 * self.dt);
            let (x, u) = if shifted {
                (&job.x_nodes[k] + x_e, &job.u_nodes[k] + u_e)
            } else {
                (job.x_nodes[k].clone(), job.u_nodes[k].clone())
            };
            cost_samples.push(self.problem.running_cost(&x, &u).expect("dims fixed"));
            x_out.push(x);
            u_out.push(u);
        }
        let cost = linalg::trapezoid(&cost_samples, self.dt);
        let residual = self.cost_identity_residual(&x_out, &u_out, &job.u_tilde_nodes);
        TrajectoryBundle {
            grid,
            x: x_out,
            u: u_out,
            u_tilde: job.u_tilde_nodes,
            cost,
            cost_identity_residual: residual,
        }
    }

    /// Gap between the two sides of the shifted cost identity evaluated
    /// on node samples.
    fn cost_identity_residual(
        &self,
        x: &[DVector<f64>],
        u: &[DVector<f64>],
        u_tilde: &[DVector<f64>],
    ) -> f64 {
        let p = &self.problem;
        let x_e = &self.steady.x_e;
        let u_e = &self.steady.u_e;
        let w = self.steady.w.as_ref().expect("adjoint steady state");
        // Shifted linear terms z~ = z + C*C x_e, v~ = v + K*K u_e.
        let z_tilde = p.z() + p.solve_state_weight(&(p.ctc() * x_e));
        let v_tilde = p.v() + p.input_chol().solve(&(p.ktk() * u_e));

        let mut lhs_samples = Vec::with_capacity(x.len());
        let mut rhs_samples = Vec::with_capacity(x.len());
        for (xk, (uk, tk)) in x.iter().zip(u.iter().zip(u_tilde)) {
            let xs = xk - x_e;
            let us = uk - u_e;
            let cx = p.c() * &xs;
            let ku = p.k() * &us;
            lhs_samples.push(
                cx.norm_squared()
                    + ku.norm_squared()
                    + 2.0 * p.state_ip(&z_tilde, &xs)
                    + 2.0 * p.input_ip(&v_tilde, &us),
            );
            rhs_samples.push((p.k() * tk).norm_squared());
        }
        let lhs = linalg::trapezoid(&lhs_samples, self.dt);
        let x0s = &x[0] - x_e;
        let xts = x.last().unwrap() - x_e;
        let terminal = (x0s.transpose() * self.flow.p_final() * &x0s)[(0, 0)]
            + 2.0 * p.state_ip(w, &(&xts - &x0s));
        (lhs - (linalg::trapezoid(&rhs_samples, self.dt) + terminal)).abs()
    }
}

enum JobKind {
    Feedback,
    OpenLoop,
}

/// One trajectory advanced through the reverse replay. Feedback jobs
/// hold the shifted state and synthesize their input; open-loop jobs
/// carry prescribed input nodes and the raw state.
struct Job {
    kind: JobKind,
    state: DVector<f64>,
    x_nodes: Vec<DVector<f64>>,
    u_nodes: Vec<DVector<f64>>,
    u_tilde_nodes: Vec<DVector<f64>>,
}

impl Job {
    fn feedback(x0_shifted: DVector<f64>) -> Self {
        Job {
            kind: JobKind::Feedback,
            state: x0_shifted,
            x_nodes: Vec::new(),
            u_nodes: Vec::new(),
            u_tilde_nodes: Vec::new(),
        }
    }

    fn open_loop(x0: DVector<f64>, u_nodes: Vec<DVector<f64>>) -> Self {
        Job {
            kind: JobKind::OpenLoop,
            state: x0,
            x_nodes: Vec::new(),
            u_nodes,
            u_tilde_nodes: Vec::new(),
        }
    }

    /// Record node `k` given `P(T - t_k)`; for feedback jobs this also
    /// synthesizes and stores the input.
    fn record_node(&mut self, ctx: &FeedbackSynthesis, k: usize, p_now: &DMatrix<f64>) {
        match self.kind {
            JobKind::Feedback => {
                let eta = &ctx.zeta_half[2 * (ctx.steps - k)];
                let p_x = p_now * &self.state;
                let u_shift = -(&ctx.kband * (&p_x + eta));
                // Definitional transformed input; telescopes to
                // -(K^T K)^{-1} B^T eta for the feedback law.
                let u_tilde = &u_shift + &ctx.kband * &p_x;
                self.x_nodes.push(self.state.clone());
                self.u_nodes.push(u_shift);
                self.u_tilde_nodes.push(u_tilde);
            }
            JobKind::OpenLoop => {
                let xs = &self.state - &ctx.steady.x_e;
                let us = &self.u_nodes[k] - &ctx.steady.u_e;
                let u_tilde = us + &ctx.kband * (p_now * xs);
                self.x_nodes.push(self.state.clone());
                self.u_tilde_nodes.push(u_tilde);
            }
        }
    }

    fn advance(
        &mut self,
        ctx: &FeedbackSynthesis,
        (p_now, p_mid, p_next): (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
        (eta_now, eta_mid, eta_next): (&DVector<f64>, &DVector<f64>, &DVector<f64>),
    ) {
        let problem = &ctx.problem;
        match self.kind {
            JobKind::Feedback => {
                let a = problem.a();
                let g = problem.gain();
                self.state = rk4_step_vec(&self.state, ctx.dt, |stage, s| {
                    let (p, eta) = match stage {
                        Stage::Start => (p_now, eta_now),
                        Stage::Mid => (p_mid, eta_mid),
                        Stage::End => (p_next, eta_next),
                    };
                    a * s - g * (p * s + eta)
                });
            }
            JobKind::OpenLoop => {
                let k = self.x_nodes.len() - 1;
                let u_now = &self.u_nodes[k];
                let u_next = &self.u_nodes[k + 1];
                let u_half = (u_now + u_next) * 0.5;
                self.state = rk4_step_lti(
                    problem.a(),
                    problem.b(),
                    &self.state,
                    u_now,
                    &u_half,
                    u_next,
                    ctx.dt,
                );
            }
        }
    }
}

/// Rollout with a prescribed node-sampled input (piecewise linear).
pub fn rollout(instance: &OcpInstance, u_nodes: &[DVector<f64>]) -> Result<TrajectoryBundle> {
    let ctx = FeedbackSynthesis::prepare(&instance.problem, instance.horizon, instance.dt)?;
    ctx.rollout(&instance.x0, u_nodes)
}

/// Explicit-feedback optimal control of the instance.
pub fn solve_feedback(instance: &OcpInstance) -> Result<TrajectoryBundle> {
    const OP: &str = "ocp.solve_feedback";
    if !structural::hautus_stabilizable(&instance.problem) {
        return Err(Error::NotStabilizable { op: OP });
    }
    if !structural::hautus_detectable(&instance.problem) {
        return Err(Error::NotDetectable { op: OP });
    }
    let ctx = FeedbackSynthesis::prepare(&instance.problem, instance.horizon, instance.dt)?;
    ctx.solve_feedback_for(&instance.x0)
}

// ---------------------------------------------------------------------
// Direct transcription oracle
// ---------------------------------------------------------------------

/// Backward sweep state for the transcription QP: the cost-to-go is
/// `V_k(xi) = xi^T s_mat xi + 2 s_vec^T xi + const` over the augmented
/// node state `xi = (x_k, u_k)`.
#[derive(Clone)]
struct SweepValue {
    s_mat: DMatrix<f64>,
    s_vec: DVector<f64>,
}

/// Per-step affine policy `u_{k+1} = -(gain xi_k + offset)`.
struct SweepPolicy {
    gain: DMatrix<f64>,
    offset: DVector<f64>,
}

struct SweepMachinery {
    f_mat: DMatrix<f64>,
    g_mat: DMatrix<f64>,
    q_full: DMatrix<f64>,
    q_lin: DVector<f64>,
    dt: f64,
    n: usize,
    m: usize,
}

impl SweepMachinery {
    fn new(problem: &GenLQProblem, dt: f64) -> Self {
        let n = problem.state_dim();
        let m = problem.input_dim();
        let (phi, gamma_l, gamma_r) = lti_step_maps(problem.a(), problem.b(), dt);
        let mut f_mat = DMatrix::zeros(n + m, n + m);
        f_mat.view_mut((0, 0), (n, n)).copy_from(&phi);
        f_mat.view_mut((0, n), (n, m)).copy_from(&gamma_l);
        let mut g_mat = DMatrix::zeros(n + m, m);
        g_mat.view_mut((0, 0), (n, m)).copy_from(&gamma_r);
        g_mat
            .view_mut((n, 0), (m, m))
            .copy_from(&DMatrix::identity(m, m));
        // Unweighted per-node cost xi^T Q xi + 2 q^T xi; trapezoid
        // weights (1/2 at the ends) are applied per node.
        let mut q_full = DMatrix::zeros(n + m, n + m);
        q_full.view_mut((0, 0), (n, n)).copy_from(problem.ctc());
        q_full.view_mut((n, n), (m, m)).copy_from(problem.ktk());
        let mut q_lin = DVector::zeros(n + m);
        q_lin
            .rows_mut(0, n)
            .copy_from(&(problem.state_weight() * problem.z()));
        q_lin
            .rows_mut(n, m)
            .copy_from(&(problem.input_weight() * problem.v()));
        Self {
            f_mat,
            g_mat,
            q_full,
            q_lin,
            dt,
            n,
            m,
        }
    }

    fn node_weight(&self, k: usize, steps: usize) -> f64 {
        if k == 0 || k == steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    fn terminal_value(&self, steps: usize) -> SweepValue {
        let c = self.node_weight(steps, steps);
        SweepValue {
            s_mat: &self.q_full * c,
            s_vec: &self.q_lin * c,
        }
    }

    /// One backward step: from `V_{k+1}` to `(V_k, policy_k)`.
    fn step_back(&self, k: usize, steps: usize, next: &SweepValue) -> Result<(SweepValue, SweepPolicy)> {
        const OP: &str = "ocp.direct_transcription_oracle";
        let sf = &next.s_mat * &self.f_mat;
        let sg = &next.s_mat * &self.g_mat;
        let h_ww = self.g_mat.transpose() * &sg;
        let h_wxi = self.g_mat.transpose() * &sf;
        let h_w = self.g_mat.transpose() * &next.s_vec;
        let chol = nalgebra::Cholesky::new(linalg::sym_part(&h_ww)).ok_or(Error::SingularKkt {
            op: OP,
            ratio: 0.0,
        })?;
        let gain = chol.solve(&h_wxi);
        let offset = chol.solve(&h_w);
        let c = self.node_weight(k, steps);
        let s_mat = linalg::sym_part(
            &(&self.q_full * c + self.f_mat.transpose() * &sf - h_wxi.transpose() * &gain),
        );
        let s_vec =
            &self.q_lin * c + self.f_mat.transpose() * &next.s_vec - h_wxi.transpose() * &offset;
        Ok((SweepValue { s_mat, s_vec }, SweepPolicy { gain, offset }))
    }
}

/// Solve the discretized problem exactly as a strictly convex QP over
/// the node inputs via a backward affine sweep (checkpointed so memory
/// stays O(sqrt(steps))), then roll the optimizer out through the
/// standard rollout path.
pub fn direct_transcription_oracle(instance: &OcpInstance) -> Result<TrajectoryBundle> {
    let ctx = FeedbackSynthesis::prepare(&instance.problem, instance.horizon, instance.dt)?;
    direct_transcription_with(&ctx, &instance.x0)
}

/// Oracle reusing an existing synthesis context (the context supplies
/// the steady state and Riccati data for the bundle diagnostics only;
/// the optimizer itself is independent of the Riccati route).
pub fn direct_transcription_with(
    ctx: &FeedbackSynthesis,
    x0: &DVector<f64>,
) -> Result<TrajectoryBundle> {
    let steps = ctx.steps();
    let machinery = SweepMachinery::new(ctx.problem(), ctx.dt);
    let n = machinery.n;
    let m = machinery.m;

    // Backward pass with checkpoints of the value function.
    let seg_len = ((steps as f64).sqrt().ceil() as usize).max(1);
    let mut checkpoints: Vec<SweepValue> = Vec::with_capacity(steps / seg_len + 2);
    let mut value = machinery.terminal_value(steps);
    checkpoints.push(value.clone()); // value at node `steps`
    for k in (0..steps).rev() {
        let (v, _) = machinery.step_back(k, steps, &value)?;
        value = v;
        if k % seg_len == 0 {
            checkpoints.push(value.clone());
        }
    }
    // checkpoints[j] = value at node j * seg_len (reversed order fix):
    checkpoints.reverse();

    // Initial node: minimize V_0(x0, u0) over u0.
    let s_uu = value.s_mat.view((n, n), (m, m)).into_owned();
    let s_ux = value.s_mat.view((n, 0), (m, n)).into_owned();
    let s_u = value.s_vec.rows(n, m).into_owned();
    let chol = nalgebra::Cholesky::new(linalg::sym_part(&s_uu)).ok_or(Error::SingularKkt {
        op: "ocp.direct_transcription_oracle",
        ratio: 0.0,
    })?;
    let u0 = -chol.solve(&(&s_ux * x0 + s_u));

    // Forward pass, recomputing per-segment policies from checkpoints.
    let mut u_nodes: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    u_nodes.push(u0.clone());
    let mut xi = DVector::zeros(n + m);
    xi.rows_mut(0, n).copy_from(x0);
    xi.rows_mut(n, m).copy_from(&u0);
    let mut seg_start = 0usize;
    while seg_start < steps {
        let seg_end = (seg_start + seg_len).min(steps);
        // Policies for steps seg_start..seg_end need V at seg_end.
        let mut value = checkpoints[seg_end.div_ceil(seg_len)].clone();
        debug_assert_eq!(seg_end % seg_len == 0 || seg_end == steps, true);
        let mut policies: Vec<SweepPolicy> = Vec::with_capacity(seg_end - seg_start);
        for k in (seg_start..seg_end).rev() {
            let (v, policy) = machinery.step_back(k, steps, &value)?;
            value = v;
            policies.push(policy);
        }
        policies.reverse();
        for (k, policy) in (seg_start..seg_end).zip(&policies) {
            let _ = k;
            let w = -(&policy.gain * &xi + &policy.offset);
            xi = &machinery.f_mat * &xi + &machinery.g_mat * &w;
            u_nodes.push(w);
        }
        seg_start = seg_end;
    }

    ctx.rollout(x0, &u_nodes)
}

// ---------------------------------------------------------------------
// Evolution operator probes
// ---------------------------------------------------------------------

fn snap_to_grid(value: f64, dt: f64, steps: usize) -> usize {
    ((value / dt).round().max(0.0) as usize).min(steps)
}

/// Sample operator norms of the forward closed-loop family
/// `U_T(t, tau)` (state propagation under `A - G P(T - s)`) or of the
/// adjoint family (propagation under `A* - P(s) B (K*K)^{-1} B*`).
pub fn probe_evolution_operators(
    instance: &OcpInstance,
    taus: &[f64],
    ts: &[f64],
    kind: ProbeKind,
) -> Result<EvolutionOperatorProbe> {
    let problem = &instance.problem;
    let n = problem.state_dim();
    let dt = instance.dt;
    let steps = instance.steps();
    let flow = StoredFlow::new(problem, instance.horizon, dt)?;
    let h = flow.half_steps();
    let a = problem.a().clone();
    let a_t = a.transpose();
    let g = problem.gain().clone();
    let lw = problem.state_chol().l();

    let mut samples = Vec::new();
    for &tau in taus {
        let i0 = snap_to_grid(tau, dt, steps);
        let targets: Vec<usize> = ts
            .iter()
            .map(|&t| snap_to_grid(t, dt, steps))
            .filter(|&i1| i1 >= i0)
            .collect();
        if targets.is_empty() {
            continue;
        }
        let i_max = *targets.iter().max().unwrap();
        let mut e = DMatrix::<f64>::identity(n, n);
        let mut record = |i: usize, e: &DMatrix<f64>| {
            if targets.contains(&i) {
                let norm = match kind {
                    // Weighted norm of the primal map.
                    ProbeKind::Forward => problem.weighted_operator_norm(e),
                    // The adjoint family is propagated in dual
                    // coordinates; the primal map is W^{-1} E W, whose
                    // weighted norm is |L^{-1} E L|.
                    ProbeKind::Adjoint => {
                        let el = e * &lw;
                        let solved = lw.solve_lower_triangular(&el).expect("tri solve");
                        linalg::spectral_norm(&solved)
                    }
                };
                samples.push((i0 as f64 * dt, i as f64 * dt, norm));
            }
        };
        record(i0, &e);
        for i in i0..i_max {
            match kind {
                ProbeKind::Forward => {
                    // d e / ds = (A - G P(T - s)) e, s = i dt.
                    let top = h - 2 * i;
                    e = crate::integrate::rk4_step_mat(&e, dt, |stage, mat| {
                        let p = match stage {
                            Stage::Start => flow.p(top),
                            Stage::Mid => flow.p(top - 1),
                            Stage::End => flow.p(top - 2),
                        };
                        &a * mat - &g * (p * mat)
                    });
                }
                ProbeKind::Adjoint => {
                    // Dual coordinates: d e / ds = (A^T - P(s) G) e.
                    let base = 2 * i;
                    e = crate::integrate::rk4_step_mat(&e, dt, |stage, mat| {
                        let p = match stage {
                            Stage::Start => flow.p(base),
                            Stage::Mid => flow.p(base + 1),
                            Stage::End => flow.p(base + 2),
                        };
                        &a_t * mat - p * (&g * mat)
                    });
                }
            }
            record(i + 1, &e);
        }
    }
    Ok(EvolutionOperatorProbe { kind, samples })
}

/// For each node-sampled input, the gain `|x(T)| / |u|_{L2}` of the
/// zero-initial-state response of the reformulated dynamics
/// `dx/dt = (A - G P(T-t)) x + B u_tilde`; zero inputs give 0.
pub fn probe_input_map(
    instance: &OcpInstance,
    inputs: &[Vec<DVector<f64>>],
) -> Result<Vec<f64>> {
    const OP: &str = "ocp.probe_input_map";
    let problem = &instance.problem;
    let n = problem.state_dim();
    let steps = instance.steps();
    let dt = instance.dt;
    for (idx, u) in inputs.iter().enumerate() {
        if u.len() != steps + 1 {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!(
                    "input {idx} has {} node samples, expected {}",
                    u.len(),
                    steps + 1
                ),
            });
        }
    }
    let flow = HalfGridFlow::new(problem, instance.horizon, dt)?;
    let h = 2 * steps;
    let a = problem.a().clone();
    let g = problem.gain().clone();
    let b = problem.b().clone();
    let mut states: Vec<DVector<f64>> = vec![DVector::zeros(n); inputs.len()];
    let mut cursor = flow.reverse_cursor();
    for k in 0..steps {
        let top = h - 2 * k;
        let (p_now, p_mid, p_next) = cursor.triple(top);
        for (state, u_nodes) in states.iter_mut().zip(inputs) {
            let u_now = &u_nodes[k];
            let u_next = &u_nodes[k + 1];
            let u_half = (u_now + u_next) * 0.5;
            *state = rk4_step_vec(state, dt, |stage, s| {
                let (p, u) = match stage {
                    Stage::Start => (p_now, u_now),
                    Stage::Mid => (p_mid, &u_half),
                    Stage::End => (p_next, u_next),
                };
                &a * s - &g * (p * s) + &b * u
            });
        }
    }
    Ok(states
        .iter()
        .zip(inputs)
        .map(|(xt, u_nodes)| {
            let energy: Vec<f64> = u_nodes.iter().map(|u| problem.input_ip(u, u)).collect();
            let l2 = linalg::trapezoid(&energy, dt).max(0.0).sqrt();
            if l2 == 0.0 {
                0.0
            } else {
                problem.state_norm(xt) / l2
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_instance(
        a: f64,
        b: f64,
        c: f64,
        k: f64,
        z: f64,
        v: f64,
        x0: f64,
        horizon: f64,
        dt: f64,
    ) -> OcpInstance {
        let problem = GenLQProblem::from_scalars(a, b, c, k, z, v).unwrap();
        OcpInstance::new(problem, horizon, DVector::from_element(1, x0), dt).unwrap()
    }

    #[test]
    fn rollout_scalar_exponential() {
        // A = -1, u = 0: x(1) = exp(-1).
        let inst = scalar_instance(-1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1e-3);
        let zero_u = vec![DVector::zeros(1); inst.steps() + 1];
        let bundle = rollout(&inst, &zero_u).unwrap();
        assert_relative_eq!(bundle.x.last().unwrap()[0], (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn zero_instance_rolls_to_zero_cost() {
        let inst = scalar_instance(-1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1e-3);
        let zero_u = vec![DVector::zeros(1); inst.steps() + 1];
        let bundle = rollout(&inst, &zero_u).unwrap();
        assert_eq!(bundle.cost, 0.0);
        assert!(bundle.cost_identity_residual <= 1e-12);
    }

    #[test]
    fn feedback_matches_scalar_closed_form() {
        // A = 0, B = C = K = 1, z = v = 0: u*(t) = -tanh(T - t) x*(t).
        let inst = scalar_instance(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1e-3);
        let bundle = solve_feedback(&inst).unwrap();
        let u0 = bundle.u[0][0];
        assert_relative_eq!(u0, -(3.0f64.tanh()), epsilon = 1e-6);
    }

    #[test]
    fn feedback_from_steady_start_stays_there() {
        let inst = scalar_instance(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1e-3);
        let bundle = solve_feedback(&inst).unwrap();
        assert!(bundle.cost.abs() <= 1e-12);
        for x in &bundle.x {
            assert!(x.norm() <= 1e-12);
        }
        for u in &bundle.u {
            assert!(u.norm() <= 1e-12);
        }
    }

    #[test]
    fn oracle_matches_feedback_on_tracking_problem() {
        let inst = scalar_instance(-1.0, 1.0, 1.0, 1.0, -1.0, 0.0, 0.0, 10.0, 1e-3);
        let fb = solve_feedback(&inst).unwrap();
        let oracle = direct_transcription_oracle(&inst).unwrap();
        let gap = (fb.cost - oracle.cost).abs();
        assert!(
            gap <= 1e-5 * (1.0 + oracle.cost.abs()),
            "cost gap {gap}, fb {}, oracle {}",
            fb.cost,
            oracle.cost
        );
        let sup = fb.sup_state_gap(&oracle);
        assert!(sup <= 1e-4 * (1.0 + oracle.sup_state_norm()), "sup gap {sup}");
    }

    #[test]
    fn oracle_converges_to_closed_form_control() {
        // u*(0) -> -tanh(3) at second order in dt.
        let mut errs = Vec::new();
        let dts = [4e-3, 8e-3, 1.6e-2];
        for &dt in &dts {
            let inst = scalar_instance(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 3.0, dt);
            let oracle = direct_transcription_oracle(&inst).unwrap();
            errs.push((oracle.u[0][0] + 3.0f64.tanh()).abs());
        }
        let logs_dt: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let logs_err: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (slope, _, _) = linalg::line_fit(&logs_dt, &logs_err);
        assert!(slope >= 2.0 - 0.3, "observed order {slope}, errors {errs:?}");
    }

    #[test]
    fn oracle_beats_heuristic_inputs() {
        let inst = scalar_instance(-0.5, 1.0, 1.0, 1.0, -1.0, 0.2, 0.4, 4.0, 2e-3);
        let ctx = FeedbackSynthesis::prepare(&inst.problem, inst.horizon, inst.dt).unwrap();
        let oracle = direct_transcription_with(&ctx, &inst.x0).unwrap();
        // Constant heuristic input on the same grid.
        let heuristic = vec![DVector::from_element(1, 0.3); inst.steps() + 1];
        let rolled = ctx.rollout(&inst.x0, &heuristic).unwrap();
        assert!(oracle.cost <= rolled.cost + 1e-12);
    }

    #[test]
    fn oracle_is_stationary_under_perturbations() {
        use rand::{Rng, SeedableRng};
        let inst = scalar_instance(-0.8, 1.0, 1.0, 1.0, -1.0, 0.0, 0.7, 3.0, 5e-3);
        let ctx = FeedbackSynthesis::prepare(&inst.problem, inst.horizon, inst.dt).unwrap();
        let oracle = direct_transcription_with(&ctx, &inst.x0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let perturbed: Vec<DVector<f64>> = oracle
                .u
                .iter()
                .map(|u| u + DVector::from_fn(1, |_, _| rng.gen_range(-1e-4..1e-4)))
                .collect();
            let rolled = ctx.rollout(&inst.x0, &perturbed).unwrap();
            assert!(rolled.cost >= oracle.cost - 1e-8, "perturbation decreased cost");
        }
    }

    #[test]
    fn cost_identity_for_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let inst = scalar_instance(-1.0, 1.0, 1.0, 1.0, -1.0, 0.3, 0.5, 5.0, 1e-3);
        let ctx = FeedbackSynthesis::prepare(&inst.problem, inst.horizon, inst.dt).unwrap();
        for _ in 0..5 {
            let u: Vec<DVector<f64>> = (0..=inst.steps())
                .map(|_| DVector::from_fn(1, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let bundle = ctx.rollout(&inst.x0, &u).unwrap();
            assert!(
                bundle.cost_identity_residual <= 1e-6 * (1.0 + bundle.cost.abs()),
                "residual {} vs cost {}",
                bundle.cost_identity_residual,
                bundle.cost
            );
        }
    }

    #[test]
    fn feedback_u_tilde_matches_feedforward_expression() {
        let inst = scalar_instance(-1.0, 1.0, 1.0, 1.0, -1.0, 0.0, 0.3, 4.0, 1e-3);
        let ctx = FeedbackSynthesis::prepare(&inst.problem, inst.horizon, inst.dt).unwrap();
        let bundle = ctx.solve_feedback_for(&inst.x0).unwrap();
        for (k, tk) in bundle.u_tilde.iter().enumerate() {
            let expected = ctx.optimal_u_tilde_at(k);
            assert!(
                (tk - &expected).amax() <= 1e-10,
                "node {k}: {tk} vs {expected}"
            );
        }
    }

    #[test]
    fn evolution_probe_identity_and_scalar_decay() {
        let inst = scalar_instance(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 8.0, 1e-2);
        let probe =
            probe_evolution_operators(&inst, &[0.0, 2.0], &[0.0, 2.0, 4.0], ProbeKind::Forward)
                .unwrap();
        // U(tau, tau) = I.
        for &(tau, t, norm) in &probe.samples {
            if tau == t {
                assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
            }
        }
        // |U_T(t, 0)| = cosh(T - t)/cosh(T) <= exp(-t/2) for t <= T/2.
        for &(tau, t, norm) in &probe.samples {
            if tau == 0.0 && t > 0.0 && t <= 4.0 {
                let exact = (8.0f64 - t).cosh() / 8.0f64.cosh();
                assert_relative_eq!(norm, exact, epsilon = 1e-6);
                assert!(norm <= (-t / 2.0).exp());
            }
        }
    }

    #[test]
    fn evolution_probe_submultiplicative() {
        let inst = scalar_instance(0.3, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 6.0, 1e-2);
        let probe = probe_evolution_operators(
            &inst,
            &[0.0, 1.0, 3.0],
            &[1.0, 3.0, 5.0],
            ProbeKind::Forward,
        )
        .unwrap();
        let find = |tau: f64, t: f64| -> f64 {
            probe
                .samples
                .iter()
                .find(|(a, b, _)| (*a - tau).abs() < 1e-12 && (*b - t).abs() < 1e-12)
                .map(|(_, _, n)| *n)
                .unwrap()
        };
        assert!(find(0.0, 5.0) <= find(0.0, 3.0) * find(3.0, 5.0) + 1e-12);
        assert!(find(0.0, 3.0) <= find(0.0, 1.0) * find(1.0, 3.0) + 1e-12);
    }

    #[test]
    fn input_map_zero_gives_zero() {
        let inst = scalar_instance(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 2.0, 1e-2);
        let zero = vec![DVector::zeros(1); inst.steps() + 1];
        let ones = vec![DVector::from_element(1, 1.0); inst.steps() + 1];
        let ratios = probe_input_map(&inst, &[zero, ones]).unwrap();
        assert_eq!(ratios[0], 0.0);
        assert!(ratios[1] > 0.0);
    }
}
