//! Fixed-step classical Runge-Kutta stepping shared by the Riccati,
//! rollout and evolution-operator code paths.
//!
//! Every consumer advances on the same uniform grid; time-varying
//! coefficients are supplied per stage (start, midpoint, end of the
//! step), which keeps the one-step maps of different modules bit-exactly
//! consistent with each other.

use nalgebra::{DMatrix, DVector};

/// Position of an RK4 stage inside one step of length `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Start,
    Mid,
    End,
}

/// One classical RK4 step for a vector state.
pub fn rk4_step_vec<F>(x: &DVector<f64>, dt: f64, mut rhs: F) -> DVector<f64>
where
    F: FnMut(Stage, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(Stage::Start, x);
    let k2 = rhs(Stage::Mid, &(x + &k1 * (dt / 2.0)));
    let k3 = rhs(Stage::Mid, &(x + &k2 * (dt / 2.0)));
    let k4 = rhs(Stage::End, &(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// One classical RK4 step for a matrix state.
pub fn rk4_step_mat<F>(x: &DMatrix<f64>, dt: f64, mut rhs: F) -> DMatrix<f64>
where
    F: FnMut(Stage, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = rhs(Stage::Start, x);
    let k2 = rhs(Stage::Mid, &(x + &k1 * (dt / 2.0)));
    let k3 = rhs(Stage::Mid, &(x + &k2 * (dt / 2.0)));
    let k4 = rhs(Stage::End, &(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// RK4 step for the forced linear system `dx/dt = A x + B u(t)` with the
/// input sampled at the stage times (`u_mid` is used for both interior
/// stages). This map defines the rollout discretization; the direct
/// transcription oracle derives its step matrices from it.
pub fn rk4_step_lti(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    u0: &DVector<f64>,
    u_mid: &DVector<f64>,
    u1: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    rk4_step_vec(x, dt, |stage, s| {
        let u = match stage {
            Stage::Start => u0,
            Stage::Mid => u_mid,
            Stage::End => u1,
        };
        a * s + b * u
    })
}

/// Exact step matrices of `rk4_step_lti` for inputs that are linear on
/// the step: `x_{k+1} = phi x_k + gamma_l u_k + gamma_r u_{k+1}`.
pub fn lti_step_maps(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let zero_u = DVector::zeros(m);
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        phi.set_column(j, &rk4_step_lti(a, b, &e, &zero_u, &zero_u, &zero_u, dt));
    }
    let zero_x = DVector::zeros(n);
    let mut gamma_l = DMatrix::zeros(n, m);
    let mut gamma_r = DMatrix::zeros(n, m);
    for j in 0..m {
        let e = DVector::from_fn(m, |i, _| if i == j { 1.0 } else { 0.0 });
        let half = &e * 0.5;
        gamma_l.set_column(j, &rk4_step_lti(a, b, &zero_x, &e, &half, &zero_u, dt));
        gamma_r.set_column(j, &rk4_step_lti(a, b, &zero_x, &zero_u, &half, &e, dt));
    }
    (phi, gamma_l, gamma_r)
}

/// Cubic-Hermite midpoint of a trajectory step given endpoint values and
/// slopes; fourth-order accurate, used to sample node-stepped
/// trajectories on the half grid.
pub fn hermite_midpoint(
    x0: &DVector<f64>,
    f0: &DVector<f64>,
    x1: &DVector<f64>,
    f1: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    (x0 + x1) * 0.5 + (f0 - f1) * (dt / 8.0)
}
