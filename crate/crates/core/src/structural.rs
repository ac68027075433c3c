//! Structural tests: Hautus/PBH stabilizability and detectability, gain
//! synthesis through the Riccati equation, and sampled certificates for
//! the final-state energy estimates
//!
//! ```text
//! |x(T)|^2 <= M ( int |Cx|^2 + |u|^2 dt + |x0|^2 )        (detectability)
//! |p(T)|^2 <= M ( int |B*p|^2 + |f|^2 dt + |p0|^2 )       (stabilizability)
//! ```
//!
//! The constants are estimated by maximizing the ratio over seeded
//! random initial states and piecewise-constant inputs; the returned
//! value certifies the inequality on the sample set, not globally.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::rk4_step_lti;
use crate::linalg::{self, RANK_RTOL};
use crate::lti_core::{GenLQProblem, OperatorTag};
use crate::riccati;

/// Hurwitz margin required of synthesized closed loops.
pub const HURWITZ_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct StructuralReport {
    pub stabilizable: bool,
    pub detectable: bool,
    pub spectral_abscissa_open_loop: f64,
    pub stabilizing_gain: Option<DMatrix<f64>>,
    pub injection_gain: Option<DMatrix<f64>>,
    pub closed_loop_abscissa_state: Option<f64>,
    pub closed_loop_abscissa_output: Option<f64>,
    pub detectability_constant: Option<f64>,
    pub stabilizability_constant: Option<f64>,
}

fn matrix_rows(m: &DMatrix<f64>) -> serde_json::Value {
    serde_json::json!((0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

impl StructuralReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "stabilizable": self.stabilizable,
            "detectable": self.detectable,
            "spectral_abscissa_open_loop": self.spectral_abscissa_open_loop,
            "stabilizing_gain": self.stabilizing_gain.as_ref().map(matrix_rows),
            "injection_gain": self.injection_gain.as_ref().map(matrix_rows),
            "closed_loop_abscissa_state": self.closed_loop_abscissa_state,
            "closed_loop_abscissa_output": self.closed_loop_abscissa_output,
            "detectability_constant": self.detectability_constant,
            "stabilizability_constant": self.stabilizability_constant,
        })
    }
}

/// PBH test over the eigenvalues with nonnegative real part (up to a
/// scale-relative margin, so neutrally stable modes are included).
fn pbh_full_rank(sys: &DMatrix<f64>, inject: &DMatrix<f64>, rtol: f64) -> bool {
    let n = sys.nrows();
    let margin = 1e-9 * (1.0 + linalg::spectral_norm(sys));
    for lambda in sys.complex_eigenvalues().iter() {
        if lambda.re < -margin {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + inject.ncols());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(-sys[(i, j)], 0.0);
            }
            m[(i, i)] += lambda;
        }
        for i in 0..n {
            for j in 0..inject.ncols() {
                m[(i, n + j)] = Complex::new(inject[(i, j)], 0.0);
            }
        }
        if linalg::rank_complex(&m, rtol) < n {
            return false;
        }
    }
    true
}

/// Hautus test for stabilizability of (A, B).
pub fn hautus_stabilizable(problem: &GenLQProblem) -> bool {
    hautus_stabilizable_with_rtol(problem, RANK_RTOL)
}

pub fn hautus_stabilizable_with_rtol(problem: &GenLQProblem, rtol: f64) -> bool {
    pbh_full_rank(problem.a(), problem.b(), rtol)
}

/// Hautus test for detectability of (A, C), run on the weighted adjoint
/// pair (A*, C*).
pub fn hautus_detectable(problem: &GenLQProblem) -> bool {
    hautus_detectable_with_rtol(problem, RANK_RTOL)
}

pub fn hautus_detectable_with_rtol(problem: &GenLQProblem, rtol: f64) -> bool {
    pbh_full_rank(
        &problem.adjoint(OperatorTag::A),
        &problem.adjoint(OperatorTag::C),
        rtol,
    )
}

/// Synthesize a stabilizing state feedback F (A + BF Hurwitz) from the
/// ARE of (A, B, C, K) and an output injection L (A + LC Hurwitz) from
/// the dual ARE on (A^T, C^T, B^T, I).
pub fn synthesize_gains(problem: &GenLQProblem) -> Result<StructuralReport> {
    const OP: &str = "structural.synthesize_gains";
    let stabilizable = hautus_stabilizable(problem);
    let detectable = hautus_detectable(problem);
    if !stabilizable {
        return Err(Error::NotStabilizable { op: OP });
    }
    if !detectable {
        return Err(Error::NotDetectable { op: OP });
    }
    let (p_min, _) = riccati::solve_are(problem)?;
    // F = -(K^T K)^{-1} B^T P
    let mut f = problem.b().transpose() * &p_min;
    f = -solve_ktk_matrix(problem, &f);
    let closed_state = problem.a() + problem.b() * &f;
    let abscissa_state = linalg::spectral_abscissa(&closed_state);

    // Dual problem (A^T, C^T, B^T, I) in Euclidean geometry.
    let dual = GenLQProblem::new(
        problem.a().transpose(),
        problem.c().transpose(),
        problem.b().transpose(),
        DMatrix::identity(problem.output_dim(), problem.output_dim()),
        DVector::zeros(problem.state_dim()),
        DVector::zeros(problem.output_dim()),
        None,
        None,
    )?;
    let (p_dual, _) = riccati::solve_are(&dual)?;
    let l = -(&p_dual * problem.c().transpose());
    let closed_output = problem.a() + &l * problem.c();
    let abscissa_output = linalg::spectral_abscissa(&closed_output);

    if abscissa_state >= -HURWITZ_MARGIN {
        return Err(Error::HypothesesFail {
            op: OP,
            what: format!("A + BF not Hurwitz (abscissa {abscissa_state:.3e})"),
        });
    }
    if abscissa_output >= -HURWITZ_MARGIN {
        return Err(Error::HypothesesFail {
            op: OP,
            what: format!("A + LC not Hurwitz (abscissa {abscissa_output:.3e})"),
        });
    }

    Ok(StructuralReport {
        stabilizable,
        detectable,
        spectral_abscissa_open_loop: linalg::spectral_abscissa(problem.a()),
        stabilizing_gain: Some(f),
        injection_gain: Some(l),
        closed_loop_abscissa_state: Some(abscissa_state),
        closed_loop_abscissa_output: Some(abscissa_output),
        detectability_constant: None,
        stabilizability_constant: None,
    })
}

fn solve_ktk_matrix(problem: &GenLQProblem, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for j in 0..rhs.ncols() {
        let col = problem.solve_ktk(&rhs.column(j).into_owned());
        out.set_column(j, &col);
    }
    out
}

fn internal_dt(horizon: f64, stiffness: f64) -> f64 {
    let dt = (0.5 / (stiffness + 1.0)).min(horizon / 64.0);
    let steps = (horizon / dt).ceil().max(1.0);
    horizon / steps
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit_state(problem: &GenLQProblem, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = problem.state_dim();
    let mut x = DVector::from_fn(n, |_, _| standard_normal(rng));
    let norm = problem.state_norm(&x).max(1e-300);
    x /= norm;
    x
}

/// Ratio `|x(T)|^2 / (int |Cx|^2 + |u|^2 dt + |x0|^2)` for a given
/// initial state and piecewise-constant input (one column per grid
/// cell). Norms follow the problem geometry: state and input weighted,
/// output Euclidean.
pub fn detectability_sample_ratio(
    problem: &GenLQProblem,
    x0: &DVector<f64>,
    u_cells: &DMatrix<f64>,
    horizon: f64,
) -> Result<f64> {
    const OP: &str = "structural.detectability_ratio";
    let steps = u_cells.ncols();
    if steps == 0 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: "need at least one input cell".into(),
        });
    }
    let dt = horizon / steps as f64;
    let a = problem.a();
    let b = problem.b();
    let mut x = x0.clone();
    let mut output_sq = vec![(problem.c() * &x).norm_squared()];
    let mut input_energy = 0.0;
    for k in 0..steps {
        let u = u_cells.column(k).into_owned();
        input_energy += dt * problem.input_ip(&u, &u);
        x = rk4_step_lti(a, b, &x, &u, &u, &u, dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEncountered {
                op: OP,
                t: (k + 1) as f64 * dt,
            });
        }
        output_sq.push((problem.c() * &x).norm_squared());
    }
    let denom = linalg::trapezoid(&output_sq, dt)
        + input_energy
        + problem.state_ip(x0, x0);
    Ok(problem.state_ip(&x, &x) / denom)
}

/// Dual ratio `|p(T)|^2 / (int |B*p|^2 + |f|^2 dt + |p0|^2)` along
/// `dp/dt = A* p + C* f` with piecewise-constant `f`.
pub fn stabilizability_sample_ratio(
    problem: &GenLQProblem,
    p0: &DVector<f64>,
    f_cells: &DMatrix<f64>,
    horizon: f64,
) -> Result<f64> {
    const OP: &str = "structural.stabilizability_ratio";
    let steps = f_cells.ncols();
    if steps == 0 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: "need at least one input cell".into(),
        });
    }
    let dt = horizon / steps as f64;
    let a_star = problem.adjoint(OperatorTag::A);
    let c_star = problem.adjoint(OperatorTag::C);
    let b_star = problem.adjoint(OperatorTag::B);
    let mut p = p0.clone();
    let bp0 = &b_star * &p;
    let mut bp_sq = vec![problem.input_ip(&bp0, &bp0)];
    let mut f_energy = 0.0;
    for k in 0..steps {
        let f = f_cells.column(k).into_owned();
        f_energy += dt * f.norm_squared();
        p = rk4_step_lti(&a_star, &c_star, &p, &f, &f, &f, dt);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEncountered {
                op: OP,
                t: (k + 1) as f64 * dt,
            });
        }
        let bp = &b_star * &p;
        bp_sq.push(problem.input_ip(&bp, &bp));
    }
    let denom = linalg::trapezoid(&bp_sq, dt) + f_energy + problem.state_ip(p0, p0);
    Ok(problem.state_ip(&p, &p) / denom)
}

fn estimate_constant(
    problem: &GenLQProblem,
    horizon: f64,
    samples: usize,
    seed: u64,
    input_dim: usize,
    ratio: impl Fn(&DVector<f64>, &DMatrix<f64>) -> Result<f64> + Sync,
) -> Result<f64> {
    let stiffness = linalg::spectral_norm(problem.a());
    let dt = internal_dt(horizon, stiffness);
    let steps = (horizon / dt).round() as usize;
    let ratios: Result<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let x0 = random_unit_state(problem, &mut rng);
            // Every second sample drives with zero input so pure decay
            // ratios are always in the pool.
            let cells = if i % 2 == 0 {
                DMatrix::from_fn(input_dim, steps, |_, _| standard_normal(&mut rng))
            } else {
                DMatrix::zeros(input_dim, steps)
            };
            ratio(&x0, &cells)
        })
        .collect();
    ratios?
        .into_iter()
        .reduce(f64::max)
        .ok_or(Error::InvalidParameter {
            op: "structural.estimate_constant",
            what: "need at least one sample".into(),
        })
}

/// Empirical detectability constant of Lemma-type estimate (13): the
/// max ratio over `samples` seeded draws.
pub fn estimate_detectability_constant(
    problem: &GenLQProblem,
    horizon: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    const OP: &str = "structural.estimate_detectability_constant";
    if !hautus_detectable(problem) {
        return Err(Error::NotDetectable { op: OP });
    }
    estimate_constant(
        problem,
        horizon,
        samples,
        seed,
        problem.input_dim(),
        |x0, cells| detectability_sample_ratio(problem, x0, cells, horizon),
    )
}

/// Empirical stabilizability constant of the dual estimate (14).
pub fn estimate_stabilizability_constant(
    problem: &GenLQProblem,
    horizon: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    const OP: &str = "structural.estimate_stabilizability_constant";
    if !hautus_stabilizable(problem) {
        return Err(Error::NotStabilizable { op: OP });
    }
    estimate_constant(
        problem,
        horizon,
        samples,
        seed,
        problem.output_dim(),
        |p0, cells| stabilizability_sample_ratio(problem, p0, cells, horizon),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, c: f64) -> GenLQProblem {
        GenLQProblem::from_scalars(a, b, c, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn hautus_scalar_cases() {
        assert!(hautus_stabilizable(&scalar(0.0, 1.0, 1.0)));
        assert!(!hautus_stabilizable(&scalar(1.0, 0.0, 1.0)));
        assert!(hautus_stabilizable(&scalar(-1.0, 0.0, 1.0))); // stable mode needs no control
        assert!(hautus_detectable(&scalar(0.0, 1.0, 1.0)));
        assert!(!hautus_detectable(&scalar(1.0, 1.0, 0.0)));
        assert!(hautus_detectable(&scalar(-1.0, 1.0, 0.0)));
    }

    #[test]
    fn synthesize_gains_scalar() {
        let report = synthesize_gains(&scalar(0.0, 1.0, 1.0)).unwrap();
        let f = report.stabilizing_gain.unwrap();
        assert_relative_eq!(f[(0, 0)], -1.0, epsilon = 1e-9);
        assert_relative_eq!(
            report.closed_loop_abscissa_state.unwrap(),
            -1.0,
            epsilon = 1e-9
        );

        let report = synthesize_gains(&scalar(1.0, 1.0, 1.0)).unwrap();
        let f = report.stabilizing_gain.unwrap();
        assert_relative_eq!(f[(0, 0)], -(1.0 + 2.0f64.sqrt()), epsilon = 1e-9);
        assert_relative_eq!(
            report.closed_loop_abscissa_state.unwrap(),
            -(2.0f64.sqrt()),
            epsilon = 1e-9
        );
        assert!(report.injection_gain.is_some());
        assert!(report.closed_loop_abscissa_output.unwrap() < -HURWITZ_MARGIN);
    }

    #[test]
    fn synthesize_gains_requires_hypotheses() {
        let err = synthesize_gains(&scalar(1.0, 0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable { .. }), "{err}");
        let err = synthesize_gains(&scalar(1.0, 1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NotDetectable { .. }), "{err}");
    }

    #[test]
    fn detectability_ratio_pure_decay() {
        // A = -1, B = 0, C = 0: ratio = exp(-2) with unit initial state.
        let p = scalar(-1.0, 0.0, 0.0);
        let x0 = DVector::from_element(1, 1.0);
        let cells = DMatrix::zeros(1, 200);
        let r = detectability_sample_ratio(&p, &x0, &cells, 1.0).unwrap();
        assert_relative_eq!(r, (-2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn detectability_ratio_integrator_with_output() {
        // A = 0, C = 1, B = 1, u = 0: x = 1, ratio = 1/(1+1).
        let p = scalar(0.0, 1.0, 1.0);
        let x0 = DVector::from_element(1, 1.0);
        let cells = DMatrix::zeros(1, 200);
        let r = detectability_sample_ratio(&p, &x0, &cells, 1.0).unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn stabilizability_ratio_cases() {
        let p = scalar(-1.0, 0.0, 0.0);
        let p0 = DVector::from_element(1, 1.0);
        let cells = DMatrix::zeros(1, 200);
        let r = stabilizability_sample_ratio(&p, &p0, &cells, 1.0).unwrap();
        assert_relative_eq!(r, (-2.0f64).exp(), epsilon = 1e-10);

        let p = scalar(0.0, 1.0, 1.0);
        let r = stabilizability_sample_ratio(&p, &p0, &cells, 1.0).unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn estimators_agree_on_dual_pair() {
        // detect-estimator on (A^T, C^T, B^T) equals stab-estimator on
        // (A, B, C) with matched seeds in Euclidean geometry.
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -1.5]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let p = GenLQProblem::new(
            a.clone(),
            b.clone(),
            c.clone(),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            None,
            None,
        )
        .unwrap();
        let dual = GenLQProblem::new(
            a.transpose(),
            c.transpose(),
            b.transpose(),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            None,
            None,
        )
        .unwrap();
        let m_stab = estimate_stabilizability_constant(&p, 2.0, 32, 7).unwrap();
        let m_dual_detect = estimate_detectability_constant(&dual, 2.0, 32, 7).unwrap();
        assert_relative_eq!(m_stab, m_dual_detect, epsilon = 1e-12);
    }

    #[test]
    fn estimator_requires_hypothesis() {
        let err = estimate_detectability_constant(&scalar(1.0, 1.0, 0.0), 1.0, 4, 0).unwrap_err();
        assert!(matches!(err, Error::NotDetectable { .. }), "{err}");
    }

    #[test]
    fn estimator_is_deterministic() {
        let p = scalar(-0.5, 1.0, 1.0);
        let m1 = estimate_detectability_constant(&p, 2.0, 64, 3).unwrap();
        let m2 = estimate_detectability_constant(&p, 2.0, 64, 3).unwrap();
        assert_eq!(m1, m2);
    }
}
