//! Bundled example systems: a 1-D heat bar with a localized actuator and
//! averaged temperature sensor, a locally actuated elastic string in its
//! energy inner product, the diagonal family on which the adjoint steady
//! state blows up with the truncation order, and a seeded random family.
//!
//! Indicator profiles are discretized by exact cell-overlap fractions,
//! so half-widths smaller than the mesh width remain meaningful.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti_core::GenLQProblem;
use crate::structural;

/// Default spectral abscissa the random family is shifted to; slightly
/// unstable so the Hautus tests are exercised rather than vacuous.
pub const DEFAULT_RANDOM_ABSCISSA: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    Heat {
        n: usize,
        x0_center: f64,
        eps: f64,
        x1_center: f64,
        ups: f64,
        y0: f64,
    },
    String {
        n: usize,
        xi: f64,
        eta: f64,
        u0: f64,
    },
    AppendixB {
        n: usize,
    },
    Random {
        n: usize,
        m: usize,
        p: usize,
        seed: u64,
        #[serde(default)]
        spectral_abscissa: Option<f64>,
        #[serde(default = "default_true")]
        ensure_stabilizable: bool,
        #[serde(default = "default_true")]
        ensure_detectable: bool,
    },
}

fn default_true() -> bool {
    true
}

pub fn build(spec: &ModelSpec) -> Result<GenLQProblem> {
    match *spec {
        ModelSpec::Heat {
            n,
            x0_center,
            eps,
            x1_center,
            ups,
            y0,
        } => build_heat(n, x0_center, eps, x1_center, ups, y0),
        ModelSpec::String { n, xi, eta, u0 } => build_string(n, xi, eta, u0),
        ModelSpec::AppendixB { n } => build_appendix_b(n),
        ModelSpec::Random {
            n,
            m,
            p,
            seed,
            spectral_abscissa,
            ensure_stabilizable,
            ensure_detectable,
        } => build_random(
            n,
            m,
            p,
            seed,
            spectral_abscissa.unwrap_or(DEFAULT_RANDOM_ABSCISSA),
            ensure_stabilizable,
            ensure_detectable,
        ),
    }
}

/// Length of the overlap of `[lo, hi]` with the cell of half-width `h/2`
/// around node `x`.
fn cell_overlap(x: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let a = (x - h / 2.0).max(lo);
    let b = (x + h / 2.0).min(hi);
    (b - a).max(0.0)
}

/// Dirichlet second-difference matrix `(1/h^2) tridiag(1, -2, 1)`.
fn dirichlet_laplacian(n: usize, h: f64) -> DMatrix<f64> {
    let mut d2 = DMatrix::zeros(n, n);
    let s = 1.0 / (h * h);
    for i in 0..n {
        d2[(i, i)] = -2.0 * s;
        if i > 0 {
            d2[(i, i - 1)] = s;
        }
        if i + 1 < n {
            d2[(i, i + 1)] = s;
        }
    }
    d2
}

fn check_window(op: &'static str, name: &str, center: f64, half: f64) -> Result<()> {
    if !(half > 0.0 && center - half > 0.0 && center + half < 1.0) {
        return Err(Error::InvalidParameter {
            op,
            what: format!("{name} window [{}, {}] must lie inside (0, 1)", center - half, center + half),
        });
    }
    Ok(())
}

/// Heat bar on (0, 1) with Dirichlet ends, point-like actuator of
/// half-width `eps` around `x0_center`, mean-value sensor of half-width
/// `ups` around `x1_center`, and tracking cost `|Ch - y0|^2 + |u|^2`.
///
/// The state weight `h I` realizes the discrete L2 inner product; the
/// tracking cost expands to the generalized form with `z = -C* y0` and
/// the additive constant dropped.
pub fn build_heat(
    n: usize,
    x0_center: f64,
    eps: f64,
    x1_center: f64,
    ups: f64,
    y0: f64,
) -> Result<GenLQProblem> {
    const OP: &str = "models.build_heat";
    if n < 2 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("n must be >= 2, got {n}"),
        });
    }
    check_window(OP, "actuator", x0_center, eps)?;
    check_window(OP, "sensor", x1_center, ups)?;
    let h = 1.0 / (n as f64 + 1.0);
    let a = dirichlet_laplacian(n, h);
    let b = DMatrix::from_fn(n, 1, |i, _| {
        let x = (i as f64 + 1.0) * h;
        cell_overlap(x, h, x0_center - eps, x0_center + eps) / (2.0 * eps * h)
    });
    let c = DMatrix::from_fn(1, n, |_, j| {
        let x = (j as f64 + 1.0) * h;
        cell_overlap(x, h, x1_center - ups, x1_center + ups) / (2.0 * ups)
    });
    let state_weight = DMatrix::from_diagonal_element(n, n, h);
    // z = -C* y0 = -(1/h) C^T y0.
    let z = DVector::from_fn(n, |i, _| -c[(0, i)] * y0 / h);
    GenLQProblem::new(
        a,
        b,
        c,
        DMatrix::identity(1, 1),
        z,
        DVector::zeros(1),
        Some(state_weight),
        None,
    )
}

/// Elastic string on (0, 1) with Dirichlet ends in the energy inner
/// product, velocity damping cost and input tracking toward the constant
/// profile `u0` on the whole domain; the control acts through the
/// indicator of `[xi, eta]`.
///
/// State is (position f, velocity g) on the interior nodes. The energy
/// inner product `int f1' f2' + g1 g2` is realized by the block weight
/// `diag(S, h I)` with `S = -h D2`. The continuum identity weighting
/// `K = I` on L2(0, 1) becomes `K = sqrt(h) I` against the Euclidean
/// codomain, so `K*K = I` as an operator on the weighted input space;
/// the output map embeds the same scaling, `C = [0, sqrt(h) I]`.
pub fn build_string(n: usize, xi: f64, eta: f64, u0: f64) -> Result<GenLQProblem> {
    const OP: &str = "models.build_string";
    if n < 2 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("n must be >= 2, got {n}"),
        });
    }
    if !(0.0 <= xi && xi < eta && eta <= 1.0) {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("need 0 <= xi < eta <= 1, got xi = {xi}, eta = {eta}"),
        });
    }
    let h = 1.0 / (n as f64 + 1.0);
    let d2 = dirichlet_laplacian(n, h);
    let sqrt_h = h.sqrt();

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    a.view_mut((n, 0), (n, n)).copy_from(&d2);

    let mut b = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        let x = (i as f64 + 1.0) * h;
        b[(n + i, i)] = cell_overlap(x, h, xi, eta) / h;
    }

    let mut c = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        c[(i, n + i)] = sqrt_h;
    }

    let stiffness = -(&d2 * h);
    let mut state_weight = DMatrix::zeros(2 * n, 2 * n);
    state_weight.view_mut((0, 0), (n, n)).copy_from(&stiffness);
    state_weight
        .view_mut((n, n), (n, n))
        .copy_from(&DMatrix::from_diagonal_element(n, n, h));

    let k = DMatrix::from_diagonal_element(n, n, sqrt_h);
    let input_weight = DMatrix::from_diagonal_element(n, n, h);
    let v = DVector::from_element(n, -u0);

    GenLQProblem::new(
        a,
        b,
        c,
        k,
        DVector::zeros(2 * n),
        v,
        Some(state_weight),
        Some(input_weight),
    )
}

/// Truncation of the diagonal family with `A = 0`, `C = K = I`,
/// `B = diag(1, 1/2, ..., 1/n)`, `z = 0`, `v = (1, 1/sqrt(2), ...)`.
pub fn build_appendix_b(n: usize) -> Result<GenLQProblem> {
    const OP: &str = "models.build_appendix_b";
    if n < 1 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: "n must be >= 1".into(),
        });
    }
    let b = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / (i as f64 + 1.0)
        } else {
            0.0
        }
    });
    let v = DVector::from_fn(n, |i, _| 1.0 / ((i as f64 + 1.0).sqrt()));
    GenLQProblem::new(
        DMatrix::zeros(n, n),
        b,
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        DVector::zeros(n),
        v,
        None,
        None,
    )
}

/// Seeded random family with the spectral abscissa of A shifted to
/// `abscissa`; rejection-samples until the requested Hautus properties
/// hold.
pub fn build_random(
    n: usize,
    m: usize,
    p: usize,
    seed: u64,
    abscissa: f64,
    ensure_stabilizable: bool,
    ensure_detectable: bool,
) -> Result<GenLQProblem> {
    const OP: &str = "models.build_random";
    const MAX_ATTEMPTS: usize = 1000;
    if n < 1 || m < 1 || p < 1 {
        return Err(Error::InvalidParameter {
            op: OP,
            what: format!("dimensions must be >= 1, got n = {n}, m = {m}, p = {p}"),
        });
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut normal = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        let mut a = normal(n, n);
        let shift = abscissa - linalg::spectral_abscissa(&a);
        for i in 0..n {
            a[(i, i)] += shift;
        }
        let b = normal(n, m);
        let c = normal(p, n);
        let perturb = normal(m, m);
        let sym = perturb.transpose() * &perturb;
        let k = DMatrix::identity(m, m) + &sym * (0.2 / (1.0 + linalg::spectral_norm(&sym)));
        let z = DVector::from_fn(n, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(m, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let problem = GenLQProblem::new(a, b, c, k, z, v, None, None)?;
        if ensure_stabilizable && !structural::hautus_stabilizable(&problem) {
            continue;
        }
        if ensure_detectable && !structural::hautus_detectable(&problem) {
            continue;
        }
        return Ok(problem);
    }
    Err(Error::GenerationExhausted {
        op: OP,
        attempts: MAX_ATTEMPTS,
    })
}
