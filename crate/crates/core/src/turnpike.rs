//! Turnpike diagnostics: deviation envelopes `M (e^{-wt} + e^{-w(T-t)})`
//! over batches of horizons and initial states, window averages, and the
//! decay of the transformed input over initial subintervals.
//!
//! Deviations are measured in the problem's weighted norms. Samples
//! below `DEVIATION_FLOOR` sit at the numerical noise level; they are
//! excluded both from the envelope regression and from the domination
//! check.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti_core::{GenLQProblem, OcpInstance};
use crate::ocp::FeedbackSynthesis;
use crate::structural;

/// Deviations below this are treated as numerically zero.
pub const DEVIATION_FLOOR: f64 = 1e-12;

/// Fitted envelope constants of the exponential turnpike bound.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Envelope {
    pub m: f64,
    pub w: f64,
}

impl Envelope {
    pub fn value(&self, t: f64, horizon: f64) -> f64 {
        self.m * ((-self.w * t).exp() + (-self.w * (horizon - t)).exp())
    }
}

/// Deviation time series of one (horizon, initial state) run.
#[derive(Debug, Clone)]
pub struct DeviationSeries {
    pub horizon: f64,
    pub x0_index: usize,
    pub ts: Vec<f64>,
    pub dev_x: Vec<f64>,
    pub dev_u: Vec<f64>,
}

/// Deviation of a window average from the steady state.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WindowAverage {
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub x_deviation: f64,
    pub u_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct TurnpikeReport {
    pub horizons: Vec<f64>,
    /// Per horizon: max over the x0 set of
    /// `|x*(T/2) - x_e| + |u*(T/2) - u_e|`.
    pub mid_deviation: Vec<f64>,
    pub envelope: Option<Envelope>,
    pub integral_averages: Vec<WindowAverage>,
    /// All sampled deviations sit at the numerical floor (e.g. starting
    /// on the turnpike with zero linear costs).
    pub at_turnpike_everywhere: bool,
    pub series: Vec<DeviationSeries>,
}

impl TurnpikeReport {
    /// Smallest multiplier on `envelope.m` that makes the envelope
    /// dominate every above-floor sample of the given series set.
    pub fn required_inflation(&self, envelope: &Envelope) -> f64 {
        let mut factor: f64 = 1.0;
        for s in &self.series {
            for ((t, dx), du) in s.ts.iter().zip(&s.dev_x).zip(&s.dev_u) {
                let d = dx + du;
                if d < DEVIATION_FLOOR {
                    continue;
                }
                factor = factor.max(d / envelope.value(*t, s.horizon));
            }
        }
        factor
    }
}

fn tail_fit(samples: &[(f64, f64)]) -> Option<f64> {
    if samples.len() < 8 {
        return None;
    }
    let xs: Vec<f64> = samples.iter().map(|(t, _)| *t).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, d)| d.ln()).collect();
    let (slope, _, _) = linalg::line_fit(&xs, &ys);
    Some(-slope)
}

/// Solve each (x0, horizon) pair by the explicit feedback route and fit
/// a single two-sided exponential envelope across all runs. Tail
/// regressions use `t <= T/3` (left) and `t >= 2T/3` (right, against
/// `T - t`); a tail whose fitted rate is not positive carries no rise
/// and is dropped, `w` is the smallest surviving rate, and `m` is
/// inflated so the bound holds pointwise on every above-floor sample.
pub fn analyze(
    problem: &GenLQProblem,
    x0_set: &[DVector<f64>],
    horizons: &[f64],
    dt: f64,
    windows: &[(f64, f64)],
) -> Result<TurnpikeReport> {
    const OP: &str = "turnpike.analyze";
    if !structural::hautus_stabilizable(problem) {
        return Err(Error::HypothesesFail {
            op: OP,
            what: "(A, B) fails the Hautus stabilizability test".into(),
        });
    }
    if !structural::hautus_detectable(problem) {
        return Err(Error::HypothesesFail {
            op: OP,
            what: "(A, C) fails the Hautus detectability test".into(),
        });
    }
    if x0_set.is_empty() || horizons.is_empty() {
        return Err(Error::InvalidParameter {
            op: OP,
            what: "need at least one initial state and one horizon".into(),
        });
    }
    for (a, b) in windows {
        if !(0.0 <= *a && a < b && *b <= 1.0) {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!("window ({a}, {b}) must satisfy 0 <= a < b <= 1"),
            });
        }
    }

    struct RunOutput {
        series: Vec<DeviationSeries>,
        mid: f64,
        averages: Vec<WindowAverage>,
    }

    let per_horizon: Result<Vec<RunOutput>> = horizons
        .par_iter()
        .map(|&horizon| {
            let ctx = FeedbackSynthesis::prepare(problem, horizon, dt)?;
            let bundles = ctx.solve_feedback_batch(x0_set)?;
            let x_e = &ctx.steady.x_e;
            let u_e = &ctx.steady.u_e;
            let mut series = Vec::with_capacity(bundles.len());
            let mut mid: f64 = 0.0;
            for (idx, bundle) in bundles.iter().enumerate() {
                let dev_x: Vec<f64> = bundle
                    .x
                    .iter()
                    .map(|x| problem.state_norm(&(x - x_e)))
                    .collect();
                let dev_u: Vec<f64> = bundle
                    .u
                    .iter()
                    .map(|u| problem.input_norm(&(u - u_e)))
                    .collect();
                let mid_idx = bundle.grid.len() / 2;
                mid = mid.max(dev_x[mid_idx] + dev_u[mid_idx]);
                series.push(DeviationSeries {
                    horizon,
                    x0_index: idx,
                    ts: bundle.grid.clone(),
                    dev_x,
                    dev_u,
                });
            }
            // Window averages for the first initial state.
            let bundle = &bundles[0];
            let steps = bundle.grid.len() - 1;
            let averages = windows
                .iter()
                .map(|&(a, b)| {
                    let ia = ((a * horizon / dt).round() as usize).min(steps);
                    let ib = ((b * horizon / dt).round() as usize).min(steps);
                    let span = (ib - ia) as f64 * dt;
                    let n = problem.state_dim();
                    let m = problem.input_dim();
                    let mut x_acc = DVector::zeros(n);
                    let mut u_acc = DVector::zeros(m);
                    for i in ia..=ib {
                        let wgt = if i == ia || i == ib { 0.5 } else { 1.0 };
                        x_acc += &bundle.x[i] * (wgt * dt);
                        u_acc += &bundle.u[i] * (wgt * dt);
                    }
                    x_acc /= span;
                    u_acc /= span;
                    WindowAverage {
                        horizon,
                        a,
                        b,
                        x_deviation: problem.state_norm(&(&x_acc - x_e)),
                        u_deviation: problem.input_norm(&(&u_acc - u_e)),
                    }
                })
                .collect();
            Ok(RunOutput {
                series,
                mid,
                averages,
            })
        })
        .collect();
    let per_horizon = per_horizon?;

    let mut series = Vec::new();
    let mut mid_deviation = Vec::new();
    let mut integral_averages = Vec::new();
    for out in per_horizon {
        mid_deviation.push(out.mid);
        integral_averages.extend(out.averages);
        series.extend(out.series);
    }

    // Pool tail samples across every run.
    let mut left: Vec<(f64, f64)> = Vec::new();
    let mut right: Vec<(f64, f64)> = Vec::new();
    let mut any_above_floor = false;
    for s in &series {
        for ((t, dx), du) in s.ts.iter().zip(&s.dev_x).zip(&s.dev_u) {
            let d = dx + du;
            if d < DEVIATION_FLOOR {
                continue;
            }
            any_above_floor = true;
            if *t <= s.horizon / 3.0 {
                left.push((*t, d));
            }
            if *t >= 2.0 * s.horizon / 3.0 {
                right.push((s.horizon - t, d));
            }
        }
    }

    let mut report = TurnpikeReport {
        horizons: horizons.to_vec(),
        mid_deviation,
        envelope: None,
        integral_averages,
        at_turnpike_everywhere: !any_above_floor,
        series,
    };
    if !any_above_floor {
        return Ok(report);
    }

    let rates: Vec<f64> = [tail_fit(&left), tail_fit(&right)]
        .into_iter()
        .flatten()
        .filter(|w| *w > 0.0)
        .collect();
    if let Some(w) = rates.into_iter().reduce(f64::min) {
        let mut envelope = Envelope { m: 1.0, w };
        envelope.m = report.required_inflation(&envelope);
        report.envelope = Some(envelope);
    }
    Ok(report)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ModifiedInputRow {
    pub t0: f64,
    pub l2_norm: f64,
    pub bound: f64,
}

/// Decay table for `|u~*|_{L2([0, T0])} <= M exp(-k (T - T0))`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ModifiedInputReport {
    pub m_hat: f64,
    pub k_hat: f64,
    pub r2: f64,
    pub rows: Vec<ModifiedInputRow>,
}

/// Evaluate `|u~*|_{L2([0, T0])}` at `T0 = frac * T` for each fraction
/// and fit the exponential bound in `T - T0`; `m_hat` is inflated so the
/// fitted bound dominates each row. Identically zero transformed inputs
/// (no feedforward) give a table of zeros.
pub fn verify_modified_input_argument(
    instance: &OcpInstance,
    t0_fracs: &[f64],
) -> Result<ModifiedInputReport> {
    const OP: &str = "turnpike.verify_modified_input_argument";
    for f in t0_fracs {
        if !(0.0 < *f && *f < 1.0) {
            return Err(Error::InvalidParameter {
                op: OP,
                what: format!("T0 fraction {f} must lie in (0, 1)"),
            });
        }
    }
    let problem = &instance.problem;
    let ctx = FeedbackSynthesis::prepare(problem, instance.horizon, instance.dt)?;
    let bundle = ctx.solve_feedback_for(&instance.x0)?;
    let energy: Vec<f64> = bundle
        .u_tilde
        .iter()
        .map(|u| problem.input_ip(u, u))
        .collect();
    let steps = bundle.grid.len() - 1;
    let horizon = instance.horizon;

    let mut rows = Vec::with_capacity(t0_fracs.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &frac in t0_fracs {
        let i0 = ((frac * steps as f64).round() as usize).clamp(1, steps);
        let t0 = i0 as f64 * instance.dt;
        let l2 = linalg::trapezoid(&energy[..=i0], instance.dt).max(0.0).sqrt();
        if l2 > 1e-250 {
            xs.push(horizon - t0);
            ys.push(l2.ln());
        }
        rows.push(ModifiedInputRow {
            t0,
            l2_norm: l2,
            bound: 0.0,
        });
    }
    if xs.len() < 2 {
        return Ok(ModifiedInputReport {
            m_hat: 0.0,
            k_hat: 0.0,
            r2: 1.0,
            rows,
        });
    }
    let (slope, intercept, r2) = linalg::line_fit(&xs, &ys);
    let k_hat = -slope;
    let mut m_hat = intercept.exp();
    let mut inflate: f64 = 1.0;
    for row in &rows {
        if row.l2_norm > 1e-250 {
            inflate = inflate.max(row.l2_norm / (m_hat * (-k_hat * (horizon - row.t0)).exp()));
        }
    }
    m_hat *= inflate;
    for row in &mut rows {
        row.bound = m_hat * (-k_hat * (horizon - row.t0)).exp();
    }
    Ok(ModifiedInputReport {
        m_hat,
        k_hat,
        r2,
        rows,
    })
}
