//! Generalized linear-quadratic optimal control at finite dimension:
//! running costs with arbitrary linear terms, differential and algebraic
//! Riccati equations, optimal steady states with their adjoint
//! representation, explicit feedback solutions of the finite-horizon
//! problem cross-checked by a direct-transcription oracle, and
//! quantitative turnpike diagnostics.
//!
//! Modules mirror the pipeline:
//!
//! - [`lti_core`]: problem data, weighted inner products, adjoints.
//! - [`structural`]: Hautus tests, gain synthesis, energy-estimate
//!   certificates.
//! - [`riccati`]: differential/algebraic Riccati solvers and decay fits.
//! - [`steady_state`]: optimal steady states, adjoint steady state,
//!   truncation diagnostics.
//! - [`ocp`]: finite-horizon solves (feedback form and transcription
//!   oracle), evolution-operator probes.
//! - [`turnpike`]: deviation envelopes and input-decay verification.
//! - [`models`]: bundled heat/string/diagonal/random example systems.

pub mod error;
mod integrate;
pub mod linalg;
pub mod lti_core;
pub mod models;
pub mod ocp;
pub mod riccati;
pub mod steady_state;
pub mod structural;
pub mod turnpike;

pub use error::{Error, Result};
pub use lti_core::{GenLQProblem, OcpInstance, OperatorTag, ProblemJson};
pub use models::ModelSpec;
pub use ocp::{EvolutionOperatorProbe, FeedbackSynthesis, ProbeKind, TrajectoryBundle};
pub use riccati::{DecayFit, RiccatiSolution};
pub use steady_state::SteadyState;
pub use structural::StructuralReport;
pub use turnpike::{Envelope, ModifiedInputReport, TurnpikeReport};
