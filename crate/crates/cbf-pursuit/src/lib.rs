//! Robust control-barrier-function safety filtering for multi-agent target
//! pursuit.
//!
//! The crate provides, bottom to top:
//!
//! * [`dynamics`] — augmented pursuer dynamics (velocity-level input with an
//!   integrator in the feedback path), target reference laws, obstacle
//!   potential field, fixed-step integration;
//! * [`estimator`] — integral concurrent-learning estimation of the
//!   disturbance coefficients with certified, monotonically tightening
//!   error bounds;
//! * [`cbf`] — input-saturation, collision, and sensing-range barriers and
//!   their robustified linear-in-v constraint rows;
//! * [`qp`] — a dual active-set solver for the projection QP with
//!   independently recomputed KKT certificates, plus a brute-force oracle;
//! * [`filter`] — the R1/R2 switch and hybrid control law with a
//!   lexicographic infeasibility fallback;
//! * [`policy`] — nominal-control stand-ins and the tracking-band reward;
//! * [`sim`] — scenario presets, the closed-loop runner, metrics;
//! * [`config`], [`logio`], [`svg`], [`cli`] — the flat config format, the
//!   CSV log schema, native SVG charts, and the command-line front end.
//!
//! See the crate examples for runnable entry points into each capability.

pub mod cbf;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod logio;
pub mod policy;
pub mod qp;
pub mod sim;
pub mod svg;

pub use cbf::{ConstraintKind, ConstraintRow, SafetyParams};
pub use dynamics::{
    DisturbanceModel, Integrator, Obstacle, Plant, PursuerState, ReferenceKind, TargetState,
    VecN, WorldState,
};
pub use error::{Error, Result};
pub use estimator::{EstimatorConfig, EstimatorState};
pub use filter::{Region, RelaxLevel};
pub use policy::NominalPolicy;
pub use qp::{QpSolution, QpStatus};
pub use sim::{metrics, nominal_only_run, preset, run, Metrics, Scenario, SimLog};
