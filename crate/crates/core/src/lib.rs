//! Numerical laboratory for the two-dimensional Smoluchowski–Poisson system
//!
//! ```text
//! u_t = Δu − ∇·(u∇v),   ∂u/∂ν − u ∂v/∂ν = 0,   −Δv = u (v = 0 on ∂Ω)
//! ```
//!
//! The crate provides a conservative finite-volume stepper, elliptic solvers,
//! a cumulative-mass radial solver used as an independent oracle, and the
//! diagnostics that probe blowup: free energy, collapse detection, parabolic
//! windows and backward self-similar frames.
//!
//! Every numerical type is generic over [`Real`]; the `*64` aliases below are
//! what the experiment runner uses.

// Validation writes `!(x > 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod poisson;
pub mod radial_oracle;
pub mod rescale;
pub mod scalar;
pub mod stepper;

pub use diagnostics::{
    detect_collapses, energy_trend_check, estimate_blowup_time, free_energy, mass_window_sweep, radial_average, shell_mass, BlowupEstimate,
    CollapseConfig, CollapseReport, EnergyRecord,
};
pub use error::{Error, Result};
pub use grid::{local_ball_mass, make_initial, total_mass, Disk, DomainKind, Field, GridSpec, InitialProfile, Point};
pub use poisson::{green_energy, solve_dirichlet, solve_neumann, solve_radial_dirichlet, Model, PoissonSolver, Potential};
pub use radial_oracle::{oracle_density, oracle_step, run_oracle, MassProfile, OracleConfig, OracleStepper};
pub use rescale::{envelope_series, make_frame, scale_back, EnvelopeSeries, RescaledFrame};
pub use scalar::Real;
pub use stepper::{stable_dt, PositivityMode, SimState, StopReason, StopRule, Stepper, StepperConfig};

pub type GridSpec64 = GridSpec<f64>;
pub type Field64 = Field<f64>;
pub type Potential64 = Potential<f64>;
pub type SimState64 = SimState<f64>;
pub type MassProfile64 = MassProfile<f64>;
pub type BlowupEstimate64 = BlowupEstimate<f64>;
pub type CollapseReport64 = CollapseReport<f64>;
pub type RescaledFrame64 = RescaledFrame<f64>;
