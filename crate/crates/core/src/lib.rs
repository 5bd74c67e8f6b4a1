//! Shooting solver for the singular boundary value problem of equivariant
//! harmonic self-maps of spheres.
//!
//! In the coordinate `x = log tan t` the profile `r` obeys
//!
//! ```text
//! r'' = alpha(x) r' - beta(x) sin 2r
//! ```
//!
//! with `r -> 0` as `x -> -inf` and `r -> (2l+1) pi/2` as `x -> +inf`.
//! Solutions are found by shooting from the singular endpoint with slope `v`
//! and bisecting on the number of crossings of `pi/2`.

pub mod analysis;
pub mod coefficients;
mod error;
pub mod integrator;
pub mod par;
mod roots;
pub mod shooting;
pub mod singular_ivp;

pub use coefficients::{alpha, beta, constants, m1_max, q, width_bounds, ExtReal, MultPair, StructuralConstants};
pub use error::{Error, Result};
pub use integrator::{integrate, IntegratorControls, OdeStateX, TerminationCause, Trajectory};
pub use singular_ivp::{series_at_pi_half, series_at_zero, to_x_state, SeriesStart};
pub use par::Execution;
pub use shooting::{brouwer_degree, nodal_transition, shoot, solve_bvp, sweep, BvpSolution, ShootingControls, ShotOutcome};
