//! Parameter estimation for nonlinear ODEs by optimal-control tracking.

pub mod bench;
pub mod data;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod model;
pub mod numfmt;
pub mod ode;
pub mod optimizer;
pub mod riccati;
pub mod sdre;
pub mod sim;

pub use data::{load_observations, save_observations, ObservationSet};
pub use error::{Error, Result};
pub use grid::{build_grid, TrackingGrid};
pub use model::{Bounds, PseudoLinearModel};
