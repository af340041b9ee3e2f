//! Age-structured harvesting models: transport solvers, stationary closed
//! forms, adjoints, and switching-law control tools for the rate-control and
//! effort-control mechanisms.

pub mod adjoint;
pub mod control;
pub mod csv;
pub mod grid;
pub mod presets;
pub mod scenario;
pub mod stationary;
pub mod transport;

pub use grid::{AgeGrid, Field2D, GridError, Profile, TimeGrid};
pub use scenario::{parse_scenario, ControlKind, Scenario, ScenarioDoc, ScenarioError};
