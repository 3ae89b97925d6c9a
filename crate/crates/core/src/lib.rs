//! Hierarchical quadrotor trajectory planning on 3D occupancy grids.
//!
//! The front end ([`planner`]) is RRT* whose sampler can be biased toward
//! a heuristic promising region ([`heuristic`]). The back end
//! ([`polytraj`]) turns the resulting waypoints into a minimum jerk or
//! minimum snap piecewise polynomial by solving a banded linear system
//! ([`banded`]), then repairs any segment that clips an obstacle.
//! [`pipeline`] chains the two and [`bench`] runs seeded Monte Carlo
//! comparisons between sampling modes.

pub mod banded;
pub mod bench;
pub mod grid;
pub mod heuristic;
pub mod pipeline;
pub mod planner;
pub mod polytraj;

pub use grid::{GoalRegion, GridError, OccupancyGrid, VoxelIndex, WorldPoint};
pub use heuristic::{HeuristicRegion, RegionError};
pub use planner::{PlanError, PlanStats, PlannerConfig, SamplingMode};
pub use polytraj::{BivpSpec, PiecewisePolynomial, TrajError};
