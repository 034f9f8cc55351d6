//! Synthetic groundwater-flow data: grids, random fields, flow solves and
//! dataset assembly.

mod banded;
pub mod dataset;
pub mod flow;
pub mod grid;
pub mod kle;

pub use dataset::{generate_dataset, Dataset, NormStats, SplitFractions};
pub use flow::solve_flow;
pub use grid::{BoundarySpec, FlowGrid, SideBc};
pub use kle::{build_kle, CovarianceKernel, KleBasis};
