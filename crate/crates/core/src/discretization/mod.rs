//! Grids, node classification, boundary closures and operator assembly.

pub mod assembly;
pub mod dtn;
pub mod grid;

pub use assembly::{assemble, BottomCondition, CsrMatrix, DiscreteSystem, ProblemKind, Sources};
pub use dtn::{choose_n_modes, DtnBlock, DtnKind, DtnSpec};
pub use grid::{build_grid, classify_nodes, Grid, NodeClass, Snap};
