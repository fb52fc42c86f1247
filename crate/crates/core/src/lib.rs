//! Monte Carlo tools for the spatial SIR epidemic on Z^d and its locally
//! dependent oriented percolation representation.

pub mod cluster;
pub mod epidemic;
pub mod error;
pub mod export;
pub mod field;
pub mod graph;
pub mod lattice;
pub mod oracle;
pub mod shape;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use field::{FieldConfig, RecoveryDist};
pub use graph::Orientation;
pub use lattice::{Dim, Direction, LatticeBox, OrientedBond, Site};
