//! Grid-based simulator and verification harness for the volume-preserving
//! mean curvature flow, built on a volume-constrained minimizing-movements
//! scheme: each time step minimizes perimeter plus a signed-distance
//! dissipation term under an exact volume constraint, with a Lagrange
//! multiplier found by bisection.

pub mod config;
pub mod disttrans;
pub mod energy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod mmsolver;
pub mod oracle;
pub mod output;

pub use error::{Error, Result};
