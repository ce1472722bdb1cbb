//! Battery storage siting and sizing for meshed transmission grids.
//!
//! The planning problem is a mixed-integer second-order-cone program: a master
//! problem chooses where to install storage and how large, and one convex
//! relaxed optimal-power-flow subproblem per day prices that choice. The two
//! are coupled by generalized Benders decomposition with optimality and
//! feasibility cuts, after which an exact AC power flow recovers a physically
//! consistent operating point.
//!
//! Module map:
//!
//! - [`network`]: grid data model, case files, incidence and cycle basis
//! - [`ingest`]: time series, reactive reconstruction, boundary conditions
//! - [`conic`]: parameterized conic programs on top of Clarabel
//! - [`opf`]: daily subproblems, centralized counterparts and cut extraction
//! - [`benders`]: master problem and the decomposition loop
//! - [`acpf`]: Newton power flow, residual evaluation and recovery
//! - [`report`]: model sizes, representative days and output files
//! - [`config`]: run configuration

pub mod acpf;
pub mod benders;
pub mod config;
pub mod conic;
mod exec;
pub mod fixtures;
pub mod ingest;
pub mod network;
pub mod opf;
pub mod report;

pub use network::NetworkModel;
