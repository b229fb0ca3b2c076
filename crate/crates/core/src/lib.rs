//! Coalescing random walks on the discrete torus, the Kingman block-count
//! process they converge to, and exact and statistical checks tying the
//! two together.

pub mod engine;
pub mod error;
pub mod estimators;
pub mod kingman;
pub mod lattice;
pub mod oracle;
pub mod seeding;
pub mod stats;
pub mod suites;

pub use error::{EngineError, EstimateError, KingmanError, LatticeError, OracleError, StatsError};
pub use lattice::{TorusGeometry, TorusPoint};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
