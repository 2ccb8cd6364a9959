//! Exact discrete optimal transport on large problems.
//!
//! A coupling is refined by repeatedly solving sparse restricted transport
//! problems over *shielding neighbourhoods*: supersets of the current support
//! on which local optimality already implies global optimality. A coarse-to-fine
//! driver over hierarchical 2^n-tree partitions supplies good initial
//! neighbourhoods. All masses and costs are integers after quantization, so
//! objectives, duals and certificates are exact.
//!
//! Module map:
//! - [`model`]: measures, couplings, neighbourhoods, problem instances.
//! - [`hierarchy`]: 2^n-tree partitions and multi-scale measures.
//! - [`costs`]: cost families, `psi` differences and cell bounds `psi_hat`.
//! - [`shield`]: shielding neighbourhood construction.
//! - [`netsolver`]: network simplex for sparse transport problems.
//! - [`driver`]: the sparse fixed-point loop and the multi-scale solver.
//! - [`verify`]: dense reference solves and optimality checks.
//! - [`gen`] and [`io`]: test data generation and file formats.

pub mod costs;
pub mod driver;
pub mod error;
pub mod gen;
pub mod hierarchy;
pub mod io;
pub mod model;
pub mod netsolver;
pub mod shield;
pub mod verify;

pub use error::{Error, Result};
