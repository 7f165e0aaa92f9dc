//! Approximation-tolerant model-based compressive sensing for the
//! constrained earth mover's distance (CEMD) sparsity model.
//!
//! Signals are `h x w` matrices stored column-major. A [`Support`] is a set
//! of `(row, col)` positions. The recovery loops in [`recovery`] are driven
//! by head and tail approximation oracles ([`oracle`]); [`head`] and
//! [`tail`] provide the CEMD instantiations and [`model`] the brute-force
//! references.

mod error;
pub mod flow;
pub mod head;
pub mod measurement;
pub mod model;
pub mod oracle;
pub mod recovery;
pub mod signal;
pub mod tail;

pub use error::{Error, Result};
pub use model::CemdParams;
pub use oracle::{HeadOracle, TailOracle};
pub use signal::{lp_norm, restrict, Norm, OracleQuality, SignalMatrix, Support};
