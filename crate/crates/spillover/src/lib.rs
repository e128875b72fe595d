//! Time-varying uncertainty-spillover analytics for panels of asset returns.
//!
//! The crate measures system-wide "total connectedness" inside a panel of
//! log returns by fitting an exponentially weighted, ridge-regularized
//! VAR(1) on rolling windows and decomposing the one-step forecast error
//! variance across orthogonalized shocks. Directed information flow
//! between the resulting connectedness series is then quantified with
//! linear (Granger-equivalent) and discretized non-linear transfer
//! entropy, each validated against a permutation null.
//!
//! Pipeline stages, one module each:
//!
//! - [`panel`]: CSV ingestion, log returns, calendar alignment.
//! - [`rolling`]: exponential observation weights and window iteration.
//! - [`var`]: weighted ridge VAR(1) fit and residual covariance.
//! - [`connectedness`]: shock orthogonalization, FEVD shares, the rolling
//!   total-connectedness series and its text formats.
//! - [`te`]: change series, transfer entropy estimators, permutation and
//!   F significance, and the pairwise result table.
//! - [`synth`]: seeded synthetic generators used as ground-truth oracles.

pub mod connectedness;
pub mod error;
pub mod panel;
pub mod rolling;
pub mod synth;
pub mod te;
pub mod var;

pub use error::{Error, Result};
