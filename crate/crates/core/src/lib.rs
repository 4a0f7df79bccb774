//! Numerical laboratory for hard-killed controlled diffusions.
//!
//! The crate simulates `dX_t = α_t dt + σ dW_t` started inside a bounded
//! domain `D` and stopped at its first exit time `τ`, estimates the
//! conditional Markovian projection
//! `ᾱ(t, x) = 1_D(x) E[α_t | X_{t∧τ} = x]` of an open-loop control from a
//! particle ensemble, and evaluates the conditional cost
//!
//! ```text
//! J(α) = ∫_0^T E[f(X_t, α_t) | τ > t] dt + E[g(X_T) | τ > T]
//! ```
//!
//! with `J = +∞` once no particle survives. The [`experiments`] module wires
//! these pieces into three pipelines: conditional-marginal matching between
//! an open-loop control and its projection, the cost improvement brought by
//! the projection for convex running costs, and convergence of costs under
//! radial truncation of the control.

pub mod config;
pub mod costing;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod projection;

pub use error::{Error, Result};
