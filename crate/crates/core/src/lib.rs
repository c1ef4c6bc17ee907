//! Meta label correction with a disentangled teacher and fast meta-gradients.
//!
//! A teacher network `q_α(y | x, ỹ)` produces soft labels for a student
//! `p_w(y | x)` trained on label-corrupted data. The teacher is updated by
//! meta-gradients assembled from forward-mode and reverse-mode Jacobian
//! contractions over a `k`-step look-ahead window of student updates.

pub mod autodiff;
pub mod bilevel;
pub mod data;
mod error;
pub mod harness;
pub mod models;
pub mod objectives;
pub mod par;

pub use error::{Error, Result};
