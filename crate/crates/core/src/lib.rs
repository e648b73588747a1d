//! Exact ReLU network constructions and experiments comparing learners that
//! sample a task at fixed points (in-context) against learners that choose
//! each sample from the transcript so far (agentic).
//!
//! - [`net`]: ReLU MLP representation, evaluation and algebra.
//! - [`gadgets`]: closed-form exact networks (abs, max, hat, bump, selector)
//!   and the approximate multiplier.
//! - [`tasks`]: the cubical-path, pointed-value and address-spike task families.
//! - [`learners`]: in-context and agentic learner protocols and the concrete
//!   agents for each family.
//! - [`harness`]: worst-case sweeps, indistinguishability witnesses and audits.
//! - [`transformer`]: multi-head attention transformers and the exact MLP
//!   conversion.
//! - [`runner`]: experiment configuration and file-backed runs for the CLI.

pub mod gadgets;
pub mod harness;
pub mod learners;
pub mod net;
pub mod runner;
pub mod tasks;
pub mod transformer;

pub use net::{AffineLayer, InputLayout, Matrix, MlpNetwork, NetError, SparseNetwork};
