//! Slimmable contrastive self-supervised learning at desk scale.
//!
//! One parameter store runs at several widths; narrower networks reuse the
//! leading channels of wider ones. Training combines InfoNCE with three
//! remedies against interference between the weight-sharing networks (slow
//! start, online distillation from the full width, loss reweighting), and
//! the crate ships the diagnostics used to observe that interference plus a
//! least-squares verifier for the shared linear-probe optimality condition.

pub mod cli;
pub mod contrastive;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod interference;
pub mod probe;
pub mod slimnet;
pub mod trainer;

pub use error::{Error, Result};
