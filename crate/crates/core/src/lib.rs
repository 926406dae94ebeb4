//! Class-centric polarization for single-domain generalized metric learning.
//!
//! Training alternates two phases over a small feed-forward encoder:
//! centrifugal expansion of input copies away from their class centroids
//! ([`expansion`]), then a centripetal constraint that pulls original and
//! expanded embeddings back toward the centroids while separating classes
//! ([`losses::loss_c4`]). The [`trainer`] runs the alternation, with each
//! ablation variant registered as a named [`trainer::TrainingStrategy`].
//! [`retrieval`] scores the result with Recall@k, R-Precision and MAP@R on
//! held-out classes under held-out domain transforms from [`dataset`].

pub mod cli;
pub mod dataset;
pub mod error;
pub mod expansion;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
