//! Survival-aware contrastive representation learning for multi-omics cohorts.
//!
//! Each omics modality gets its own MLP encoder producing unit-norm
//! embeddings. Encoders are trained jointly with a cross-modality NT-Xent
//! loss and a pairwise survival contrastive regularizer; the fused patient
//! representation is then clustered with k-means and scored with survival
//! (C-index, Kaplan–Meier, log-rank) and clustering (silhouette, purity,
//! ARI, NMI) metrics. A Cox proportional-hazards fitter is included as a
//! supervised baseline.
//!
//! The crate is `no_std` and needs only `alloc`; file formats and the
//! command-line driver live in the companion `omicscl` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod cluster;
pub mod clustmetrics;
pub mod coxph;
pub mod dataio;
pub mod encoder;
mod error;
pub mod evaluate;
pub mod losses;
pub mod numcore;
pub mod survmetrics;
pub mod trainer;

pub use error::{Error, Result};
pub use numcore::{Matrix, Rng, Tape, Var};
