//! Deterministic simulator for federated distillation (FD), federated
//! averaging (FL) and federated augmentation (FAug) with exact communication
//! cost accounting and privacy-leakage metrics.
//!
//! Module map:
//!
//! - [`nn`]: dense classifier, cross-entropy, the distillation-regularized
//!   gradient and SGD.
//! - [`data`]: synthetic and IDX corpora, non-IID partitioning.
//! - [`fd`]: the FD round protocol (local training, leave-one-out ensembling).
//! - [`fl`]: the federated-averaging baseline.
//! - [`faug`]: seed uploads, server oversampling, generative backends, IID restoration.
//! - [`metrics`]: cost ledger and privacy leakage.
//! - [`harness`]: configuration, experiment orchestration and outputs.

pub mod data;
pub mod faug;
pub mod fd;
pub mod fl;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sim;
