//! Dual-channel (power + EM) side-channel instruction disassembly.
//!
//! The crate covers the whole offline/real-time pipeline:
//!
//! * [`tracekit`]: trace containers, min-max normalization, the `SCDT` dataset format.
//! * [`leaksim`]: a Gaussian leakage simulator standing in for the capture hardware.
//! * [`infomath`]: Gaussian and histogram mutual-information kernels.
//! * [`fuse`]: per-index optimal power/EM combination coefficients.
//! * [`featsel`]: mRMR, Filter, Gini and PCA feature reduction.
//! * [`classify`]: QDA/LDA, hierarchical classification, fixed-point scoring.
//! * [`adapt`]: self-labelled covariate-shift adaptation of class means/covariances.
//! * [`harness`]: experiment drivers (offline study, six-point timeline, sweeps, budgets).
//! * [`config`]: run configuration and model persistence.

// `!(x > 0.0)` style checks are kept so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod classify;
pub mod config;
pub mod error;
pub mod featsel;
pub mod fuse;
pub mod harness;
pub mod infomath;
pub mod leaksim;
pub mod rng;
pub mod tracekit;

pub use error::{Error, Result};

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
