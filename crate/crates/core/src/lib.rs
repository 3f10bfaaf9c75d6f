//! Mean-variance efficient collaborative filtering.
//!
//! Weighted matrix factorization for stock recommendation with a Markowitz
//! risk-return regularizer, the equivalent WMF form over modified ratings
//! (trainable by ALS), pairwise ranking baselines, a mean-variance optimizer
//! on the simplex, and ex-ante / ex-post portfolio evaluation.
//!
//! The crate is `no_std` and only needs `alloc`. IO, file formats and the
//! command line live in the `mvecf` companion crate. Enable the `parallel`
//! feature to spread per-row work over a rayon pool; results do not depend
//! on the schedule.

#![cfg_attr(not(feature = "std"), no_std)]
// dense numeric kernels index several arrays in lockstep
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]
// `!(x > 0.0)` checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
mod par;

pub mod eval;
pub mod holdings;
pub mod market;
pub mod mvecf;
pub mod mvopt;
pub mod ranking;
pub mod synth;
pub mod wmf;

pub use error::{Error, Result};
pub use eval::{EvalReport, RecommendationList};
pub use holdings::{InteractionMatrix, SubDataset};
pub use market::{MarketStats, ReturnsPanel};
pub use wmf::{FactorModel, Hyperparams};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Float helpers that work without `std`.
pub(crate) mod num {
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        libm::log1p(x)
    }
    #[inline]
    pub fn floor(x: f64) -> f64 {
        libm::floor(x)
    }
    #[inline]
    pub fn round(x: f64) -> f64 {
        libm::round(x)
    }
}
