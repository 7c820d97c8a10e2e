//! Model selection over K: metrics, sweeps and rank-sum recommendation.

mod metrics;
mod sweep;

pub use metrics::*;
pub use sweep::*;
