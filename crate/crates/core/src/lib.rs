//! Private and lazy online convex optimization by sampling from
//! strongly log-concave Gibbs measures.
//!
//! The learner plays `x_t` drawn (marginally) from
//! `exp(-beta * (sum_{s<t} l_s(x) + lambda/2 |x|^2))` over a convex body and
//! only moves when a rejection-sampling coin says so. This keeps the number of
//! switches small, which in turn bounds the privacy loss under composition.
//!
//! Module map:
//!
//! - [`geometry`]: convex decision sets, projection, quadrature grids.
//! - [`losses`]: Lipschitz convex losses, oblivious adversaries, neighbors.
//! - [`gibbs`]: Gibbs densities, partition functions, smoothness constants.
//! - [`samplers`]: exact grid sampling, projected Langevin, coupled chains.
//! - [`pocmw`]: the online loop, parameter schedules, noisy OGD baseline.
//! - [`privacy`]: per-round privacy schedule, composition, empirical audit.
//! - [`metrics`]: regret, switches, theoretical bounds, lemma checks.
//! - [`harness`]: experiment configuration, orchestration and reports.

// `!(x > 0.0)` guards also reject NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod gibbs;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod pocmw;
pub mod privacy;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
pub use geometry::ConvexBody;
pub use gibbs::{GibbsParams, GibbsState};
pub use losses::{LossFunction, LossSequence};
pub use pocmw::{PocmwParams, RunTrace};
pub use rng::RandomStream;
pub use samplers::SamplerSpec;

/// A point in `R^d`.
pub type Point = Vec<f64>;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Numerically stable `log(sum(exp(v)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}
