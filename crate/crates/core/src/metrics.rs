//! Regret and switching measurements, bound evaluators and lemma checks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::ConvexBody;
use crate::gibbs::{GibbsParams, GibbsState};
use crate::losses::LossSequence;
use crate::pocmw::{PocmwParams, RunTrace};
use crate::rng::RandomStream;
use crate::{norm, Error, Point, Result};

/// Iterations of the descent solver for `d >= 3`.
pub const DESCENT_ITERS: usize = 10_000;

/// Random member points used to certify a best fixed point.
pub const CERTIFY_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub cumulative_loss: f64,
    pub best_fixed_value: f64,
    pub best_fixed_point: Point,
    pub regret: f64,
    pub resample_count: u64,
    pub value_switch_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub cumulative_regret: f64,
    pub resamples: u64,
}

fn total_potential(seq: &LossSequence) -> GibbsState {
    let losses: Arc<[_]> = Arc::from(seq.losses.clone());
    let n = losses.len();
    GibbsState::with_prefix(GibbsParams { beta: 1.0, lambda: 0.0 }, seq.dim(), losses, n)
}

/// Grid argmin of the cumulative loss; ties go to the earliest grid point
/// in lexicographic order.
pub fn grid_argmin(seq: &LossSequence, body: &ConvexBody, cells: usize) -> Result<(Point, f64)> {
    let f = total_potential(seq);
    let grid = body.grid_points(cells)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in grid.points.iter().enumerate() {
        let v = f.potential(p);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    let (i, v) = best.ok_or_else(|| Error::pre("grid_argmin", "empty grid"))?;
    Ok((grid.points[i].clone(), v))
}

/// Projected subgradient descent on the cumulative loss from `start`.
///
/// Steps are `radius / (G_sum sqrt(k))`. Returns the best iterate seen,
/// compared with the running average when `average` is set.
pub fn projected_subgradient_min(
    seq: &LossSequence,
    body: &ConvexBody,
    start: &[f64],
    radius: f64,
    iters: usize,
    average: bool,
) -> Result<(Point, f64)> {
    let f = total_potential(seq);
    let g_sum = f.potential_lipschitz().max(f64::MIN_POSITIVE);
    let mut x = body.project(start)?;
    let mut best = (x.clone(), f.potential(&x));
    let mut avg = vec![0.0; x.len()];
    for k in 1..=iters {
        let g = f.regularized_gradient(&x);
        let gn = norm(&g);
        if gn == 0.0 {
            break;
        }
        let step = radius / (g_sum * (k as f64).sqrt());
        let y: Point = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = body.project(&y)?;
        let v = f.potential(&x);
        if v < best.1 {
            best = (x.clone(), v);
        }
        for (a, xi) in avg.iter_mut().zip(&x) {
            *a += (xi - *a) / k as f64;
        }
    }
    if average && iters > 0 {
        let v = f.potential(&avg);
        if v < best.1 {
            best = (avg, v);
        }
    }
    Ok(best)
}

/// Best fixed point in hindsight `argmin_x sum_t l_t(x)` over the body.
pub fn best_fixed_point(seq: &LossSequence, body: &ConvexBody) -> Result<(Point, f64)> {
    if seq.dim() != body.dim() {
        return Err(Error::DimensionMismatch {
            expected: body.dim(),
            got: seq.dim(),
        });
    }
    let mut best = match body.dim() {
        1 | 2 => {
            let cells = if body.dim() == 1 { 2048 } else { 128 };
            let (x0, v0) = grid_argmin(seq, body, cells)?;
            let width = body.diameter() / cells as f64;
            let (x1, v1) = projected_subgradient_min(seq, body, &x0, width, 2000, false)?;
            if v1 < v0 {
                (x1, v1)
            } else {
                (x0, v0)
            }
        }
        _ => {
            let start = vec![0.0; body.dim()];
            projected_subgradient_min(seq, body, &start, body.diameter(), DESCENT_ITERS, true)?
        }
    };
    let f = total_potential(seq);
    let mut rng = RandomStream::new(0x5eed);
    for _ in 0..CERTIFY_POINTS {
        let p = body.sample_uniform(&mut rng);
        let v = f.potential(&p);
        if v < best.1 {
            best = (p, v);
        }
    }
    Ok(best)
}

/// Regret of a realized trace against the best fixed point.
pub fn regret_and_switches(trace: &RunTrace, seq: &LossSequence, body: &ConvexBody) -> Result<RegretReport> {
    let (x_star, v_star) = best_fixed_point(seq, body)?;
    regret_against(trace, seq, x_star, v_star)
}

/// Regret against a precomputed comparator `(x_star, v_star)`.
pub fn regret_against(trace: &RunTrace, seq: &LossSequence, x_star: Point, v_star: f64) -> Result<RegretReport> {
    if trace.horizon() != seq.horizon() {
        return Err(Error::pre(
            "regret_and_switches",
            format!("trace has {} rounds, sequence {}", trace.horizon(), seq.horizon()),
        ));
    }
    let cumulative_loss: f64 = trace
        .records
        .iter()
        .zip(&seq.losses)
        .map(|(r, l)| l.value(&r.x))
        .sum();
    Ok(RegretReport {
        cumulative_loss,
        best_fixed_value: v_star,
        best_fixed_point: x_star,
        regret: cumulative_loss - v_star,
        resample_count: trace.resample_count,
        value_switch_count: trace.value_switch_count(),
    })
}

/// Cumulative regret against `x_star` and resamples so far, per round.
pub fn regret_curve(trace: &RunTrace, seq: &LossSequence, x_star: &[f64]) -> Vec<CurvePoint> {
    let mut acc = 0.0;
    let n = trace.records.len();
    trace
        .records
        .iter()
        .zip(&seq.losses)
        .enumerate()
        .map(|(i, (r, l))| {
            acc += l.value(&r.x) - l.value(x_star);
            let resamples = if i + 1 < n { trace.records[i + 1].b } else { trace.resample_count };
            CurvePoint {
                t: r.t,
                cumulative_regret: acc,
                resamples,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub params: PocmwParams,
    pub horizon: usize,
    pub g: f64,
    pub d_diam: f64,
    pub dim: usize,
    /// Closeness failure level of consecutive Gibbs measures.
    pub delta_close: f64,
    pub budgeted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub regret_bound: f64,
    /// `p_tilde T`.
    pub switch_mean_bound: f64,
    /// `exp(-p_tilde T)`.
    pub switch_tail_bound: f64,
    pub drift_bounds: Vec<f64>,
}

/// Expected-regret bound of the sampler loop.
pub fn regret_bound(inp: &BoundInputs) -> Result<f64> {
    let PocmwParams { beta, lambda, p_tilde, .. } = inp.params;
    if !(beta > 0.0 && lambda > 0.0 && inp.g > 0.0 && inp.d_diam > 0.0 && inp.horizon > 0) {
        return Err(Error::pre("theoretical_bounds", "beta, lambda, G, D, T must be > 0"));
    }
    if !(inp.delta_close >= 0.0) {
        return Err(Error::pre("theoretical_bounds", "delta must be >= 0"));
    }
    let t = inp.horizon as f64;
    let (g, dd, delta) = (inp.g, inp.d_diam, inp.delta_close);
    let core = lambda * dd * dd / 2.0 + g * g * t / lambda + inp.dim as f64 * t.ln() / beta;
    Ok(if inp.budgeted {
        core + 2.0 * g * dd * t * ((-p_tilde * t).exp() + 3.0 * delta * t) + g * dd
    } else {
        core + g * dd + 6.0 * g * dd * delta * t * t
    })
}

/// Regret bound of the lazy schedule with at most `switches` switches.
pub fn lazy_regret_bound(switches: f64, horizon: f64, g: f64, d_diam: f64, dim: usize) -> f64 {
    g * d_diam * (2.0 * horizon).sqrt()
        + 16.0 * g * d_diam * horizon.ln() * (dim as f64).sqrt() * horizon / switches
        + 13.0 * g * d_diam
}

/// `3 delta (t - 1)`, plus `exp(-p_tilde T)` with a budget.
pub fn drift_bound(t: usize, delta_close: f64, p_tilde: f64, horizon: usize, budgeted: bool) -> f64 {
    let base = 3.0 * delta_close * t.saturating_sub(1) as f64;
    if budgeted {
        base + (-p_tilde * horizon as f64).exp()
    } else {
        base
    }
}

pub fn theoretical_bounds(inp: &BoundInputs) -> Result<BoundReport> {
    let t = inp.horizon as f64;
    let pt = inp.params.p_tilde;
    Ok(BoundReport {
        regret_bound: regret_bound(inp)?,
        switch_mean_bound: pt * t,
        switch_tail_bound: (-pt * t).exp(),
        drift_bounds: (1..=inp.horizon)
            .map(|s| drift_bound(s, inp.delta_close, pt, inp.horizon, inp.budgeted))
            .collect(),
    })
}

/// `(|E_mu f - E_nu f|, 2 TV(mu, nu) max|f|)`.
pub fn tv_expectation_check(mu: &[f64], nu: &[f64], f: &[f64]) -> Result<(f64, f64)> {
    if mu.len() != nu.len() || mu.len() != f.len() {
        return Err(Error::pre("tv_expectation_check", "distributions and f need a common support"));
    }
    let e = |d: &[f64]| d.iter().zip(f).map(|(p, v)| p * v).sum::<f64>();
    let tv = 0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(((e(mu) - e(nu)).abs(), 2.0 * tv * fmax))
}

/// Be-the-leader inequality on a finite grid.
///
/// `losses[t][i]` is the round-`t` loss at grid point `i`; with a
/// regularizer it acts as round 0. `y_{t+1}` minimizes the prefix sum
/// through round `t` (ties to the lowest index), and the check is
/// `sum_t l_t(y_{t+1}) <= sum_t l_t(x)` for every grid point `x`.
pub fn btl_check(losses: &[Vec<f64>], regularizer: Option<&[f64]>) -> Result<bool> {
    let rounds: Vec<&[f64]> = regularizer.into_iter().chain(losses.iter().map(|v| v.as_slice())).collect();
    let Some(first) = rounds.first() else {
        return Ok(true);
    };
    let n = first.len();
    if n == 0 || rounds.iter().any(|r| r.len() != n) {
        return Err(Error::pre("btl_check", "every round needs values on the same nonempty grid"));
    }
    let mut prefix = vec![0.0; n];
    let mut leader_total = 0.0;
    let mut scale = 0.0f64;
    for r in &rounds {
        for (p, v) in prefix.iter_mut().zip(r.iter()) {
            *p += v;
            scale = scale.max(v.abs());
        }
        let mut y = 0;
        for i in 1..n {
            if prefix[i] < prefix[y] {
                y = i;
            }
        }
        leader_total += r[y];
    }
    let tol = 1e-9 * scale.max(1.0) * rounds.len() as f64;
    Ok(prefix.iter().all(|total| leader_total <= total + tol))
}

/// Values of `seq` (and optionally `lambda/2 |x|^2`) on `points`, for [`btl_check`].
pub fn btl_inputs(seq: &LossSequence, points: &[Point], lambda: Option<f64>) -> (Vec<Vec<f64>>, Option<Vec<f64>>) {
    let losses = seq
        .losses
        .iter()
        .map(|l| points.iter().map(|p| l.value(p)).collect())
        .collect();
    let reg = lambda.map(|lam| points.iter().map(|p| 0.5 * lam * crate::dot(p, p)).collect());
    (losses, reg)
}
