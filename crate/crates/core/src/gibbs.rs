//! Regularized Gibbs measures over a convex body.
//!
//! The measure with potential `f`, inverse temperature `beta` and
//! regularization `lambda` has unnormalized density
//! `exp(-beta * (f(x) + lambda/2 * |x|^2))`. All arithmetic is done in log
//! space: `beta * sum_t l_t` grows linearly with the round and overflows
//! `exp` quickly otherwise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{ConvexBody, Grid};
use crate::losses::LossFunction;
use crate::rng::RandomStream;
use crate::{dot, log_sum_exp, Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsParams {
    pub beta: f64,
    pub lambda: f64,
}

impl GibbsParams {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::pre("GibbsParams", format!("beta = {beta} must be finite and >= 0")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::pre(
                "GibbsParams",
                format!("lambda = {lambda} must be finite and >= 0"),
            ));
        }
        Ok(Self { beta, lambda })
    }
}

/// The round-`t` Gibbs state: potential `l_1 + ... + l_{t-1}`.
///
/// The loss list is shared; advancing a state only bumps the prefix length.
/// Linear losses are folded into a single cached affine term so that
/// evaluating the potential does not cost `O(t)` for linear adversaries.
#[derive(Debug, Clone)]
pub struct GibbsState {
    params: GibbsParams,
    dim: usize,
    losses: Arc<[LossFunction]>,
    len: usize,
    affine_g: Vec<f64>,
    affine_c: f64,
    nonlinear: Vec<usize>,
}

impl GibbsState {
    /// Round-1 state with an empty potential.
    pub fn initial(params: GibbsParams, dim: usize) -> Self {
        Self::with_prefix(params, dim, Arc::from(Vec::new()), 0)
    }

    /// State whose potential is the first `len` losses of `losses`.
    pub fn with_prefix(
        params: GibbsParams,
        dim: usize,
        losses: Arc<[LossFunction]>,
        len: usize,
    ) -> Self {
        assert!(len <= losses.len(), "prefix longer than loss list");
        let mut state = Self {
            params,
            dim,
            losses,
            len: 0,
            affine_g: vec![0.0; dim],
            affine_c: 0.0,
            nonlinear: Vec::new(),
        };
        for _ in 0..len {
            state.absorb_next();
        }
        state
    }

    fn absorb_next(&mut self) {
        let idx = self.len;
        match &self.losses[idx] {
            LossFunction::Linear { g, c } => {
                for (a, gi) in self.affine_g.iter_mut().zip(g) {
                    *a += gi;
                }
                self.affine_c += c;
            }
            _ => self.nonlinear.push(idx),
        }
        self.len += 1;
    }

    /// The next state, absorbing the next loss of the shared list.
    pub fn advance(&self) -> Option<Self> {
        if self.len >= self.losses.len() {
            return None;
        }
        let mut next = self.clone();
        next.absorb_next();
        Some(next)
    }

    /// The next state after observing an arbitrary loss `l`.
    pub fn with_loss(&self, l: LossFunction) -> Self {
        let mut list: Vec<LossFunction> = self.losses[..self.len].to_vec();
        list.push(l);
        let len = list.len();
        Self::with_prefix(self.params, self.dim, Arc::from(list), len)
    }

    pub fn params(&self) -> GibbsParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Round index `t` (the potential holds `t - 1` losses).
    pub fn round(&self) -> usize {
        self.len + 1
    }

    pub fn losses(&self) -> &[LossFunction] {
        &self.losses[..self.len]
    }

    /// `sum_{s < t} l_s(x)`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        let mut v = dot(&self.affine_g, x) + self.affine_c;
        for &i in &self.nonlinear {
            v += self.losses[i].value(x);
        }
        v
    }

    /// Subgradient of `potential + lambda/2 |x|^2` at `x`.
    pub fn regularized_gradient(&self, x: &[f64]) -> Point {
        let mut g: Point = self
            .affine_g
            .iter()
            .zip(x)
            .map(|(a, xi)| a + self.params.lambda * xi)
            .collect();
        for &i in &self.nonlinear {
            self.losses[i].add_subgradient(x, 1.0, &mut g);
        }
        g
    }

    /// Lipschitz bound of the cumulative potential.
    pub fn potential_lipschitz(&self) -> f64 {
        self.losses().iter().map(|l| l.lipschitz()).sum()
    }

    /// `-beta * (potential(x) + lambda/2 |x|^2)`.
    pub fn unnormalized_log_density(&self, x: &[f64]) -> f64 {
        let GibbsParams { beta, lambda } = self.params;
        if beta == 0.0 {
            return 0.0;
        }
        -beta * (self.potential(x) + 0.5 * lambda * dot(x, x))
    }

    /// `log mu_bar(x)` given a partition estimate for this state.
    pub fn normalized_log_density(&self, x: &[f64], logz: &PartitionEstimate) -> f64 {
        self.unnormalized_log_density(x) - logz.log_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    GridExact,
    SampleEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    pub log_z: f64,
    pub method: PartitionMethod,
    pub error_hint: f64,
}

/// Midpoint-rule `log Z` on a grid with `cells` cells per axis (`d <= 2`).
///
/// The estimate is also computed at `2 * cells`; `error_hint` is twice the
/// gap between the two, which covers first-order convergence at curved
/// boundaries as well as the second-order interior rate. It is a scale, not a
/// guarantee: kinks of nonsmooth losses can make the error a few times larger.
pub fn log_partition(
    state: &GibbsState,
    body: &ConvexBody,
    cells: usize,
) -> Result<PartitionEstimate> {
    if body.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "grid-exact partition function in dimension {} (use the sampled estimate)",
            body.dim()
        )));
    }
    check_dim(state, body)?;
    let coarse = GridGibbs::from_state(state, body, cells)?.log_z();
    let fine = GridGibbs::from_state(state, body, 2 * cells)?.log_z();
    Ok(PartitionEstimate {
        log_z: coarse,
        method: PartitionMethod::GridExact,
        error_hint: 2.0 * (coarse - fine).abs(),
    })
}

/// Monte Carlo `log Z` from uniform draws in the bounding box; any dimension.
pub fn log_partition_sampled(
    state: &GibbsState,
    body: &ConvexBody,
    draws: usize,
    rng: &mut RandomStream,
) -> Result<PartitionEstimate> {
    use rand::Rng;
    check_dim(state, body)?;
    if draws < 100 {
        return Err(Error::pre("log_partition_sampled", "need at least 100 draws"));
    }
    let (lo, hi) = body.bounding_box();
    let box_volume: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let mut logs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let p: Point = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect();
        logs.push(if body.contains(&p) {
            state.unnormalized_log_density(&p)
        } else {
            f64::NEG_INFINITY
        });
    }
    let lse = log_sum_exp(&logs);
    let n = draws as f64;
    let log_mean = lse - n.ln();
    // relative standard error of the mean of exp(logs)
    let m = log_mean;
    let second: f64 = logs.iter().map(|l| (2.0 * (l - m)).exp()).sum::<f64>() / n;
    let rel_se = ((second - 1.0).max(0.0) / n).sqrt();
    Ok(PartitionEstimate {
        log_z: log_mean + box_volume.ln(),
        method: PartitionMethod::SampleEstimate,
        error_hint: rel_se,
    })
}

fn check_dim(state: &GibbsState, body: &ConvexBody) -> Result<()> {
    if state.dim() != body.dim() {
        return Err(Error::DimensionMismatch {
            expected: body.dim(),
            got: state.dim(),
        });
    }
    Ok(())
}

/// A Gibbs measure discretized on a quadrature grid.
///
/// Each node carries `log(cell volume) - beta*lambda/2*|x|^2` plus the
/// running potential `-beta * F(x)`. Pushing a loss is `O(nodes)`.
#[derive(Debug, Clone)]
pub struct GridGibbs {
    grid: Grid,
    params: GibbsParams,
    base: Vec<f64>,
    potential: Vec<f64>,
}

impl GridGibbs {
    pub fn new(body: &ConvexBody, cells: usize, params: GibbsParams) -> Result<Self> {
        let grid = body.grid_points(cells)?;
        if grid.is_empty() {
            return Err(Error::pre("GridGibbs", "grid has no interior nodes"));
        }
        let base = grid
            .iter()
            .map(|(p, w)| w.ln() - 0.5 * params.beta * params.lambda * dot(p, p))
            .collect();
        let potential = vec![0.0; grid.len()];
        Ok(Self {
            grid,
            params,
            base,
            potential,
        })
    }

    pub fn from_state(state: &GibbsState, body: &ConvexBody, cells: usize) -> Result<Self> {
        let mut g = Self::new(body, cells, state.params())?;
        for (f, p) in g.potential.iter_mut().zip(&g.grid.points) {
            *f = state.potential(p);
        }
        Ok(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> GibbsParams {
        self.params
    }

    pub fn push_loss(&mut self, l: &LossFunction) {
        for (f, p) in self.potential.iter_mut().zip(&self.grid.points) {
            *f += l.value(p);
        }
    }

    /// Per-node `log(weight * unnormalized density)`.
    pub fn log_masses(&self) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.potential)
            .map(|(b, f)| b - self.params.beta * f)
            .collect()
    }

    pub fn log_z(&self) -> f64 {
        log_sum_exp(&self.log_masses())
    }

    /// Normalized node probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let lm = self.log_masses();
        let lz = log_sum_exp(&lm);
        lm.iter().map(|v| (v - lz).exp()).collect()
    }

    /// `E[h(X)]` under the discretized measure.
    pub fn expectation(&self, h: impl Fn(&[f64]) -> f64) -> f64 {
        self.probabilities()
            .iter()
            .zip(&self.grid.points)
            .map(|(p, x)| p * h(x))
            .sum()
    }
}

/// How `log(Z_t / Z_{t+1})` is obtained in [`log_density_ratio_step`].
#[derive(Debug, Clone, Copy)]
pub enum RatioMode<'a> {
    /// Grid quadrature on `body` with `cells` cells per axis (`d <= 2`).
    Grid { body: &'a ConvexBody, cells: usize },
    /// Draws from `mu_bar_t` and `mu_bar_{t+1}` (at least 100 each).
    Bracket {
        samples_current: &'a [Point],
        samples_next: &'a [Point],
    },
}

/// Log density ratio `log(mu_bar_{t+1}(x) / mu_bar_t(x))` and its bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStep {
    pub value: f64,
    /// `-beta l_t(x) + E_{t+1}[beta l_t]`.
    pub lower: f64,
    /// `-beta l_t(x) + E_t[beta l_t]`.
    pub upper: f64,
}

/// `log mu_bar_{t+1}(x) - log mu_bar_t(x) = -beta l_t(x) + log(Z_t / Z_{t+1})`.
///
/// The log partition `p(s) = log Z(F + s l_t)` is convex in `s`, so the
/// partition ratio is bracketed by the expectations of `beta l_t` under the
/// two measures.
pub fn log_density_ratio_step(
    state_t: &GibbsState,
    loss: &LossFunction,
    x: &[f64],
    mode: RatioMode<'_>,
) -> Result<RatioStep> {
    let beta = state_t.params().beta;
    let local = -beta * loss.value(x);
    match mode {
        RatioMode::Grid { body, cells } => {
            if body.dim() > 2 {
                return Err(Error::Unsupported(
                    "grid-mode density ratio needs d <= 2".into(),
                ));
            }
            check_dim(state_t, body)?;
            let mut g = GridGibbs::from_state(state_t, body, cells)?;
            let lz_t = g.log_z();
            let e_t = g.expectation(|p| beta * loss.value(p));
            g.push_loss(loss);
            let lz_next = g.log_z();
            let e_next = g.expectation(|p| beta * loss.value(p));
            Ok(RatioStep {
                value: local + lz_t - lz_next,
                lower: local + e_next,
                upper: local + e_t,
            })
        }
        RatioMode::Bracket {
            samples_current,
            samples_next,
        } => {
            if samples_current.len() < 100 || samples_next.len() < 100 {
                return Err(Error::pre(
                    "log_density_ratio_step",
                    "bracket mode needs at least 100 samples from each measure",
                ));
            }
            let logs: Vec<f64> = samples_current
                .iter()
                .map(|y| -beta * loss.value(y))
                .collect();
            let log_mean = log_sum_exp(&logs) - (logs.len() as f64).ln();
            let mean_of = |s: &[Point]| s.iter().map(|y| beta * loss.value(y)).sum::<f64>() / s.len() as f64;
            Ok(RatioStep {
                value: local - log_mean,
                lower: local + mean_of(samples_next),
                upper: local + mean_of(samples_current),
            })
        }
    }
}

/// Closeness scale `Phi` of consecutive Gibbs measures whose potentials
/// differ by a `G`-Lipschitz function:
/// `exp(2 beta G^2 / lambda + sqrt(8 beta G^2 log(2/delta) / lambda))`.
pub fn phi_bound(beta: f64, lambda: f64, lipschitz: f64, delta: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::pre("phi_bound", "lambda must be > 0"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::pre("phi_bound", format!("delta = {delta} not in (0, 1]")));
    }
    if !(beta >= 0.0 && lipschitz >= 0.0) {
        return Err(Error::pre("phi_bound", "beta and G must be >= 0"));
    }
    let bg2 = beta * lipschitz * lipschitz;
    Ok((2.0 * bg2 / lambda + (8.0 * bg2 * (2.0 / delta).ln() / lambda).sqrt()).exp())
}

/// Log-Sobolev constant `beta * Lambda` of a `Lambda`-strongly-convex Gibbs
/// potential at inverse temperature `beta`.
pub fn lsi_constant(beta: f64, strong_convexity: f64) -> f64 {
    beta * strong_convexity
}

/// Herbst concentration bound `2 exp(-c r^2 / (2 L^2))`, capped at 1.
pub fn herbst_tail(lsi: f64, lipschitz: f64, r: f64) -> f64 {
    (2.0 * (-lsi * r * r / (2.0 * lipschitz * lipschitz)).exp()).min(1.0)
}

/// Discrete Gibbs variational principle: returns the distribution
/// `prior * exp(-beta f)` (normalized) and its objective
/// `E_mu[beta f] + KL(mu || prior)`.
pub fn variational_check(prior: &[f64], f: &[f64], beta: f64) -> Result<(Vec<f64>, f64)> {
    if prior.len() != f.len() || prior.is_empty() {
        return Err(Error::pre("variational_check", "prior and f must have equal, nonzero length"));
    }
    if prior.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::pre("variational_check", "prior must be strictly positive"));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::pre(
            "variational_check",
            format!("prior sums to {total}, not 1"),
        ));
    }
    let logs: Vec<f64> = prior
        .iter()
        .zip(f)
        .map(|(p, fi)| p.ln() - beta * fi)
        .collect();
    let lz = log_sum_exp(&logs);
    let gibbs: Vec<f64> = logs.iter().map(|l| (l - lz).exp()).collect();
    let objective = variational_objective(&gibbs, prior, f, beta);
    Ok((gibbs, objective))
}

/// `E_mu[beta f] + KL(mu || prior)` for discrete distributions.
pub fn variational_objective(mu: &[f64], prior: &[f64], f: &[f64], beta: f64) -> f64 {
    mu.iter()
        .zip(prior.iter().zip(f))
        .map(|(m, (p, fi))| {
            let kl = if *m > 0.0 { m * (m / p).ln() } else { 0.0 };
            m * beta * fi + kl
        })
        .sum()
}

/// `p(t) = log sum_i exp(-(f_i + t g_i))` over a grid with unit weights.
pub fn grid_log_partition(f: &[f64], g: &[f64], t: f64) -> f64 {
    let v: Vec<f64> = f.iter().zip(g).map(|(fi, gi)| -(fi + t * gi)).collect();
    log_sum_exp(&v)
}

/// Analytic `p'(t) = E_{mu(t)}[-g]` next to the central difference
/// `(p(t+h) - p(t-h)) / 2h`.
pub fn log_partition_derivative_check(f: &[f64], g: &[f64], t: f64, h: f64) -> Result<(f64, f64)> {
    if f.len() != g.len() || f.is_empty() {
        return Err(Error::pre("log_partition_derivative_check", "grid functions differ in length"));
    }
    if !(h > 0.0 && h <= 0.1) {
        return Err(Error::pre("log_partition_derivative_check", "h must lie in (0, 0.1]"));
    }
    let v: Vec<f64> = f.iter().zip(g).map(|(fi, gi)| -(fi + t * gi)).collect();
    let lz = log_sum_exp(&v);
    let analytic: f64 = v.iter().zip(g).map(|(vi, gi)| -(vi - lz).exp() * gi).sum();
    let fd = (grid_log_partition(f, g, t + h) - grid_log_partition(f, g, t - h)) / (2.0 * h);
    Ok((analytic, fd))
}

/// Central second difference of `p` at `t`.
pub fn log_partition_second_difference(f: &[f64], g: &[f64], t: f64, h: f64) -> f64 {
    (grid_log_partition(f, g, t + h) - 2.0 * grid_log_partition(f, g, t)
        + grid_log_partition(f, g, t - h))
        / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn unit_interval() -> ConvexBody {
        ConvexBody::interval(0.0, 1.0).unwrap()
    }

    fn state_with(losses: Vec<LossFunction>, beta: f64, lambda: f64) -> GibbsState {
        let len = losses.len();
        GibbsState::with_prefix(GibbsParams::new(beta, lambda).unwrap(), 1, Arc::from(losses), len)
    }

    #[test]
    fn zero_temperature_is_flat() {
        let s = state_with(vec![LossFunction::linear(vec![3.0])], 0.0, 5.0);
        assert_eq!(s.unnormalized_log_density(&[0.7]), 0.0);
    }

    #[test]
    fn log_density_arithmetic() {
        // beta = 0.5, potential 2, lambda = 2, |x|^2 = 1  ->  -0.5 * (2 + 1) = -1.5
        let s = state_with(vec![LossFunction::constant(1, 1.0), LossFunction::linear(vec![1.0])], 0.5, 2.0);
        assert_abs_diff_eq!(s.unnormalized_log_density(&[1.0]), -1.5, epsilon = 1e-15);
        let flat = GibbsState::initial(GibbsParams::new(1.0, 0.0).unwrap(), 1);
        assert_eq!(flat.unnormalized_log_density(&[0.3]), 0.0);
    }

    #[test]
    fn potential_matches_sum_of_losses() {
        let losses = vec![
            LossFunction::linear(vec![0.4]),
            LossFunction::abs_deviation(1.0, vec![1.0], 0.3).unwrap(),
            LossFunction::Linear { g: vec![-0.2], c: 0.7 },
            LossFunction::max_linear(vec![vec![1.0], vec![-2.0]], vec![0.0, 0.1]).unwrap(),
        ];
        let s = state_with(losses.clone(), 1.0, 1.0);
        for x in [0.0, 0.25, 0.6, 1.0] {
            let direct: f64 = losses.iter().map(|l| l.value(&[x])).sum();
            assert_abs_diff_eq!(s.potential(&[x]), direct, epsilon = 1e-12);
        }
        assert_eq!(s.round(), 5);
    }

    #[test]
    fn advance_shares_prefix() {
        let losses: Arc<[LossFunction]> = Arc::from(vec![LossFunction::linear(vec![1.0]); 3]);
        let s0 = GibbsState::with_prefix(GibbsParams::new(1.0, 0.0).unwrap(), 1, losses, 0);
        let s1 = s0.advance().unwrap();
        let s3 = s1.advance().unwrap().advance().unwrap();
        assert!(s3.advance().is_none());
        assert_eq!(s3.potential(&[0.5]), 1.5);
    }

    #[test]
    fn uniform_partition_is_zero() {
        let s = GibbsState::initial(GibbsParams::new(1.0, 0.0).unwrap(), 1);
        let est = log_partition(&s, &unit_interval(), 64).unwrap();
        assert_abs_diff_eq!(est.log_z, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.normalized_log_density(&[0.3], &est), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_partition_matches_analytic() {
        let s = state_with(vec![LossFunction::linear(vec![1.0])], 1.0, 0.0);
        let exact = (1.0 - (-1.0f64).exp()).ln();
        let est = log_partition(&s, &unit_interval(), 512).unwrap();
        assert_abs_diff_eq!(est.log_z, exact, epsilon = 1e-5);
        assert_abs_diff_eq!(exact, -0.45868, epsilon = 1e-5);
        let finer = log_partition(&s, &unit_interval(), 1024).unwrap();
        assert!((finer.log_z - est.log_z).abs() < 1e-4);
        assert!((finer.log_z - est.log_z).abs() <= est.error_hint);
        // density integrates to one on the grid
        let grid = unit_interval().grid_points(512).unwrap();
        let total: f64 = grid
            .iter()
            .map(|(p, w)| w * s.normalized_log_density(p, &est).exp())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn partition_rejects_high_dim() {
        let body = ConvexBody::boxed(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let s = GibbsState::initial(GibbsParams::new(1.0, 1.0).unwrap(), 3);
        assert!(matches!(log_partition(&s, &body, 8), Err(Error::Unsupported(_))));
    }

    #[test]
    fn sampled_partition_close_to_grid() {
        let body = ConvexBody::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let s = GibbsState::with_prefix(
            GibbsParams::new(1.5, 1.0).unwrap(),
            2,
            Arc::from(vec![LossFunction::linear(vec![0.5, -0.3])]),
            1,
        );
        let grid = log_partition(&s, &body, 128).unwrap();
        let mut rng = RandomStream::new(4);
        let mc = log_partition_sampled(&s, &body, 200_000, &mut rng).unwrap();
        assert!((grid.log_z - mc.log_z).abs() < 5.0 * mc.error_hint + 1e-3);
    }

    #[test]
    fn constant_loss_ratio_is_one() {
        let s = state_with(vec![LossFunction::linear(vec![0.7])], 2.0, 1.0);
        let l = LossFunction::constant(1, 3.5);
        let r = log_density_ratio_step(&s, &l, &[0.4], RatioMode::Grid { body: &unit_interval(), cells: 256 })
            .unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ratio_matches_density_quotient() {
        let body = unit_interval();
        let s = state_with(vec![LossFunction::abs_deviation(1.0, vec![1.0], 0.3).unwrap()], 2.0, 1.5);
        let l = LossFunction::linear(vec![-0.8]);
        let next = s.with_loss(l.clone());
        let cells = 512;
        let z_t = log_partition(&s, &body, cells).unwrap();
        let z_n = log_partition(&next, &body, cells).unwrap();
        for x in [0.1, 0.45, 0.9] {
            let direct = next.normalized_log_density(&[x], &z_n) - s.normalized_log_density(&[x], &z_t);
            let r = log_density_ratio_step(&s, &l, &[x], RatioMode::Grid { body: &body, cells }).unwrap();
            assert_abs_diff_eq!(r.value, direct, epsilon = 1e-6);
            assert!(r.lower <= r.value + 1e-12 && r.value <= r.upper + 1e-12);
        }
    }

    #[test]
    fn bracket_needs_samples() {
        let s = GibbsState::initial(GibbsParams::new(1.0, 1.0).unwrap(), 1);
        let few = vec![vec![0.5]; 99];
        let l = LossFunction::linear(vec![1.0]);
        let out = log_density_ratio_step(
            &s,
            &l,
            &[0.5],
            RatioMode::Bracket { samples_current: &few, samples_next: &few },
        );
        assert!(out.is_err());
    }

    #[test]
    fn phi_bound_values() {
        assert_eq!(phi_bound(0.0, 1.0, 3.0, 0.1).unwrap(), 1.0);
        assert_eq!(phi_bound(2.0, 1.0, 0.0, 0.1).unwrap(), 1.0);
        let v = phi_bound(1.0, 1.0, 1.0, 2.0 / std::f64::consts::E).unwrap();
        assert_abs_diff_eq!(v, (2.0 + 8.0f64.sqrt()).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(v, 125.0, epsilon = 0.1);
        assert!(phi_bound(1.0, 0.0, 1.0, 0.1).is_err());
        assert!(phi_bound(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn lsi_and_herbst() {
        assert_eq!(lsi_constant(2.0, 3.0), 6.0);
        assert_eq!(herbst_tail(1.0, 1.0, 0.0), 1.0);
        assert_abs_diff_eq!(herbst_tail(2.0, 1.0, 2.0), 2.0 * (-4.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(herbst_tail(2.0, 1.0, 2.0), 0.03663, epsilon = 1e-5);
    }

    #[test]
    fn variational_two_points() {
        let (g, obj) = variational_check(&[0.5, 0.5], &[0.0, 2.0f64.ln()], 1.0).unwrap();
        assert_abs_diff_eq!(g[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 1.0 / 3.0, epsilon = 1e-15);
        // minimum equals -log E_prior[exp(-f)] = -log(3/4)
        assert_abs_diff_eq!(obj, -(0.75f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn variational_constant_f() {
        let prior = [0.1, 0.2, 0.3, 0.4];
        let (g, obj) = variational_check(&prior, &[1.5; 4], 2.0).unwrap();
        for (a, b) in g.iter().zip(prior) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(obj, 3.0, epsilon = 1e-12);
        assert!(variational_check(&[0.5, 0.6], &[0.0, 0.0], 1.0).is_err());
        assert!(variational_check(&[1.0, 0.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn derivative_of_constant_shift() {
        let f = [0.1, 0.5, -0.3];
        let (a, fd) = log_partition_derivative_check(&f, &[0.0; 3], 0.4, 1e-3).unwrap();
        assert_eq!((a, fd), (0.0, 0.0));
        let (a, fd) = log_partition_derivative_check(&f, &[2.5; 3], 0.4, 1e-3).unwrap();
        assert_abs_diff_eq!(a, -2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fd, -2.5, epsilon = 1e-9);
        assert!(log_partition_derivative_check(&f, &[0.0; 3], 0.0, 0.5).is_err());
    }

    #[test]
    fn derivative_random_grids() {
        let mut rng = RandomStream::new(8);
        for _ in 0..20 {
            let f: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(-1.0..1.0);
            let (a, fd) = log_partition_derivative_check(&f, &g, t, 1e-4).unwrap();
            assert!((a - fd).abs() < 1e-5);
            assert!(log_partition_second_difference(&f, &g, t, 1e-3) >= -1e-6);
        }
    }
}
