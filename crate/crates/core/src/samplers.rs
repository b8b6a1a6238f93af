//! Sampling from regularized Gibbs measures.
//!
//! Two samplers: an exact inverse-CDF sampler on the quadrature grid of a
//! 1-D or 2-D body, and projected Langevin dynamics for any dimension. The
//! grid sampler is the reference; Langevin is best-effort.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::ConvexBody;
use crate::gibbs::{GibbsState, GridGibbs};
use crate::rng::RandomStream;
use crate::{Error, Point, Result};

/// Default Langevin burn-in (and default chain length).
pub const DEFAULT_BURN_IN: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    GridInverseCdf {
        cells: usize,
    },
    ProjectedLangevin {
        /// `None` selects `min(1e-3, 1 / (beta*lambda + beta*G_sum))`.
        #[serde(default)]
        step_size: Option<f64>,
        #[serde(default = "default_steps")]
        num_steps: usize,
        #[serde(default = "default_steps")]
        burn_in: usize,
    },
}

fn default_steps() -> usize {
    DEFAULT_BURN_IN
}

impl SamplerSpec {
    pub fn grid(cells: usize) -> Self {
        SamplerSpec::GridInverseCdf { cells }
    }

    pub fn langevin(step_size: f64, num_steps: usize, burn_in: usize) -> Self {
        SamplerSpec::ProjectedLangevin {
            step_size: Some(step_size),
            num_steps,
            burn_in,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            SamplerSpec::GridInverseCdf { cells } => {
                if cells < 16 {
                    return Err(Error::config("sampler.cells", format!("{cells} < 16")));
                }
                if dim > 2 {
                    return Err(Error::Unsupported(format!(
                        "grid-inverse-cdf sampler in dimension {dim}"
                    )));
                }
            }
            SamplerSpec::ProjectedLangevin {
                step_size,
                num_steps,
                burn_in,
            } => {
                if let Some(h) = step_size {
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(Error::config("sampler.step_size", "must be > 0"));
                    }
                }
                if num_steps < burn_in {
                    return Err(Error::config(
                        "sampler.num_steps",
                        format!("num_steps {num_steps} < burn_in {burn_in}"),
                    ));
                }
                if num_steps == 0 {
                    return Err(Error::config("sampler.num_steps", "must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn is_grid(&self) -> bool {
        matches!(self, SamplerSpec::GridInverseCdf { .. })
    }
}

/// Default Langevin step for a state.
pub fn default_step_size(state: &GibbsState) -> f64 {
    let p = state.params();
    let denom = p.beta * p.lambda + p.beta * state.potential_lipschitz();
    if denom > 0.0 {
        (1.0 / denom).min(1e-3)
    } else {
        1e-3
    }
}

fn resolve_step(spec_step: Option<f64>, state: &GibbsState) -> f64 {
    spec_step.unwrap_or_else(|| default_step_size(state))
}

/// Exact sampler over the cells of a discretized Gibbs measure.
#[derive(Debug, Clone)]
pub struct GridSampler {
    points: Vec<Point>,
    widths: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new(g: &GridGibbs) -> Self {
        Self::from_probabilities(&g.grid().points, &g.grid().cell_widths, &g.probabilities())
    }

    pub fn from_probabilities(points: &[Point], widths: &[f64], probs: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in probs {
            acc += p;
            cdf.push(acc);
        }
        Self {
            points: points.to_vec(),
            widths: widths.to_vec(),
            cdf,
        }
    }

    /// Cumulative cell masses in node order.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Index of the cell selected by a uniform `u`.
    pub fn cell_index(&self, u: f64) -> usize {
        let total = *self.cdf.last().expect("nonempty grid");
        let target = u * total;
        self.cdf
            .partition_point(|c| *c <= target)
            .min(self.cdf.len() - 1)
    }

    pub fn draw(&self, body: &ConvexBody, rng: &mut RandomStream) -> Point {
        let u: f64 = rng.random();
        let i = self.cell_index(u);
        jitter_in_cell(&self.points[i], &self.widths, body, rng)
    }
}

/// Uniform point in the cell centred at `node`, rejected against the body.
/// After 64 failed attempts (a sliver of a boundary cell) the node is used.
pub(crate) fn jitter_in_cell(
    node: &[f64],
    widths: &[f64],
    body: &ConvexBody,
    rng: &mut RandomStream,
) -> Point {
    for _ in 0..64 {
        let p: Point = node
            .iter()
            .zip(widths)
            .map(|(c, w)| c + w * (rng.random::<f64>() - 0.5))
            .collect();
        if body.contains(&p) {
            return p;
        }
    }
    node.to_vec()
}

/// One projected Euler step `Pi_K(x - step*beta*grad L(x) + sqrt(2 step) noise)`.
pub fn langevin_step(
    x: &[f64],
    state: &GibbsState,
    body: &ConvexBody,
    step_size: f64,
    noise: &[f64],
) -> Result<Point> {
    if noise.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: noise.len(),
        });
    }
    let beta = state.params().beta;
    let grad = state.regularized_gradient(x);
    let scale = (2.0 * step_size).sqrt();
    let y: Point = x
        .iter()
        .zip(grad.iter().zip(noise))
        .map(|(xi, (gi, ni))| xi - step_size * beta * gi + scale * ni)
        .collect();
    body.project(&y)
}

fn normal_vec(dim: usize, rng: &mut RandomStream) -> Point {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draw one point from `state` on `body`.
pub fn sample(
    state: &GibbsState,
    body: &ConvexBody,
    spec: &SamplerSpec,
    rng: &mut RandomStream,
) -> Result<Point> {
    spec.validate(body.dim())?;
    if state.dim() != body.dim() {
        return Err(Error::DimensionMismatch {
            expected: body.dim(),
            got: state.dim(),
        });
    }
    match *spec {
        SamplerSpec::GridInverseCdf { cells } => {
            let g = GridGibbs::from_state(state, body, cells)?;
            Ok(GridSampler::new(&g).draw(body, rng))
        }
        SamplerSpec::ProjectedLangevin {
            step_size,
            num_steps,
            ..
        } => {
            let h = resolve_step(step_size, state);
            let mut x = body.project(&vec![0.0; body.dim()])?;
            for _ in 0..num_steps {
                let xi = normal_vec(body.dim(), rng);
                x = langevin_step(&x, state, body, h, &xi)?;
            }
            Ok(x)
        }
    }
}

/// `n` approximate draws from one Langevin chain: `burn_in` steps, then one
/// draw every `max(1, (num_steps - burn_in) / n)` steps.
pub fn langevin_samples(
    state: &GibbsState,
    body: &ConvexBody,
    spec: &SamplerSpec,
    n: usize,
    rng: &mut RandomStream,
) -> Result<Vec<Point>> {
    let SamplerSpec::ProjectedLangevin {
        step_size,
        num_steps,
        burn_in,
    } = *spec
    else {
        return Err(Error::pre("langevin_samples", "needs a projected-langevin spec"));
    };
    spec.validate(body.dim())?;
    let h = resolve_step(step_size, state);
    let thin = ((num_steps - burn_in) / n.max(1)).max(1);
    let mut x = body.project(&vec![0.0; body.dim()])?;
    for _ in 0..burn_in {
        x = langevin_step(&x, state, body, h, &normal_vec(body.dim(), rng))?;
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        for _ in 0..thin {
            x = langevin_step(&x, state, body, h, &normal_vec(body.dim(), rng))?;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Two Langevin chains driven by the same noise, started at `project(0)`.
pub fn coupled_sample(
    state: &GibbsState,
    state_prime: &GibbsState,
    body: &ConvexBody,
    spec: &SamplerSpec,
    rng: &mut RandomStream,
) -> Result<(Point, Point)> {
    if state.params() != state_prime.params() {
        return Err(Error::pre("coupled_sample", "states have different (beta, lambda)"));
    }
    let SamplerSpec::ProjectedLangevin {
        step_size,
        num_steps,
        ..
    } = *spec
    else {
        return Err(Error::pre("coupled_sample", "needs a projected-langevin spec"));
    };
    spec.validate(body.dim())?;
    let h = match step_size {
        Some(h) => h,
        None => default_step_size(state).min(default_step_size(state_prime)),
    };
    let mut x = body.project(&vec![0.0; body.dim()])?;
    let mut y = x.clone();
    for _ in 0..num_steps {
        let xi = normal_vec(body.dim(), rng);
        x = langevin_step(&x, state, body, h, &xi)?;
        y = langevin_step(&y, state_prime, body, h, &xi)?;
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::GibbsParams;
    use crate::losses::LossFunction;
    use std::sync::Arc;

    fn unit() -> ConvexBody {
        ConvexBody::interval(0.0, 1.0).unwrap()
    }

    fn state1(losses: Vec<LossFunction>, beta: f64, lambda: f64) -> GibbsState {
        let n = losses.len();
        GibbsState::with_prefix(GibbsParams::new(beta, lambda).unwrap(), 1, Arc::from(losses), n)
    }

    /// CDF of the piecewise-uniform grid density on [0, 1] with `n` cells.
    fn grid_cdf(probs: &[f64], x: f64) -> f64 {
        let n = probs.len();
        let pos = x * n as f64;
        let k = (pos.floor() as usize).min(n);
        let mut c: f64 = probs[..k].iter().sum();
        if k < n {
            c += probs[k] * (pos - k as f64);
        }
        c
    }

    fn ks_against_grid(state: &GibbsState, cells: usize, draws: usize, seed: u64) -> f64 {
        // independent oracle: direct quadrature of exp(log density) at midpoints
        let h = 1.0 / cells as f64;
        let raw: Vec<f64> = (0..cells)
            .map(|i| state.unnormalized_log_density(&[(i as f64 + 0.5) * h]))
            .collect();
        let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = raw.iter().map(|r| (r - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|v| v / z).collect();

        let body = unit();
        let g = GridGibbs::from_state(state, &body, cells).unwrap();
        let sampler = GridSampler::new(&g);
        let mut rng = RandomStream::new(seed);
        let mut xs: Vec<f64> = (0..draws).map(|_| sampler.draw(&body, &mut rng)[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws as f64;
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = grid_cdf(&probs, *x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn spec_validation() {
        assert!(SamplerSpec::grid(15).validate(1).is_err());
        assert!(SamplerSpec::grid(16).validate(2).is_ok());
        assert!(matches!(SamplerSpec::grid(16).validate(3), Err(Error::Unsupported(_))));
        assert!(SamplerSpec::langevin(0.0, 10, 5).validate(3).is_err());
        assert!(SamplerSpec::langevin(1e-3, 4, 5).validate(3).is_err());
        assert!(SamplerSpec::langevin(1e-3, 5, 5).validate(3).is_ok());
    }

    #[test]
    fn spec_json() {
        let s: SamplerSpec = serde_json::from_str(r#"{"kind":"grid-inverse-cdf","cells":64}"#).unwrap();
        assert_eq!(s, SamplerSpec::grid(64));
        let l: SamplerSpec = serde_json::from_str(r#"{"kind":"projected-langevin"}"#).unwrap();
        assert_eq!(
            l,
            SamplerSpec::ProjectedLangevin { step_size: None, num_steps: 10_000, burn_in: 10_000 }
        );
        assert!(serde_json::from_str::<SamplerSpec>(r#"{"kind":"grid-inverse-cdf","cells":64,"x":1}"#).is_err());
    }

    #[test]
    fn uniform_grid_mean() {
        let s = GibbsState::initial(GibbsParams::new(3.0, 0.0).unwrap(), 1);
        let body = unit();
        let g = GridGibbs::from_state(&s, &body, 128).unwrap();
        let sampler = GridSampler::new(&g);
        let mut rng = RandomStream::new(1);
        let mean: f64 = (0..100_000).map(|_| sampler.draw(&body, &mut rng)[0]).sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn same_seed_same_sample() {
        let s = state1(vec![LossFunction::linear(vec![1.0])], 2.0, 1.0);
        for spec in [SamplerSpec::grid(64), SamplerSpec::langevin(1e-3, 200, 100)] {
            let a = sample(&s, &unit(), &spec, &mut RandomStream::new(42)).unwrap();
            let b = sample(&s, &unit(), &spec, &mut RandomStream::new(42)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn grid_sampler_in_3d_unsupported() {
        let body = ConvexBody::boxed(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let s = GibbsState::initial(GibbsParams::new(1.0, 1.0).unwrap(), 3);
        let out = sample(&s, &body, &SamplerSpec::grid(16), &mut RandomStream::new(0));
        assert!(matches!(out, Err(Error::Unsupported(_))));
    }

    #[test]
    fn ks_strongly_convex_state() {
        let s = state1(vec![LossFunction::linear(vec![-3.0])], 1.0, 4.0);
        let ks = ks_against_grid(&s, 256, 100_000, 7);
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn ks_random_states() {
        let mut rng = RandomStream::new(99);
        for k in 0..5 {
            let losses: Vec<LossFunction> = (0..5)
                .map(|_| {
                    if rng.random::<bool>() {
                        LossFunction::linear(vec![rng.random_range(-2.0..2.0)])
                    } else {
                        LossFunction::abs_deviation(rng.random_range(0.1..2.0), vec![1.0], rng.random_range(0.0..1.0))
                            .unwrap()
                    }
                })
                .collect();
            let s = state1(losses, rng.random_range(0.1..3.0), rng.random_range(0.0..5.0));
            let ks = ks_against_grid(&s, 200, 100_000, 100 + k);
            assert!(ks < 0.02, "state {k}: ks {ks}");
        }
    }

    #[test]
    fn disk_draws_stay_inside() {
        let body = ConvexBody::ball(vec![0.0, 0.0], 1.0).unwrap();
        let s = GibbsState::initial(GibbsParams::new(1.0, 1.0).unwrap(), 2);
        let g = GridGibbs::from_state(&s, &body, 32).unwrap();
        let sampler = GridSampler::new(&g);
        let mut rng = RandomStream::new(3);
        for _ in 0..2000 {
            assert!(body.contains(&sampler.draw(&body, &mut rng)));
        }
    }

    #[test]
    fn langevin_step_fixed_point_and_sign() {
        let body = ConvexBody::interval(-1.0, 1.0).unwrap();
        let flat = GibbsState::initial(GibbsParams::new(1.0, 0.0).unwrap(), 1);
        assert_eq!(langevin_step(&[0.3], &flat, &body, 0.1, &[0.0]).unwrap(), vec![0.3]);
        let tilted = state1(vec![LossFunction::linear(vec![1.0])], 1.0, 0.0);
        let y = langevin_step(&[0.3], &tilted, &body, 0.01, &[0.0]).unwrap();
        assert!(y[0] < 0.3);
        assert!(langevin_step(&[0.3], &tilted, &body, 0.01, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn langevin_zero_noise_converges() {
        // potential 2x + x^2 (lambda = 2) on [0, 2]: minimizer clipped to 0;
        // potential -3x + x^2 on [-2, 2]: interior minimizer 1.5
        let cases = [
            (ConvexBody::interval(0.0, 2.0).unwrap(), 2.0, 0.0),
            (ConvexBody::interval(-2.0, 2.0).unwrap(), -3.0, 1.5),
        ];
        for (body, g, expected) in cases {
            let s = state1(vec![LossFunction::linear(vec![g])], 1.0, 2.0);
            let mut x = vec![1.0];
            for _ in 0..5000 {
                x = langevin_step(&x, &s, &body, 0.05, &[0.0]).unwrap();
            }
            assert!((x[0] - expected).abs() < 1e-6, "{} vs {}", x[0], expected);
        }
    }

    #[test]
    fn coupled_identical_states() {
        let s = state1(vec![LossFunction::linear(vec![0.5])], 1.0, 1.0);
        let spec = SamplerSpec::langevin(1e-3, 2000, 0);
        let (a, b) = coupled_sample(&s, &s, &unit(), &spec, &mut RandomStream::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupled_mismatch_rejected() {
        let a = GibbsState::initial(GibbsParams::new(1.0, 1.0).unwrap(), 1);
        let b = GibbsState::initial(GibbsParams::new(1.0, 2.0).unwrap(), 1);
        let spec = SamplerSpec::langevin(1e-3, 10, 0);
        assert!(coupled_sample(&a, &b, &unit(), &spec, &mut RandomStream::new(5)).is_err());
    }

    #[test]
    fn langevin_mean_sanity() {
        // beta = 1, lambda = 4, no loss, on [-1, 1]: mean 0, variance ~ 1/4 (slightly less from truncation)
        let body = ConvexBody::interval(-1.0, 1.0).unwrap();
        let s = GibbsState::initial(GibbsParams::new(1.0, 4.0).unwrap(), 1);
        let spec = SamplerSpec::langevin(1e-2, 40_000, 1_000);
        let xs = langevin_samples(&s, &body, &spec, 3_000, &mut RandomStream::new(12)).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / n;
        let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 0.2).abs() < 0.06, "var {var}");
    }
}
