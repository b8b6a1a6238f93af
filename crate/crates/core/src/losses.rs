//! Lipschitz convex losses and oblivious adversaries.
//!
//! Losses here may be piecewise linear. Nothing in the algorithm needs second
//! derivatives: only values (for densities) and subgradients (for Langevin
//! drift and gradient baselines) are used.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::ConvexBody;
use crate::rng::RandomStream;
use crate::{dot, norm, Error, Point, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossFunction {
    /// `<g, x> + c`.
    Linear { g: Vec<f64>, c: f64 },
    /// `scale * |<u, x> - b|` with `|u| = 1`.
    AbsDeviation { scale: f64, u: Vec<f64>, b: f64 },
    /// `max_i (<g_i, x> + c_i)`.
    MaxLinear { g: Vec<Vec<f64>>, c: Vec<f64> },
}

impl LossFunction {
    pub fn linear(g: Vec<f64>) -> Self {
        LossFunction::Linear { g, c: 0.0 }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        LossFunction::Linear {
            g: vec![0.0; dim],
            c,
        }
    }

    /// `scale * |<u, x> - b|`; `u` is normalized here.
    pub fn abs_deviation(scale: f64, u: Vec<f64>, b: f64) -> Result<Self> {
        let n = norm(&u);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::pre("abs_deviation", "direction must be nonzero"));
        }
        if scale < 0.0 {
            return Err(Error::pre("abs_deviation", "scale must be nonnegative"));
        }
        Ok(LossFunction::AbsDeviation {
            scale,
            u: u.iter().map(|v| v / n).collect(),
            b,
        })
    }

    pub fn max_linear(g: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Self> {
        if g.is_empty() || g.len() != c.len() {
            return Err(Error::pre(
                "max_linear",
                "need at least one piece and one offset per piece",
            ));
        }
        let d = g[0].len();
        if g.iter().any(|gi| gi.len() != d) {
            return Err(Error::pre("max_linear", "pieces have different dimensions"));
        }
        Ok(LossFunction::MaxLinear { g, c })
    }

    pub fn dim(&self) -> usize {
        match self {
            LossFunction::Linear { g, .. } => g.len(),
            LossFunction::AbsDeviation { u, .. } => u.len(),
            LossFunction::MaxLinear { g, .. } => g[0].len(),
        }
    }

    /// Analytic Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match self {
            LossFunction::Linear { g, .. } => norm(g),
            LossFunction::AbsDeviation { scale, .. } => *scale,
            LossFunction::MaxLinear { g, .. } => g.iter().map(|gi| norm(gi)).fold(0.0, f64::max),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            LossFunction::Linear { g, c } => dot(g, x) + c,
            LossFunction::AbsDeviation { scale, u, b } => scale * (dot(u, x) - b).abs(),
            LossFunction::MaxLinear { g, c } => g
                .iter()
                .zip(c)
                .map(|(gi, ci)| dot(gi, x) + ci)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Value and a subgradient.
    ///
    /// At the kink of an absolute deviation the zero vector is returned; at
    /// ties of a max-of-linear the lowest-index active piece wins.
    pub fn eval_and_subgradient(&self, x: &[f64]) -> (f64, Point) {
        match self {
            LossFunction::Linear { g, c } => (dot(g, x) + c, g.clone()),
            LossFunction::AbsDeviation { scale, u, b } => {
                let r = dot(u, x) - b;
                let s = if r > 0.0 {
                    *scale
                } else if r < 0.0 {
                    -scale
                } else {
                    0.0
                };
                (scale * r.abs(), u.iter().map(|v| s * v).collect())
            }
            LossFunction::MaxLinear { g, c } => {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (i, (gi, ci)) in g.iter().zip(c).enumerate() {
                    let v = dot(gi, x) + ci;
                    if v > best_val {
                        best_val = v;
                        best = i;
                    }
                }
                (best_val, g[best].clone())
            }
        }
    }

    /// Adds `weight * subgradient(x)` into `out`.
    pub(crate) fn add_subgradient(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            LossFunction::Linear { g, .. } => {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += weight * gi;
                }
            }
            _ => {
                let (_, g) = self.eval_and_subgradient(x);
                for (o, gi) in out.iter_mut().zip(&g) {
                    *o += weight * gi;
                }
            }
        }
    }
}

/// Oblivious adversary families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    /// The same linear loss every round.
    FixedLinear,
    /// Linear losses whose sign flips every round.
    AlternatingSign,
    /// Absolute deviations along axis 0 whose minimizer moves through four
    /// positions of the body, one per quarter of the horizon.
    ShiftingMinimizer,
    /// Linear losses with gradients uniform in the ball of radius `G`.
    IidRandomLinear,
}

impl std::str::FromStr for AdversaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config("adversary.kind", format!("unknown adversary `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSequence {
    pub losses: Vec<LossFunction>,
    /// Common Lipschitz bound `G`.
    pub lipschitz: f64,
    pub seed: u64,
}

impl LossSequence {
    /// Wraps explicit losses; `lipschitz` must dominate every member.
    pub fn new(losses: Vec<LossFunction>, lipschitz: f64, seed: u64) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::pre("LossSequence::new", "horizon must be >= 1"));
        }
        let d = losses[0].dim();
        if losses.iter().any(|l| l.dim() != d) {
            return Err(Error::pre("LossSequence::new", "losses differ in dimension"));
        }
        if let Some(l) = losses.iter().find(|l| l.lipschitz() > lipschitz * (1.0 + 1e-12)) {
            return Err(Error::pre(
                "LossSequence::new",
                format!("loss with G = {} exceeds bound {lipschitz}", l.lipschitz()),
            ));
        }
        Ok(Self {
            losses,
            lipschitz,
            seed,
        })
    }

    pub fn horizon(&self) -> usize {
        self.losses.len()
    }

    pub fn dim(&self) -> usize {
        self.losses[0].dim()
    }

    pub fn total(&self, x: &[f64]) -> f64 {
        self.losses.iter().map(|l| l.value(x)).sum()
    }

    /// Replace round `t0` (1-based) with `replacement`.
    pub fn make_neighbor(&self, t0: usize, replacement: LossFunction) -> Result<Self> {
        if t0 == 0 || t0 > self.horizon() {
            return Err(Error::pre(
                "make_neighbor",
                format!("round {t0} outside 1..={}", self.horizon()),
            ));
        }
        if replacement.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: replacement.dim(),
            });
        }
        if replacement.lipschitz() > self.lipschitz * (1.0 + 1e-12) {
            return Err(Error::pre(
                "make_neighbor",
                format!(
                    "replacement Lipschitz constant {} exceeds sequence bound {}",
                    replacement.lipschitz(),
                    self.lipschitz
                ),
            ));
        }
        let mut out = self.clone();
        out.losses[t0 - 1] = replacement;
        Ok(out)
    }
}

/// Generates an oblivious loss sequence. Deterministic given `seed`.
pub fn generate_sequence(
    adversary: AdversaryKind,
    horizon: usize,
    lipschitz: f64,
    body: &ConvexBody,
    seed: u64,
) -> Result<LossSequence> {
    if horizon == 0 {
        return Err(Error::pre("generate_sequence", "horizon must be >= 1"));
    }
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::pre("generate_sequence", "G must be positive"));
    }
    let d = body.dim();
    let diag: Vec<f64> = vec![lipschitz / (d as f64).sqrt(); d];
    let losses = match adversary {
        AdversaryKind::FixedLinear => vec![LossFunction::linear(diag); horizon],
        AdversaryKind::AlternatingSign => (0..horizon)
            .map(|t| {
                let s = if t % 2 == 0 { 1.0 } else { -1.0 };
                LossFunction::linear(diag.iter().map(|v| s * v).collect())
            })
            .collect(),
        AdversaryKind::ShiftingMinimizer => {
            let (lo, hi) = body.bounding_box();
            let mut u = vec![0.0; d];
            u[0] = 1.0;
            (0..horizon)
                .map(|t| {
                    let phase = (4 * t / horizon).min(3);
                    let b = lo[0] + (hi[0] - lo[0]) * (phase as f64 + 0.5) / 4.0;
                    LossFunction::abs_deviation(lipschitz, u.clone(), b)
                })
                .collect::<Result<Vec<_>>>()?
        }
        AdversaryKind::IidRandomLinear => {
            let mut rng = RandomStream::new(seed);
            (0..horizon)
                .map(|_| {
                    let mut g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let n = norm(&g).max(f64::MIN_POSITIVE);
                    let r = lipschitz * rng.random::<f64>().powf(1.0 / d as f64);
                    for v in &mut g {
                        *v *= r / n;
                    }
                    LossFunction::linear(g)
                })
                .collect()
        }
    };
    LossSequence::new(losses, lipschitz, seed)
}
