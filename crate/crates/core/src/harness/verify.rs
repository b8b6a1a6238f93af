//! Randomized property suites for the supporting lemmas.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::gibbs::{
    log_partition_derivative_check, log_partition_second_difference, variational_check, variational_objective,
};
use crate::metrics::{btl_check, tv_expectation_check};
use crate::rng::RandomStream;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Largest observed violation margin (0 when none).
    pub worst: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn tally(name: &str, margins: impl IntoIterator<Item = f64>) -> SuiteResult {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for m in margins {
        checked += 1;
        if m > 0.0 {
            violations += 1;
            worst = worst.max(m);
        }
    }
    SuiteResult {
        name: name.to_string(),
        checked,
        violations,
        worst,
    }
}

fn random_simplex(n: usize, rng: &mut RandomStream) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Gibbs distribution against 1000 competitors on a 16-point grid.
pub fn variational_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = RandomStream::derive(seed, 1);
    let prior = random_simplex(16, &mut rng);
    let f: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let beta = rng.random_range(0.1..3.0);
    let (gibbs, obj) = variational_check(&prior, &f, beta)?;
    let mut margins = Vec::with_capacity(1000);
    for k in 0..1000 {
        let noise = random_simplex(16, &mut rng);
        // alternate small perturbations of the optimum with arbitrary distributions
        let w = if k % 2 == 0 { rng.random_range(0.0..0.1) } else { 1.0 };
        let comp: Vec<f64> = gibbs.iter().zip(&noise).map(|(g, n)| (1.0 - w) * g + w * n).collect();
        margins.push(obj - variational_objective(&comp, &prior, &f, beta) - 1e-12);
    }
    Ok(tally("variational principle", margins))
}

/// Analytic log-partition derivative against central differences.
pub fn derivative_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = RandomStream::derive(seed, 2);
    let mut margins = Vec::new();
    for _ in 0..100 {
        let f: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = rng.random_range(-1.0..1.0);
        let (a, fd) = log_partition_derivative_check(&f, &g, t, 1e-4)?;
        margins.push((a - fd).abs() - 1e-5);
    }
    Ok(tally("log-partition derivative", margins))
}

/// Convexity of the log partition along a direction.
pub fn convexity_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = RandomStream::derive(seed, 3);
    let mut margins = Vec::new();
    for _ in 0..100 {
        let f: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        for _ in 0..5 {
            let t = rng.random_range(-2.0..2.0);
            margins.push(-log_partition_second_difference(&f, &g, t, 1e-3) - 1e-6);
        }
    }
    Ok(tally("log-partition convexity", margins))
}

/// Expectation gap bounded by total variation, 1000 triples on 32 points.
pub fn tv_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = RandomStream::derive(seed, 4);
    let mut margins = Vec::new();
    for _ in 0..1000 {
        let mu = random_simplex(32, &mut rng);
        let nu = random_simplex(32, &mut rng);
        let scale = rng.random_range(0.1..10.0);
        let f: Vec<f64> = (0..32).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let (lhs, rhs) = tv_expectation_check(&mu, &nu, &f)?;
        margins.push(lhs - rhs - 1e-12 * rhs.max(1.0));
    }
    Ok(tally("tv expectation", margins))
}

/// Be-the-leader on 1000 random sequences over 64 grid points.
pub fn btl_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = RandomStream::derive(seed, 5);
    let mut margins = Vec::new();
    for k in 0..1000 {
        let rounds = rng.random_range(1..=20);
        let losses: Vec<Vec<f64>> = (0..rounds)
            .map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let reg: Option<Vec<f64>> = (k % 2 == 1).then(|| {
            let lam = rng.random_range(0.1..2.0);
            (0..64)
                .map(|i| {
                    let x = -1.0 + (i as f64 + 0.5) / 32.0;
                    0.5 * lam * x * x
                })
                .collect()
        });
        let ok = btl_check(&losses, reg.as_deref())?;
        margins.push(if ok { -1.0 } else { 1.0 });
    }
    Ok(tally("follow/be the leader", margins))
}

/// All lemma suites in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        variational_suite(seed)?,
        derivative_suite(seed)?,
        convexity_suite(seed)?,
        tv_suite(seed)?,
        btl_suite(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for s in run_all(2024).unwrap() {
            assert!(s.passed(), "{s:?}");
            assert!(s.checked >= 100);
        }
    }

    #[test]
    fn tally_counts() {
        let r = tally("x", [-1.0, 0.5, 2.0]);
        assert_eq!((r.checked, r.violations, r.worst), (3, 2, 2.0));
    }
}
