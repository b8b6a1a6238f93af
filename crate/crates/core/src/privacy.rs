//! Privacy accounting for the lazy sampler and an empirical audit.
//!
//! Neighboring loss sequences differ at a single round `t0`. The per-round
//! privacy losses are composed with adaptive strong composition; the audit
//! replays both sequences many times and compares histogram cells of the
//! discretized outputs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::ConvexBody;
use crate::losses::LossSequence;
use crate::pocmw::{run_pocmw_on_path, GridPath, PocmwParams, RunTrace};
use crate::rng::RandomStream;
use crate::{Error, Result};

/// Smallest histogram-cell probability taken into account by the audit.
pub const AUDIT_MIN_MASS: f64 = 0.01;

/// Per-round privacy losses for a neighbor differing at round `t0` (1-based).
///
/// `zeta[t-1]` is the resample bit of round `t`, and `budget_open[t-1]`
/// says whether the budget was still open at round `t`. Omitted schedules
/// default to all ones.
#[allow(clippy::too_many_arguments)]
pub fn per_round_epsilons(
    horizon: usize,
    t0: usize,
    phi: f64,
    p: f64,
    g: f64,
    beta: f64,
    lambda: f64,
    zeta: Option<&[bool]>,
    budget_open: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if !(p > 0.0) {
        return Err(Error::pre("per_round_epsilons", "p must be > 0"));
    }
    if !(lambda > 0.0) {
        return Err(Error::pre("per_round_epsilons", "lambda must be > 0"));
    }
    if !(phi >= 1.0) {
        return Err(Error::pre("per_round_epsilons", "phi must be >= 1"));
    }
    if t0 < 1 || t0 > horizon {
        return Err(Error::pre("per_round_epsilons", format!("t0 = {t0} not in [1, {horizon}]")));
    }
    for (name, s) in [("zeta", zeta), ("budget_open", budget_open)] {
        if let Some(s) = s {
            if s.len() != horizon {
                return Err(Error::pre(
                    "per_round_epsilons",
                    format!("{name} schedule has length {}, expected {horizon}", s.len()),
                ));
            }
        }
    }
    let log_phi = phi.ln();
    let drift = 2.0 * g * g * beta / lambda / p;
    let zeta_at = |t: usize| zeta.is_none_or(|z| z[t - 1]);
    let open_at = |t: usize| budget_open.is_none_or(|o| o[t - 1]);
    Ok((1..=horizon)
        .map(|t| {
            if t < t0 || !open_at(t) {
                0.0
            } else if t == t0 {
                2.0 * log_phi / p
            } else {
                let z = if zeta_at(t - 1) { 1.0 } else { 0.0 };
                z * log_phi + drift
            }
        })
        .collect())
}

/// Largest-loss schedule compatible with a switching budget: the budget is
/// open at every round and the first `budget` rounds from `t0` on resample.
pub fn budgeted_worst_schedule(horizon: usize, t0: usize, budget: Option<u64>) -> (Vec<bool>, Vec<bool>) {
    let cap = budget.map_or(usize::MAX, |b| b as usize);
    let zeta = (1..=horizon)
        .map(|t| t >= t0 && t - t0 < cap)
        .collect();
    (zeta, vec![true; horizon])
}

/// Adaptive strong composition:
/// `eps' = 3/2 sum eps^2 + sqrt(6 sum eps^2 log(1/delta''))`, `delta' = delta'' + sum delta`.
pub fn strong_composition(eps: &[f64], deltas: &[f64], delta_double_prime: f64) -> Result<(f64, f64)> {
    if eps.iter().chain(deltas).any(|v| !(*v >= 0.0)) {
        return Err(Error::pre("strong_composition", "entries must be >= 0"));
    }
    if !(delta_double_prime > 0.0 && delta_double_prime < 1.0) {
        return Err(Error::pre("strong_composition", "delta'' must lie in (0, 1)"));
    }
    let sq: f64 = eps.iter().map(|e| e * e).sum();
    let eps_prime = 1.5 * sq + (6.0 * sq * (1.0 / delta_double_prime).ln()).sqrt();
    Ok((eps_prime, delta_double_prime + deltas.iter().sum::<f64>()))
}

/// Closed-form bound on the sum of squared per-round losses:
/// `7 T^{2/3} log^2 Phi + 12 T log^3 Phi + 11 (G^4 beta^2 / lambda^2)^{1/3} log^{4/3} Phi T`.
pub fn epsilon_prime_closed_form(horizon: f64, phi: f64, g: f64, beta: f64, lambda: f64) -> f64 {
    let l = phi.ln();
    7.0 * horizon.powf(2.0 / 3.0) * l * l
        + 12.0 * l.powi(3) * horizon
        + 11.0 * (g.powi(4) * beta * beta / (lambda * lambda)).cbrt() * l.powf(4.0 / 3.0) * horizon
}

/// `3 eps'/2 + sqrt(6 eps') sqrt(log(2/delta))`.
pub fn total_epsilon(eps_prime: f64, delta: f64) -> f64 {
    1.5 * eps_prime + (6.0 * eps_prime).sqrt() * (2.0 / delta).ln().sqrt()
}

/// Per-round failure probability `4 delta' + 9 delta' T + 3 exp(-p_tilde T)`.
pub fn per_round_delta(delta_prime: f64, horizon: f64, p_tilde: f64) -> f64 {
    4.0 * delta_prime + 9.0 * delta_prime * horizon + 3.0 * (-p_tilde * horizon).exp()
}

/// The separately reported addend `3 T exp(-(1 - Phi^{-2}) T)`.
pub fn tail_delta(horizon: f64, phi: f64) -> f64 {
    3.0 * horizon * (-(1.0 - 1.0 / (phi * phi)) * horizon).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    /// `(eps_t, delta_t)` per round.
    pub per_round: Vec<(f64, f64)>,
    /// Strong composition of `per_round` at `delta_double_prime`.
    pub composed: (f64, f64),
    pub delta_double_prime: f64,
    /// Closed-form bound on the sum of squared per-round losses.
    pub eps_prime_closed_form: f64,
    /// `(eps, delta)` from the closed form at target `delta`.
    pub total: (f64, f64),
    /// Extra failure probability `3 T exp(-(1 - Phi^{-2}) T)`.
    pub tail_delta: f64,
}

impl PrivacyLedger {
    /// Ledger of a run with parameters `params` at target `delta`, using the
    /// budgeted worst-case schedule with the neighbor at round `t0`.
    pub fn worst_case(params: &PocmwParams, horizon: usize, t0: usize, g: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::pre("PrivacyLedger", "delta must lie in (0, 1)"));
        }
        let (zeta, open) = budgeted_worst_schedule(horizon, t0, params.budget);
        let eps = per_round_epsilons(
            horizon,
            t0,
            params.phi,
            params.p,
            g,
            params.beta,
            params.lambda,
            Some(&zeta),
            Some(&open),
        )?;
        let t = horizon as f64;
        let delta_prime = delta / (t * t) / 60.0;
        let dt = per_round_delta(delta_prime, t, params.p_tilde);
        let deltas = vec![dt; horizon];
        let delta_double_prime = delta / 2.0;
        let composed = strong_composition(&eps, &deltas, delta_double_prime)?;
        let cf = epsilon_prime_closed_form(t, params.phi, g, params.beta, params.lambda);
        Ok(Self {
            per_round: eps.into_iter().zip(deltas).collect(),
            composed,
            delta_double_prime,
            eps_prime_closed_form: cf,
            total: (total_epsilon(cf, delta), delta),
            tail_delta: tail_delta(t, params.phi),
        })
    }

    /// Recompute `composed` from `per_round`.
    pub fn recompose(&self) -> Result<(f64, f64)> {
        let (e, d): (Vec<f64>, Vec<f64>) = self.per_round.iter().copied().unzip();
        strong_composition(&e, &d, self.delta_double_prime)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub eps_hat: f64,
    pub delta_level: f64,
    pub trials: u64,
    /// Histogram cells with estimated mass at least `AUDIT_MIN_MASS`.
    pub event_count: usize,
    /// Three-sigma Monte Carlo uncertainty of `eps_hat` at its maximizer.
    pub mc_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub trials: u64,
    pub bins: usize,
    pub cells: usize,
    pub delta_level: f64,
    pub seed: u64,
}

/// Monte Carlo privacy audit of the grid-sampled loop on a 1-D body.
///
/// Each trace is reduced to the tuple of `(bin of x_t, zeta_t)` over all
/// rounds; the estimate is the largest log ratio of cell frequencies, in
/// both directions, over cells with frequency at least 0.01. An empty
/// denominator cell is floored at one count so the estimate stays finite.
pub fn empirical_audit(
    body: &ConvexBody,
    seq: &LossSequence,
    seq_neighbor: &LossSequence,
    params: &PocmwParams,
    settings: &AuditSettings,
) -> Result<AuditReport> {
    let AuditSettings {
        trials,
        bins,
        cells,
        delta_level,
        seed,
    } = *settings;
    if body.dim() != 1 {
        return Err(Error::Unsupported(format!("audit in dimension {}", body.dim())));
    }
    if seq.horizon() > 8 || seq.horizon() != seq_neighbor.horizon() {
        return Err(Error::pre("empirical_audit", "need equal horizons of at most 8"));
    }
    if trials < 10_000 {
        return Err(Error::pre("empirical_audit", format!("trials = {trials} < 10000")));
    }
    if bins == 0 || (trials as f64) / (bins as f64) < 20.0 {
        return Err(Error::pre("empirical_audit", "bins too fine: expected cell counts below 20"));
    }
    if !(0.0..1.0).contains(&delta_level) {
        return Err(Error::pre("empirical_audit", "delta_level must lie in [0, 1)"));
    }
    let path_a = GridPath::new(body, seq, params.gibbs(), cells)?;
    let path_b = GridPath::new(body, seq_neighbor, params.gibbs(), cells)?;
    let (lo, hi) = body.bounding_box();
    let (lo, width) = (lo[0], hi[0] - lo[0]);
    let key = |tr: &RunTrace| -> Vec<u32> {
        tr.records
            .iter()
            .map(|r| {
                let b = (((r.x[0] - lo) / width * bins as f64) as usize).min(bins - 1) as u32;
                (b << 1) | u32::from(r.zeta)
            })
            .collect()
    };
    let histogram = |path: &GridPath, s: &LossSequence, offset: u64| -> Result<BTreeMap<Vec<u32>, u64>> {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = RandomStream::derive(seed, 2 * i + offset);
                run_pocmw_on_path(path, s, params, &mut rng).map(|tr| key(&tr))
            })
            .try_fold(BTreeMap::new, |mut m, k| {
                *m.entry(k?).or_insert(0u64) += 1;
                Ok(m)
            })
            .try_reduce(BTreeMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                Ok(a)
            })
    };
    let ha = histogram(&path_a, seq, 0)?;
    let hb = histogram(&path_b, seq_neighbor, 1)?;

    let n = trials as f64;
    let sigma = |p: f64| (p * (1.0 - p) / n).sqrt();
    let mut keys: Vec<&Vec<u32>> = ha.keys().chain(hb.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut events = 0;
    for k in keys {
        let pa = ha.get(k).copied().unwrap_or(0) as f64 / n;
        let pb = hb.get(k).copied().unwrap_or(0) as f64 / n;
        if pa.max(pb) >= AUDIT_MIN_MASS {
            events += 1;
        }
        for (num, den) in [(pa, pb), (pb, pa)] {
            if num < AUDIT_MIN_MASS || num - delta_level <= 0.0 {
                continue;
            }
            let den = den.max(1.0 / n);
            let e = ((num - delta_level) / den).ln();
            if e > best.0 {
                let slack = 3.0 * (sigma(num) / (num - delta_level) + sigma(den) / den);
                best = (e, slack);
            }
        }
    }
    if events == 0 {
        return Err(Error::pre("empirical_audit", "no histogram cell reaches mass 0.01; use coarser bins"));
    }
    Ok(AuditReport {
        eps_hat: best.0.max(0.0),
        delta_level,
        trials,
        event_count: events,
        mc_slack: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossFunction;
    use approx::assert_abs_diff_eq;

    #[test]
    fn per_round_examples() {
        let e = std::f64::consts::E;
        let eps = per_round_epsilons(5, 3, e, 0.5, 1.0, 1.0, 1.0, None, None).unwrap();
        assert_eq!(eps[0], 0.0);
        assert_eq!(eps[1], 0.0);
        assert_abs_diff_eq!(eps[2], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eps[3], 5.0, epsilon = 1e-12);
        assert!(per_round_epsilons(5, 3, e, 0.0, 1.0, 1.0, 1.0, None, None).is_err());
    }

    #[test]
    fn schedules_gate_terms() {
        let e = std::f64::consts::E;
        let zeta = [true, true, true, false, true];
        let open = [true, true, true, true, false];
        let eps = per_round_epsilons(5, 2, e, 0.5, 1.0, 1.0, 1.0, Some(&zeta), Some(&open)).unwrap();
        assert_abs_diff_eq!(eps[2], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eps[3], 5.0, epsilon = 1e-12);
        assert_eq!(eps[4], 0.0);
        assert!(per_round_epsilons(5, 2, e, 0.5, 1.0, 1.0, 1.0, Some(&zeta[..4]), None).is_err());
    }

    #[test]
    fn budgeted_schedule_shape() {
        let (z, o) = budgeted_worst_schedule(6, 2, Some(3));
        assert_eq!(z, vec![false, true, true, true, false, false]);
        assert!(o.iter().all(|b| *b));
        let (z, _) = budgeted_worst_schedule(4, 1, None);
        assert!(z.iter().all(|b| *b));
    }

    #[test]
    fn composition_examples() {
        assert_eq!(strong_composition(&[0.0; 4], &[0.0; 4], 0.3).unwrap(), (0.0, 0.3));
        let inv_e = (-1.0f64).exp();
        let (e, d) = strong_composition(&[0.1; 4], &[0.0; 4], inv_e).unwrap();
        assert_abs_diff_eq!(e, 0.06 + 0.24f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(e, 0.5499, epsilon = 1e-4);
        assert_abs_diff_eq!(d, 0.3679, epsilon = 1e-4);
        assert!(strong_composition(&[-0.1], &[0.0], 0.5).is_err());
        assert!(strong_composition(&[0.1], &[0.0], 1.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(epsilon_prime_closed_form(1000.0, e, 1.0, 1.0, 1.0), 23700.0, epsilon = 1e-8);
        assert_eq!(epsilon_prime_closed_form(1000.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        assert_abs_diff_eq!(total_epsilon(0.06, 2.0 / e), 0.69, epsilon = 1e-12);
    }

    #[test]
    fn ledger_recomposes() {
        let params = PocmwParams::new(1e-3, 10.0, 0.2, 1.05, Some(40)).unwrap();
        let ledger = PrivacyLedger::worst_case(&params, 100, 5, 1.0, 0.05).unwrap();
        let again = ledger.recompose().unwrap();
        assert_abs_diff_eq!(again.0, ledger.composed.0, epsilon = 1e-12);
        assert_abs_diff_eq!(again.1, ledger.composed.1, epsilon = 1e-12);
        assert_eq!(ledger.per_round.len(), 100);
    }

    #[test]
    fn audit_preconditions() {
        let body = ConvexBody::interval(0.0, 1.0).unwrap();
        let seq = LossSequence::new(vec![LossFunction::linear(vec![1.0]); 4], 1.0, 0).unwrap();
        let params = PocmwParams::new(1.0, 1.0, 0.5, 1.5, None).unwrap();
        let mut s = AuditSettings { trials: 9_999, bins: 10, cells: 64, delta_level: 0.0, seed: 0 };
        assert!(empirical_audit(&body, &seq, &seq, &params, &s).is_err());
        s.trials = 10_000;
        s.bins = 1000;
        assert!(empirical_audit(&body, &seq, &seq, &params, &s).is_err());
        let long = LossSequence::new(vec![LossFunction::linear(vec![1.0]); 9], 1.0, 0).unwrap();
        s.bins = 4;
        assert!(empirical_audit(&body, &long, &long, &params, &s).is_err());
    }

    #[test]
    fn audit_zero_budget_is_flat() {
        // B = 0: the trace is x_1 repeated and all zeta = 1, independent of round 2 onwards
        let body = ConvexBody::interval(0.0, 1.0).unwrap();
        let seq = LossSequence::new(vec![LossFunction::linear(vec![1.0]); 4], 1.0, 0).unwrap();
        let nb = seq.make_neighbor(3, LossFunction::linear(vec![-1.0])).unwrap();
        let params = PocmwParams::new(2.0, 1.0, 1.0, 1.5, Some(0)).unwrap();
        let s = AuditSettings { trials: 10_000, bins: 5, cells: 64, delta_level: 0.0, seed: 1 };
        let rep = empirical_audit(&body, &seq, &nb, &params, &s).unwrap();
        assert!(rep.eps_hat <= rep.mc_slack, "{rep:?}");
    }
}
