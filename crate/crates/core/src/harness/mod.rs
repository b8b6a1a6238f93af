//! Experiment configuration, seeded orchestration and report emission.
//!
//! A run is fully determined by its configuration: trial `i` draws from
//! stream `i` of the master seed, trials run in parallel and are collected
//! in index order, and reports carry no wall-clock data.

pub mod audit;
pub mod verify;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{BodySpec, ConvexBody};
use crate::losses::{generate_sequence, AdversaryKind, LossSequence};
use crate::metrics::{
    best_fixed_point, lazy_regret_bound, regret_against, regret_curve, theoretical_bounds, BoundInputs, BoundReport,
    CurvePoint, RegretReport,
};
use crate::pocmw::{
    dp_runtime_params, dpoco_params, lazy_params, min_private_horizon, run_noisy_ogd, run_pocmw, run_pocmw_on_path,
    GridPath, PocmwParams, RunTrace,
};
use crate::privacy::PrivacyLedger;
use crate::rng::RandomStream;
use crate::samplers::SamplerSpec;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Mode {
    Lazy { switches: u64 },
    Dp { epsilon: f64, delta: f64 },
    BaselineOgd { eta: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub kind: AdversaryKind,
    /// Defaults to the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveLayout {
    /// One CSV per trial.
    #[default]
    PerTrial,
    /// A single CSV with a trial column.
    Long,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub curves: CurveLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub body: BodySpec,
    pub adversary: AdversarySpec,
    pub horizon: usize,
    pub lipschitz: f64,
    /// Defaults to the diameter of the body.
    #[serde(default)]
    pub diameter: Option<f64>,
    pub dimension: usize,
    pub sampler: SamplerSpec,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// Canonical JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every precondition and build the run inputs.
    pub fn prepare(&self) -> Result<Prepared> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let body = ConvexBody::try_from(self.body.clone()).map_err(|e| Error::config("body", e.to_string()))?;
        if self.dimension != body.dim() {
            return Err(Error::config(
                "dimension",
                format!("{} does not match the body dimension {}", self.dimension, body.dim()),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::config("lipschitz", "must be finite and > 0"));
        }
        let diameter = self.diameter.unwrap_or(body.diameter());
        if !(diameter > 0.0 && diameter.is_finite()) {
            return Err(Error::config("diameter", "must be finite and > 0"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        self.sampler.validate(body.dim()).map_err(|e| match e {
            Error::Unsupported(m) => Error::config("sampler.kind", m),
            other => other,
        })?;
        let t = self.horizon as u64;
        let (g, d) = (self.lipschitz, body.dim());
        let params = match self.mode {
            Mode::Lazy { switches } => {
                if t < 3 {
                    return Err(Error::config("horizon", "lazy mode needs horizon >= 3"));
                }
                if switches < 1 || switches > t {
                    return Err(Error::config("mode.switches", format!("must lie in [1, {t}]")));
                }
                Some(lazy_params(switches, t, g, diameter, d).map_err(|e| Error::config("mode", e.to_string()))?)
            }
            Mode::Dp { epsilon, delta } => {
                if !(epsilon > 0.0 && epsilon <= 1.0) {
                    return Err(Error::config("mode.epsilon", "must lie in (0, 1]"));
                }
                if !(delta > 0.0 && delta <= 0.5) {
                    return Err(Error::config("mode.delta", "must lie in (0, 1/2]"));
                }
                let need = min_private_horizon(delta);
                if (t as f64) < need {
                    return Err(Error::config(
                        "horizon",
                        format!("dp mode needs horizon >= 12 log(1/delta) = {}", need.ceil()),
                    ));
                }
                Some(dpoco_params(epsilon, delta, t, g, diameter, d).map_err(|e| Error::config("mode", e.to_string()))?)
            }
            Mode::BaselineOgd { eta, sigma } => {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::config("mode.eta", "must be finite and >= 0"));
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::config("mode.sigma", "must be finite and >= 0"));
                }
                None
            }
        };
        let seed = self.adversary.seed.unwrap_or(self.master_seed);
        let seq = generate_sequence(self.adversary.kind, self.horizon, g, &body, seed)
            .map_err(|e| Error::config("adversary", e.to_string()))?;
        Ok(Prepared {
            config: self.clone(),
            body,
            seq,
            params,
            diameter,
        })
    }
}

/// A validated configuration with its body, sequence and parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub body: ConvexBody,
    pub seq: LossSequence,
    pub params: Option<PocmwParams>,
    pub diameter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, se: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub regret: MeanSe,
    pub resamples: MeanSe,
    pub value_switches: MeanSe,
    pub cumulative_loss: MeanSe,
}

impl Aggregate {
    pub fn of(trials: &[RegretReport]) -> Self {
        let col = |f: fn(&RegretReport) -> f64| MeanSe::of(&trials.iter().map(f).collect::<Vec<_>>());
        Self {
            regret: col(|r| r.regret),
            resamples: col(|r| r.resample_count as f64),
            value_switches: col(|r| r.value_switch_count as f64),
            cumulative_loss: col(|r| r.cumulative_loss),
        }
    }
}

/// Per-trial outputs that go to CSV rather than into the JSON report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub curves: Vec<Vec<CurvePoint>>,
    pub traces: Vec<RunTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub params: Option<PocmwParams>,
    pub trials: Vec<RegretReport>,
    pub aggregate: Aggregate,
    pub bounds: Option<BoundReport>,
    /// Regret bound of the lazy schedule (lazy mode only).
    pub lazy_regret_bound: Option<f64>,
    /// Worst-case privacy accounting (dp mode only).
    pub ledger: Option<PrivacyLedger>,
    #[serde(skip)]
    pub artifacts: Artifacts,
}

/// Run every trial of `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = config.prepare()?;
    let Prepared {
        body,
        seq,
        params,
        diameter,
        ..
    } = &prep;
    let (x_star, v_star) = best_fixed_point(seq, body)?;
    let path = match (params, config.sampler) {
        (Some(p), SamplerSpec::GridInverseCdf { cells }) => Some(GridPath::new(body, seq, p.gibbs(), cells)?),
        _ => None,
    };
    let outcomes: Vec<Result<(RegretReport, Vec<CurvePoint>, RunTrace)>> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomStream::derive(config.master_seed, i as u64);
            let trace = match (params, &path, config.mode.clone()) {
                (Some(p), Some(path), _) => run_pocmw_on_path(path, seq, p, &mut rng)?,
                (Some(p), None, _) => run_pocmw(body, seq, p, &config.sampler, &mut rng)?,
                (None, _, Mode::BaselineOgd { eta, sigma }) => run_noisy_ogd(body, seq, eta, sigma, None, &mut rng)?,
                (None, _, _) => unreachable!("sampler modes always carry parameters"),
            };
            let rep = regret_against(&trace, seq, x_star.clone(), v_star)?;
            let curve = regret_curve(&trace, seq, &x_star);
            Ok((rep, curve, trace))
        })
        .collect();
    let mut trials = Vec::with_capacity(config.trials);
    let mut artifacts = Artifacts::default();
    for o in outcomes {
        let (rep, curve, trace) = o?;
        trials.push(rep);
        artifacts.curves.push(curve);
        if config.output.trace {
            artifacts.traces.push(trace);
        }
    }

    let t = config.horizon;
    let g = config.lipschitz;
    let (bounds, lazy_bound, ledger) = match (params, &config.mode) {
        (Some(p), Mode::Lazy { switches }) => {
            let inp = BoundInputs {
                params: *p,
                horizon: t,
                g,
                d_diam: *diameter,
                dim: body.dim(),
                delta_close: 2.0 / (t as f64 * t as f64),
                budgeted: false,
            };
            (
                Some(theoretical_bounds(&inp)?),
                Some(lazy_regret_bound(*switches as f64, t as f64, g, *diameter, body.dim())),
                None,
            )
        }
        (Some(p), Mode::Dp { delta, .. }) => {
            let rt = dp_runtime_params(p.beta, p.lambda, g, *delta, t as u64)?;
            let inp = BoundInputs {
                params: *p,
                horizon: t,
                g,
                d_diam: *diameter,
                dim: body.dim(),
                delta_close: rt.delta_prime,
                budgeted: true,
            };
            (
                Some(theoretical_bounds(&inp)?),
                None,
                Some(PrivacyLedger::worst_case(p, t, 1, g, *delta)?),
            )
        }
        _ => (None, None, None),
    };

    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        params: *params,
        aggregate: Aggregate::of(&trials),
        trials,
        bounds,
        lazy_regret_bound: lazy_bound,
        ledger,
        artifacts,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Write `report.json`, regret curves and (optionally) traces into `dir`.
/// Returns the written paths in order.
pub fn emit_report(report: &ExperimentReport, dir: &Path, layout: CurveLayout) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(io_err(&json_path))?;
    written.push(json_path);

    let curves = &report.artifacts.curves;
    if curves.is_empty() || layout == CurveLayout::Long {
        let path = dir.join("curves.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["trial", "t", "cumulative_regret", "resamples"])?;
        for (i, c) in curves.iter().enumerate() {
            for p in c {
                w.write_record([i.to_string(), p.t.to_string(), p.cumulative_regret.to_string(), p.resamples.to_string()])?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    } else {
        for (i, c) in curves.iter().enumerate() {
            let path = dir.join(format!("curves_trial_{i:04}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["t", "cumulative_regret", "resamples"])?;
            for p in c {
                w.write_record([p.t.to_string(), p.cumulative_regret.to_string(), p.resamples.to_string()])?;
            }
            w.flush().map_err(io_err(&path))?;
            written.push(path);
        }
    }

    for (i, tr) in report.artifacts.traces.iter().enumerate() {
        let path = dir.join(format!("trace_trial_{i:04}.csv"));
        tr.write_csv_file(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lazy_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "schema_version": 1,
                "mode": {"kind": "lazy", "switches": 10},
                "body": {"kind": "box", "lower": [-1.0], "upper": [1.0]},
                "adversary": {"kind": "shifting-minimizer"},
                "horizon": 100,
                "lipschitz": 1.0,
                "dimension": 1,
                "sampler": {"kind": "grid-inverse-cdf", "cells": 128},
                "trials": 4,
                "master_seed": 11
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn canonical_round_trip() {
        let c = lazy_config();
        let text = c.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&lazy_config().to_json()).unwrap();
        v["colour"] = serde_json::json!("blue");
        let e = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn field_errors_name_the_field() {
        let cases: Vec<(&str, serde_json::Value, &str)> = vec![
            ("trials", serde_json::json!(0), "trials"),
            ("dimension", serde_json::json!(2), "dimension"),
            ("schema_version", serde_json::json!(7), "schema_version"),
            ("mode", serde_json::json!({"kind": "lazy", "switches": 0}), "mode.switches"),
            ("mode", serde_json::json!({"kind": "dp", "epsilon": 1.0, "delta": 1e-5}), "horizon"),
            ("sampler", serde_json::json!({"kind": "grid-inverse-cdf", "cells": 8}), "sampler.cells"),
        ];
        for (key, val, field) in cases {
            let mut v: serde_json::Value = serde_json::from_str(&lazy_config().to_json()).unwrap();
            v[key] = val;
            let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
            match run_experiment(&cfg) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{key}: expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn report_is_deterministic() {
        let c = lazy_config();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.trials.len(), 4);
        let regrets: Vec<f64> = a.trials.iter().map(|r| r.regret).collect();
        assert_eq!(a.aggregate.regret, MeanSe::of(&regrets));
        assert!(a.bounds.is_some() && a.lazy_regret_bound.is_some() && a.ledger.is_none());
    }

    #[test]
    fn mean_se_arithmetic() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[]).mean, 0.0);
    }
}
