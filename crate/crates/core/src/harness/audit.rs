//! Configuration and driver for the empirical privacy audit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{BodySpec, ConvexBody};
use crate::losses::{generate_sequence, LossFunction};
use crate::pocmw::PocmwParams;
use crate::privacy::{empirical_audit, AuditReport, AuditSettings, PrivacyLedger};
use crate::{Error, Result};

use super::{AdversarySpec, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualParams {
    pub beta: f64,
    pub lambda: f64,
    pub p: f64,
    pub phi: f64,
    #[serde(default)]
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub schema_version: u32,
    pub body: BodySpec,
    pub adversary: AdversarySpec,
    pub horizon: usize,
    pub lipschitz: f64,
    /// Round (1-based) at which the neighbor differs.
    pub t0: usize,
    /// The neighbor's loss at `t0`.
    pub replacement: LossFunction,
    pub params: ManualParams,
    pub cells: usize,
    pub trials: u64,
    pub bins: usize,
    #[serde(default)]
    pub delta_level: f64,
    /// Target `delta` for the accountant.
    pub accountant_delta: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub version: String,
    pub config: AuditConfig,
    pub audit: AuditReport,
    pub ledger: PrivacyLedger,
    /// Composed accountant epsilon of the worst-case schedule.
    pub accountant_epsilon: f64,
    pub within_accountant: bool,
}

impl AuditConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn run_audit(cfg: &AuditConfig) -> Result<AuditOutcome> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::config("schema_version", format!("expected {SCHEMA_VERSION}")));
    }
    let body = ConvexBody::try_from(cfg.body.clone()).map_err(|e| Error::config("body", e.to_string()))?;
    let m = cfg.params;
    let params = PocmwParams::new(m.beta, m.lambda, m.p, m.phi, m.budget).map_err(|e| Error::config("params", e.to_string()))?;
    if !(cfg.accountant_delta > 0.0 && cfg.accountant_delta < 1.0) {
        return Err(Error::config("accountant_delta", "must lie in (0, 1)"));
    }
    if cfg.t0 < 1 || cfg.t0 > cfg.horizon {
        return Err(Error::config("t0", format!("must lie in [1, {}]", cfg.horizon)));
    }
    let seed = cfg.adversary.seed.unwrap_or(cfg.master_seed);
    let seq = generate_sequence(cfg.adversary.kind, cfg.horizon, cfg.lipschitz, &body, seed)
        .map_err(|e| Error::config("adversary", e.to_string()))?;
    let neighbor = seq
        .make_neighbor(cfg.t0, cfg.replacement.clone())
        .map_err(|e| Error::config("replacement", e.to_string()))?;
    let settings = AuditSettings {
        trials: cfg.trials,
        bins: cfg.bins,
        cells: cfg.cells,
        delta_level: cfg.delta_level,
        seed: cfg.master_seed,
    };
    let audit = empirical_audit(&body, &seq, &neighbor, &params, &settings).map_err(|e| match e {
        Error::Precondition { message, .. } => Error::config("audit", message),
        other => other,
    })?;
    let ledger = PrivacyLedger::worst_case(&params, cfg.horizon, cfg.t0, cfg.lipschitz, cfg.accountant_delta)?;
    let accountant_epsilon = ledger.composed.0;
    Ok(AuditOutcome {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        within_accountant: audit.eps_hat <= accountant_epsilon + audit.mc_slack,
        audit,
        ledger,
        accountant_epsilon,
    })
}
