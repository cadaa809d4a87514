//! JSON run configuration.
//!
//! Every section is optional and falls back to the defaults of the
//! corresponding core type; unknown keys are rejected. Errors carry the
//! JSON pointer of the offending value.

use std::path::{Path, PathBuf};

use nvlink_core::emitter::EmitterParams;
use nvlink_core::linkbudget::{LinkBudget, NoiseBudget};
use nvlink_core::montecarlo::{DetectorParams, ExcitationMode, SimConfig};
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Link-budget section. `eta_q` and the radiative lifetime default to the
/// emitter's values so the two sections cannot silently disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub eta_q: Option<f64>,
    pub tau_rad_ns: Option<f64>,
    /// When set (and `tau_rad_ns` is not), `tau_rad = tau_bulk_ns / purcell_f`.
    pub purcell_f: Option<f64>,
    pub tau_bulk_ns: f64,
    pub eta_wg: f64,
    pub eta_grating: f64,
    pub eta_det: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let b = LinkBudget::default();
        Self {
            eta_q: None,
            tau_rad_ns: None,
            purcell_f: None,
            tau_bulk_ns: b.tau_bulk_ns,
            eta_wg: b.eta_wg,
            eta_grating: b.eta_grating,
            eta_det: b.eta_det,
        }
    }
}

impl BudgetConfig {
    pub fn resolve(&self, emitter: &EmitterParams) -> LinkBudget {
        let tau_rad_ns = match (self.tau_rad_ns, self.purcell_f) {
            (Some(t), _) => Some(t),
            (None, Some(_)) => None,
            (None, None) => Some(emitter.tau_rad_ns),
        };
        LinkBudget {
            eta_q: self.eta_q.unwrap_or(emitter.eta_q),
            tau_rad_ns,
            purcell_f: self.purcell_f.unwrap_or(1.0),
            tau_bulk_ns: self.tau_bulk_ns,
            eta_wg: self.eta_wg,
            eta_grating: self.eta_grating,
            eta_det: self.eta_det,
        }
    }
}

/// Optional replacement spectra (two-column CSV). Relative paths are taken
/// relative to the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    pub grating_csv: Option<PathBuf>,
    pub edge_csv: Option<PathBuf>,
    pub emission_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: ExcitationMode,
    pub pump_mw: f64,
    pub emitter: EmitterParams,
    pub budget: BudgetConfig,
    pub noise: NoiseBudget,
    pub split_ratio: f64,
    pub delay_b_ns: f64,
    pub detectors: [DetectorParams; 2],
    pub max_tags: u64,
    pub spectra: SpectraConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: sim.rng_seed,
            mode: sim.mode,
            pump_mw: sim.pump_mw,
            emitter: sim.emitter,
            budget: BudgetConfig::default(),
            noise: sim.noise,
            split_ratio: sim.split_ratio,
            delay_b_ns: sim.delay_b_ns,
            detectors: sim.detectors,
            max_tags: sim.max_tags,
            spectra: SpectraConfig::default(),
        }
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Deserializes JSON, reporting failures with the JSON pointer of the bad value.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let pointer = json_pointer(e.path());
        let pointer = if pointer.is_empty() { "/".to_string() } else { pointer };
        CliError::Config(format!("at {pointer}: {}", e.into_inner()))
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.spectra.grating_csv,
            &mut cfg.spectra.edge_csv,
            &mut cfg.spectra.emission_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn link_budget(&self) -> LinkBudget {
        self.budget.resolve(&self.emitter)
    }

    /// The validated simulator configuration.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            mode: self.mode.clone(),
            pump_mw: self.pump_mw,
            emitter: self.emitter.clone(),
            budget: self.link_budget(),
            noise: self.noise.clone(),
            split_ratio: self.split_ratio,
            delay_b_ns: self.delay_b_ns,
            detectors: self.detectors.clone(),
            rng_seed: self.seed,
            max_tags: self.max_tags,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical (serialized) form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
