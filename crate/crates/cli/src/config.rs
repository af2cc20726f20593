//! Config file loading, input file formats, and small parse helpers.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tsb_core::grid::{parse_case, GridCase, OperatingPoint};
use tsb_core::sampler::SamplerConfig;
use tsb_core::tds::{Contingency, SimConfig};

/// Assessment thresholds from the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Fixed margin threshold for verdicts; when absent the margin is
    /// calibrated from training samples where possible, else zero.
    pub margin: Option<f64>,
}

/// The JSON config file: simulation, sampler, and threshold settings, all
/// sections and fields optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub sim: SimConfig,
    pub sampler: SamplerConfig,
    pub thresholds: Thresholds,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            sampler: SamplerConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: CliConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }
}

/// One contingency in a contingency-list file, identified by branch
/// endpoints rather than internal indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContingencySpec {
    pub id: String,
    pub fault_bus: u32,
    /// Endpoint bus ids of the branch opened at clearing time.
    pub trip: (u32, u32),
    pub t_clear: f64,
}

impl ContingencySpec {
    pub fn resolve(&self, case: &GridCase) -> Result<Contingency> {
        Ok(Contingency::by_endpoints(
            case,
            &self.id,
            self.fault_bus,
            self.trip.0,
            self.trip.1,
            self.t_clear,
        )?)
    }
}

pub fn load_case(path: &Path) -> Result<GridCase> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading case {}", path.display()))?;
    Ok(parse_case(&text)?)
}

pub fn load_contingencies(path: &Path, case: &GridCase) -> Result<Vec<Contingency>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading contingency list {}", path.display()))?;
    let specs: Vec<ContingencySpec> = serde_json::from_str(&text)
        .with_context(|| format!("parsing contingency list {}", path.display()))?;
    if specs.is_empty() {
        bail!("contingency list {} is empty", path.display());
    }
    specs.iter().map(|s| s.resolve(case)).collect()
}

/// Pool file entry: either a bare dispatch vector or an object with an
/// explicit load scale.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoolEntry {
    Bare(Vec<f64>),
    Full {
        gen_p: Vec<f64>,
        #[serde(default)]
        load_scale: Option<Vec<f64>>,
    },
}

pub fn load_pool(path: &Path, case: &GridCase) -> Result<Vec<OperatingPoint>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading operating-point pool {}", path.display()))?;
    let entries: Vec<PoolEntry> = serde_json::from_str(&text)
        .with_context(|| format!("parsing operating-point pool {}", path.display()))?;
    if entries.is_empty() {
        bail!("operating-point pool {} is empty", path.display());
    }
    let ops = entries
        .into_iter()
        .map(|e| match e {
            PoolEntry::Bare(gen_p) => OperatingPoint::with_reference_load(case, gen_p),
            PoolEntry::Full { gen_p, load_scale } => {
                let mut op = OperatingPoint::with_reference_load(case, gen_p);
                if let Some(ls) = load_scale {
                    op.load_scale = ls;
                }
                op
            }
        })
        .collect::<Vec<_>>();
    for op in &ops {
        op.check_dims(case)?;
    }
    Ok(ops)
}

/// Parses a comma-separated dispatch vector, e.g. "120,100".
pub fn parse_op_vector(s: &str) -> Result<Vec<f64>> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let v = v.with_context(|| format!("parsing dispatch vector {s:?}"))?;
    if v.is_empty() {
        bail!("dispatch vector {s:?} is empty");
    }
    Ok(v)
}

/// Parses branch endpoints given as "from-to".
pub fn parse_branch(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| format!("expected from-to, got {s:?}"))?;
    let from = a.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let to = b.trim().parse::<u32>().map_err(|e| e.to_string())?;
    Ok((from, to))
}
