//! Run-configuration file: a versioned TOML document naming the input
//! (synthetic parameters or a microdata directory), the mechanisms to run,
//! the metrics to emit, and the replication/seed setup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ecoreg::SupportMatrix;
use crate::error::{Error, Result};
use crate::geodata::{GridShape, Microdata, RaceCategory, SynthParams};
use crate::seed::derive_seed;
use crate::swap::{swap_variant, SwapConfig};
use crate::toydown::ToyDownConfig;

pub const SPEC_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Config schema version; must equal [`SPEC_VERSION`].
    pub spec_version: u32,
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub input: InputConfig,
    #[serde(default, rename = "mechanism")]
    pub mechanisms: Vec<MechanismConfig>,
    #[serde(default = "MetricKind::default_set")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub election: Option<ElectionConfig>,
}

fn default_replicates() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
    /// Directory holding `households.csv` and `geography.csv`.
    #[serde(default)]
    pub microdata_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_households: usize,
    pub counties: usize,
    pub tracts_per_county: usize,
    pub blocks_per_tract: usize,
    pub size_distribution: Vec<f64>,
    pub race_mixture: Vec<f64>,
    pub hispanic_rate: f64,
    pub segregation: f64,
    pub adult_rate: f64,
}

impl SynthConfig {
    pub fn to_params(&self) -> Result<SynthParams> {
        if self.race_mixture.len() != RaceCategory::COUNT {
            return Err(Error::Config(format!(
                "race_mixture must have {} entries, got {}",
                RaceCategory::COUNT,
                self.race_mixture.len()
            )));
        }
        let mut race_mixture = [0.0; RaceCategory::COUNT];
        race_mixture.copy_from_slice(&self.race_mixture);
        let params = SynthParams {
            n_households: self.n_households,
            grid: GridShape {
                counties: self.counties,
                tracts_per_county: self.tracts_per_county,
                blocks_per_tract: self.blocks_per_tract,
            },
            size_distribution: self.size_distribution.clone(),
            race_mixture,
            hispanic_rate: self.hispanic_rate,
            segregation: self.segregation,
            adult_rate: self.adult_rate,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismConfig {
    Swap {
        name: String,
        swap_rate: f64,
        #[serde(default = "default_variant")]
        variant: String,
        /// Optional overrides of the variant template.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_nearest: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tier_probs: Option<[f64; 4]>,
    },
    Toydown {
        name: String,
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        level_weights: Option<[f64; 4]>,
    },
}

fn default_variant() -> String {
    "standard".into()
}

impl MechanismConfig {
    pub fn name(&self) -> &str {
        match self {
            MechanismConfig::Swap { name, .. } => name,
            MechanismConfig::Toydown { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MechanismConfig::Swap { .. } => "swap",
            MechanismConfig::Toydown { .. } => "toydown",
        }
    }

    /// Resolve to a runnable swap config with the given seed.
    pub fn swap_config(&self, seed: u64) -> Result<SwapConfig> {
        let MechanismConfig::Swap { swap_rate, variant, k_nearest, tier_probs, .. } = self else {
            return Err(Error::Config(format!("mechanism {} is not a swap", self.name())));
        };
        let mut cfg = swap_variant(variant)?.config(*swap_rate, seed);
        if let Some(k) = k_nearest {
            cfg.k_nearest = *k;
        }
        if let Some(p) = tier_probs {
            cfg.tier_probs = *p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn toydown_config(&self, seed: u64) -> Result<ToyDownConfig> {
        let MechanismConfig::Toydown { epsilon, level_weights, .. } = self else {
            return Err(Error::Config(format!("mechanism {} is not toydown", self.name())));
        };
        let cfg = ToyDownConfig {
            epsilon_total: *epsilon,
            level_weights: level_weights.unwrap_or([0.25; 4]),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ErrorTable,
    Entropy,
    Tabulations,
    RuccRatios,
    Variance,
    Er,
}

impl MetricKind {
    fn default_set() -> Vec<MetricKind> {
        vec![
            MetricKind::ErrorTable,
            MetricKind::Entropy,
            MetricKind::Tabulations,
            MetricKind::RuccRatios,
            MetricKind::Variance,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectionConfig {
    pub turnout: f64,
    /// Precincts are built from this many consecutive tracts (by tract id).
    pub tracts_per_precinct: usize,
    /// Seven rows (one per race, [`RaceCategory::ALL`] order), each a
    /// probability vector over candidates.
    pub support: Vec<Vec<f64>>,
    /// Election randomness; derived from the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ElectionConfig {
    pub fn support_matrix(&self) -> Result<SupportMatrix> {
        if self.support.len() != RaceCategory::COUNT {
            return Err(Error::Config(format!(
                "election.support must have {} rows, got {}",
                RaceCategory::COUNT,
                self.support.len()
            )));
        }
        Ok(std::array::from_fn(|i| self.support[i].clone()))
    }

    /// Block-to-precinct map grouping `tracts_per_precinct` consecutive
    /// whole tracts per precinct.
    pub fn precinct_map(&self, md: &Microdata) -> Result<BTreeMap<u64, u64>> {
        if self.tracts_per_precinct == 0 {
            return Err(Error::Config("tracts_per_precinct must be positive".into()));
        }
        let tract_map: BTreeMap<u64, u64> = md
            .geo
            .tracts
            .keys()
            .enumerate()
            .map(|(i, &t)| (t, (i / self.tracts_per_precinct) as u64))
            .collect();
        crate::ecoreg::tract_precincts_to_blocks(md, &tract_map)
    }

    pub fn resolved_seed(&self, base_seed: u64) -> u64 {
        self.seed.unwrap_or_else(|| derive_seed(base_seed, "election", 0))
    }
}

/// Parse and semantically validate a config file. TOML syntax errors are
/// reported with their line and column.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = toml::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "unsupported spec_version {} (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        match (&self.input.synthetic, &self.input.microdata_dir) {
            (None, None) => {
                return Err(Error::Config(
                    "input must name either [input.synthetic] or input.microdata_dir".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "input.synthetic and input.microdata_dir are mutually exclusive".into(),
                ))
            }
            _ => {}
        }
        if let Some(s) = &self.input.synthetic {
            s.to_params()?;
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.mechanisms {
            if m.name().is_empty() {
                return Err(Error::Config("mechanism names must be non-empty".into()));
            }
            if !names.insert(m.name()) {
                return Err(Error::Config(format!("duplicate mechanism name {:?}", m.name())));
            }
            // resolve with a dummy seed to validate parameters
            match m {
                MechanismConfig::Swap { .. } => m.swap_config(0).map(|_| ())?,
                MechanismConfig::Toydown { .. } => m.toydown_config(0).map(|_| ())?,
            }
        }
        if self.metrics.contains(&MetricKind::Er) && self.election.is_none() {
            return Err(Error::Config("the er metric requires an [election] section".into()));
        }
        if let Some(e) = &self.election {
            e.support_matrix()?;
            if !(e.turnout > 0.0 && e.turnout <= 1.0) {
                return Err(Error::Config(format!("turnout must lie in (0, 1], got {}", e.turnout)));
            }
            if e.tracts_per_precinct == 0 {
                return Err(Error::Config("tracts_per_precinct must be positive".into()));
            }
        }
        Ok(())
    }

    /// The input microdata for this run. Synthetic inputs are generated
    /// with a seed derived from the run seed under the name `input`.
    pub fn load_input(&self) -> Result<Microdata> {
        if let Some(s) = &self.input.synthetic {
            let params = s.to_params()?;
            return crate::geodata::generate_synthetic(&params, derive_seed(self.seed, "input", 0));
        }
        let dir = self.input.microdata_dir.as_ref().expect("validated input");
        crate::geodata::load_microdata(dir)
    }

    pub fn require_mechanisms(&self) -> Result<()> {
        if self.mechanisms.is_empty() {
            return Err(Error::Config("at least one [[mechanism]] is required".into()));
        }
        Ok(())
    }
}
