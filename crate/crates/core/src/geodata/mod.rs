//! Microdata and geography model: households, the block/tract/county/state
//! hierarchy, CSV loading, synthetic population generation, and count
//! aggregation.

mod counts;
mod io;
mod synth;

pub use counts::{aggregate_counts, block_race_table, race_count_table, CountField, CountTable, GeoLevel};
pub use io::{load_microdata, write_microdata, GEOGRAPHY_FILE, HOUSEHOLDS_FILE};
pub use synth::generate_synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven mutually exclusive race categories used throughout.
///
/// Hispanic origin is an ethnicity count carried separately on
/// [`Household`], never a race category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceCategory {
    White,
    Black,
    AmericanIndianAlaskaNative,
    Asian,
    HawaiianPacificIslander,
    Other,
    TwoOrMore,
}

impl RaceCategory {
    pub const COUNT: usize = 7;

    pub const ALL: [RaceCategory; 7] = [
        RaceCategory::White,
        RaceCategory::Black,
        RaceCategory::AmericanIndianAlaskaNative,
        RaceCategory::Asian,
        RaceCategory::HawaiianPacificIslander,
        RaceCategory::Other,
        RaceCategory::TwoOrMore,
    ];

    /// Stable integer encoding 0..6, in [`Self::ALL`] order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RaceCategory> {
        Self::ALL.get(i).copied()
    }

    /// Short machine-readable code used in CSV headers and statistic names.
    pub fn code(self) -> &'static str {
        match self {
            RaceCategory::White => "w",
            RaceCategory::Black => "b",
            RaceCategory::AmericanIndianAlaskaNative => "aian",
            RaceCategory::Asian => "as",
            RaceCategory::HawaiianPacificIslander => "hpi",
            RaceCategory::Other => "oth",
            RaceCategory::TwoOrMore => "two_plus",
        }
    }

    pub fn from_code(code: &str) -> Option<RaceCategory> {
        Self::ALL.iter().copied().find(|r| r.code() == code)
    }

    /// Human-readable column label.
    pub fn label(self) -> &'static str {
        match self {
            RaceCategory::White => "W",
            RaceCategory::Black => "B",
            RaceCategory::AmericanIndianAlaskaNative => "AI/AN",
            RaceCategory::Asian => "AS",
            RaceCategory::HawaiianPacificIslander => "H/PI",
            RaceCategory::Other => "OTH",
            RaceCategory::TwoOrMore => "2+",
        }
    }
}

/// One household record: per-race person counts plus Hispanic and adult
/// counts, located on a census block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Household {
    pub id: u64,
    pub block_id: u64,
    pub race_counts: [u32; RaceCategory::COUNT],
    pub hispanic_count: u32,
    pub adult_count: u32,
}

impl Household {
    /// Total persons in the household.
    pub fn size(&self) -> u32 {
        self.race_counts.iter().sum()
    }

    /// The single race shared by every member, if there is one.
    pub fn single_race(&self) -> Option<RaceCategory> {
        let mut found = None;
        for (i, &c) in self.race_counts.iter().enumerate() {
            if c > 0 {
                if found.is_some() {
                    return None;
                }
                found = RaceCategory::from_index(i);
            }
        }
        found
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.size();
        if size < 1 {
            return Err(Error::Validation {
                household_id: self.id,
                msg: "household size must be at least 1".into(),
            });
        }
        if self.adult_count > size {
            return Err(Error::Validation {
                household_id: self.id,
                msg: format!("adult_count {} exceeds size {}", self.adult_count, size),
            });
        }
        if self.hispanic_count > size {
            return Err(Error::Validation {
                household_id: self.id,
                msg: format!("hispanic_count {} exceeds size {}", self.hispanic_count, size),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockInfo {
    pub tract_id: u64,
    /// Planar centroid coordinates; only distances between them matter.
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CountyInfo {
    pub state_id: u64,
    /// Rural-urban continuum code, 1 (most urban) to 9 (most rural).
    pub rucc: Option<u8>,
}

/// Block -> tract -> county -> state nesting plus block centroids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeoHierarchy {
    pub blocks: BTreeMap<u64, BlockInfo>,
    /// tract id -> county id
    pub tracts: BTreeMap<u64, u64>,
    pub counties: BTreeMap<u64, CountyInfo>,
}

impl GeoHierarchy {
    pub fn validate(&self) -> Result<()> {
        for (&block_id, info) in &self.blocks {
            if !info.x.is_finite() || !info.y.is_finite() {
                return Err(Error::Geography(format!(
                    "block {block_id} has a non-finite centroid"
                )));
            }
            if !self.tracts.contains_key(&info.tract_id) {
                return Err(Error::Geography(format!(
                    "block {block_id} references missing tract {}",
                    info.tract_id
                )));
            }
        }
        for (&tract_id, county_id) in &self.tracts {
            if !self.counties.contains_key(county_id) {
                return Err(Error::Geography(format!(
                    "tract {tract_id} references missing county {county_id}"
                )));
            }
        }
        Ok(())
    }

    pub fn tract_of_block(&self, block_id: u64) -> Option<u64> {
        self.blocks.get(&block_id).map(|b| b.tract_id)
    }

    pub fn county_of_tract(&self, tract_id: u64) -> Option<u64> {
        self.tracts.get(&tract_id).copied()
    }

    pub fn county_of_block(&self, block_id: u64) -> Option<u64> {
        self.tract_of_block(block_id).and_then(|t| self.county_of_tract(t))
    }

    pub fn state_of_block(&self, block_id: u64) -> Option<u64> {
        self.county_of_block(block_id).and_then(|c| self.counties.get(&c)).map(|c| c.state_id)
    }

    pub fn centroid(&self, block_id: u64) -> Option<(f64, f64)> {
        self.blocks.get(&block_id).map(|b| (b.x, b.y))
    }
}

/// An ordered collection of households together with their geography, all
/// within one state. Immutable after construction; safe to share across
/// threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Microdata {
    pub households: Vec<Household>,
    pub geo: GeoHierarchy,
    pub state_id: u64,
}

impl Microdata {
    pub fn new(households: Vec<Household>, geo: GeoHierarchy, state_id: u64) -> Result<Self> {
        let md = Microdata { households, geo, state_id };
        md.validate()?;
        Ok(md)
    }

    pub fn validate(&self) -> Result<()> {
        self.geo.validate()?;
        for (&county_id, info) in &self.geo.counties {
            if info.state_id != self.state_id {
                return Err(Error::Geography(format!(
                    "county {county_id} belongs to state {} but the microdata is for state {}",
                    info.state_id, self.state_id
                )));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(self.households.len());
        for hh in &self.households {
            hh.validate()?;
            if !seen.insert(hh.id) {
                return Err(Error::Validation {
                    household_id: hh.id,
                    msg: "duplicate household id".into(),
                });
            }
            if !self.geo.blocks.contains_key(&hh.block_id) {
                return Err(Error::Geography(format!(
                    "household {} references missing block {}",
                    hh.id, hh.block_id
                )));
            }
        }
        Ok(())
    }

    pub fn total_population(&self) -> u64 {
        self.households.iter().map(|h| u64::from(h.size())).sum()
    }
}

/// Grid layout of the synthetic geography.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub counties: usize,
    pub tracts_per_county: usize,
    pub blocks_per_tract: usize,
}

/// Parameters of the synthetic population generator.
///
/// `segregation` blends each household member's race between the statewide
/// mixture (`0.0`) and the tract's dominant race (`1.0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_households: usize,
    pub grid: GridShape,
    /// Probability of household size 1, 2, ... (at most 12 entries).
    pub size_distribution: Vec<f64>,
    pub race_mixture: [f64; RaceCategory::COUNT],
    pub hispanic_rate: f64,
    pub segregation: f64,
    pub adult_rate: f64,
}

const PROB_SUM_TOL: f64 = 1e-9;

/// Maximum household size the generator will emit.
pub const MAX_SYNTH_HOUSEHOLD_SIZE: usize = 12;

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.counties == 0 || g.tracts_per_county == 0 || g.blocks_per_tract == 0 {
            return Err(Error::Config("grid dimensions must all be positive".into()));
        }
        if self.size_distribution.is_empty()
            || self.size_distribution.len() > MAX_SYNTH_HOUSEHOLD_SIZE
        {
            return Err(Error::Config(format!(
                "size_distribution must have 1..={MAX_SYNTH_HOUSEHOLD_SIZE} entries"
            )));
        }
        check_prob_vector("size_distribution", &self.size_distribution)?;
        check_prob_vector("race_mixture", &self.race_mixture)?;
        for (name, p) in [
            ("hispanic_rate", self.hispanic_rate),
            ("segregation", self.segregation),
            ("adult_rate", self.adult_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

fn check_prob_vector(name: &str, probs: &[f64]) -> Result<()> {
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Config(format!("{name} entries must lie in [0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Config(format!("{name} must sum to 1, got {sum}")));
    }
    Ok(())
}
