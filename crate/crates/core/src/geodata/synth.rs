//! Seeded synthetic population generator.
//!
//! Geography is a grid: counties are blocks of tracts, tracts sit on a
//! square lattice with planar centroids, and each tract holds a sub-grid of
//! blocks. Each tract draws a dominant race from the statewide mixture, and
//! each household member's race comes from the blend
//! `(1 - segregation) * statewide + segregation * dominant`, which gives a
//! single knob from uniform mixing (0) to full clustering (1).

use rand::Rng;

use super::{BlockInfo, CountyInfo, GeoHierarchy, Household, Microdata, RaceCategory, SynthParams};
use crate::error::{Error, Result};
use crate::seed::rng_from;

const STATE_ID: u64 = 1;
const TRACT_SPACING: f64 = 10.0;

/// Draw an index from a probability vector using a single uniform draw.
fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn build_grid_geography(counties: usize, tracts_per_county: usize, blocks_per_tract: usize) -> GeoHierarchy {
    let mut geo = GeoHierarchy::default();
    let n_tracts = counties * tracts_per_county;
    let tract_side = (n_tracts as f64).sqrt().ceil() as usize;
    let block_side = (blocks_per_tract as f64).sqrt().ceil() as usize;
    for c in 0..counties {
        let county_id = (c + 1) as u64;
        let rucc = Some((1 + c % 9) as u8);
        geo.counties.insert(county_id, CountyInfo { state_id: STATE_ID, rucc });
        for t in 0..tracts_per_county {
            let tract_id = county_id * 1_000 + t as u64;
            geo.tracts.insert(tract_id, county_id);
            let g = c * tracts_per_county + t;
            let origin_x = (g % tract_side) as f64 * TRACT_SPACING;
            let origin_y = (g / tract_side) as f64 * TRACT_SPACING;
            for b in 0..blocks_per_tract {
                let block_id = tract_id * 1_000 + b as u64;
                let step = (TRACT_SPACING - 2.0) / block_side as f64;
                let x = origin_x + 1.0 + (b % block_side) as f64 * step;
                let y = origin_y + 1.0 + (b / block_side) as f64 * step;
                geo.blocks.insert(block_id, BlockInfo { tract_id, x, y });
            }
        }
    }
    geo
}

/// Generate a synthetic state. Pure function of `(params, seed)`.
pub fn generate_synthetic(params: &SynthParams, seed: u64) -> Result<Microdata> {
    params.validate()?;
    if params.n_households == 0 {
        return Err(Error::EmptyPopulation);
    }

    let geo = build_grid_geography(
        params.grid.counties,
        params.grid.tracts_per_county,
        params.grid.blocks_per_tract,
    );
    let block_ids: Vec<u64> = geo.blocks.keys().copied().collect();
    let tract_ids: Vec<u64> = geo.tracts.keys().copied().collect();

    let mut rng = rng_from(seed);

    // Dominant race per tract, drawn in tract-id order.
    let dominant: std::collections::BTreeMap<u64, RaceCategory> = tract_ids
        .iter()
        .map(|&t| (t, RaceCategory::ALL[sample_index(&mut rng, &params.race_mixture)]))
        .collect();

    let alpha = params.segregation;
    let mut households = Vec::with_capacity(params.n_households);
    for i in 0..params.n_households {
        let size = 1 + sample_index(&mut rng, &params.size_distribution) as u32;
        let block_id = block_ids[rng.gen_range(0..block_ids.len())];
        let tract_dominant = dominant[&geo.blocks[&block_id].tract_id];

        let mut race_counts = [0u32; RaceCategory::COUNT];
        let mut hispanic_count = 0;
        let mut adult_count = 0;
        for _ in 0..size {
            let race = if rng.gen_bool(alpha) {
                tract_dominant
            } else {
                RaceCategory::ALL[sample_index(&mut rng, &params.race_mixture)]
            };
            race_counts[race.index()] += 1;
            if rng.gen_bool(params.hispanic_rate) {
                hispanic_count += 1;
            }
            if rng.gen_bool(params.adult_rate) {
                adult_count += 1;
            }
        }
        households.push(Household {
            id: (i + 1) as u64,
            block_id,
            race_counts,
            hispanic_count,
            adult_count,
        });
    }

    Microdata::new(households, geo, STATE_ID)
}
