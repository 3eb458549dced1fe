//! Browser bindings for the interactive demo page (`www/index.html`).
//!
//! Three operations, each fully seeded and returning a JSON string so the
//! page needs no binding glue beyond `JSON.parse`. Errors come back as
//! `{"error": "..."}` rather than exceptions.
//!
//! Build with `wasm-pack build crates/wasm --target web` and serve the
//! crate directory with any static file server.

use std::collections::BTreeMap;

use wasm_bindgen::prelude::*;

use swaplab_core::ecoreg::{
    ecological_regression, generate_election, reaggregate_precincts, SupportMatrix,
};
use swaplab_core::error::Result;
use swaplab_core::geodata::{
    block_race_table, generate_synthetic, race_count_table, GeoLevel, GridShape, Microdata,
    RaceCategory, SynthParams,
};
use swaplab_core::metrics::{entropy_decomposition, mean_abs_error};
use swaplab_core::seed::derive_seed;
use swaplab_core::swap::{swap_variant, SwapConfig};
use swaplab_core::toydown::{run_toydown, ToyDownConfig};

const DEMO_SIZE_DIST: [f64; 8] = [0.26, 0.36, 0.15, 0.14, 0.05, 0.02, 0.01, 0.01];
const DEMO_MIXTURE: [f64; 7] = [0.65, 0.28, 0.003, 0.012, 0.0005, 0.011, 0.0435];

fn demo_params(n_households: u32, segregation: f64, grid: GridShape) -> SynthParams {
    SynthParams {
        n_households: n_households.clamp(500, 30_000) as usize,
        grid,
        size_distribution: DEMO_SIZE_DIST.to_vec(),
        race_mixture: DEMO_MIXTURE,
        hispanic_rate: 0.03,
        segregation: segregation.clamp(0.0, 1.0),
        adult_rate: 0.75,
    }
}

fn demo_swap_config(variant: &str, swap_rate: f64, seed: u64) -> Result<SwapConfig> {
    let rate = swap_rate.clamp(0.001, 0.25);
    Ok(swap_variant(variant)?.config(rate, derive_seed(seed, "demo-swap", 0)))
}

fn or_error(result: Result<serde_json::Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

/// Generate a clustered state, swap it, and report the tract-entropy
/// shift with the four-step decomposition.
#[wasm_bindgen]
pub fn entropy_demo(
    n_households: u32,
    segregation: f64,
    swap_rate: f64,
    variant: &str,
    seed: u32,
) -> String {
    or_error((|| {
        let params = demo_params(
            n_households,
            segregation,
            GridShape { counties: 4, tracts_per_county: 8, blocks_per_tract: 4 },
        );
        let md = generate_synthetic(&params, derive_seed(seed as u64, "demo-input", 0))?;
        let cfg = demo_swap_config(variant, swap_rate, seed as u64)?;
        let (_, log) = swaplab_core::swap::select_and_swap(&md, &cfg)?;
        let report = entropy_decomposition(&md, &log)?;

        let tracts: Vec<serde_json::Value> = report
            .per_tract
            .iter()
            .map(|t| serde_json::json!({ "id": t.tract_id, "before": t.before, "after": t.after }))
            .collect();
        Ok(serde_json::json!({
            "avg": {
                "before": report.avg_before,
                "steps": report.avg_steps,
                "after": report.avg_after,
            },
            "tracts": tracts,
            "targets": log.targets_count,
            "displaced": log.households_displaced,
            "skipped": log.skipped_targets,
        }))
    })())
}

/// County-level signed errors per race for swapping vs. the hierarchical
/// mechanism on the same synthetic state.
#[wasm_bindgen]
pub fn error_demo(
    n_households: u32,
    segregation: f64,
    swap_rate: f64,
    epsilon: f64,
    seed: u32,
) -> String {
    or_error((|| {
        let params = demo_params(
            n_households,
            segregation,
            GridShape { counties: 8, tracts_per_county: 6, blocks_per_tract: 4 },
        );
        let md = generate_synthetic(&params, derive_seed(seed as u64, "demo-input", 0))?;
        let before_block = race_count_table(&md, GeoLevel::Block);
        let before_county = race_count_table(&md, GeoLevel::County);

        let cfg = demo_swap_config("standard", swap_rate, seed as u64)?;
        let (swapped, _) = swaplab_core::swap::select_and_swap(&md, &cfg)?;
        let swap_block = race_count_table(&swapped, GeoLevel::Block);
        let swap_county = race_count_table(&swapped, GeoLevel::County);

        let td_cfg = ToyDownConfig::new(
            epsilon.clamp(0.05, 1e9),
            derive_seed(seed as u64, "demo-toydown", 0),
        );
        let td_blocks = run_toydown(&md, &td_cfg)?;
        let td_block = swaplab_core::pipeline::blocks_to_counts(&md, &td_blocks, GeoLevel::Block);
        let td_county = swaplab_core::pipeline::blocks_to_counts(&md, &td_blocks, GeoLevel::County);

        let county_errors = |after: &swaplab_core::geodata::CountTable| -> serde_json::Value {
            let mut per_race: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
            for (&(county, race), &b) in after {
                per_race
                    .entry(race.code())
                    .or_default()
                    .push(before_county[&(county, race)] - b);
            }
            serde_json::json!(per_race)
        };
        Ok(serde_json::json!({
            "races": RaceCategory::ALL.iter().map(|r| r.code()).collect::<Vec<_>>(),
            "labels": RaceCategory::ALL.iter().map(|r| r.label()).collect::<Vec<_>>(),
            "swap": {
                "mae": mean_abs_error(&before_block, &swap_block)?,
                "county_errors": county_errors(&swap_county),
            },
            "toydown": {
                "mae": mean_abs_error(&before_block, &td_block)?,
                "county_errors": county_errors(&td_county),
            },
        }))
    })())
}

/// Ecological-regression scatter for a two-candidate polarized election:
/// precinct race share vs. vote share with fitted lines on the original,
/// swapped, and noise-protected data.
#[wasm_bindgen]
pub fn er_demo(
    n_households: u32,
    segregation: f64,
    swap_rate: f64,
    epsilon: f64,
    weighted: bool,
    seed: u32,
) -> String {
    or_error((|| {
        let mut params = demo_params(
            n_households,
            segregation,
            GridShape { counties: 4, tracts_per_county: 10, blocks_per_tract: 12 },
        );
        params.race_mixture = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        let md = generate_synthetic(&params, derive_seed(seed as u64, "demo-input", 0))?;
        let map = interleaved_blocks(&md, 10);

        let mut support: SupportMatrix = std::array::from_fn(|_| vec![0.5, 0.5]);
        support[RaceCategory::White.index()] = vec![0.9, 0.1];
        support[RaceCategory::Black.index()] = vec![0.1, 0.9];
        let election =
            generate_election(&md, &map, &support, 1.0, derive_seed(seed as u64, "demo-vote", 0))?;

        let cfg = demo_swap_config("standard", swap_rate, seed as u64)?;
        let (swapped_md, _) = swaplab_core::swap::select_and_swap(&md, &cfg)?;
        let swapped =
            reaggregate_precincts(&election.precincts, &map, &block_race_table(&swapped_md));

        let td_cfg = ToyDownConfig::new(
            epsilon.clamp(0.05, 1e9),
            derive_seed(seed as u64, "demo-toydown", 0),
        );
        let toydown = reaggregate_precincts(&election.precincts, &map, &run_toydown(&md, &td_cfg)?);

        let race = RaceCategory::White;
        let dataset = |precincts: &[swaplab_core::ecoreg::Precinct]| -> Result<serde_json::Value> {
            let fit = ecological_regression(precincts, race, 0, weighted)?;
            let points: Vec<[f64; 2]> = precincts
                .iter()
                .filter(|p| p.population > 0 && p.votes.iter().sum::<u64>() > 0)
                .map(|p| {
                    [
                        p.race_counts[race.index()] as f64 / p.population as f64,
                        p.votes[0] as f64 / p.votes.iter().sum::<u64>() as f64,
                    ]
                })
                .collect();
            Ok(serde_json::json!({
                "points": points,
                "slope": fit.slope,
                "intercept": fit.intercept,
                "support": fit.support_estimate,
            }))
        };
        Ok(serde_json::json!({
            "race": race.code(),
            "weighted": weighted,
            "original": dataset(&election.precincts)?,
            "swapped": dataset(&swapped)?,
            "toydown": dataset(&toydown)?,
        }))
    })())
}

/// Deal blocks into `precincts` groups with a stride permutation so each
/// precinct spreads across the whole state.
fn interleaved_blocks(md: &Microdata, precincts: usize) -> BTreeMap<u64, u64> {
    let blocks: Vec<u64> = md.geo.blocks.keys().copied().collect();
    let total = blocks.len();
    let per = total.div_ceil(precincts);
    let stride = (total / 3..total).find(|s| s % 2 == 1 && gcd(*s, total) == 1).unwrap_or(1);
    blocks
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, (((i * stride) % total) / per) as u64))
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_demo_returns_well_formed_json() {
        let out = entropy_demo(2_000, 0.9, 0.10, "standard", 7);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_none(), "{out}");
        assert!(v["avg"]["after"].as_f64().unwrap() > 0.0);
        assert_eq!(v["avg"]["steps"].as_array().unwrap().len(), 4);
        assert!(v["targets"].as_u64().unwrap() > 0);
        // deterministic
        assert_eq!(out, entropy_demo(2_000, 0.9, 0.10, "standard", 7));
    }

    #[test]
    fn error_demo_covers_both_mechanisms() {
        let out = error_demo(2_000, 0.8, 0.10, 1.0, 3);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_none(), "{out}");
        for mech in ["swap", "toydown"] {
            assert!(v[mech]["mae"].as_f64().unwrap() >= 0.0);
            let errors = v[mech]["county_errors"].as_object().unwrap();
            assert_eq!(errors.len(), 7);
            assert_eq!(errors["w"].as_array().unwrap().len(), 8);
        }
    }

    #[test]
    fn er_demo_reports_three_fits() {
        let out = er_demo(4_000, 0.9, 0.10, 0.25, false, 11);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_none(), "{out}");
        for dataset in ["original", "swapped", "toydown"] {
            assert!(v[dataset]["slope"].is_f64());
            assert!(!v[dataset]["points"].as_array().unwrap().is_empty());
        }
    }

    #[test]
    fn bad_variant_becomes_a_json_error() {
        let out = entropy_demo(2_000, 0.9, 0.10, "bogus", 7);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["error"].as_str().unwrap().contains("variant"));
    }
}
