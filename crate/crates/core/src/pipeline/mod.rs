//! Pipeline runner: orchestrates input loading/generation, mechanism
//! replicates, metric computation, and the report/manifest layout on disk.
//!
//! Layout of a run directory:
//!
//! ```text
//! out/
//!   manifest.json              resolved config, derived seeds, file list
//!   er_original.csv            regression fits on the input data (er metric)
//!   <mechanism>/
//!     variance.csv             paired-replicate variance estimates
//!     rep<k>/
//!       swap_log.csv           (swap) audit trail
//!       block_counts.csv       (toydown) finalized block table
//!       error_table_block.csv  per-cell errors vs. the input
//!       error_table_county.csv
//!       entropy.csv            (swap) four-step decomposition
//!       sizes.csv target_races.csv partner_matrix.csv   (swap)
//!       rucc_ratios.csv        protected/original county ratios by RUCC
//!       er_results.csv         regression fits on the protected data
//! ```
//!
//! Every file is written atomically (temp + rename) and all content is a
//! pure function of the config, so rerunning a config reproduces the tree
//! byte for byte.

pub mod config;
pub mod delta;
pub mod sweep;

pub use config::{
    load_config, ElectionConfig, InputConfig, MechanismConfig, MetricKind, RunConfig, SynthConfig,
    SPEC_VERSION,
};
pub use delta::{
    delta_replicates_csv, delta_summary_csv, estimate_delta, evaluate_statistic, DeltaReport,
    ElectionContext, Statistic, AVAILABLE_STATISTICS,
};
pub use sweep::{variance_sweep, SweepRow, SweepTable};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::ecoreg::{ecological_regression, er_results_csv, ERResult};
use crate::error::{Error, Result};
use crate::geodata::{race_count_table, CountTable, GeoLevel, Microdata, RaceCategory};
use crate::metrics::{
    entropy_decomposition, error_table, rucc_ratio_table, swap_tabulations, variance_estimate,
};
use crate::seed::derive_seed;
use crate::swap::select_and_swap;
use crate::toydown::{block_table_csv, run_toydown};

#[derive(Clone, Debug, Serialize)]
pub struct CellReport {
    pub mechanism: String,
    pub kind: String,
    pub replicate: usize,
    pub seed: u64,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InputSummary {
    pub kind: String,
    /// Seed the synthetic input was generated with (derived from the run
    /// seed under the name `input`); absent for file inputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derived_seed: Option<u64>,
    pub households: usize,
    pub blocks: usize,
    pub state_id: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub cells: Vec<CellReport>,
    /// `(mechanism, error)` pairs for cells that failed; the rest of the
    /// run still completes.
    pub failures: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    spec_version: u32,
    config: &'a RunConfig,
    input: InputSummary,
    cells: &'a [CellReport],
    failures: &'a [(String, String)],
}

/// Write a report file atomically (temp file + rename), creating parent
/// directories as needed.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Aggregate a block-level race table up to `level`, zero-filling regions
/// with no blocks so the result aligns with [`race_count_table`].
pub fn blocks_to_counts(
    md: &Microdata,
    blocks: &BTreeMap<u64, [u64; RaceCategory::COUNT]>,
    level: GeoLevel,
) -> CountTable {
    let mut out: CountTable = match level {
        GeoLevel::Block => md.geo.blocks.keys().copied().collect::<Vec<_>>(),
        GeoLevel::Tract => md.geo.tracts.keys().copied().collect(),
        GeoLevel::County => md.geo.counties.keys().copied().collect(),
        GeoLevel::State => vec![md.state_id],
    }
    .into_iter()
    .flat_map(|region| RaceCategory::ALL.into_iter().map(move |race| ((region, race), 0)))
    .collect();
    for (&block, row) in blocks {
        let region = match level {
            GeoLevel::Block => block,
            GeoLevel::Tract => md.geo.tract_of_block(block).expect("validated microdata"),
            GeoLevel::County => md.geo.county_of_block(block).expect("validated microdata"),
            GeoLevel::State => md.state_id,
        };
        for race in RaceCategory::ALL {
            *out.get_mut(&(region, race)).expect("region present") += row[race.index()] as i64;
        }
    }
    out
}

fn fit_all_pairs(precincts: &[crate::ecoreg::Precinct]) -> Vec<(usize, ERResult)> {
    let n_candidates = precincts.first().map(|p| p.votes.len()).unwrap_or(0);
    let mut fits = Vec::new();
    for race in RaceCategory::ALL {
        for candidate in 0..n_candidates {
            for weighted in [false, true] {
                if let Ok(fit) = ecological_regression(precincts, race, candidate, weighted) {
                    fits.push((0usize, fit));
                }
            }
        }
    }
    fits
}

struct CellResult {
    report: CellReport,
    block_counts: CountTable,
}

/// Execute a full configured run. `out_override` takes precedence over the
/// config's `output_dir`; `jobs` bounds the mechanism-by-replicate
/// parallelism (default: rayon's global pool).
pub fn run_pipeline(
    config: &RunConfig,
    out_override: Option<&Path>,
    jobs: Option<usize>,
) -> Result<RunOutcome> {
    config.validate()?;
    config.require_mechanisms()?;
    let out_dir: PathBuf = match (out_override, &config.output_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => {
            return Err(Error::Config(
                "no output directory: set output_dir in the config or pass --out".into(),
            ))
        }
    };

    let md = config.load_input()?;
    let before_block = race_count_table(&md, GeoLevel::Block);
    let before_county = race_count_table(&md, GeoLevel::County);

    let want = |m: MetricKind| config.metrics.contains(&m);
    let election = if want(MetricKind::Er) {
        ElectionContext::from_config(config, &md)?
    } else {
        None
    };
    if let Some(ctx) = &election {
        write_atomic(&out_dir.join("precincts.csv"), &crate::ecoreg::precincts_csv(&ctx.precincts))?;
        write_atomic(&out_dir.join("er_original.csv"), &er_results_csv(&fit_all_pairs(&ctx.precincts)))?;
    }

    let cells: Vec<(usize, usize)> = (0..config.mechanisms.len())
        .flat_map(|m| (0..config.replicates).map(move |r| (m, r)))
        .collect();

    let run_cell = |&(mech_idx, rep): &(usize, usize)| -> (usize, usize, Result<CellResult>) {
        let mech = &config.mechanisms[mech_idx];
        let seed = derive_seed(config.seed, mech.name(), rep as u64);
        let cell_dir = out_dir.join(mech.name()).join(format!("rep{rep}"));
        let rel = |file: &str| format!("{}/rep{rep}/{file}", mech.name());

        let result = (|| -> Result<CellResult> {
            let mut outputs = Vec::new();
            let mut emit = |file: &str, contents: &str| -> Result<()> {
                write_atomic(&cell_dir.join(file), contents)?;
                outputs.push(rel(file));
                Ok(())
            };

            let (blocks, swap_log) = match mech {
                MechanismConfig::Swap { .. } => {
                    let (swapped, log) = select_and_swap(&md, &mech.swap_config(seed)?)?;
                    (crate::geodata::block_race_table(&swapped), Some(log))
                }
                MechanismConfig::Toydown { .. } => {
                    (run_toydown(&md, &mech.toydown_config(seed)?)?, None)
                }
            };

            if let Some(log) = &swap_log {
                emit("swap_log.csv", &log.to_csv())?;
            } else {
                emit("block_counts.csv", &block_table_csv(&blocks))?;
            }

            let after_block = blocks_to_counts(&md, &blocks, GeoLevel::Block);
            let after_county = blocks_to_counts(&md, &blocks, GeoLevel::County);

            if want(MetricKind::ErrorTable) {
                emit("error_table_block.csv", &error_table(&before_block, &after_block)?.to_csv())?;
                emit(
                    "error_table_county.csv",
                    &error_table(&before_county, &after_county)?.to_csv(),
                )?;
            }
            if let Some(log) = &swap_log {
                if want(MetricKind::Entropy) {
                    emit("entropy.csv", &entropy_decomposition(&md, log)?.to_csv())?;
                }
                if want(MetricKind::Tabulations) {
                    let tabs = swap_tabulations(&md, log)?;
                    emit("sizes.csv", &tabs.sizes_csv())?;
                    emit("target_races.csv", &tabs.target_races_csv())?;
                    emit("partner_matrix.csv", &tabs.partner_matrix_csv())?;
                }
            }
            if want(MetricKind::RuccRatios) {
                emit(
                    "rucc_ratios.csv",
                    &rucc_ratio_table(&after_county, &before_county, &md.geo)?.to_csv(),
                )?;
            }
            if let Some(ctx) = &election {
                let precincts =
                    crate::ecoreg::reaggregate_precincts(&ctx.precincts, &ctx.precinct_map, &blocks);
                let fits: Vec<(usize, ERResult)> = fit_all_pairs(&precincts)
                    .into_iter()
                    .map(|(_, f)| (rep, f))
                    .collect();
                emit("er_results.csv", &er_results_csv(&fits))?;
            }

            Ok(CellResult {
                report: CellReport {
                    mechanism: mech.name().to_string(),
                    kind: mech.kind().to_string(),
                    replicate: rep,
                    seed,
                    outputs,
                },
                block_counts: after_block,
            })
        })();
        (mech_idx, rep, result)
    };

    let mut results: Vec<(usize, usize, Result<CellResult>)> = match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| cells.par_iter().map(run_cell).collect())
        }
        None => cells.par_iter().map(run_cell).collect(),
    };
    results.sort_by_key(|&(m, r, _)| (m, r));

    let mut cell_reports = Vec::new();
    let mut failures = Vec::new();
    let mut per_mech_blocks: BTreeMap<usize, BTreeMap<usize, CountTable>> = BTreeMap::new();
    for (mech_idx, rep, result) in results {
        match result {
            Ok(cell) => {
                per_mech_blocks.entry(mech_idx).or_default().insert(rep, cell.block_counts);
                cell_reports.push(cell.report);
            }
            Err(e) => failures.push((config.mechanisms[mech_idx].name().to_string(), e.to_string())),
        }
    }

    if want(MetricKind::Variance) && config.replicates >= 2 {
        for (mech_idx, blocks) in &per_mech_blocks {
            let mech = &config.mechanisms[*mech_idx];
            let mut out = String::from("pair,replicate_a,replicate_b,vhat\n");
            let mut any = false;
            for pair in 0..config.replicates / 2 {
                let (a, b) = (2 * pair, 2 * pair + 1);
                if let (Some(ta), Some(tb)) = (blocks.get(&a), blocks.get(&b)) {
                    writeln!(out, "{pair},{a},{b},{:.6}", variance_estimate(ta, tb)?)
                        .expect("string write");
                    any = true;
                }
            }
            if any {
                write_atomic(&out_dir.join(mech.name()).join("variance.csv"), &out)?;
            }
        }
    }

    let manifest = Manifest {
        tool: "swaplab",
        spec_version: SPEC_VERSION,
        config,
        input: InputSummary {
            kind: if config.input.synthetic.is_some() { "synthetic".into() } else { "files".into() },
            derived_seed: config
                .input
                .synthetic
                .as_ref()
                .map(|_| derive_seed(config.seed, "input", 0)),
            households: md.households.len(),
            blocks: md.geo.blocks.len(),
            state_id: md.state_id,
        },
        cells: &cell_reports,
        failures: &failures,
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out_dir.join("manifest.json"), &(manifest_json + "\n"))?;

    Ok(RunOutcome { out_dir, cells: cell_reports, failures })
}
