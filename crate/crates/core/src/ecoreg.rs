//! Ecological regression over precinct-level race and vote shares, plus a
//! synthetic election generator and the seed-paired bias experiment that
//! compares slopes on original, swapped, and noise-protected data.
//!
//! Precincts are unions of whole blocks and may cut across tracts, the way
//! real voting districts cut across the census hierarchy (run
//! configurations group whole tracts by default). For a race r and
//! candidate c, the regression is ordinary (optionally
//! population-weighted) least squares of the candidate's vote share on the
//! race's population share; the value of the fit at share 1 is the
//! inferred support of race r for candidate c.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geodata::{Microdata, RaceCategory};
use crate::seed::{derive_seed, rng_from};
use crate::swap::{select_and_swap, SwapConfig};
use crate::toydown::{run_toydown, ToyDownConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Precinct {
    pub precinct_id: u64,
    pub block_ids: Vec<u64>,
    pub population: u64,
    pub race_counts: [u64; RaceCategory::COUNT],
    pub votes: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ERResult {
    pub race: RaceCategory,
    pub candidate: usize,
    pub weighted: bool,
    pub slope: f64,
    pub intercept: f64,
    /// Value of the fit at race share 1: `intercept + slope`.
    pub support_estimate: f64,
}

struct FitPoint {
    x: f64,
    y: f64,
    w: f64,
}

fn fit_points(
    precincts: &[Precinct],
    race: RaceCategory,
    candidate: usize,
    weighted: bool,
) -> Result<Vec<FitPoint>> {
    let mut pts = Vec::with_capacity(precincts.len());
    for p in precincts {
        if candidate >= p.votes.len() {
            return Err(Error::Config(format!(
                "candidate index {candidate} out of range for precinct {} with {} candidates",
                p.precinct_id,
                p.votes.len()
            )));
        }
        let total_votes: u64 = p.votes.iter().sum();
        if p.population == 0 || total_votes == 0 {
            continue;
        }
        pts.push(FitPoint {
            x: p.race_counts[race.index()] as f64 / p.population as f64,
            y: p.votes[candidate] as f64 / total_votes as f64,
            w: if weighted { p.population as f64 } else { 1.0 },
        });
    }
    Ok(pts)
}

/// Least-squares fit of vote share on race share (closed-form normal
/// equations). `weighted` uses precinct population as the weight.
///
/// The covariate is the race's share of total population; a voting-age
/// share variant would slot in here as an extra flag if needed.
pub fn ecological_regression(
    precincts: &[Precinct],
    race: RaceCategory,
    candidate: usize,
    weighted: bool,
) -> Result<ERResult> {
    let pts = fit_points(precincts, race, candidate, weighted)?;
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "ecological regression needs at least 3 usable precincts, found {}",
            pts.len()
        )));
    }
    let sw: f64 = pts.iter().map(|p| p.w).sum();
    let x_bar: f64 = pts.iter().map(|p| p.w * p.x).sum::<f64>() / sw;
    let y_bar: f64 = pts.iter().map(|p| p.w * p.y).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.w * (p.x - x_bar) * (p.x - x_bar)).sum();
    let sxy: f64 = pts.iter().map(|p| p.w * (p.x - x_bar) * (p.y - y_bar)).sum();
    if sxx <= 1e-12 * sw {
        return Err(Error::DegenerateDesign(format!(
            "race share of {} has (near-)zero variance across precincts",
            race.code()
        )));
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    Ok(ERResult {
        race,
        candidate,
        weighted,
        slope,
        intercept,
        support_estimate: intercept + slope,
    })
}

/// Weighted-mean residuals `(sum w e / sum w, sum w e x / sum w)` of the
/// normal equations for a fit; both vanish for an exact least-squares
/// solution.
pub fn normal_equation_residuals(
    precincts: &[Precinct],
    fit: &ERResult,
) -> Result<(f64, f64)> {
    let pts = fit_points(precincts, fit.race, fit.candidate, fit.weighted)?;
    let sw: f64 = pts.iter().map(|p| p.w).sum();
    let mut r0 = 0.0;
    let mut r1 = 0.0;
    for p in &pts {
        let e = p.y - fit.intercept - fit.slope * p.x;
        r0 += p.w * e;
        r1 += p.w * e * p.x;
    }
    Ok((r0 / sw, r1 / sw))
}

/// Per-race candidate-support probabilities; row order follows
/// [`RaceCategory::ALL`], each row one probability vector over candidates.
pub type SupportMatrix = [Vec<f64>; RaceCategory::COUNT];

fn validate_support(support: &SupportMatrix) -> Result<usize> {
    let n_candidates = support[0].len();
    for (i, row) in support.iter().enumerate() {
        if row.len() != n_candidates || n_candidates == 0 {
            return Err(Error::Config("support rows must share a positive candidate count".into()));
        }
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config(format!("support row {i} has entries outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("support row {i} must sum to 1, got {sum}")));
        }
    }
    Ok(n_candidates)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Election {
    pub precincts: Vec<Precinct>,
    /// Precincts dropped for having no population.
    pub excluded_empty: usize,
}

/// Group every tract's blocks into the tract's precinct: the default
/// whole-tract precinct layout expressed as a block map.
pub fn tract_precincts_to_blocks(
    md: &Microdata,
    tract_map: &BTreeMap<u64, u64>,
) -> Result<BTreeMap<u64, u64>> {
    let mut out = BTreeMap::new();
    for (&block, info) in &md.geo.blocks {
        let precinct = tract_map.get(&info.tract_id).ok_or_else(|| {
            Error::Config(format!("tract {} has no precinct assignment", info.tract_id))
        })?;
        out.insert(block, *precinct);
    }
    Ok(out)
}

/// Simulate one election: each person turns out independently with
/// probability `turnout` and votes for a candidate drawn from their race's
/// support row. Deterministic given `seed`; precincts are unions of whole
/// blocks per `precinct_map` (block id to precinct id).
pub fn generate_election(
    md: &Microdata,
    precinct_map: &BTreeMap<u64, u64>,
    support: &SupportMatrix,
    turnout: f64,
    seed: u64,
) -> Result<Election> {
    let n_candidates = validate_support(support)?;
    if !(turnout > 0.0 && turnout <= 1.0) {
        return Err(Error::Config(format!("turnout must lie in (0, 1], got {turnout}")));
    }
    for &block in md.geo.blocks.keys() {
        if !precinct_map.contains_key(&block) {
            return Err(Error::Config(format!("block {block} has no precinct assignment")));
        }
    }

    let mut precincts: BTreeMap<u64, Precinct> = precinct_map
        .values()
        .map(|&p| {
            (
                p,
                Precinct {
                    precinct_id: p,
                    block_ids: Vec::new(),
                    population: 0,
                    race_counts: [0; 7],
                    votes: vec![0; n_candidates],
                },
            )
        })
        .collect();
    for (&block, &p) in precinct_map {
        precincts.get_mut(&p).expect("precinct present").block_ids.push(block);
    }

    let mut rng = rng_from(seed);
    for hh in &md.households {
        let precinct = precincts.get_mut(&precinct_map[&hh.block_id]).expect("precinct present");
        for race in RaceCategory::ALL {
            let members = hh.race_counts[race.index()];
            precinct.race_counts[race.index()] += u64::from(members);
            precinct.population += u64::from(members);
            for _ in 0..members {
                if rng.gen_bool(turnout) {
                    let row = &support[race.index()];
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut choice = n_candidates - 1;
                    for (c, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            choice = c;
                            break;
                        }
                    }
                    precinct.votes[choice] += 1;
                }
            }
        }
    }

    let excluded_empty = precincts.values().filter(|p| p.population == 0).count();
    let precincts = precincts.into_values().filter(|p| p.population > 0).collect();
    Ok(Election { precincts, excluded_empty })
}

/// Replace each precinct's race counts (and population) with sums of a
/// block-level table, keeping the votes fixed.
pub fn reaggregate_precincts(
    precincts: &[Precinct],
    precinct_map: &BTreeMap<u64, u64>,
    blocks: &BTreeMap<u64, [u64; 7]>,
) -> Vec<Precinct> {
    let mut by_id: BTreeMap<u64, Precinct> = precincts
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.race_counts = [0; 7];
            q.population = 0;
            (p.precinct_id, q)
        })
        .collect();
    for (&block, row) in blocks {
        let Some(&pid) = precinct_map.get(&block) else { continue };
        let Some(p) = by_id.get_mut(&pid) else { continue };
        for (i, &v) in row.iter().enumerate() {
            p.race_counts[i] += v;
            p.population += v;
        }
    }
    by_id.into_values().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErBiasRow {
    pub race: RaceCategory,
    pub candidate: usize,
    pub weighted: bool,
    pub replicate: usize,
    pub slope_original: f64,
    pub slope_swapped: f64,
    pub slope_toydown: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErBiasTable {
    pub rows: Vec<ErBiasRow>,
}

impl ErBiasTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("race,candidate,weighted,replicate,slope_original,slope_swapped,slope_toydown\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.race.code(),
                r.candidate,
                r.weighted,
                r.replicate,
                r.slope_original,
                r.slope_swapped,
                r.slope_toydown
            )
            .expect("string write");
        }
        out
    }

    /// Median of a per-row value over replicates for one
    /// `(race, candidate, weighted)` cell.
    pub fn median_over_replicates<F: Fn(&ErBiasRow) -> f64>(
        &self,
        race: RaceCategory,
        candidate: usize,
        weighted: bool,
        f: F,
    ) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.race == race && r.candidate == candidate && r.weighted == weighted)
            .map(f)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        Some(vals[vals.len() / 2])
    }
}

/// Hold the election fixed and compare regression slopes on the original,
/// swapped, and noise-protected race shares over seed-paired replicates.
///
/// The vote columns are auxiliary data: only the race shares are
/// recomputed from each protected dataset. Replicate seeds derive from the
/// two configs' seeds under the names `er-swap` / `er-toydown`.
#[allow(clippy::too_many_arguments)]
pub fn er_bias_experiment(
    md: &Microdata,
    swap_cfg: &SwapConfig,
    toydown_cfg: &ToyDownConfig,
    precinct_map: &BTreeMap<u64, u64>,
    support: &SupportMatrix,
    turnout: f64,
    election_seed: u64,
    replicates: usize,
) -> Result<ErBiasTable> {
    let election = generate_election(md, precinct_map, support, turnout, election_seed)?;
    let n_candidates = election.precincts.first().map(|p| p.votes.len()).unwrap_or(0);

    // Pairs with a fittable original regression; the rest are skipped.
    let mut pairs = Vec::new();
    let mut originals: BTreeMap<(usize, usize, bool), ERResult> = BTreeMap::new();
    for race in RaceCategory::ALL {
        for candidate in 0..n_candidates {
            for weighted in [false, true] {
                if let Ok(fit) = ecological_regression(&election.precincts, race, candidate, weighted)
                {
                    pairs.push((race, candidate, weighted));
                    originals.insert((race.index(), candidate, weighted), fit);
                }
            }
        }
    }

    let mut table = ErBiasTable::default();
    for rep in 0..replicates {
        let mut swap_run = *swap_cfg;
        swap_run.seed = derive_seed(swap_cfg.seed, "er-swap", rep as u64);
        let (swapped_md, _) = select_and_swap(md, &swap_run)?;
        let swapped_blocks = crate::geodata::block_race_table(&swapped_md);
        let swapped = reaggregate_precincts(&election.precincts, precinct_map, &swapped_blocks);

        let mut td_run = toydown_cfg.clone();
        td_run.seed = derive_seed(toydown_cfg.seed, "er-toydown", rep as u64);
        let td_blocks = run_toydown(md, &td_run)?;
        let toydown = reaggregate_precincts(&election.precincts, precinct_map, &td_blocks);

        for &(race, candidate, weighted) in &pairs {
            let original = originals[&(race.index(), candidate, weighted)];
            let (Ok(s), Ok(t)) = (
                ecological_regression(&swapped, race, candidate, weighted),
                ecological_regression(&toydown, race, candidate, weighted),
            ) else {
                continue;
            };
            table.rows.push(ErBiasRow {
                race,
                candidate,
                weighted,
                replicate: rep,
                slope_original: original.slope,
                slope_swapped: s.slope,
                slope_toydown: t.slope,
            });
        }
    }
    Ok(table)
}

/// Precinct table CSV
/// (`precinct_id,population,w,b,aian,as,hpi,oth,two_plus,votes_cand1,...`).
pub fn precincts_csv(precincts: &[Precinct]) -> String {
    let n_candidates = precincts.first().map(|p| p.votes.len()).unwrap_or(0);
    let mut out = String::from("precinct_id,population,w,b,aian,as,hpi,oth,two_plus");
    for c in 1..=n_candidates {
        write!(out, ",votes_cand{c}").expect("string write");
    }
    out.push('\n');
    for p in precincts {
        write!(out, "{},{}", p.precinct_id, p.population).expect("string write");
        for v in p.race_counts {
            write!(out, ",{v}").expect("string write");
        }
        for v in &p.votes {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

/// CSV in the `race,candidate,weighted,slope,intercept,support_estimate,replicate`
/// layout for a set of fits.
pub fn er_results_csv(fits: &[(usize, ERResult)]) -> String {
    let mut out = String::from("race,candidate,weighted,slope,intercept,support_estimate,replicate\n");
    for (replicate, f) in fits {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{}",
            f.race.code(),
            f.candidate,
            f.weighted,
            f.slope,
            f.intercept,
            f.support_estimate,
            replicate
        )
        .expect("string write");
    }
    out
}
