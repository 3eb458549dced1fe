//! The record-swapping engine.
//!
//! A swap run scores every household by local uniqueness, splits the state
//! into four risk tiers, then walks the households tier by tier (rarest
//! first, seeded shuffle within a tier). Each visited household becomes a
//! swap *target* with its tier's probability; a target is paired with a
//! household that matches exactly on size and adult count, lies in a
//! different tract of the same state, and is among the `k_nearest` eligible
//! candidates by block-centroid distance. A swap exchanges only the two
//! households' block assignments, so block-level total and adult counts and
//! statewide race counts are invariant by construction. The run stops once
//! `round(swap_rate * N)` targets have been swapped or the walk is
//! exhausted.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geodata::Microdata;
use crate::seed::{derive_seed, rng_from};

/// Tier fractions follow `f4 = rate / 1.6`, which keeps "swap every tier-4
/// household plus, in expectation, 60% of half the tier-3 stratum" equal to
/// the swap rate. The formula saturates at this rate (f1 = 0); above it the
/// strata are pinned at (1/6, 1/3, 1/2, 0) while the budget keeps scaling.
pub const MAX_TIER_RATE: f64 = 1.6 / 6.0;

/// All parameters of one swap run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapConfig {
    /// Fraction of households targeted, in (0, 1).
    pub swap_rate: f64,
    /// Partner drawn uniformly among this many nearest eligible candidates.
    pub k_nearest: usize,
    /// Swap probabilities `(p4, p3, p2, p1)`, tier 4 first. `p4` must be 1.
    pub tier_probs: [f64; 4],
    pub seed: u64,
}

impl SwapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.swap_rate > 0.0 && self.swap_rate < 1.0) {
            return Err(Error::Config(format!(
                "swap_rate must lie in (0, 1), got {}",
                self.swap_rate
            )));
        }
        if self.k_nearest == 0 {
            return Err(Error::Config("k_nearest must be positive".into()));
        }
        let [p4, p3, p2, p1] = self.tier_probs;
        if p4 != 1.0 {
            return Err(Error::Config(format!("tier-4 swap probability must be 1.0, got {p4}")));
        }
        if !(0.0 <= p1 && p1 <= p2 && p2 <= p3 && p3 <= 1.0) {
            return Err(Error::Config(format!(
                "tier probabilities must satisfy 0 <= p1 <= p2 <= p3 <= 1, got ({p3}, {p2}, {p1})"
            )));
        }
        Ok(())
    }

    fn prob_for_tier(&self, tier: u8) -> f64 {
        debug_assert!((1..=4).contains(&tier));
        self.tier_probs[4 - tier as usize]
    }
}

/// The two studied parameterizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwapVariant {
    /// k = 10, probabilities (1.0, 0.6, 0.3, 0.1).
    Standard,
    /// k = 100, probabilities (1.0, 0.3, 0.3, 0.1); tuned to consider more
    /// targets and farther partners, raising the run-to-run variance.
    HighVariance,
}

impl SwapVariant {
    pub fn config(self, swap_rate: f64, seed: u64) -> SwapConfig {
        match self {
            SwapVariant::Standard => SwapConfig {
                swap_rate,
                k_nearest: 10,
                tier_probs: [1.0, 0.6, 0.3, 0.1],
                seed,
            },
            SwapVariant::HighVariance => SwapConfig {
                swap_rate,
                k_nearest: 100,
                tier_probs: [1.0, 0.3, 0.3, 0.1],
                seed,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SwapVariant::Standard => "standard",
            SwapVariant::HighVariance => "high_variance",
        }
    }
}

/// Look up a variant template by name (`standard` or `high_variance`).
pub fn swap_variant(name: &str) -> Result<SwapVariant> {
    match name {
        "standard" => Ok(SwapVariant::Standard),
        "high_variance" => Ok(SwapVariant::HighVariance),
        other => Err(Error::Config(format!(
            "unknown swap variant {other:?} (expected \"standard\" or \"high_variance\")"
        ))),
    }
}

/// The flagging variables: race counts, Hispanic count, size, adult count.
pub type FlagKey = ([u32; 7], u32, u32, u32);

/// Re-identification risk of one household: the number of *other*
/// households in the same block sharing its flag key (0 = locally unique).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RiskProfile {
    pub household_id: u64,
    pub flag_key: FlagKey,
    pub risk_score: u32,
}

fn flag_key(hh: &crate::geodata::Household) -> FlagKey {
    (hh.race_counts, hh.hispanic_count, hh.size(), hh.adult_count)
}

/// Score every household, in input order.
pub fn risk_scores(md: &Microdata) -> Vec<RiskProfile> {
    let mut counts: HashMap<(u64, FlagKey), u32> = HashMap::with_capacity(md.households.len());
    for hh in &md.households {
        *counts.entry((hh.block_id, flag_key(hh))).or_insert(0) += 1;
    }
    md.households
        .iter()
        .map(|hh| {
            let key = flag_key(hh);
            RiskProfile {
                household_id: hh.id,
                flag_key: key,
                risk_score: counts[&(hh.block_id, key)] - 1,
            }
        })
        .collect()
}

/// Tier labels parallel to the profile collection (4 = greatest risk),
/// plus the derived tier fractions `(f4, f3, f2, f1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TierAssignment {
    pub tiers: Vec<u8>,
    pub fractions: [f64; 4],
}

/// Derived tier fractions `(f4, f3, f2, f1)` for a swap rate.
pub fn tier_fractions(swap_rate: f64) -> Result<[f64; 4]> {
    if !(swap_rate > 0.0 && swap_rate < 1.0) {
        return Err(Error::Config(format!("swap_rate must lie in (0, 1), got {swap_rate}")));
    }
    let f4 = swap_rate / 1.6;
    if f4 > 1.0 / 6.0 + 1e-12 {
        return Err(Error::Config(format!(
            "swap_rate {swap_rate} exceeds {MAX_TIER_RATE:.4}, the largest rate with feasible \
             tier fractions"
        )));
    }
    Ok([f4, 2.0 * f4, 3.0 * f4, (1.0 - 6.0 * f4).max(0.0)])
}

/// Sort households by ascending risk score (seeded tie-breaking) and cut the
/// list into tiers 4, 3, 2, 1 of sizes `ceil(f * N)`.
pub fn assign_tiers(profiles: &[RiskProfile], swap_rate: f64, tie_seed: u64) -> Result<TierAssignment> {
    let fractions = tier_fractions(swap_rate)?;
    let n = profiles.len();

    let mut rng = rng_from(tie_seed);
    let tie: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (profiles[i].risk_score, tie[i], profiles[i].household_id));

    let ceil_frac = |f: f64| (f * n as f64).ceil() as usize;
    let mut tiers = vec![1u8; n];
    let mut cursor = 0usize;
    for (tier, f) in [(4u8, fractions[0]), (3, fractions[1]), (2, fractions[2])] {
        let take = ceil_frac(f).min(n - cursor);
        for &i in &order[cursor..cursor + take] {
            tiers[i] = tier;
        }
        cursor += take;
    }
    // remainder stays tier 1
    Ok(TierAssignment { tiers, fractions })
}

/// Eligible swap partners for `target_id`, nearest first.
///
/// A candidate must match the target's size and adult count exactly, lie in
/// a different tract of the same state, and not appear in `exclusions`.
/// Ordering is ascending block-centroid distance with ties broken by
/// ascending household id. An empty result is the no-partner condition, not
/// an error.
pub fn candidate_partners(
    md: &Microdata,
    target_id: u64,
    exclusions: &BTreeSet<u64>,
) -> Result<Vec<u64>> {
    if exclusions.contains(&target_id) {
        return Err(Error::Config(format!("target household {target_id} is excluded")));
    }
    let target = md
        .households
        .iter()
        .find(|h| h.id == target_id)
        .ok_or_else(|| Error::Config(format!("unknown household id {target_id}")))?;
    let t_tract = md.geo.tract_of_block(target.block_id).expect("validated microdata");
    let t_state = md.geo.state_of_block(target.block_id).expect("validated microdata");
    let (tx, ty) = md.geo.centroid(target.block_id).expect("validated microdata");

    let mut matches: Vec<(f64, u64)> = md
        .households
        .iter()
        .filter(|h| {
            h.id != target_id
                && !exclusions.contains(&h.id)
                && h.size() == target.size()
                && h.adult_count == target.adult_count
                && md.geo.tract_of_block(h.block_id) != Some(t_tract)
                && md.geo.state_of_block(h.block_id) == Some(t_state)
        })
        .map(|h| {
            let (x, y) = md.geo.centroid(h.block_id).expect("validated microdata");
            ((x - tx).powi(2) + (y - ty).powi(2), h.id)
        })
        .collect();
    matches.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(matches.into_iter().map(|(_, id)| id).collect())
}

/// One executed swap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwapRecord {
    pub target_id: u64,
    pub partner_id: u64,
    pub target_block_before: u64,
    pub partner_block_before: u64,
    pub target_tier: u8,
}

/// Complete audit trail of a swap run, in execution order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SwapLog {
    pub records: Vec<SwapRecord>,
    pub targets_count: usize,
    pub households_displaced: usize,
    /// Targets that had no legal partner and were passed over.
    pub skipped_targets: usize,
}

impl SwapLog {
    pub const CSV_HEADER: &'static str =
        "target_id,partner_id,target_block_before,partner_block_before,target_tier";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.target_id, r.partner_id, r.target_block_before, r.partner_block_before, r.target_tier
            )
            .expect("string write");
        }
        out
    }
}

/// Candidate in the bounded nearest-k heap; max element = worst candidate.
struct Cand {
    d2: f64,
    id: u64,
    idx: usize,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Run the full swapping procedure. Deterministic given `cfg.seed`; the
/// output microdata differs from the input only in `block_id` fields.
pub fn select_and_swap(md: &Microdata, cfg: &SwapConfig) -> Result<(Microdata, SwapLog)> {
    cfg.validate()?;
    let n = md.households.len();
    let budget = (cfg.swap_rate * n as f64).round() as usize;
    if n == 0 || budget == 0 {
        return Ok((md.clone(), SwapLog::default()));
    }

    let profiles = risk_scores(md);
    let assignment = assign_tiers(
        &profiles,
        cfg.swap_rate.min(MAX_TIER_RATE),
        derive_seed(cfg.seed, "swap:tie", 0),
    )?;

    // Static per-household geometry; swaps only ever move displaced
    // households, which are excluded from later matching, so the original
    // assignment stays valid for every lookup below.
    let hh = &md.households;
    let mut tract = Vec::with_capacity(n);
    let mut coord = Vec::with_capacity(n);
    for h in hh {
        tract.push(md.geo.tract_of_block(h.block_id).expect("validated microdata"));
        coord.push(md.geo.centroid(h.block_id).expect("validated microdata"));
    }

    let mut groups: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (i, h) in hh.iter().enumerate() {
        groups.entry((h.size(), h.adult_count)).or_default().push(i);
    }

    // Walk order: tiers descending, seeded shuffle within each tier.
    let mut shuffle_rng = rng_from(derive_seed(cfg.seed, "swap:shuffle", 0));
    let mut order = Vec::with_capacity(n);
    for tier in (1..=4u8).rev() {
        let mut members: Vec<usize> =
            (0..n).filter(|&i| assignment.tiers[i] == tier).collect();
        members.shuffle(&mut shuffle_rng);
        order.extend(members);
    }

    let mut select_rng = rng_from(derive_seed(cfg.seed, "swap:select", 0));
    let mut blocks: Vec<u64> = hh.iter().map(|h| h.block_id).collect();
    let mut displaced = vec![false; n];
    let mut log = SwapLog::default();

    for &t in &order {
        if log.targets_count == budget {
            break;
        }
        if displaced[t] {
            continue;
        }
        let tier = assignment.tiers[t];
        if !select_rng.gen_bool(cfg.prob_for_tier(tier)) {
            continue;
        }

        // k nearest eligible candidates among the same (size, adults) group.
        let (tx, ty) = coord[t];
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(cfg.k_nearest + 1);
        for &c in &groups[&(hh[t].size(), hh[t].adult_count)] {
            if c == t || displaced[c] || tract[c] == tract[t] {
                continue;
            }
            let (x, y) = coord[c];
            let cand = Cand { d2: (x - tx).powi(2) + (y - ty).powi(2), id: hh[c].id, idx: c };
            if heap.len() < cfg.k_nearest {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty heap") {
                heap.pop();
                heap.push(cand);
            }
        }
        if heap.is_empty() {
            log.skipped_targets += 1;
            continue;
        }
        let mut nearest = heap.into_vec();
        nearest.sort();
        let partner = nearest[select_rng.gen_range(0..nearest.len())].idx;

        log.records.push(SwapRecord {
            target_id: hh[t].id,
            partner_id: hh[partner].id,
            target_block_before: blocks[t],
            partner_block_before: blocks[partner],
            target_tier: tier,
        });
        blocks.swap(t, partner);
        displaced[t] = true;
        displaced[partner] = true;
        log.targets_count += 1;
    }
    log.households_displaced = 2 * log.targets_count;

    let mut swapped = md.clone();
    for (h, &b) in swapped.households.iter_mut().zip(&blocks) {
        h.block_id = b;
    }
    Ok((swapped, log))
}
