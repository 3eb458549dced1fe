//! Hierarchical Laplace mechanism over the geography tree.
//!
//! Per-race counts are arranged on the state/county/tract/block tree, each
//! node receives independent Laplace noise with scale `1 / (w_level *
//! epsilon_total)` (sensitivity 1 per counting query), and a deterministic
//! top-down pass restores non-negativity and hierarchical consistency: the
//! root is clamped to the non-negative orthant, every child vector is
//! replaced by the Euclidean projection of its noisy value onto
//! `{children >= 0, sum = parent}` (water-filling), and leaves are rounded
//! by largest remainder so each tract's blocks sum to the tract's rounded
//! value. Internal nodes are finalized as the sums of their finalized
//! children, which makes the integer tree exactly consistent.
//!
//! Noise applies to the seven race counts only; Hispanic and adult counts
//! are not part of the tree.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geodata::{block_race_table, CountTable, Microdata, RaceCategory};
use crate::metrics::variance_estimate;
use crate::seed::{derive_seed, rng_from};

/// Privacy budget calibrated so the mechanism's two-run variance matches the
/// production comparator's on demonstration data; carried as the reference
/// default in shipped configs, not as a verified target.
pub const REFERENCE_EPSILON: f64 = 3.26;

const LEVELS: usize = 4;
const RACES: usize = RaceCategory::COUNT;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDownConfig {
    pub epsilon_total: f64,
    /// Per-level budget shares (state, county, tract, block); positive,
    /// summing to 1. Uniform by default.
    pub level_weights: [f64; LEVELS],
    pub seed: u64,
}

impl ToyDownConfig {
    pub fn new(epsilon_total: f64, seed: u64) -> Self {
        ToyDownConfig { epsilon_total, level_weights: [0.25; LEVELS], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_total.is_nan() || self.epsilon_total <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon_total must be positive, got {}",
                self.epsilon_total
            )));
        }
        if self.level_weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(Error::Config("level weights must be positive".into()));
        }
        let sum: f64 = self.level_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("level weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub id: u64,
    pub parent: Option<usize>,
    /// Indices into the next level down.
    pub children: Vec<usize>,
    pub counts: [f64; RACES],
}

/// Per-race counts on the four-level geography tree. Level 0 is the state,
/// level 3 the blocks; node vectors within a level are ordered by region id.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTree {
    pub levels: [Vec<TreeNode>; LEVELS],
}

impl CountTree {
    pub fn leaves(&self) -> &[TreeNode] {
        &self.levels[LEVELS - 1]
    }

    /// Finalized block table (values are integral after [`postprocess`]).
    pub fn integer_leaf_table(&self) -> BTreeMap<u64, [u64; RACES]> {
        self.leaves()
            .iter()
            .map(|n| {
                let mut row = [0u64; RACES];
                for (slot, &v) in row.iter_mut().zip(&n.counts) {
                    *slot = v.round().max(0.0) as u64;
                }
                (n.id, row)
            })
            .collect()
    }

    /// Largest absolute parent-minus-children gap over all nodes and races.
    pub fn consistency_gap(&self) -> f64 {
        let mut gap = 0.0f64;
        for level in 0..LEVELS - 1 {
            for node in &self.levels[level] {
                for r in 0..RACES {
                    let child_sum: f64 =
                        node.children.iter().map(|&c| self.levels[level + 1][c].counts[r]).sum();
                    gap = gap.max((node.counts[r] - child_sum).abs());
                }
            }
        }
        gap
    }

    pub fn min_count(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .flat_map(|n| n.counts.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Exact integer count tree for the microdata: leaves are block-level race
/// counts, every internal node the sum of its children.
pub fn build_tree(md: &Microdata) -> CountTree {
    let blocks = block_race_table(md);

    let county_ids: Vec<u64> = md.geo.counties.keys().copied().collect();
    let tract_ids: Vec<u64> = md.geo.tracts.keys().copied().collect();
    let county_index: BTreeMap<u64, usize> =
        county_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let tract_index: BTreeMap<u64, usize> =
        tract_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut state = vec![TreeNode {
        id: md.state_id,
        parent: None,
        children: (0..county_ids.len()).collect(),
        counts: [0.0; RACES],
    }];
    let mut counties: Vec<TreeNode> = county_ids
        .iter()
        .map(|&id| TreeNode { id, parent: Some(0), children: Vec::new(), counts: [0.0; RACES] })
        .collect();
    let mut tracts: Vec<TreeNode> = tract_ids
        .iter()
        .map(|&id| TreeNode {
            id,
            parent: Some(county_index[&md.geo.county_of_tract(id).expect("validated")]),
            children: Vec::new(),
            counts: [0.0; RACES],
        })
        .collect();
    for (i, t) in tracts.iter().enumerate() {
        counties[t.parent.expect("tract parent")].children.push(i);
    }

    let mut leaves = Vec::with_capacity(blocks.len());
    for (i, (&block_id, row)) in blocks.iter().enumerate() {
        let tract_idx = tract_index[&md.geo.tract_of_block(block_id).expect("validated")];
        let mut counts = [0.0; RACES];
        for (slot, &v) in counts.iter_mut().zip(row) {
            *slot = v as f64;
        }
        leaves.push(TreeNode { id: block_id, parent: Some(tract_idx), children: Vec::new(), counts });
        tracts[tract_idx].children.push(i);
        for (acc, v) in tracts[tract_idx].counts.iter_mut().zip(counts) {
            *acc += v;
        }
    }
    for t in &tracts {
        let c = t.parent.expect("tract parent");
        for r in 0..RACES {
            counties[c].counts[r] += t.counts[r];
        }
    }
    for c in &counties {
        for r in 0..RACES {
            state[0].counts[r] += c.counts[r];
        }
    }

    CountTree { levels: [state, counties, tracts, leaves] }
}

fn laplace<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// Add independent Laplace noise to every node's race counts.
///
/// Draws are consumed in a canonical order — level-major (state to block),
/// node id ascending within a level, race index ascending — so serial and
/// parallel callers see identical output for a fixed seed.
pub fn add_noise(tree: &CountTree, cfg: &ToyDownConfig) -> Result<CountTree> {
    cfg.validate()?;
    let mut out = tree.clone();
    let mut rng = rng_from(cfg.seed);
    for (level, nodes) in out.levels.iter_mut().enumerate() {
        let scale = 1.0 / (cfg.level_weights[level] * cfg.epsilon_total);
        for node in nodes.iter_mut() {
            for r in 0..RACES {
                node.counts[r] += laplace(&mut rng, scale);
            }
        }
    }
    Ok(out)
}

/// Euclidean projection of `values` onto `{x >= 0, sum(x) = target}` by
/// iterative water-filling: subtract the uniform correction, clamp entries
/// at or below zero, and repeat on the unclamped set.
pub fn water_fill_projection(values: &[f64], target: f64) -> Vec<f64> {
    debug_assert!(target >= 0.0 && target.is_finite());
    let mut xs = vec![0.0; values.len()];
    let mut active: Vec<usize> = (0..values.len()).collect();
    while !active.is_empty() {
        let sum: f64 = active.iter().map(|&i| values[i]).sum();
        let corr = (sum - target) / active.len() as f64;
        let before = active.len();
        active.retain(|&i| values[i] - corr > 0.0);
        if active.len() == before {
            for &i in &active {
                xs[i] = values[i] - corr;
            }
            break;
        }
    }
    xs
}

/// Round `values` (non-negative, summing to ~`target`) to integers summing
/// to exactly `target`: floor everything, then hand out the remaining units
/// to the largest fractional parts (ties broken by position).
fn largest_remainder_round(values: &[f64], target: u64) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|&v| v.max(0.0).floor() as u64).collect();
    let floor_sum: u64 = out.iter().sum();
    let mut deficit = target.saturating_sub(floor_sum);
    while deficit > 0 {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = values[a] - values[a].floor();
            let fb = values[b] - values[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(deficit.min(values.len() as u64) as usize) {
            out[i] += 1;
        }
        deficit -= deficit.min(values.len() as u64);
    }
    out
}

/// Deterministic consistency and non-negativity pass (see module docs).
pub fn postprocess(noisy: &CountTree) -> CountTree {
    let mut tree = noisy.clone();
    for r in 0..RACES {
        for root in &mut tree.levels[0] {
            root.counts[r] = root.counts[r].max(0.0);
        }
        for level in 0..LEVELS - 1 {
            for p in 0..tree.levels[level].len() {
                let target = tree.levels[level][p].counts[r];
                let children = tree.levels[level][p].children.clone();
                let ys: Vec<f64> =
                    children.iter().map(|&c| tree.levels[level + 1][c].counts[r]).collect();
                let xs = water_fill_projection(&ys, target);
                for (&c, &x) in children.iter().zip(&xs) {
                    tree.levels[level + 1][c].counts[r] = x;
                }
            }
        }
    }

    // Integerize: leaves round within their tract, internal nodes become
    // sums of finalized children.
    for r in 0..RACES {
        for p in 0..tree.levels[2].len() {
            let target = tree.levels[2][p].counts[r].round().max(0.0) as u64;
            let children = tree.levels[2][p].children.clone();
            let ys: Vec<f64> =
                children.iter().map(|&c| tree.levels[3][c].counts[r]).collect();
            let ints = largest_remainder_round(&ys, target);
            for (&c, &v) in children.iter().zip(&ints) {
                tree.levels[3][c].counts[r] = v as f64;
            }
        }
        for level in (0..LEVELS - 1).rev() {
            for p in 0..tree.levels[level].len() {
                let sum: f64 = tree.levels[level][p]
                    .children
                    .iter()
                    .map(|&c| tree.levels[level + 1][c].counts[r])
                    .sum();
                tree.levels[level][p].counts[r] = sum;
            }
        }
    }
    tree
}

/// Full mechanism: build, perturb, post-process; returns the finalized
/// block-level per-race table.
pub fn run_toydown(md: &Microdata, cfg: &ToyDownConfig) -> Result<BTreeMap<u64, [u64; RACES]>> {
    let tree = build_tree(md);
    Ok(postprocess(&add_noise(&tree, cfg)?).integer_leaf_table())
}

/// Flatten a block table into the `(block, race)` count-table currency.
pub fn block_table_counts(table: &BTreeMap<u64, [u64; RACES]>) -> CountTable {
    let mut out = CountTable::new();
    for (&block, row) in table {
        for race in RaceCategory::ALL {
            out.insert((block, race), row[race.index()] as i64);
        }
    }
    out
}

/// Finalized block table CSV (`block_id,w,b,aian,as,hpi,oth,two_plus`).
pub fn block_table_csv(table: &BTreeMap<u64, [u64; RACES]>) -> String {
    let mut out = String::from("block_id,w,b,aian,as,hpi,oth,two_plus\n");
    for (&block, row) in table {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            block, row[0], row[1], row[2], row[3], row[4], row[5], row[6]
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub epsilon: f64,
    pub achieved_variance: f64,
    pub probes: usize,
}

/// Find the budget whose two-run leaf variance matches `target_variance`.
///
/// Each probe averages `paired_runs` evaluations of the paired-run
/// estimator; the search bisects geometrically on the bracket (variance is
/// decreasing in epsilon) until the achieved estimate is within
/// `tolerance` (relative) of the target.
pub fn calibrate_epsilon(
    md: &Microdata,
    target_variance: f64,
    bracket: (f64, f64),
    tolerance: f64,
    paired_runs: usize,
    seed: u64,
) -> Result<Calibration> {
    if target_variance.is_nan() || target_variance <= 0.0 {
        return Err(Error::Config("target variance must be positive".into()));
    }
    let (lo, hi) = bracket;
    if !(0.0 < lo && lo < hi) {
        return Err(Error::Config(format!("invalid bracket ({lo}, {hi})")));
    }
    if paired_runs == 0 {
        return Err(Error::Config("paired_runs must be at least 1".into()));
    }

    let tree = build_tree(md);
    let mut counter = 0u64;
    let mut vhat = |eps: f64| -> Result<f64> {
        let mut acc = 0.0;
        for _ in 0..paired_runs {
            let run = |c: u64| -> Result<CountTable> {
                let cfg = ToyDownConfig {
                    epsilon_total: eps,
                    level_weights: [0.25; LEVELS],
                    seed: derive_seed(seed, "calibrate", c),
                };
                Ok(block_table_counts(&postprocess(&add_noise(&tree, &cfg)?).integer_leaf_table()))
            };
            let a = run(counter)?;
            let b = run(counter + 1)?;
            counter += 2;
            acc += variance_estimate(&a, &b)?;
        }
        Ok(acc / paired_runs as f64)
    };

    let v_lo = vhat(lo)?;
    let v_hi = vhat(hi)?;
    if !(v_lo > target_variance && target_variance > v_hi) {
        return Err(Error::Calibration { lo, hi, v_lo, v_hi, target: target_variance });
    }

    let (mut lo, mut hi) = (lo, hi);
    // probes counts vhat evaluations, including the two bracket endpoints
    for probes in 3..=66 {
        let mid = (lo * hi).sqrt();
        let v = vhat(mid)?;
        if (v - target_variance).abs() / target_variance < tolerance {
            return Ok(Calibration { epsilon: mid, achieved_variance: v, probes });
        }
        if v > target_variance {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / mid < 1e-9 {
            break;
        }
    }
    Err(Error::Config(format!(
        "calibration did not reach tolerance {tolerance} on bracket ({lo}, {hi}); \
         the estimator noise may exceed the tolerance — increase paired_runs"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{
        generate_synthetic, BlockInfo, CountyInfo, GeoHierarchy, GridShape, Household, SynthParams,
    };

    fn small_md(n_tracts: u64, blocks_per_tract: u64, households: Vec<Household>) -> Microdata {
        let mut geo = GeoHierarchy::default();
        geo.counties.insert(1, CountyInfo { state_id: 1, rucc: Some(1) });
        for t in 0..n_tracts {
            let tract_id = 10 + t;
            geo.tracts.insert(tract_id, 1);
            for b in 0..blocks_per_tract {
                geo.blocks.insert(
                    tract_id * 100 + b,
                    BlockInfo { tract_id, x: (t * blocks_per_tract + b) as f64, y: 0.0 },
                );
            }
        }
        Microdata::new(households, geo, 1).unwrap()
    }

    fn hh(id: u64, block_id: u64, races: [u32; 7]) -> Household {
        let size: u32 = races.iter().sum();
        Household { id, block_id, race_counts: races, hispanic_count: 0, adult_count: size }
    }

    #[test]
    fn single_block_tree_is_a_path() {
        let md = small_md(1, 1, vec![hh(1, 1000, [2, 1, 0, 0, 0, 0, 0])]);
        let tree = build_tree(&md);
        for level in &tree.levels {
            assert_eq!(level.len(), 1);
            assert_eq!(level[0].counts[0], 2.0);
            assert_eq!(level[0].counts[1], 1.0);
        }
    }

    #[test]
    fn tract_nodes_sum_their_blocks() {
        let md = small_md(
            3,
            2,
            vec![
                hh(1, 1000, [1, 0, 0, 0, 0, 0, 0]),
                hh(2, 1001, [2, 1, 0, 0, 0, 0, 0]),
                hh(3, 1100, [0, 3, 0, 0, 0, 0, 0]),
                hh(4, 1201, [0, 0, 4, 0, 0, 0, 0]),
            ],
        );
        let tree = build_tree(&md);
        assert_eq!(tree.consistency_gap(), 0.0);
        // brute-force aggregation oracle
        let blocks = block_race_table(&md);
        for leaf in tree.leaves() {
            for (&got, &want) in leaf.counts.iter().zip(&blocks[&leaf.id]) {
                assert_eq!(got, want as f64);
            }
        }
        let tract_10: [f64; 7] = tree.levels[2][0].counts;
        assert_eq!(tract_10[0], 3.0);
        assert_eq!(tract_10[1], 1.0);
        assert_eq!(tree.levels[0][0].counts[2], 4.0);
    }

    #[test]
    fn noise_is_deterministic_and_vanishes_at_huge_epsilon() {
        let md = small_md(2, 2, vec![hh(1, 1000, [5, 2, 0, 0, 0, 0, 0])]);
        let tree = build_tree(&md);
        let cfg = ToyDownConfig::new(1e9, 7);
        let a = add_noise(&tree, &cfg).unwrap();
        let b = add_noise(&tree, &cfg).unwrap();
        assert_eq!(a, b);
        for (na, nt) in a.levels.iter().flatten().zip(tree.levels.iter().flatten()) {
            for r in 0..7 {
                assert!((na.counts[r] - nt.counts[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn leaf_noise_variance_matches_laplace() {
        // Monte Carlo oracle: Laplace(0, b) has variance 2 b^2.
        let md = small_md(1, 2, vec![hh(1, 1000, [10, 0, 0, 0, 0, 0, 0])]);
        let tree = build_tree(&md);
        let eps_total = 2.0;
        let eps_leaf = 0.25 * eps_total;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for rep in 0..10_000u64 {
            let cfg = ToyDownConfig::new(eps_total, rep);
            let noisy = add_noise(&tree, &cfg).unwrap();
            for (leaf, orig) in noisy.leaves().iter().zip(tree.leaves()) {
                for r in 0..7 {
                    let e = leaf.counts[r] - orig.counts[r];
                    sum_sq += e * e;
                    n += 1;
                }
            }
        }
        let want = 2.0 / (eps_leaf * eps_leaf);
        let got = sum_sq / n as f64;
        assert!((got - want).abs() / want < 0.05, "got {got}, want {want}");
    }

    #[test]
    fn water_filling_hand_examples() {
        assert_eq!(water_fill_projection(&[12.0, 4.0], 10.0), vec![9.0, 1.0]);
        assert_eq!(water_fill_projection(&[-2.0, 9.0], 5.0), vec![0.0, 5.0]);
        assert_eq!(water_fill_projection(&[-3.0, -1.0], 0.0), vec![0.0, 0.0]);
        let xs = water_fill_projection(&[1.0, 2.0, 3.0], 6.0);
        for (x, want) in xs.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    /// Brute-force projection oracle: enumerate every support set, solve the
    /// equality projection on it, and take the feasible minimizer.
    pub(crate) fn projection_by_enumeration(values: &[f64], target: f64) -> Vec<f64> {
        let n = values.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let sum: f64 = support.iter().map(|&i| values[i]).sum();
            let corr = (sum - target) / support.len() as f64;
            let mut xs = vec![0.0; n];
            let mut feasible = true;
            for &i in &support {
                xs[i] = values[i] - corr;
                if xs[i] < -1e-12 {
                    feasible = false;
                    break;
                }
            }
            if !feasible {
                continue;
            }
            let obj: f64 = xs.iter().zip(values).map(|(x, y)| (x - y) * (x - y)).sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, xs));
            }
        }
        match best {
            Some((_, xs)) => xs,
            // all-zero is the only feasible point when target is 0
            None => vec![0.0; n],
        }
    }

    #[test]
    fn water_filling_matches_enumeration_oracle() {
        let mut rng = rng_from(99);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let target = rng.gen_range(0.0..20.0);
            let got = water_fill_projection(&values, target);
            let want = projection_by_enumeration(&values, target);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-6, "values {values:?} target {target}");
            }
        }
    }

    #[test]
    fn postprocess_is_identity_on_consistent_trees() {
        let md = small_md(
            2,
            2,
            vec![
                hh(1, 1000, [4, 1, 0, 0, 0, 0, 0]),
                hh(2, 1001, [2, 0, 1, 0, 0, 0, 0]),
                hh(3, 1100, [0, 5, 0, 0, 0, 0, 0]),
            ],
        );
        let tree = build_tree(&md);
        assert_eq!(postprocess(&tree), tree);
    }

    #[test]
    fn zero_parent_with_negative_children_finalizes_to_zero() {
        let md = small_md(1, 2, vec![hh(1, 1000, [1, 0, 0, 0, 0, 0, 0])]);
        let mut noisy = build_tree(&md);
        // race 1 is empty everywhere; drive the children negative
        noisy.levels[3][0].counts[1] = -2.3;
        noisy.levels[3][1].counts[1] = -0.7;
        let fin = postprocess(&noisy);
        assert_eq!(fin.levels[3][0].counts[1], 0.0);
        assert_eq!(fin.levels[3][1].counts[1], 0.0);
        assert_eq!(fin.levels[2][0].counts[1], 0.0);
        assert_eq!(fin.consistency_gap(), 0.0);
        assert!(fin.min_count() >= 0.0);
    }

    #[test]
    fn run_is_consistent_nonnegative_and_exact_at_huge_epsilon() {
        let md = small_md(
            2,
            2,
            vec![
                hh(1, 1000, [4, 1, 0, 0, 0, 0, 0]),
                hh(2, 1100, [0, 2, 0, 0, 3, 0, 0]),
            ],
        );
        for seed in 0..20 {
            let table = run_toydown(&md, &ToyDownConfig::new(1.0, seed)).unwrap();
            let tree = build_tree(&md);
            let mut noisy = postprocess(&add_noise(&tree, &ToyDownConfig::new(1.0, seed)).unwrap());
            assert_eq!(noisy.consistency_gap(), 0.0);
            assert!(noisy.min_count() >= 0.0);
            // leaf table matches the finalized tree
            assert_eq!(noisy.integer_leaf_table(), table);
            // integers everywhere
            for node in noisy.levels.iter_mut().flatten() {
                for c in node.counts {
                    assert_eq!(c, c.round());
                }
            }
        }
        let exact = run_toydown(&md, &ToyDownConfig::new(1e9, 3)).unwrap();
        assert_eq!(exact, block_race_table(&md));
    }

    #[test]
    fn mean_leaf_error_vanishes_for_large_counts() {
        // epsilon_total 4 with equal split puts scale 1 on the leaves, so
        // counts of ~100 are 100x the noise scale; the grand mean error over
        // replicates must be near zero.
        let md = small_md(
            2,
            2,
            vec![
                hh(1, 1000, [120, 80, 0, 0, 0, 0, 0]),
                hh(2, 1001, [90, 110, 0, 0, 0, 0, 0]),
                hh(3, 1100, [100, 100, 0, 0, 0, 0, 0]),
                hh(4, 1101, [130, 60, 0, 0, 0, 0, 0]),
            ],
        );
        let truth = block_race_table(&md);
        let mut total_err = 0.0;
        let mut n = 0usize;
        for seed in 0..1000 {
            let table = run_toydown(&md, &ToyDownConfig::new(4.0, seed)).unwrap();
            for (block, row) in &table {
                for r in 0..2 {
                    total_err += row[r] as f64 - truth[block][r] as f64;
                    n += 1;
                }
            }
        }
        let mean = total_err / n as f64;
        assert!(mean.abs() < 0.1, "mean leaf error {mean}");
    }

    #[test]
    fn state_total_error_tracks_root_noise() {
        // Monte Carlo against the root Laplace draw: with one county and
        // one tract the projection copies the clamped root down the path,
        // so the finalized state total departs from truth by (rounded)
        // Laplace noise with scale 1/eps_state. Large counts keep the
        // clamp inactive; leaf rounding adds ~1/12 variance.
        let md = small_md(1, 2, vec![hh(1, 1000, [900, 400, 0, 0, 0, 0, 0])]);
        let tree = build_tree(&md);
        let eps_total = 4.0;
        let eps_state = 0.25 * eps_total;
        let mut sq = 0.0;
        let n = 5_000;
        for seed in 0..n {
            let fin = postprocess(&add_noise(&tree, &ToyDownConfig::new(eps_total, seed)).unwrap());
            let err = fin.levels[0][0].counts[0] - 900.0;
            sq += err * err;
        }
        let sd = (sq / n as f64).sqrt();
        let want = 2f64.sqrt() / eps_state;
        assert!((sd - want).abs() / want < 0.10, "state-total sd {sd}, Laplace predicts {want}");
    }

    #[test]
    fn calibration_errors_when_bracket_misses() {
        let params = SynthParams {
            n_households: 200,
            grid: GridShape { counties: 1, tracts_per_county: 2, blocks_per_tract: 2 },
            size_distribution: vec![0.5, 0.5],
            race_mixture: [0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0],
            hispanic_rate: 0.0,
            segregation: 0.2,
            adult_rate: 0.7,
        };
        let md = generate_synthetic(&params, 1).unwrap();
        // an effectively noiseless probe sits below any positive target
        let err = calibrate_epsilon(&md, 1.0, (1e8, 1e9), 0.05, 2, 11);
        match err {
            Err(Error::Calibration { v_lo, v_hi, .. }) => {
                assert!(v_lo < 1e-6 && v_hi < 1e-6, "v_lo {v_lo}, v_hi {v_hi}");
            }
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn variance_is_monotone_in_epsilon() {
        let params = SynthParams {
            n_households: 400,
            grid: GridShape { counties: 1, tracts_per_county: 4, blocks_per_tract: 4 },
            size_distribution: vec![0.5, 0.5],
            race_mixture: [0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0],
            hispanic_rate: 0.0,
            segregation: 0.2,
            adult_rate: 0.7,
        };
        let md = generate_synthetic(&params, 2).unwrap();
        let tree = build_tree(&md);
        let mut last = f64::INFINITY;
        for (i, eps) in [0.5, 1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
            let mut estimates = Vec::new();
            for j in 0..5u64 {
                let run = |c| {
                    let cfg = ToyDownConfig::new(eps, derive_seed(3, "mono", c));
                    block_table_counts(&postprocess(&add_noise(&tree, &cfg).unwrap()).integer_leaf_table())
                };
                let v = variance_estimate(&run(100 * i as u64 + 2 * j), &run(100 * i as u64 + 2 * j + 1))
                    .unwrap();
                estimates.push(v);
            }
            estimates.sort_by(f64::total_cmp);
            let median = estimates[2];
            assert!(median < last, "eps {eps}: median {median} not below {last}");
            last = median;
        }
    }
}
