//! Error, variance, entropy, and tabulation statistics for comparing a
//! protected dataset against its source.
//!
//! Count-based metrics operate on [`CountTable`]s keyed by `(region, race)`
//! so the same code path measures swapping, the hierarchical mechanism, or
//! any other pair of tables over the same regions.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geodata::{CountTable, GeoHierarchy, Household, Microdata, RaceCategory};
use crate::swap::SwapLog;

/// Reference block-level mean absolute errors for Alabama at production
/// scale (TopDown demonstration data vs. the 2010 release: 1.15536; a 2%
/// swap of statewide synthetic microdata: 0.21892). Carried for orientation
/// only — desk-scale fixtures cannot reproduce them.
pub const REFERENCE_MAE_TOPDOWN_AL: f64 = 1.15536;
pub const REFERENCE_MAE_SWAP2_AL: f64 = 0.21892;

/// Signed count error `c1 - c2`.
pub fn count_error(c1: i64, c2: i64) -> i64 {
    c1 - c2
}

/// Ratio-based error `2 / (1 + c1/c2)`, ranging over `[0, 2]`.
///
/// 1 means unchanged, 0 a relatively large decrease from `c1` to `c2`, 2 a
/// relatively large increase. Zero-count conventions: both zero maps to 1;
/// `c2 = 0` with `c1 > 0` maps to 0 (the formula's limit); `c1 = 0` with
/// `c2 > 0` maps to 2. The measure is deliberately asymmetric:
/// `relative_error(a, b) + relative_error(b, a)` is not constrained.
pub fn relative_error(c1: u64, c2: u64) -> f64 {
    match (c1, c2) {
        (0, 0) => 1.0,
        (_, 0) => 0.0,
        _ => 2.0 / (1.0 + c1 as f64 / c2 as f64),
    }
}

fn check_aligned(a: &CountTable, b: &CountTable) -> Result<()> {
    if a.len() == b.len() && a.keys().eq(b.keys()) {
        return Ok(());
    }
    let missing: Vec<&(u64, RaceCategory)> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .chain(b.keys().filter(|k| !a.contains_key(*k)))
        .collect();
    let first = missing
        .first()
        .map(|(region, race)| format!("({region}, {})", race.code()))
        .unwrap_or_else(|| "<none>".into());
    Err(Error::Alignment { missing: missing.len(), first })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub region_id: u64,
    pub race: RaceCategory,
    pub count_1: i64,
    pub count_2: i64,
    pub error: i64,
    pub relative_error: f64,
}

/// Per-cell signed and relative errors between two aligned count tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region_id,race,count_1,count_2,error,relative_error\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:.6}",
                r.region_id,
                r.race.code(),
                r.count_1,
                r.count_2,
                r.error,
                r.relative_error
            )
            .expect("string write");
        }
        out
    }
}

pub fn error_table(c1: &CountTable, c2: &CountTable) -> Result<ErrorTable> {
    check_aligned(c1, c2)?;
    let rows = c1
        .iter()
        .map(|(&(region_id, race), &a)| {
            let b = c2[&(region_id, race)];
            ErrorRow {
                region_id,
                race,
                count_1: a,
                count_2: b,
                error: count_error(a, b),
                relative_error: relative_error(a.max(0) as u64, b.max(0) as u64),
            }
        })
        .collect();
    Ok(ErrorTable { rows })
}

/// Two-run variance estimator: `sum (c_a - c_b)^2 / (2 * cells)` over two
/// independent replicates of the same mechanism on the same input.
pub fn variance_estimate(a: &CountTable, b: &CountTable) -> Result<f64> {
    check_aligned(a, b)?;
    if a.is_empty() {
        return Err(Error::InsufficientData("variance estimate over empty tables".into()));
    }
    let sum: f64 = a
        .iter()
        .map(|(k, &va)| {
            let d = (va - b[k]) as f64;
            d * d
        })
        .sum();
    Ok(sum / (2.0 * a.len() as f64))
}

/// Mean of `|c1 - c2|` over all cells.
pub fn mean_abs_error(a: &CountTable, b: &CountTable) -> Result<f64> {
    check_aligned(a, b)?;
    if a.is_empty() {
        return Err(Error::InsufficientData("mean absolute error over empty tables".into()));
    }
    let sum: f64 = a.iter().map(|(k, &va)| (va - b[k]).abs() as f64).sum();
    Ok(sum / a.len() as f64)
}

/// Shannon entropy (nats) of a region's empirical race distribution;
/// an all-zero region is defined to have entropy 0.
pub fn racial_entropy(counts: &[u64; RaceCategory::COUNT]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TractEntropySteps {
    pub tract_id: u64,
    pub before: f64,
    /// Cumulative effect of: (1) targets leave, (2) partners leave,
    /// (3) targets arrive at partner tracts, (4) partners arrive at target
    /// tracts. Step 4 equals the fully swapped data.
    pub steps: [f64; 4],
    pub after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub per_tract: Vec<TractEntropySteps>,
    pub avg_before: f64,
    pub avg_steps: [f64; 4],
    pub avg_after: f64,
}

impl EntropyReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("tract_id,before,step1_targets_out,step2_partners_out,step3_targets_in,step4_partners_in,after\n");
        for t in &self.per_tract {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                t.tract_id, t.before, t.steps[0], t.steps[1], t.steps[2], t.steps[3], t.after
            )
            .expect("string write");
        }
        writeln!(
            out,
            "average,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.avg_before,
            self.avg_steps[0],
            self.avg_steps[1],
            self.avg_steps[2],
            self.avg_steps[3],
            self.avg_after
        )
        .expect("string write");
        out
    }
}

fn household_index(md: &Microdata) -> HashMap<u64, &Household> {
    md.households.iter().map(|h| (h.id, h)).collect()
}

/// Check that a log was produced from this microdata: ids resolve, recorded
/// blocks match, and no household appears twice.
fn audit_log<'md>(md: &'md Microdata, log: &SwapLog) -> Result<HashMap<u64, &'md Household>> {
    let by_id = household_index(md);
    let mut seen = std::collections::HashSet::new();
    for r in &log.records {
        let target = by_id
            .get(&r.target_id)
            .ok_or_else(|| Error::Audit(format!("unknown target id {}", r.target_id)))?;
        let partner = by_id
            .get(&r.partner_id)
            .ok_or_else(|| Error::Audit(format!("unknown partner id {}", r.partner_id)))?;
        if target.block_id != r.target_block_before {
            return Err(Error::Audit(format!(
                "target {} was in block {}, log says {}",
                r.target_id, target.block_id, r.target_block_before
            )));
        }
        if partner.block_id != r.partner_block_before {
            return Err(Error::Audit(format!(
                "partner {} was in block {}, log says {}",
                r.partner_id, partner.block_id, r.partner_block_before
            )));
        }
        if !seen.insert(r.target_id) || !seen.insert(r.partner_id) {
            return Err(Error::Audit(format!(
                "household appears in more than one record ({}, {})",
                r.target_id, r.partner_id
            )));
        }
    }
    Ok(by_id)
}

/// Average tract entropy after each of the four swap steps (see
/// [`TractEntropySteps`]), applied cumulatively across all swaps in the log.
pub fn entropy_decomposition(md_before: &Microdata, log: &SwapLog) -> Result<EntropyReport> {
    let by_id = audit_log(md_before, log)?;

    let mut tract_counts: BTreeMap<u64, [i64; RaceCategory::COUNT]> =
        md_before.geo.tracts.keys().map(|&t| (t, [0i64; 7])).collect();
    for hh in &md_before.households {
        let tract = md_before.geo.tract_of_block(hh.block_id).expect("validated microdata");
        let row = tract_counts.get_mut(&tract).expect("tract present");
        for (slot, &c) in row.iter_mut().zip(&hh.race_counts) {
            *slot += i64::from(c);
        }
    }

    let snapshot = |m: &BTreeMap<u64, [i64; 7]>| -> BTreeMap<u64, f64> {
        m.iter()
            .map(|(&t, row)| {
                let mut u = [0u64; 7];
                for (slot, &v) in u.iter_mut().zip(row) {
                    debug_assert!(v >= 0, "negative intermediate tract count");
                    *slot = v.max(0) as u64;
                }
                (t, racial_entropy(&u))
            })
            .collect()
    };

    let apply = |m: &mut BTreeMap<u64, [i64; 7]>, hh: &Household, tract: u64, sign: i64| {
        let row = m.get_mut(&tract).expect("tract present");
        for (slot, &c) in row.iter_mut().zip(&hh.race_counts) {
            *slot += sign * i64::from(c);
        }
    };

    let before = snapshot(&tract_counts);
    let tract_of = |block: u64| md_before.geo.tract_of_block(block).expect("validated microdata");

    let mut steps: Vec<BTreeMap<u64, f64>> = Vec::with_capacity(4);
    // (1) all targets leave their original tracts
    for r in &log.records {
        apply(&mut tract_counts, by_id[&r.target_id], tract_of(r.target_block_before), -1);
    }
    steps.push(snapshot(&tract_counts));
    // (2) all partners leave their original tracts
    for r in &log.records {
        apply(&mut tract_counts, by_id[&r.partner_id], tract_of(r.partner_block_before), -1);
    }
    steps.push(snapshot(&tract_counts));
    // (3) all targets arrive at their partners' tracts
    for r in &log.records {
        apply(&mut tract_counts, by_id[&r.target_id], tract_of(r.partner_block_before), 1);
    }
    steps.push(snapshot(&tract_counts));
    // (4) all partners arrive at the targets' tracts
    for r in &log.records {
        apply(&mut tract_counts, by_id[&r.partner_id], tract_of(r.target_block_before), 1);
    }
    steps.push(snapshot(&tract_counts));

    let tract_ids: Vec<u64> = before.keys().copied().collect();
    let n = tract_ids.len().max(1) as f64;
    let avg = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / n;

    let per_tract = tract_ids
        .iter()
        .map(|&t| TractEntropySteps {
            tract_id: t,
            before: before[&t],
            steps: [steps[0][&t], steps[1][&t], steps[2][&t], steps[3][&t]],
            after: steps[3][&t],
        })
        .collect();

    Ok(EntropyReport {
        per_tract,
        avg_before: avg(&before),
        avg_steps: [avg(&steps[0]), avg(&steps[1]), avg(&steps[2]), avg(&steps[3])],
        avg_after: avg(&steps[3]),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuccRatioRow {
    pub rucc: u8,
    pub race: RaceCategory,
    pub county_id: u64,
    pub ratio: f64,
}

/// County count ratios `c1/c2` grouped by rural-urban continuum code.
#[derive(Clone, Debug, PartialEq)]
pub struct RuccRatioTable {
    pub rows: Vec<RuccRatioRow>,
    /// Cells dropped because the ratio was infinite or 0/0.
    pub excluded_cells: usize,
    /// Counties dropped for missing a RUCC code.
    pub counties_missing_rucc: usize,
}

impl RuccRatioTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rucc,race,county_id,ratio\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{:.6}", r.rucc, r.race.code(), r.county_id, r.ratio)
                .expect("string write");
        }
        out
    }
}

/// Group county-level ratios by RUCC code. `c1` and `c2` are aligned
/// county-level tables; infinite and 0/0 cells are flagged and excluded.
pub fn rucc_ratio_table(
    c1: &CountTable,
    c2: &CountTable,
    geo: &GeoHierarchy,
) -> Result<RuccRatioTable> {
    check_aligned(c1, c2)?;
    let mut rows = Vec::new();
    let mut excluded_cells = 0;
    let mut missing: std::collections::BTreeSet<u64> = std::collections::BTreeSet::new();
    for (&(county_id, race), &a) in c1 {
        let info = geo
            .counties
            .get(&county_id)
            .ok_or_else(|| Error::Geography(format!("unknown county {county_id} in count table")))?;
        let Some(rucc) = info.rucc else {
            missing.insert(county_id);
            continue;
        };
        let b = c2[&(county_id, race)];
        if b == 0 {
            excluded_cells += 1;
            continue;
        }
        rows.push(RuccRatioRow { rucc, race, county_id, ratio: a as f64 / b as f64 });
    }
    rows.sort_by_key(|r| (r.rucc, r.race.index(), r.county_id));
    Ok(RuccRatioTable { rows, excluded_cells, counties_missing_rucc: missing.len() })
}

/// Household race label: the single shared race, or "Multiple Races".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HouseholdRaceClass {
    Single(RaceCategory),
    Multiple,
}

impl HouseholdRaceClass {
    pub const COUNT: usize = RaceCategory::COUNT + 1;

    pub fn of(hh: &Household) -> HouseholdRaceClass {
        match hh.single_race() {
            Some(r) => HouseholdRaceClass::Single(r),
            None => HouseholdRaceClass::Multiple,
        }
    }

    pub fn index(self) -> usize {
        match self {
            HouseholdRaceClass::Single(r) => r.index(),
            HouseholdRaceClass::Multiple => RaceCategory::COUNT,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HouseholdRaceClass::Single(r) => r.label(),
            HouseholdRaceClass::Multiple => "Multiple Races",
        }
    }

    pub fn all() -> [HouseholdRaceClass; Self::COUNT] {
        let mut out = [HouseholdRaceClass::Multiple; Self::COUNT];
        for (i, r) in RaceCategory::ALL.iter().enumerate() {
            out[i] = HouseholdRaceClass::Single(*r);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeDistributionRow {
    pub size: u32,
    pub pct_overall: f64,
    pub pct_targets: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaceClassRow {
    pub class: HouseholdRaceClass,
    pub pct_overall: f64,
    pub pct_targets: f64,
}

/// Descriptive tables of who gets swapped: household-size and race-class
/// distributions among targets vs. the whole state, and the target-race by
/// partner-race percentage matrix (rows normalized to 100).
#[derive(Clone, Debug, PartialEq)]
pub struct SwapTabulations {
    pub size_rows: Vec<SizeDistributionRow>,
    pub race_rows: Vec<RaceClassRow>,
    pub partner_matrix: [[f64; HouseholdRaceClass::COUNT]; HouseholdRaceClass::COUNT],
}

impl SwapTabulations {
    pub fn sizes_csv(&self) -> String {
        let mut out = String::from("size,pct_overall,pct_targets\n");
        for r in &self.size_rows {
            writeln!(out, "{},{:.6},{:.6}", r.size, r.pct_overall, r.pct_targets)
                .expect("string write");
        }
        out
    }

    pub fn target_races_csv(&self) -> String {
        let mut out = String::from("race_class,pct_overall,pct_targets\n");
        for r in &self.race_rows {
            writeln!(out, "{},{:.6},{:.6}", r.class.label(), r.pct_overall, r.pct_targets)
                .expect("string write");
        }
        out
    }

    pub fn partner_matrix_csv(&self) -> String {
        let classes = HouseholdRaceClass::all();
        let mut out = String::from("target_class");
        for c in classes {
            out.push(',');
            out.push_str(c.label());
        }
        out.push('\n');
        for (i, row) in self.partner_matrix.iter().enumerate() {
            out.push_str(classes[i].label());
            for v in row {
                write!(out, ",{v:.6}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

pub fn swap_tabulations(md_before: &Microdata, log: &SwapLog) -> Result<SwapTabulations> {
    let by_id = audit_log(md_before, log)?;
    let n = md_before.households.len();
    if n == 0 {
        return Err(Error::InsufficientData("no households".into()));
    }

    let max_size = md_before.households.iter().map(Household::size).max().unwrap_or(1);
    let mut size_overall = vec![0usize; max_size as usize + 1];
    let mut race_overall = [0usize; HouseholdRaceClass::COUNT];
    for hh in &md_before.households {
        size_overall[hh.size() as usize] += 1;
        race_overall[HouseholdRaceClass::of(hh).index()] += 1;
    }

    let mut size_targets = vec![0usize; max_size as usize + 1];
    let mut race_targets = [0usize; HouseholdRaceClass::COUNT];
    let mut matrix_counts = [[0usize; HouseholdRaceClass::COUNT]; HouseholdRaceClass::COUNT];
    for r in &log.records {
        let target = by_id[&r.target_id];
        let partner = by_id[&r.partner_id];
        size_targets[target.size() as usize] += 1;
        let t_class = HouseholdRaceClass::of(target);
        race_targets[t_class.index()] += 1;
        matrix_counts[t_class.index()][HouseholdRaceClass::of(partner).index()] += 1;
    }

    let n_targets = log.records.len();
    let pct = |count: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            100.0 * count as f64 / total as f64
        }
    };

    let size_rows = (1..=max_size)
        .map(|s| SizeDistributionRow {
            size: s,
            pct_overall: pct(size_overall[s as usize], n),
            pct_targets: pct(size_targets[s as usize], n_targets),
        })
        .collect();
    let race_rows = HouseholdRaceClass::all()
        .iter()
        .map(|&class| RaceClassRow {
            class,
            pct_overall: pct(race_overall[class.index()], n),
            pct_targets: pct(race_targets[class.index()], n_targets),
        })
        .collect();

    let mut partner_matrix = [[0.0; HouseholdRaceClass::COUNT]; HouseholdRaceClass::COUNT];
    for (i, row) in matrix_counts.iter().enumerate() {
        let row_total: usize = row.iter().sum();
        if row_total > 0 {
            for (j, &c) in row.iter().enumerate() {
                partner_matrix[i][j] = 100.0 * c as f64 / row_total as f64;
            }
        }
    }

    Ok(SwapTabulations { size_rows, race_rows, partner_matrix })
}
