//! Count aggregation over the geographic hierarchy.

use std::collections::BTreeMap;

use super::{GeoHierarchy, Microdata, RaceCategory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeoLevel {
    Block,
    Tract,
    County,
    State,
}

/// Which per-household field to aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountField {
    Race(RaceCategory),
    Total,
    Hispanic,
    Adult,
}

/// Count table keyed by `(region_id, race)` — the common currency of the
/// error, variance, and ratio metrics.
pub type CountTable = BTreeMap<(u64, RaceCategory), i64>;

fn region_of_block(geo: &GeoHierarchy, block_id: u64, level: GeoLevel) -> u64 {
    match level {
        GeoLevel::Block => block_id,
        GeoLevel::Tract => geo.tract_of_block(block_id).expect("validated microdata"),
        GeoLevel::County => geo.county_of_block(block_id).expect("validated microdata"),
        GeoLevel::State => geo.state_of_block(block_id).expect("validated microdata"),
    }
}

fn regions_at_level(md: &Microdata, level: GeoLevel) -> Vec<u64> {
    match level {
        GeoLevel::Block => md.geo.blocks.keys().copied().collect(),
        GeoLevel::Tract => md.geo.tracts.keys().copied().collect(),
        GeoLevel::County => md.geo.counties.keys().copied().collect(),
        GeoLevel::State => vec![md.state_id],
    }
}

/// Sum the requested household field over every region at `level`.
///
/// Regions with no population are present with count 0.
pub fn aggregate_counts(md: &Microdata, level: GeoLevel, field: CountField) -> BTreeMap<u64, u64> {
    let mut out: BTreeMap<u64, u64> = regions_at_level(md, level).into_iter().map(|r| (r, 0)).collect();
    for hh in &md.households {
        let region = region_of_block(&md.geo, hh.block_id, level);
        let v = match field {
            CountField::Race(r) => hh.race_counts[r.index()],
            CountField::Total => hh.size(),
            CountField::Hispanic => hh.hispanic_count,
            CountField::Adult => hh.adult_count,
        };
        *out.get_mut(&region).expect("region present") += u64::from(v);
    }
    out
}

/// All seven race counts per region at `level`, as a [`CountTable`].
pub fn race_count_table(md: &Microdata, level: GeoLevel) -> CountTable {
    let mut out: CountTable = BTreeMap::new();
    for region in regions_at_level(md, level) {
        for race in RaceCategory::ALL {
            out.insert((region, race), 0);
        }
    }
    for hh in &md.households {
        let region = region_of_block(&md.geo, hh.block_id, level);
        for race in RaceCategory::ALL {
            *out.get_mut(&(region, race)).expect("region present") +=
                i64::from(hh.race_counts[race.index()]);
        }
    }
    out
}

/// Per-block 7-vectors of race counts, zero-filled for empty blocks.
pub fn block_race_table(md: &Microdata) -> BTreeMap<u64, [u64; RaceCategory::COUNT]> {
    let mut out: BTreeMap<u64, [u64; 7]> =
        md.geo.blocks.keys().map(|&b| (b, [0u64; 7])).collect();
    for hh in &md.households {
        let entry = out.get_mut(&hh.block_id).expect("validated microdata");
        for (i, &c) in hh.race_counts.iter().enumerate() {
            entry[i] += u64::from(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{BlockInfo, CountyInfo, GeoHierarchy, Household};
    use super::*;

    /// Two tracts in one county, two blocks each.
    pub(crate) fn fixture() -> Microdata {
        let mut geo = GeoHierarchy::default();
        for (block, tract) in [(1u64, 11u64), (2, 11), (3, 12), (4, 12)] {
            geo.blocks.insert(block, BlockInfo { tract_id: tract, x: block as f64, y: 0.0 });
        }
        geo.tracts.insert(11, 111);
        geo.tracts.insert(12, 111);
        geo.counties.insert(111, CountyInfo { state_id: 1, rucc: Some(2) });

        let mk = |id, block_id, race_counts, hispanic, adults| Household {
            id,
            block_id,
            race_counts,
            hispanic_count: hispanic,
            adult_count: adults,
        };
        let households = vec![
            mk(1, 1, [2, 1, 0, 0, 0, 0, 0], 0, 2),
            mk(2, 1, [0, 0, 0, 1, 0, 0, 0], 1, 1),
            mk(3, 2, [1, 0, 0, 0, 0, 0, 0], 0, 1),
            mk(4, 3, [0, 2, 0, 0, 0, 0, 0], 0, 2),
            mk(5, 4, [3, 0, 0, 0, 0, 1, 0], 2, 2),
        ];
        Microdata::new(households, geo, 1).unwrap()
    }

    #[test]
    fn single_record_block_counts() {
        let md = fixture();
        let w = aggregate_counts(&md, GeoLevel::Block, CountField::Race(RaceCategory::White));
        let b = aggregate_counts(&md, GeoLevel::Block, CountField::Race(RaceCategory::Black));
        assert_eq!(w[&1], 2);
        assert_eq!(b[&1], 1);
        // empty-ish block 2 has only household 3
        assert_eq!(w[&2], 1);
        assert_eq!(b[&2], 0);
    }

    #[test]
    fn block_counts_sum_to_tract_counts() {
        let md = fixture();
        for race in RaceCategory::ALL {
            let blocks = aggregate_counts(&md, GeoLevel::Block, CountField::Race(race));
            let tracts = aggregate_counts(&md, GeoLevel::Tract, CountField::Race(race));
            for (&tract, &count) in &tracts {
                let from_blocks: u64 = md
                    .geo
                    .blocks
                    .iter()
                    .filter(|(_, info)| info.tract_id == tract)
                    .map(|(b, _)| blocks[b])
                    .sum();
                assert_eq!(from_blocks, count);
            }
        }
    }

    #[test]
    fn counts_match_brute_force_sum() {
        // Brute-force oracle: direct summation per region over households.
        let md = fixture();
        let got = aggregate_counts(&md, GeoLevel::Tract, CountField::Total);
        let mut want: BTreeMap<u64, u64> = BTreeMap::from([(11, 0), (12, 0)]);
        for hh in &md.households {
            let tract = md.geo.tract_of_block(hh.block_id).unwrap();
            *want.get_mut(&tract).unwrap() += u64::from(hh.size());
        }
        assert_eq!(got, want);

        let hisp = aggregate_counts(&md, GeoLevel::State, CountField::Hispanic);
        assert_eq!(hisp[&1], 3);
        let adults = aggregate_counts(&md, GeoLevel::County, CountField::Adult);
        assert_eq!(adults[&111], 8);
    }

    #[test]
    fn race_table_has_all_cells() {
        let md = fixture();
        let table = race_count_table(&md, GeoLevel::Block);
        assert_eq!(table.len(), 4 * 7);
        assert_eq!(table[&(1, RaceCategory::White)], 2);
        assert_eq!(table[&(4, RaceCategory::Other)], 1);
        assert_eq!(table[&(3, RaceCategory::White)], 0);
    }
}
