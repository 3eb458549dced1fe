//! CSV input and output for microdata.
//!
//! A microdata directory holds two files:
//!
//! * `households.csv` — `household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults`
//! * `geography.csv` — `block_id,tract_id,county_id,state_id,x,y,rucc`
//!   (`rucc` is an integer 1–9 or empty)
//!
//! Canonical serialization writes household rows sorted by `household_id`
//! and geography rows sorted by `block_id`, with LF line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{BlockInfo, CountyInfo, GeoHierarchy, Household, Microdata};
use crate::error::{Error, Result};

pub const HOUSEHOLDS_FILE: &str = "households.csv";
pub const GEOGRAPHY_FILE: &str = "geography.csv";

const HOUSEHOLDS_HEADER: &str = "household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults";
const GEOGRAPHY_HEADER: &str = "block_id,tract_id,county_id,state_id,x,y,rucc";

/// Load a microdata directory (see module docs for the two file schemas).
///
/// Row order of `households.csv` is preserved. All record, geography, and
/// referential-integrity invariants are checked; a violation reports the
/// offending household id or geography key.
pub fn load_microdata(dir: &Path) -> Result<Microdata> {
    let hh_path = dir.join(HOUSEHOLDS_FILE);
    let geo_path = dir.join(GEOGRAPHY_FILE);
    let (geo, state_id) = parse_geography(&read(&geo_path)?, &geo_path)?;
    let households = parse_households(&read(&hh_path)?, &hh_path)?;
    Microdata::new(households, geo, state_id)
}

/// Write `md` to `dir` in canonical form, creating the directory if needed.
pub fn write_microdata(md: &Microdata, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut rows: Vec<&Household> = md.households.iter().collect();
    rows.sort_by_key(|h| h.id);
    let mut out = String::from(HOUSEHOLDS_HEADER);
    out.push('\n');
    for h in rows {
        let r = &h.race_counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            h.id, h.block_id, r[0], r[1], r[2], r[3], r[4], r[5], r[6], h.hispanic_count, h.adult_count
        )
        .expect("string write");
    }
    let hh_path = dir.join(HOUSEHOLDS_FILE);
    std::fs::write(&hh_path, out).map_err(|e| Error::io(&hh_path, e))?;

    let mut out = String::from(GEOGRAPHY_HEADER);
    out.push('\n');
    for (&block_id, info) in &md.geo.blocks {
        let tract = info.tract_id;
        let county = md.geo.county_of_tract(tract).expect("validated microdata");
        let cinfo = md.geo.counties[&county];
        let rucc = cinfo.rucc.map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            block_id, tract, county, cinfo.state_id, info.x, info.y, rucc
        )
        .expect("string write");
    }
    let geo_path = dir.join(GEOGRAPHY_FILE);
    std::fs::write(&geo_path, out).map_err(|e| Error::io(&geo_path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct RowParser<'a> {
    file: String,
    line: usize,
    fields: Vec<&'a str>,
    cursor: usize,
}

impl<'a> RowParser<'a> {
    fn new(file: &Path, line: usize, row: &'a str, expected: usize) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != expected {
            return Err(Error::Parse {
                file: file.display().to_string(),
                line,
                msg: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        Ok(RowParser { file: file.display().to_string(), line, fields, cursor: 0 })
    }

    fn err(&self, msg: String) -> Error {
        Error::Parse { file: self.file.clone(), line: self.line, msg }
    }

    fn next_raw(&mut self) -> &'a str {
        let f = self.fields[self.cursor];
        self.cursor += 1;
        f.trim()
    }

    fn u64(&mut self, name: &str) -> Result<u64> {
        let raw = self.next_raw();
        raw.parse().map_err(|_| self.err(format!("invalid {name}: {raw:?}")))
    }

    fn u32(&mut self, name: &str) -> Result<u32> {
        let raw = self.next_raw();
        raw.parse().map_err(|_| self.err(format!("invalid {name}: {raw:?}")))
    }

    fn f64(&mut self, name: &str) -> Result<f64> {
        let raw = self.next_raw();
        raw.parse().map_err(|_| self.err(format!("invalid {name}: {raw:?}")))
    }

    fn opt_u8(&mut self, name: &str) -> Result<Option<u8>> {
        let raw = self.next_raw();
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse().map(Some).map_err(|_| self.err(format!("invalid {name}: {raw:?}")))
    }
}

fn check_header(content: &str, want: &str, path: &Path) -> Result<()> {
    match content.lines().next() {
        Some(got) if got.trim_end() == want => Ok(()),
        got => Err(Error::Parse {
            file: path.display().to_string(),
            line: 1,
            msg: format!("expected header {want:?}, found {:?}", got.unwrap_or("")),
        }),
    }
}

fn parse_households(content: &str, path: &Path) -> Result<Vec<Household>> {
    check_header(content, HOUSEHOLDS_HEADER, path)?;
    let mut out = Vec::new();
    for (i, row) in content.lines().enumerate().skip(1) {
        if row.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let mut p = RowParser::new(path, line, row, 11)?;
        let id = p.u64("household_id")?;
        let block_id = p.u64("block_id")?;
        let mut race_counts = [0u32; 7];
        for (slot, name) in race_counts
            .iter_mut()
            .zip(["w", "b", "aian", "as", "hpi", "oth", "two_plus"])
        {
            *slot = p.u32(name)?;
        }
        let hispanic_count = p.u32("hispanic")?;
        let adult_count = p.u32("adults")?;
        out.push(Household { id, block_id, race_counts, hispanic_count, adult_count });
    }
    Ok(out)
}

fn parse_geography(content: &str, path: &Path) -> Result<(GeoHierarchy, u64)> {
    check_header(content, GEOGRAPHY_HEADER, path)?;
    let mut geo = GeoHierarchy::default();
    let mut tract_county: BTreeMap<u64, u64> = BTreeMap::new();
    let mut state_id = None;
    for (i, row) in content.lines().enumerate().skip(1) {
        if row.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let mut p = RowParser::new(path, line, row, 7)?;
        let block_id = p.u64("block_id")?;
        let tract_id = p.u64("tract_id")?;
        let county_id = p.u64("county_id")?;
        let state = p.u64("state_id")?;
        let x = p.f64("x")?;
        let y = p.f64("y")?;
        let rucc = p.opt_u8("rucc")?;
        if let Some(r) = rucc {
            if !(1..=9).contains(&r) {
                return Err(p.err(format!("rucc must lie in 1..=9, got {r}")));
            }
        }

        if geo.blocks.insert(block_id, BlockInfo { tract_id, x, y }).is_some() {
            return Err(p.err(format!("duplicate block id {block_id}")));
        }
        if let Some(&prev) = tract_county.get(&tract_id) {
            if prev != county_id {
                return Err(Error::Geography(format!(
                    "tract {tract_id} assigned to both county {prev} and county {county_id}"
                )));
            }
        }
        tract_county.insert(tract_id, county_id);
        geo.counties.entry(county_id).or_insert(CountyInfo { state_id: state, rucc });
        state_id = Some(state_id.unwrap_or(state));
    }
    geo.tracts = tract_county;
    let state_id =
        state_id.ok_or_else(|| Error::Geography(format!("{}: no blocks", path.display())))?;
    Ok((geo, state_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, households: &str, geography: &str) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join(HOUSEHOLDS_FILE), households).unwrap();
        std::fs::write(dir.join(GEOGRAPHY_FILE), geography).unwrap();
    }

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("swaplab-io-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    const GEO_OK: &str = "block_id,tract_id,county_id,state_id,x,y,rucc\n\
                          1,11,111,1,0.5,0.5,3\n\
                          2,11,111,1,1.5,0.5,3\n\
                          3,12,111,1,2.5,0.5,3\n";

    #[test]
    fn loads_valid_file_preserving_rows() {
        let dir = tmpdir("ok");
        write_files(
            &dir,
            "household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults\n\
             3,1,2,0,0,0,0,0,0,0,1\n\
             1,2,0,1,0,0,0,0,0,1,1\n\
             2,3,1,1,0,0,0,0,0,0,2\n",
            GEO_OK,
        );
        let md = load_microdata(&dir).unwrap();
        assert_eq!(md.households.len(), 3);
        // row order preserved, not sorted
        assert_eq!(md.households[0].id, 3);
        assert_eq!(md.households[1].id, 1);
        assert_eq!(md.state_id, 1);
        assert_eq!(md.geo.counties[&111].rucc, Some(3));
    }

    #[test]
    fn invariant_violation_names_household() {
        let dir = tmpdir("bad-adults");
        write_files(
            &dir,
            "household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults\n\
             7,1,1,0,0,0,0,0,0,0,5\n",
            GEO_OK,
        );
        match load_microdata(&dir) {
            Err(Error::Validation { household_id, .. }) => assert_eq!(household_id, 7),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_tract_is_a_geography_error() {
        let dir = tmpdir("bad-geo");
        write_files(
            &dir,
            "household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults\n\
             1,9,1,0,0,0,0,0,0,0,1\n",
            GEO_OK,
        );
        match load_microdata(&dir) {
            Err(Error::Geography(msg)) => assert!(msg.contains("missing block 9"), "{msg}"),
            other => panic!("expected geography error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tmpdir("bad-row");
        write_files(
            &dir,
            "household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults\n\
             1,1,1,0,0,0,0,0,0,0,1\n\
             2,1,x,0,0,0,0,0,0,0,1\n",
            GEO_OK,
        );
        match load_microdata(&dir) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_roundtrip_is_byte_stable() {
        let dir = tmpdir("roundtrip");
        // Canonical form: id-sorted rows, LF endings.
        let hh = "household_id,block_id,w,b,aian,as,hpi,oth,two_plus,hispanic,adults\n\
                  1,2,0,1,0,0,0,0,0,1,1\n\
                  2,3,1,1,0,0,0,0,0,0,2\n\
                  3,1,2,0,0,0,0,0,0,0,1\n";
        write_files(&dir, hh, GEO_OK);
        let md = load_microdata(&dir).unwrap();
        let out = tmpdir("roundtrip-out");
        write_microdata(&md, &out).unwrap();
        assert_eq!(std::fs::read_to_string(out.join(HOUSEHOLDS_FILE)).unwrap(), hh);
        assert_eq!(std::fs::read_to_string(out.join(GEOGRAPHY_FILE)).unwrap(), GEO_OK);
        // and loading the rewrite gives identical microdata
        assert_eq!(load_microdata(&out).unwrap(), md);
    }
}
