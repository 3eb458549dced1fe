//! Variance-versus-swap-rate sweep with a hierarchical-mechanism reference
//! line: the data behind the variance plots.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geodata::{race_count_table, GeoLevel, Microdata};
use crate::metrics::variance_estimate;
use crate::pipeline::config::{MechanismConfig, RunConfig};
use crate::seed::derive_seed;
use crate::swap::{select_and_swap, SwapVariant};
use crate::toydown::{block_table_counts, run_toydown, ToyDownConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// `swap` (param = swap rate) or `toydown` (param = epsilon).
    pub kind: String,
    pub param: f64,
    pub vhat_min: f64,
    pub vhat_median: f64,
    pub vhat_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub runs_per_point: usize,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,param,vhat_min,vhat_median,vhat_max\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.kind, r.param, r.vhat_min, r.vhat_median, r.vhat_max
            )
            .expect("string write");
        }
        out
    }
}

fn summarize(kind: &str, param: f64, mut estimates: Vec<f64>) -> SweepRow {
    estimates.sort_by(f64::total_cmp);
    SweepRow {
        kind: kind.to_string(),
        param,
        vhat_min: estimates[0],
        vhat_median: estimates[estimates.len() / 2],
        vhat_max: estimates[estimates.len() - 1],
    }
}

fn swap_blocks(md: &Microdata, cfg: &crate::swap::SwapConfig) -> Result<crate::geodata::CountTable> {
    let (swapped, _) = select_and_swap(md, cfg)?;
    Ok(race_count_table(&swapped, GeoLevel::Block))
}

/// For each swap rate, evaluate the two-run variance estimator
/// `runs_per_point` times (each evaluation is two fresh swap runs) and
/// report min/median/max, plus the same summary for the reference
/// hierarchical mechanism at `toydown_epsilon`.
///
/// The swap template (variant, k, tier probabilities) comes from the first
/// swap mechanism in the config; a standard-variant template is used when
/// the config has none.
pub fn variance_sweep(
    config: &RunConfig,
    rates: &[f64],
    toydown_epsilon: f64,
    runs_per_point: usize,
) -> Result<SweepTable> {
    config.validate()?;
    if rates.is_empty() {
        return Err(Error::Config("sweep needs at least one rate".into()));
    }
    for &r in rates {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!("sweep rates must lie in (0, 1), got {r}")));
        }
    }
    if runs_per_point == 0 {
        return Err(Error::Config("runs_per_point must be at least 1".into()));
    }

    let md = config.load_input()?;
    let template = config
        .mechanisms
        .iter()
        .find(|m| matches!(m, MechanismConfig::Swap { .. }));

    let mut rows = Vec::with_capacity(rates.len() + 1);
    for (i, &rate) in rates.iter().enumerate() {
        let stream = format!("sweep-swap-{i}");
        let mut estimates = Vec::with_capacity(runs_per_point);
        for j in 0..runs_per_point as u64 {
            let cfg_for = |idx: u64| -> Result<crate::swap::SwapConfig> {
                let seed = derive_seed(config.seed, &stream, idx);
                match template {
                    Some(m) => {
                        let mut c = m.swap_config(seed)?;
                        c.swap_rate = rate;
                        c.validate()?;
                        Ok(c)
                    }
                    None => Ok(SwapVariant::Standard.config(rate, seed)),
                }
            };
            let a = swap_blocks(&md, &cfg_for(2 * j)?)?;
            let b = swap_blocks(&md, &cfg_for(2 * j + 1)?)?;
            estimates.push(variance_estimate(&a, &b)?);
        }
        rows.push(summarize("swap", rate, estimates));
    }

    let mut estimates = Vec::with_capacity(runs_per_point);
    for j in 0..runs_per_point as u64 {
        let run = |idx: u64| -> Result<crate::geodata::CountTable> {
            let cfg = ToyDownConfig::new(toydown_epsilon, derive_seed(config.seed, "sweep-toydown", idx));
            Ok(block_table_counts(&run_toydown(&md, &cfg)?))
        };
        estimates.push(variance_estimate(&run(2 * j)?, &run(2 * j + 1)?)?);
    }
    rows.push(summarize("toydown", toydown_epsilon, estimates));

    Ok(SweepTable { rows, runs_per_point })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swap::SwapVariant;

    fn config() -> RunConfig {
        toml::from_str(
            r#"
spec_version = 1
seed = 5
[input.synthetic]
n_households = 600
counties = 2
tracts_per_county = 4
blocks_per_tract = 3
size_distribution = [0.4, 0.4, 0.2]
race_mixture = [0.55, 0.35, 0.02, 0.03, 0.01, 0.02, 0.02]
hispanic_rate = 0.05
segregation = 0.6
adult_rate = 0.7
"#,
        )
        .unwrap()
    }

    #[test]
    fn identical_replicates_give_zero_variance() {
        // Degenerate control: the estimator on two identical runs is 0.
        let cfg = config();
        let md = cfg.load_input().unwrap();
        let swap = SwapVariant::Standard.config(0.02, 99);
        let a = swap_blocks(&md, &swap).unwrap();
        let b = swap_blocks(&md, &swap).unwrap();
        assert_eq!(variance_estimate(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn sweep_emits_one_row_per_rate_plus_reference() {
        let cfg = config();
        let table = variance_sweep(&cfg, &[0.02, 0.10], 3.26, 2).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.rows[0].kind, "swap");
        assert_eq!(table.rows[2].kind, "toydown");
        for r in &table.rows {
            assert!(r.vhat_min <= r.vhat_median && r.vhat_median <= r.vhat_max);
        }
        // deterministic given the config
        assert_eq!(variance_sweep(&cfg, &[0.02, 0.10], 3.26, 2).unwrap(), table);
    }

    #[test]
    fn sweep_rejects_bad_rates() {
        let cfg = config();
        assert!(variance_sweep(&cfg, &[], 3.26, 2).is_err());
        assert!(variance_sweep(&cfg, &[0.0], 3.26, 2).is_err());
        assert!(variance_sweep(&cfg, &[1.2], 3.26, 2).is_err());
    }
}
