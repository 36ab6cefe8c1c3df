//! Replication harness for the toy examples: per-replication diagnostic
//! values, emitted as long CSV.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::{bivariate_correlation, generate_ar1, generate_iid, generate_mvn, random_unitdiag_covariance, ChainSet};
use crate::diagnostics::{rank_rhat, rhat_infinity, trad_split_rhat, Grid};
use crate::error::{Error, Result};
use crate::multivariate::{mv_rhat_infinity, rhat_max_infinity, Direction, DirectionSet, MvGrid, DEFAULT_DIRECTION_CAP};
use crate::rng::{mix64, replication_seed};
use crate::statdist::DistributionSpec;
use nalgebra::DMatrix;

/// Toy scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Independent draws, one distribution per chain.
    Iid { specs: Vec<DistributionSpec>, n: usize },
    /// Gaussian AR(1) chains with per-chain innovation scales.
    Ar1 { rho: f64, sigmas: Vec<f64>, n: usize },
    /// `m - 1` standard bivariate normal chains and one with correlation `rho`.
    Bivariate { m: usize, rho: f64, n: usize },
    /// `m - 1` standard `d`-variate normal chains and one with a fresh random
    /// unit-diagonal covariance per replication.
    RandomCovariance { m: usize, d: usize, n: usize },
}

pub const EXAMPLE_IDS: [u8; 6] = [1, 2, 3, 4, 5, 6];

/// Overrides for the built-in examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleOptions {
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub d: Option<usize>,
}

fn one_odd(common: DistributionSpec, odd: DistributionSpec, m: usize) -> Vec<DistributionSpec> {
    let mut specs = vec![common; m - 1];
    specs.push(odd);
    specs
}

/// Built-in scenario for example `id`.
pub fn example(id: u8, opts: ExampleOptions) -> Result<Scenario> {
    let m = opts.m.unwrap_or(match id {
        4 | 5 => 2,
        _ => 4,
    });
    if m < 2 {
        return Err(Error::TooFewChains(m));
    }
    let n = opts.n.unwrap_or(if id == 6 { 500 } else { 200 });
    Ok(match id {
        1 => Scenario::Iid {
            specs: one_odd(DistributionSpec::uniform(-0.75, 0.75), DistributionSpec::uniform(-1.0, 1.0), m),
            n,
        },
        2 => Scenario::Iid {
            specs: one_odd(DistributionSpec::pareto(0.8, 1.0), DistributionSpec::pareto(0.8, 1.5), m),
            n,
        },
        3 => Scenario::Iid {
            specs: one_odd(
                DistributionSpec::exponential(1.0),
                DistributionSpec::uniform(1.0 - 2.0 * LN_2, 1.0 + 2.0 * LN_2),
                m,
            ),
            n,
        },
        4 => Scenario::Bivariate { m, rho: 0.9, n },
        5 => Scenario::RandomCovariance {
            m,
            d: opts.d.unwrap_or(3),
            n,
        },
        6 => {
            let mut sigmas = vec![1.0; m - 1];
            sigmas.push(2.0);
            Scenario::Ar1 { rho: 0.5, sigmas, n }
        }
        _ => return Err(Error::InvalidParameter(format!("unknown example {id}; expected 1 to 6"))),
    })
}

impl Scenario {
    pub fn dim(&self) -> usize {
        match self {
            Scenario::Iid { .. } | Scenario::Ar1 { .. } => 1,
            Scenario::Bivariate { .. } => 2,
            Scenario::RandomCovariance { d, .. } => *d,
        }
    }

    /// Statistic names in output order.
    pub fn stat_names(&self) -> &'static [&'static str] {
        if self.dim() == 1 {
            &["split_rhat", "rank_rhat", "rhat_inf"]
        } else {
            &["rhat_inf", "rhat_max"]
        }
    }

    /// Chains for one replication.
    pub fn generate(&self, seed: u64) -> Result<ChainSet> {
        match self {
            Scenario::Iid { specs, n } => generate_iid(specs, *n, seed),
            Scenario::Ar1 { rho, sigmas, n } => generate_ar1(*rho, sigmas, *n, seed),
            Scenario::Bivariate { m, rho, n } => {
                let mut covs = vec![DMatrix::identity(2, 2); m - 1];
                covs.push(bivariate_correlation(*rho));
                generate_mvn(&covs, *n, seed)
            }
            Scenario::RandomCovariance { m, d, n } => {
                let mut covs = vec![DMatrix::identity(*d, *d); m - 1];
                covs.push(random_unitdiag_covariance(*d, mix64(seed ^ 0x0051_5741_5254))?);
                generate_mvn(&covs, *n, seed)
            }
        }
    }

    fn statistics(&self, cs: &ChainSet) -> Result<Vec<f64>> {
        if self.dim() == 1 {
            Ok(vec![
                trad_split_rhat(cs)?,
                rank_rhat(cs)?.max,
                rhat_infinity(cs, &Grid::AllPoints)?.value,
            ])
        } else {
            let grid = MvGrid::default();
            let single = mv_rhat_infinity(cs, &Direction::all_le(cs.dim()), &grid)?.value;
            let max = rhat_max_infinity(cs, &grid, DirectionSet::Canonical, DEFAULT_DIRECTION_CAP)?.value;
            Ok(vec![single, max])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub stats: Vec<String>,
    /// `values[rep][k]` is statistic `stats[k]` in replication `rep`.
    pub values: Vec<Vec<f64>>,
}

impl SimulationResult {
    pub fn column(&self, stat: &str) -> Option<Vec<f64>> {
        let k = self.stats.iter().position(|s| s == stat)?;
        Some(self.values.iter().map(|row| row[k]).collect())
    }

    /// Fraction of replications where `stat` exceeds `cutoff`.
    pub fn exceedance(&self, stat: &str, cutoff: f64) -> Option<f64> {
        let col = self.column(stat)?;
        Some(col.iter().filter(|&&v| v > cutoff).count() as f64 / col.len() as f64)
    }

    /// Long CSV `rep,stat,value`, replications numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rep,stat,value\n");
        for (rep, row) in self.values.iter().enumerate() {
            for (name, v) in self.stats.iter().zip(row) {
                out.push_str(&format!("{},{name},{v}\n", rep + 1));
            }
        }
        out
    }
}

/// Runs `reps` independent replications in parallel; output does not
/// depend on the thread count.
pub fn simulate(scenario: &Scenario, reps: usize, seed: u64) -> Result<SimulationResult> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let values = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let cs = scenario.generate(replication_seed(seed, rep))?;
            scenario.statistics(&cs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationResult {
        stats: scenario.stat_names().iter().map(|s| s.to_string()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_example() {
        assert!(example(7, ExampleOptions::default()).is_err());
        assert!(example(0, ExampleOptions::default()).is_err());
    }

    #[test]
    fn shapes() {
        let r = simulate(&example(1, ExampleOptions::default()).unwrap(), 5, 3).unwrap();
        assert_eq!(r.values.len(), 5);
        assert_eq!(r.to_csv().lines().count(), 1 + 15);
        let opts = ExampleOptions {
            d: Some(4),
            ..Default::default()
        };
        let r = simulate(&example(5, opts).unwrap(), 3, 3).unwrap();
        assert_eq!(r.stats, ["rhat_inf", "rhat_max"]);
        for row in &r.values {
            assert!(row[1] >= row[0]);
        }
    }

    #[test]
    fn deterministic() {
        let s = example(6, ExampleOptions::default()).unwrap();
        assert_eq!(simulate(&s, 4, 11).unwrap(), simulate(&s, 4, 11).unwrap());
        assert_ne!(simulate(&s, 4, 11).unwrap(), simulate(&s, 4, 12).unwrap());
    }
}
