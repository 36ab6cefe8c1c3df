//! Cutoffs for `R̂(x)` and `R̂∞`: the asymptotic chi-square threshold, its
//! type I error, Monte Carlo null quantiles and p-values.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::generate_iid;
use crate::diagnostics::{rhat_infinity, Grid};
use crate::error::{Error, Result};
use crate::rng::replication_seed;
use crate::statdist::{chi_square_quantile, chi_square_sf, DistributionSpec};

pub const DEFAULT_TARGET_ESS: f64 = 400.0;
pub const DEFAULT_REPS: usize = 2000;
pub const MIN_REPS: usize = 100;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(alpha))
    }
}

fn check_m(m: usize) -> Result<()> {
    if m >= 2 {
        Ok(())
    } else {
        Err(Error::TooFewChains(m))
    }
}

/// Pointwise threshold `sqrt(1 + z_{m-1, 1-α} / ess)`.
pub fn r_lim(m: usize, alpha: f64, ess: f64) -> Result<f64> {
    check_m(m)?;
    check_alpha(alpha)?;
    if !(ess > 0.0) {
        return Err(Error::InvalidParameter(format!("ESS must be positive, got {ess}")));
    }
    let z = chi_square_quantile((m - 1) as f64, 1.0 - alpha)?;
    Ok((1.0 + z / ess).sqrt())
}

/// Probability that a null `R̂(x)` with the given ESS exceeds `r_lim`.
pub fn type1_error(m: usize, r_lim: f64, ess: f64) -> Result<f64> {
    check_m(m)?;
    if !(r_lim >= 1.0) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 1, got {r_lim}")));
    }
    Ok(chi_square_sf((m - 1) as f64, ess * (r_lim * r_lim - 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    pub target_ess: f64,
    pub reps: usize,
    pub seed: u64,
}

impl ThresholdSpec {
    pub fn new(m: usize, alpha: f64) -> Self {
        Self {
            m,
            d: 1,
            alpha,
            target_ess: DEFAULT_TARGET_ESS,
            reps: DEFAULT_REPS,
            seed: 1,
        }
    }

    /// Chain length of the null simulation, `round(target_ess / m)`.
    pub fn chain_length(&self) -> usize {
        (self.target_ess / self.m as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_m(self.m)?;
        check_alpha(self.alpha)?;
        if self.reps < MIN_REPS {
            return Err(Error::InvalidParameter(format!(
                "at least {MIN_REPS} replications required, got {}",
                self.reps
            )));
        }
        let n = self.chain_length();
        if n < 4 {
            return Err(Error::TooShort(n, 4));
        }
        Ok(())
    }
}

/// Sorted `R̂∞` values from i.i.d. uniform chains.
#[derive(Clone, Debug, PartialEq)]
pub struct NullSample {
    sorted: Vec<f64>,
}

impl NullSample {
    pub fn simulate(spec: &ThresholdSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.chain_length();
        let specs = vec![DistributionSpec::uniform(0.0, 1.0); spec.m];
        let mut sorted = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                let cs = generate_iid(&specs, n, replication_seed(spec.seed, rep))?;
                Ok(rhat_infinity(&cs, &Grid::AllPoints)?.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Lower inverse-ECDF quantile at level `1 - alpha`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let reps = self.sorted.len() as f64;
        // guard against 0.95 * 2000 = 1900.0000000000002
        let k = ((1.0 - alpha) * reps - 1e-9).ceil().max(1.0) as usize;
        Ok(self.sorted[k.min(self.sorted.len()) - 1])
    }

    /// `(1 + #{null >= observed}) / (reps + 1)`.
    pub fn pvalue(&self, observed: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v < observed);
        let exceed = self.sorted.len() - below;
        (1 + exceed) as f64 / (self.sorted.len() + 1) as f64
    }
}

pub fn mc_null_quantile(spec: &ThresholdSpec) -> Result<f64> {
    NullSample::simulate(spec)?.quantile(spec.alpha)
}

pub fn mc_pvalue(observed: f64, spec: &ThresholdSpec) -> Result<f64> {
    Ok(NullSample::simulate(spec)?.pvalue(observed))
}

/// Margin and copula cutoffs for the two-step multivariate diagnosis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvThresholds {
    pub margin: f64,
    pub copula: f64,
}

/// Bonferroni-corrected null quantiles: level `(α/2)/d` per margin and
/// `(α/2)/2^(d-1)` for the maximum over dependence directions.
pub fn mv_thresholds(
    m: usize,
    d: usize,
    alpha: f64,
    target_ess: f64,
    reps: usize,
    seed: u64,
) -> Result<MvThresholds> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("multivariate thresholds need d >= 2, got {d}")));
    }
    let spec = ThresholdSpec {
        m,
        d,
        alpha,
        target_ess,
        reps,
        seed,
    };
    let null = NullSample::simulate(&spec)?;
    mv_thresholds_from(&null, d, alpha)
}

pub fn mv_thresholds_from(null: &NullSample, d: usize, alpha: f64) -> Result<MvThresholds> {
    let half = alpha / 2.0;
    Ok(MvThresholds {
        margin: null.quantile(half / d as f64)?,
        copula: null.quantile(half / 2f64.powi(d as i32 - 1))?,
    })
}

/// Rule-of-thumb `(margin, copula)` cutoffs at α = 0.05.
pub fn rule_of_thumb(m: usize) -> Option<MvThresholds> {
    match m {
        4 => Some(MvThresholds {
            margin: 1.03,
            copula: 1.03,
        }),
        8 => Some(MvThresholds {
            margin: 1.04,
            copula: 1.05,
        }),
        _ => None,
    }
}

pub const TABLE_ALPHAS: [f64; 4] = [0.005, 0.01, 0.05, 0.1];
pub const TABLE_CHAINS: [usize; 6] = [2, 3, 4, 8, 10, 20];

/// Null `R̂∞` quantiles at target ESS 400, rows `TABLE_CHAINS`, columns
/// `TABLE_ALPHAS`. Regenerate with [`threshold_table`] using
/// `DEFAULT_REPS` replications and seed [`TABLE_SEED`].
pub const CACHED_TABLE: [[f64; 4]; 6] = [
    [1.016699514014828, 1.0158321188154178, 1.012150727845249, 1.010396372574435],
    [1.0238371082562032, 1.0216260046683778, 1.016135624086252, 1.0142724673389514],
    [1.027983381638501, 1.0258562045340236, 1.0197856761490673, 1.0177974269027923],
    [1.040531963428944, 1.0376605548117739, 1.0312057355939275, 1.0283496851901839],
    [1.0479089691128565, 1.044492069456246, 1.0363804837231612, 1.0335016697901531],
    [1.0805771878137764, 1.0778363545962317, 1.0631810675049123, 1.0564428184106458],
];
pub const TABLE_SEED: u64 = 2024;

/// Cached null quantile when `(m, alpha, ess)` is on the shipped grid.
pub fn cached_threshold(m: usize, alpha: f64, ess: f64) -> Option<f64> {
    if ess != DEFAULT_TARGET_ESS {
        return None;
    }
    let row = TABLE_CHAINS.iter().position(|&v| v == m)?;
    let col = TABLE_ALPHAS.iter().position(|&a| a == alpha)?;
    Some(CACHED_TABLE[row][col])
}

/// Null quantiles for every `(m, α)` pair; one simulation per `m`.
pub fn threshold_table(
    chains: &[usize],
    alphas: &[f64],
    target_ess: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    chains
        .iter()
        .map(|&m| {
            let mut spec = ThresholdSpec::new(m, alphas.first().copied().unwrap_or(0.05));
            spec.target_ess = target_ess;
            spec.reps = reps;
            spec.seed = seed;
            let null = NullSample::simulate(&spec)?;
            alphas.iter().map(|&a| null.quantile(a)).collect()
        })
        .collect()
}

/// `m,alpha_<a>,...` CSV of a threshold table.
pub fn table_csv(chains: &[usize], alphas: &[f64], rows: &[Vec<f64>]) -> String {
    let mut out = String::from("m");
    for a in alphas {
        let _ = write!(out, ",alpha_{a}");
    }
    out.push('\n');
    for (m, row) in chains.iter().zip(rows) {
        let _ = write!(out, "{m}");
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rlim_table_values() {
        for (m, want) in [(2, 1.005), (4, 1.010), (50, 1.080)] {
            assert!((r_lim(m, 0.05, 400.0).unwrap() - want).abs() < 1e-3);
        }
        assert!(r_lim(1, 0.05, 400.0).is_err());
        assert!(r_lim(4, 0.0, 400.0).is_err());
    }

    #[test]
    fn type1_round_trip() {
        for m in [2, 3, 4, 8, 20] {
            for alpha in [0.001, 0.05, 0.3] {
                for ess in [50.0, 400.0, 1e4] {
                    let r = r_lim(m, alpha, ess).unwrap();
                    assert!((type1_error(m, r, ess).unwrap() - alpha).abs() < 1e-10);
                }
            }
        }
        assert_eq!(type1_error(4, 1.0, 123.0).unwrap(), 1.0);
    }

    #[test]
    fn rlim_nondecreasing_in_m() {
        let v: Vec<f64> = (2..40).map(|m| r_lim(m, 0.05, 400.0).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn quantile_and_pvalue_conventions() {
        let s = NullSample::from_values((1..=100).map(|i| 1.0 + i as f64 / 1000.0).collect()).unwrap();
        assert_eq!(s.quantile(0.05).unwrap(), 1.095);
        assert_eq!(s.quantile(0.1).unwrap(), 1.090);
        assert_eq!(s.pvalue(10.0), 1.0 / 101.0);
        assert_eq!(s.pvalue(1.0), 1.0);
        assert_eq!(s.pvalue(1.095), 7.0 / 101.0);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ThresholdSpec::new(4, 0.05);
        spec.target_ess = 8.0;
        assert!(matches!(mc_null_quantile(&spec), Err(Error::TooShort(2, 4))));
        let mut spec = ThresholdSpec::new(4, 0.05);
        spec.reps = 10;
        assert!(mc_null_quantile(&spec).is_err());
    }

    #[test]
    fn null_simulation_is_deterministic() {
        let mut spec = ThresholdSpec::new(3, 0.05);
        spec.reps = 200;
        let a = NullSample::simulate(&spec).unwrap();
        let b = NullSample::simulate(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v >= 1.0));
    }

    #[test]
    fn cached_table_matches_recomputation() {
        let rows = threshold_table(&TABLE_CHAINS, &TABLE_ALPHAS, DEFAULT_TARGET_ESS, DEFAULT_REPS, TABLE_SEED).unwrap();
        for (row, cached) in rows.iter().zip(CACHED_TABLE.iter()) {
            assert_eq!(row.as_slice(), cached.as_slice());
        }
        assert_eq!(cached_threshold(4, 0.05, 400.0), Some(CACHED_TABLE[2][2]));
        assert_eq!(cached_threshold(5, 0.05, 400.0), None);
        assert_eq!(cached_threshold(4, 0.05, 800.0), None);
    }

    #[test]
    fn presets() {
        assert_eq!(rule_of_thumb(4).unwrap(), MvThresholds { margin: 1.03, copula: 1.03 });
        assert_eq!(rule_of_thumb(8).unwrap(), MvThresholds { margin: 1.04, copula: 1.05 });
        assert!(rule_of_thumb(5).is_none());
    }
}
