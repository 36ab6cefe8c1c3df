//! Chains that share mean and mean-over-median yet differ in distribution,
//! so rank-based `R̂` cannot tell them apart.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::generate_iid;
use crate::diagnostics::{rank_rhat, rhat_infinity, trad_split_rhat, Grid};
use crate::error::{Error, Result};
use crate::rng::replication_seed;
use crate::statdist::DistributionSpec;
use crate::thresholds::{NullSample, ThresholdSpec, DEFAULT_REPS};

/// `ξ` closer than this to 1 is rejected: the mean diverges there.
pub const XI_POLE_MARGIN: f64 = 1e-6;
const XI_SERIES: f64 = 1e-8;
const CHECK_TOL: f64 = 1e-10;

/// Fixed cutoff used for split-`R̂` and rank-`R̂`.
pub const CLASSIC_CUTOFF: f64 = 1.01;
pub const DEMO_ALPHA: f64 = 0.05;

fn check_xi(xi: f64) -> Result<()> {
    if !xi.is_finite() || xi >= 1.0 - XI_POLE_MARGIN {
        return Err(Error::InvalidParameter(format!("xi must be finite and below 1, got {xi}")));
    }
    Ok(())
}

/// `(2^ξ - 1) / ξ`, with its limit `log 2` at 0.
fn pow2_slope(xi: f64) -> f64 {
    if xi.abs() < XI_SERIES {
        LN_2 * (1.0 + xi * LN_2 / 2.0 + xi * xi * LN_2 * LN_2 / 6.0)
    } else {
        (xi * LN_2).exp_m1() / xi
    }
}

/// `(2^ξ - 1) / (ξ (1 - ξ))`.
pub fn f_xi(xi: f64) -> Result<f64> {
    check_xi(xi)?;
    Ok(pow2_slope(xi) / (1.0 - xi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdPair {
    pub spec1: DistributionSpec,
    pub spec2: DistributionSpec,
    pub lambda: f64,
}

/// Mean and mean above the median of `gpd(μ, σ, ξ)`, computed as
/// median plus the mean excess over it.
pub fn gpd_moments(mu: f64, sigma: f64, xi: f64) -> Result<(f64, f64)> {
    check_xi(xi)?;
    let mean = mu + sigma / (1.0 - xi);
    let median = mu + sigma * pow2_slope(xi);
    // excess over a threshold u is gpd(0, σ + ξ(u - μ), ξ)
    let upper = median + (sigma + xi * (median - mu)) / (1.0 - xi);
    Ok((mean, upper))
}

fn gpd_params(spec: &DistributionSpec) -> (f64, f64, f64) {
    match *spec {
        DistributionSpec::Gpd { mu, sigma, xi } => (mu, sigma, xi),
        _ => unreachable!("pair members are always GPD"),
    }
}

impl GpdPair {
    /// Largest absolute mismatch of the two moment constraints.
    pub fn moment_gap(&self) -> Result<f64> {
        let (m1, s1, x1) = gpd_params(&self.spec1);
        let (m2, s2, x2) = gpd_params(&self.spec2);
        let (mean1, up1) = gpd_moments(m1, s1, x1)?;
        let (mean2, up2) = gpd_moments(m2, s2, x2)?;
        let scale = 1f64.max(mean1.abs()).max(up1.abs());
        Ok(((mean1 - mean2).abs().max((up1 - up2).abs())) / scale)
    }
}

/// Second GPD matching the first one's mean and mean above the median.
pub fn solve_counterexample(xi1: f64, xi2: f64, sigma1: f64, mu1: f64) -> Result<GpdPair> {
    check_xi(xi1)?;
    check_xi(xi2)?;
    if xi1 == xi2 {
        return Err(Error::InvalidParameter("xi1 and xi2 must differ".into()));
    }
    if !(sigma1.is_finite() && sigma1 > 0.0) || !mu1.is_finite() {
        return Err(Error::InvalidParameter(format!("need sigma1 > 0 and finite mu1, got ({sigma1}, {mu1})")));
    }
    let lambda = f_xi(xi1)? / f_xi(xi2)?;
    let sigma2 = lambda * sigma1;
    let mu2 = mu1 - sigma1 * (lambda / (1.0 - xi2) - 1.0 / (1.0 - xi1));
    let pair = GpdPair {
        spec1: DistributionSpec::gpd(mu1, sigma1, xi1),
        spec2: DistributionSpec::gpd(mu2, sigma2, xi2),
        lambda,
    };
    pair.spec1.validate()?;
    pair.spec2.validate()?;
    let gap = pair.moment_gap()?;
    if !(gap <= CHECK_TOL) {
        return Err(Error::Internal(format!("moment constraints off by {gap:e}")));
    }
    Ok(pair)
}

/// `Exp(1)` against `U(1 - 2 log 2, 1 + 2 log 2)`.
pub fn exponential_uniform_pair() -> GpdPair {
    solve_counterexample(0.0, -1.0, 1.0, 0.0).expect("fixed parameters are valid")
}

/// `Laplace(0, 1/4)` and `U(-1/2, 1/2)`.
pub fn laplace_uniform_pair() -> (DistributionSpec, DistributionSpec) {
    (DistributionSpec::laplace(0.0, 0.25), DistributionSpec::uniform(-0.5, 0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    /// Calibrated `R̂∞` cutoff at level [`DEMO_ALPHA`].
    pub threshold: f64,
    pub split_rhat: f64,
    pub rank_rhat: f64,
    pub rhat_inf: f64,
}

impl DetectionSummary {
    pub fn to_csv(&self) -> String {
        format!(
            "stat,cutoff,detection\nsplit_rhat,{CLASSIC_CUTOFF},{}\nrank_rhat,{CLASSIC_CUTOFF},{}\nrhat_inf,{},{}\n",
            self.split_rhat, self.rank_rhat, self.threshold, self.rhat_inf
        )
    }
}

/// Detection fractions with `m - 1` chains from `common` and one from `odd`.
pub fn detection_rates(
    common: DistributionSpec,
    odd: DistributionSpec,
    m: usize,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<DetectionSummary> {
    if m < 2 {
        return Err(Error::TooFewChains(m));
    }
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let null = NullSample::simulate(&ThresholdSpec {
        m,
        d: 1,
        alpha: DEMO_ALPHA,
        target_ess: (m * n) as f64,
        reps: DEFAULT_REPS,
        seed: replication_seed(seed, usize::MAX),
    })?;
    let threshold = null.quantile(DEMO_ALPHA)?;
    let mut specs = vec![common; m - 1];
    specs.push(odd);
    let hits = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let cs = generate_iid(&specs, n, replication_seed(seed, rep))?;
            let split = trad_split_rhat(&cs)?;
            let rank = rank_rhat(&cs)?.max;
            let rinf = rhat_infinity(&cs, &Grid::AllPoints)?.value;
            Ok([split > CLASSIC_CUTOFF, rank > CLASSIC_CUTOFF, rinf >= threshold])
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = |k: usize| hits.iter().filter(|h| h[k]).count() as f64 / reps as f64;
    Ok(DetectionSummary {
        m,
        n,
        reps,
        threshold,
        split_rhat: rate(0),
        rank_rhat: rate(1),
        rhat_inf: rate(2),
    })
}

pub fn demo_false_negative(pair: &GpdPair, m: usize, n: usize, reps: usize, seed: u64) -> Result<DetectionSummary> {
    detection_rates(pair.spec1, pair.spec2, m, n, reps, seed)
}
