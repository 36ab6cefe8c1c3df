//! Univariate sample diagnostics: local `R̂(x)`, `R̂∞`, local ESS, and the
//! classic split-`R̂` / rank-`R̂` statistics they are compared against.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::chains::ChainSet;
use crate::error::{Error, Result};
use crate::statdist::std_normal_quantile;
use crate::thresholds::{self, NullSample, ThresholdSpec};

/// Value of `R̂(x)` at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LocalRhat {
    Finite(f64),
    /// Every chain is degenerate at `x` (empirical CDF 0 or 1) but the
    /// chains disagree: no within-chain variance, positive between-chain
    /// variance.
    DisjointSupports,
}

impl LocalRhat {
    /// Numeric value, `+inf` for disjoint supports.
    pub fn value(self) -> f64 {
        match self {
            LocalRhat::Finite(v) => v,
            LocalRhat::DisjointSupports => f64::INFINITY,
        }
    }

    pub fn is_disjoint(self) -> bool {
        matches!(self, LocalRhat::DisjointSupports)
    }
}

/// `R̂` from per-chain counts `c_j = #{i : θ_ij ≤ x}` out of `n`.
///
/// Works in exact integer arithmetic: `Σ_{j<k} (c_j - c_k)^2 = m Σ c^2 - (Σ c)^2`
/// and the `n^2` factors of the empirical CDFs cancel.
pub fn rhat_from_counts(counts: &[u64], n: u64) -> LocalRhat {
    let m = counts.len() as u128;
    let (s1, s2) = counts.iter().fold((0u128, 0u128), |(a, b), &c| {
        let c = c as u128;
        (a + c, b + c * c)
    });
    kernel_from_sums(m, n as u128, s1, s2)
}

#[inline]
pub(crate) fn kernel_from_sums(m: u128, n: u128, s1: u128, s2: u128) -> LocalRhat {
    let between = m * s2 - s1 * s1;
    let within = m * (n * s1 - s2);
    if between == 0 {
        LocalRhat::Finite(1.0)
    } else if within == 0 {
        LocalRhat::DisjointSupports
    } else {
        LocalRhat::Finite((1.0 + between as f64 / within as f64).sqrt())
    }
}

/// `R(x)` from real-valued CDF values `F_j(x)`.
pub fn rhat_from_cdfs(f: &[f64]) -> LocalRhat {
    let m = f.len() as f64;
    let mean = f.iter().sum::<f64>() / m;
    if f.iter().all(|&v| v == f[0]) {
        return LocalRhat::Finite(1.0);
    }
    let between = m * f.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let within = m * f.iter().map(|v| v * (1.0 - v)).sum::<f64>();
    if within <= 0.0 {
        LocalRhat::DisjointSupports
    } else {
        LocalRhat::Finite((1.0 + between / within).sqrt())
    }
}

fn count_le(sorted: &[f64], x: f64) -> u64 {
    sorted.partition_point(|&v| v <= x) as u64
}

fn sorted_chains(cs: &ChainSet) -> Result<Vec<Vec<f64>>> {
    Ok(cs
        .univariate_chains()?
        .into_iter()
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect())
}

/// `R̂(x)` for univariate chains.
pub fn local_rhat(cs: &ChainSet, x: f64) -> Result<LocalRhat> {
    let n = cs.num_iterations() as u64;
    let counts: Vec<u64> = cs
        .univariate_chains()?
        .iter()
        .map(|c| c.iter().filter(|&&v| v <= x).count() as u64)
        .collect();
    Ok(rhat_from_counts(&counts, n))
}

/// Where to evaluate the curve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Every pooled order statistic except the global maximum.
    #[default]
    AllPoints,
    /// Every `k`-th pooled order statistic (indices `0, k, 2k, ...`), still
    /// excluding the global maximum.
    Stride(usize),
    /// Caller-chosen points; sorted and deduplicated.
    Explicit(Vec<f64>),
}

impl Grid {
    pub fn from_stride(k: usize) -> Self {
        if k <= 1 {
            Grid::AllPoints
        } else {
            Grid::Stride(k)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub rhat: LocalRhat,
    pub ess: Option<f64>,
}

/// `(x, R̂(x))` pairs with `x` strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalCurve {
    pub points: Vec<CurvePoint>,
}

impl LocalCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rhat.value()).collect()
    }

    /// Maximum and its location; ties go to the smallest `x`.
    pub fn max(&self) -> Result<RInfinity> {
        let mut best: Option<&CurvePoint> = None;
        for p in &self.points {
            if best.is_none_or(|b| p.rhat.value() > b.rhat.value()) {
                best = Some(p);
            }
        }
        let b = best.ok_or(Error::EmptyGrid)?;
        Ok(RInfinity {
            value: b.rhat.value(),
            argmax_x: b.x,
            disjoint_supports: b.rhat.is_disjoint(),
        })
    }

    /// `x,rhat,ess` rows; disjoint points print `inf`, missing ESS is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,rhat,ess\n");
        for p in &self.points {
            let _ = write!(out, "{},", p.x);
            match p.rhat {
                LocalRhat::Finite(v) => {
                    let _ = write!(out, "{v}");
                }
                LocalRhat::DisjointSupports => out.push_str("inf"),
            }
            out.push(',');
            if let Some(e) = p.ess {
                let _ = write!(out, "{e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RInfinity {
    pub value: f64,
    pub argmax_x: f64,
    pub disjoint_supports: bool,
}

/// One pass over the pooled sorted draws. A tie group is emitted when any of
/// its indices is a multiple of `stride`; the last group (global maximum)
/// never is.
fn sweep_curve(cs: &ChainSet, stride: usize) -> Result<LocalCurve> {
    let chains = cs.univariate_chains()?;
    let n = cs.num_iterations();
    let mut pooled: Vec<(f64, u32)> = Vec::with_capacity(cs.total_draws());
    for (j, c) in chains.iter().enumerate() {
        pooled.extend(c.iter().map(|&v| (v, j as u32)));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let total = pooled.len();
    let m = chains.len() as u128;
    let mut counts = vec![0u64; chains.len()];
    let (mut s1, mut s2) = (0u128, 0u128);
    let mut points = Vec::new();
    let mut i = 0;
    while i < total {
        let x = pooled[i].0;
        let mut end = i;
        let mut selected = false;
        while end < total && pooled[end].0 == x {
            if end % stride == 0 && end + 1 < total {
                selected = true;
            }
            let j = pooled[end].1 as usize;
            // (c+1)^2 - c^2 = 2c + 1
            s2 += 2 * counts[j] as u128 + 1;
            s1 += 1;
            counts[j] += 1;
            end += 1;
        }
        if selected && end < total {
            points.push(CurvePoint {
                x,
                rhat: kernel_from_sums(m, n as u128, s1, s2),
                ess: None,
            });
        }
        i = end;
    }
    Ok(LocalCurve { points })
}

/// `R̂(x)` over a grid.
pub fn rhat_curve(cs: &ChainSet, grid: &Grid) -> Result<LocalCurve> {
    let curve = match grid {
        Grid::AllPoints => sweep_curve(cs, 1)?,
        Grid::Stride(k) => {
            if *k == 0 {
                return Err(Error::InvalidParameter("stride must be positive".into()));
            }
            sweep_curve(cs, *k)?
        }
        Grid::Explicit(xs) => {
            let sorted = sorted_chains(cs)?;
            let n = cs.num_iterations() as u64;
            let mut xs: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let points = xs
                .into_iter()
                .map(|x| {
                    let counts: Vec<u64> = sorted.iter().map(|c| count_le(c, x)).collect();
                    CurvePoint {
                        x,
                        rhat: rhat_from_counts(&counts, n),
                        ess: None,
                    }
                })
                .collect();
            LocalCurve { points }
        }
    };
    if curve.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(curve)
}

/// Curve with `ESS(x)` filled in wherever the indicator series is not degenerate.
pub fn rhat_curve_with_ess(cs: &ChainSet, grid: &Grid) -> Result<LocalCurve> {
    let mut curve = rhat_curve(cs, grid)?;
    for p in &mut curve.points {
        p.ess = local_ess(cs, p.x).ok();
    }
    Ok(curve)
}

/// `R̂∞` and its location.
pub fn rhat_infinity(cs: &ChainSet, grid: &Grid) -> Result<RInfinity> {
    rhat_curve(cs, grid)?.max()
}

/// Effective sample size of the indicator series `1{θ ≤ x}`.
///
/// Multi-chain autocorrelation estimate with Geyer's initial monotone
/// positive sequence truncation, on the unsplit chains.
pub fn local_ess(cs: &ChainSet, x: f64) -> Result<f64> {
    let chains: Vec<Vec<f64>> = cs
        .univariate_chains()?
        .iter()
        .map(|c| c.iter().map(|&v| if v <= x { 1.0 } else { 0.0 }).collect())
        .collect();
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|&v| v == first)) {
        return Err(Error::DegenerateQuantile(x));
    }
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
    ess_multichain(&refs).ok_or(Error::DegenerateQuantile(x))
}

/// Multi-chain ESS of equal-length series; `None` when the within-chain
/// variance vanishes or chains are shorter than 4.
pub fn ess_multichain(chains: &[&[f64]]) -> Option<f64> {
    let m = chains.len();
    let n = chains.first()?.len();
    if m < 1 || n < 4 {
        return None;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let centered: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| v - mu).collect())
        .collect();
    // biased autocovariance averaged across chains
    let mean_acov = |t: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };

    let acov0 = mean_acov(0);
    let mean_var = acov0 * nf / (nf - 1.0);
    if !(mean_var > 0.0) {
        return None;
    }
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    let rho = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho_hat = vec![0.0; n + 2];
    let mut rho_even = 1.0;
    rho_hat[0] = rho_even;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut s = 1;
    while s + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho(s + 1);
        rho_odd = rho(s + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[s + 1] = rho_even;
            rho_hat[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho_hat[max_s + 1] = rho_even;
    }
    // initial positive sequence -> initial monotone sequence
    let mut s = 1;
    while s + 3 <= max_s {
        if rho_hat[s + 1] + rho_hat[s + 2] > rho_hat[s - 1] + rho_hat[s] {
            rho_hat[s + 1] = (rho_hat[s - 1] + rho_hat[s]) / 2.0;
            rho_hat[s + 2] = rho_hat[s + 1];
        }
        s += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    let ess = total / tau;
    Some(if tau > 0.0 { ess.min(total * total.log10()) } else { total * total.log10() })
}

/// Classic potential scale reduction factor on already-prepared chains.
///
/// Per-chain statistics are summed in sorted order so the result does not
/// depend on chain labelling.
fn psrf(chains: &[&[f64]]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let mut means = Vec::with_capacity(chains.len());
    let mut vars = Vec::with_capacity(chains.len());
    for c in chains {
        let mu = c.iter().sum::<f64>() / n;
        means.push(mu);
        vars.push(c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0));
    }
    means.sort_by(f64::total_cmp);
    vars.sort_by(f64::total_cmp);
    let w = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b_over_n) / w).sqrt()
}

/// Split-`R̂` of the raw draws.
pub fn trad_split_rhat(cs: &ChainSet) -> Result<f64> {
    let split = cs.split()?;
    Ok(psrf(&split.univariate_chains()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRhat {
    pub bulk: f64,
    pub tail: f64,
    pub max: f64,
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Normal scores `Φ⁻¹((r - 3/8) / (N + 1/4))` of the pooled draws.
pub fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let total = values.len() as f64;
    average_ranks(values)
        .into_iter()
        .map(|r| std_normal_quantile((r - 0.375) / (total + 0.25)).expect("rank score in (0, 1)"))
        .collect()
}

fn rank_psrf(split: &ChainSet, values: &[f64]) -> f64 {
    let z = rank_normalize(values);
    let n = split.num_iterations();
    let chains: Vec<&[f64]> = z.chunks(n).collect();
    psrf(&chains)
}

/// Bulk and tail rank-normalized split-`R̂`.
pub fn rank_rhat(cs: &ChainSet) -> Result<RankRhat> {
    let split = cs.split()?;
    split.require_univariate()?;
    let draws = split.as_flat();
    let bulk = rank_psrf(&split, draws);

    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let folded: Vec<f64> = draws.iter().map(|v| (v - median).abs()).collect();
    let tail = rank_psrf(&split, &folded);
    Ok(RankRhat {
        bulk,
        tail,
        max: bulk.max(tail),
    })
}

/// Percentile probes used for the report's minimum local ESS.
const ESS_PROBES: std::ops::RangeInclusive<usize> = 1..=99;

/// Smallest `ESS(x)` over the pooled 1%, 2%, ..., 99% sample quantiles.
pub fn min_local_ess(cs: &ChainSet) -> Result<f64> {
    let mut pooled = cs.univariate_chains()?.concat();
    pooled.sort_by(f64::total_cmp);
    let last = pooled.len() - 1;
    let mut xs: Vec<f64> = ESS_PROBES
        .map(|q| pooled[(q * last) / 100])
        .collect();
    xs.dedup();
    let mut best = f64::INFINITY;
    for x in xs {
        if let Ok(e) = local_ess(cs, x) {
            best = best.min(e);
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::DegenerateQuantile(pooled[last / 2]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub alpha: f64,
    /// Fixed cutoff for `R̂∞`; skips calibration.
    pub threshold: Option<f64>,
    pub grid: Grid,
    /// Null replications for threshold and p-value; 0 uses the cached table.
    pub mc_reps: usize,
    pub seed: u64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            threshold: None,
            grid: Grid::AllPoints,
            mc_reps: 2000,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    NotConverged,
}

impl Verdict {
    pub fn from_statistic(stat: f64, threshold: f64) -> Self {
        if stat >= threshold {
            Verdict::NotConverged
        } else {
            Verdict::Converged
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub m: usize,
    pub n: usize,
    /// `null` in JSON when the supports are disjoint somewhere.
    pub rhat_inf: f64,
    pub argmax_x: f64,
    pub disjoint_supports: bool,
    pub split_rhat: f64,
    pub rank_rhat_bulk: f64,
    pub rank_rhat_tail: f64,
    pub rank_rhat: f64,
    pub min_local_ess: Option<f64>,
    pub threshold_used: f64,
    pub p_value: Option<f64>,
    pub verdict: Verdict,
}

/// All univariate diagnostics for one chain set.
pub fn diagnose(cs: &ChainSet, config: &DiagnoseConfig) -> Result<DiagnosticReport> {
    cs.require_univariate()?;
    let rinf = rhat_infinity(cs, &config.grid)?;
    let split_rhat = trad_split_rhat(cs)?;
    let rank = rank_rhat(cs)?;
    let min_ess = min_local_ess(cs).ok();

    let m = cs.num_chains();
    let spec = ThresholdSpec {
        m,
        d: 1,
        alpha: config.alpha,
        target_ess: cs.total_draws() as f64,
        reps: config.mc_reps,
        seed: config.seed,
    };
    let null = if config.mc_reps > 0 {
        Some(NullSample::simulate(&spec)?)
    } else {
        None
    };
    let threshold = match (config.threshold, &null) {
        (Some(t), _) => t,
        (None, Some(s)) => s.quantile(config.alpha)?,
        (None, None) => thresholds::cached_threshold(m, config.alpha, spec.target_ess).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "no cached threshold for m = {m}, alpha = {}, ess = {}; pass a threshold or use replications",
                config.alpha, spec.target_ess
            ))
        })?,
    };
    let p_value = null.as_ref().map(|s| s.pvalue(rinf.value));

    Ok(DiagnosticReport {
        m,
        n: cs.num_iterations(),
        rhat_inf: rinf.value,
        argmax_x: rinf.argmax_x,
        disjoint_supports: rinf.disjoint_supports,
        split_rhat,
        rank_rhat_bulk: rank.bulk,
        rank_rhat_tail: rank.tail,
        rank_rhat: rank.max,
        min_local_ess: min_ess,
        threshold_used: threshold,
        p_value,
        verdict: Verdict::from_statistic(rinf.value, threshold),
    })
}
