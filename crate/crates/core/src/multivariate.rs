//! Multivariate `R̂(x)` on orthant indicators, its maximum over dependence
//! directions, the two-step margins/copula diagnosis, and population copula
//! bounds.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::ChainSet;
use crate::diagnostics::{kernel_from_sums, rhat_from_cdfs, rhat_infinity, Grid, LocalRhat, Verdict};
use crate::error::{Error, Result};
use crate::population::golden_max;
use crate::statdist::{std_normal_cdf, std_normal_quantile};
use crate::rng::{chain_rng, open_unit, replication_seed};
use crate::thresholds::{mv_thresholds, MvThresholds, NullSample, ThresholdSpec};

/// Per-coordinate inequality: `false` is `θ_p ≤ x_p`, `true` is `θ_p ≥ x_p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub ge: Vec<bool>,
}

impl Direction {
    pub fn all_le(d: usize) -> Self {
        Self { ge: vec![false; d] }
    }

    /// Bit `p` of `code` set means coordinate `p` uses `≥`.
    pub fn from_code(code: usize, d: usize) -> Self {
        Self {
            ge: (0..d).map(|p| code >> p & 1 == 1).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.ge.len()
    }

    pub fn flipped(&self, p: usize) -> Self {
        let mut out = self.clone();
        out.ge[p] = !out.ge[p];
        out
    }

    /// `<=,>=,...` notation.
    pub fn label(&self) -> String {
        self.ge
            .iter()
            .map(|&g| if g { ">=" } else { "<=" })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn admits(&self, draw: &[f64], x: &[f64]) -> bool {
        draw.iter()
            .zip(x)
            .zip(&self.ge)
            .all(|((&v, &xp), &ge)| if ge { v >= xp } else { v <= xp })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSet {
    /// `2^(d-1)` directions with coordinate 1 fixed to `≤`.
    Canonical,
    /// All `2^d` directions.
    Full,
}

impl DirectionSet {
    pub fn directions(self, d: usize) -> Vec<Direction> {
        match self {
            DirectionSet::Canonical => (0..1usize << (d - 1)).map(|c| Direction::from_code(c << 1, d)).collect(),
            DirectionSet::Full => (0..1usize << d).map(|c| Direction::from_code(c, d)).collect(),
        }
    }
}

pub const DEFAULT_DIRECTION_CAP: usize = 12;
pub const DEFAULT_GRID_BUDGET: usize = 1_000_000;

/// Budgeted product grid over pooled order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvGrid {
    /// Order statistics kept per coordinate; default `floor(budget^(1/d))`.
    pub per_coordinate: Option<usize>,
    pub budget: usize,
}

impl Default for MvGrid {
    fn default() -> Self {
        Self {
            per_coordinate: None,
            budget: DEFAULT_GRID_BUDGET,
        }
    }
}

impl MvGrid {
    fn points_per_coordinate(&self, total: usize, d: usize) -> usize {
        let k = self.per_coordinate.unwrap_or_else(|| {
            let mut k = (self.budget as f64).powf(1.0 / d as f64).floor() as usize;
            // powf can land just below an exact integer root
            while (k + 1).checked_pow(d as u32).is_some_and(|v| v <= self.budget) {
                k += 1;
            }
            k
        });
        k.clamp(1, total)
    }
}

/// Indicator `Π_p 1{θ_p dir_p x_p}` plug-in `R̂`.
pub fn mv_local_rhat(cs: &ChainSet, x: &[f64], dir: &Direction) -> Result<LocalRhat> {
    let d = cs.dim();
    if x.len() != d || dir.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x.len() != d { x.len() } else { dir.dim() },
        });
    }
    let n = cs.num_iterations();
    let counts: Vec<u64> = (0..cs.num_chains())
        .map(|j| (0..n).filter(|&i| dir.admits(cs.draw(j, i), x)).count() as u64)
        .collect();
    Ok(crate::diagnostics::rhat_from_counts(&counts, n as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvRInfinity {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub direction: Direction,
    pub disjoint_supports: bool,
}

/// Per-coordinate pooled order statistics, ascending.
struct SortedMargins {
    asc: Vec<Vec<f64>>,
    stride: usize,
}

impl SortedMargins {
    fn new(cs: &ChainSet, grid: &MvGrid) -> Self {
        let d = cs.dim();
        let total = cs.total_draws();
        let asc: Vec<Vec<f64>> = (0..d)
            .map(|p| {
                let mut v: Vec<f64> = cs.as_flat().iter().skip(p).step_by(d).copied().collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let k = grid.points_per_coordinate(total, d);
        let stride = total.div_ceil(k);
        Self { asc, stride }
    }

    /// Grid values for coordinate `p`, ordered from least to most inclusive:
    /// ascending order statistics for `≤`, descending for `≥`, taken at
    /// positions `0, s, 2s, ...` of that ordering.
    fn axis(&self, p: usize, ge: bool) -> Vec<f64> {
        let v = &self.asc[p];
        let total = v.len();
        (0..total)
            .step_by(self.stride)
            .map(|i| if ge { v[total - 1 - i] } else { v[i] })
            .collect()
    }
}

fn evaluate_direction(cs: &ChainSet, margins: &SortedMargins, dir: &Direction) -> Result<MvRInfinity> {
    let d = cs.dim();
    let m = cs.num_chains();
    let n = cs.num_iterations();
    let axes: Vec<Vec<f64>> = (0..d).map(|p| margins.axis(p, dir.ge[p])).collect();
    let lens: Vec<usize> = axes.iter().map(Vec::len).collect();
    let cells: usize = lens.iter().product();
    let mut strides = vec![1usize; d];
    for p in (0..d.saturating_sub(1)).rev() {
        strides[p] = strides[p + 1] * lens[p + 1];
    }

    // hist[j][cell]: draws of chain j whose first admitting grid index is `cell`
    let mut hist = vec![0u32; m * cells];
    for j in 0..m {
        'draws: for i in 0..n {
            let draw = cs.draw(j, i);
            let mut cell = 0;
            for p in 0..d {
                let v = draw[p];
                let b = if dir.ge[p] {
                    axes[p].partition_point(|&g| g > v)
                } else {
                    axes[p].partition_point(|&g| g < v)
                };
                if b == lens[p] {
                    continue 'draws;
                }
                cell += b * strides[p];
            }
            hist[j * cells + cell] += 1;
        }
    }
    // cumulative sums along each axis turn bucket counts into orthant counts
    for p in 0..d {
        let (st, len) = (strides[p], lens[p]);
        for h in hist.chunks_exact_mut(cells) {
            for block in h.chunks_exact_mut(st * len) {
                for k in 1..len {
                    let (done, rest) = block.split_at_mut(k * st);
                    for (dst, src) in rest[..st].iter_mut().zip(&done[(k - 1) * st..]) {
                        *dst += *src;
                    }
                }
            }
        }
    }

    let mut s1 = vec![0u64; cells];
    let mut s2 = vec![0u64; cells];
    for h in hist.chunks_exact(cells) {
        for ((a, b), &v) in s1.iter_mut().zip(s2.iter_mut()).zip(h) {
            let v = v as u64;
            *a += v;
            *b += v * v;
        }
    }
    // compare between/within ratios exactly, first maximum wins
    let (mw, nw) = (m as u128, n as u128);
    let c = if (mw * nw).checked_mul(mw * nw).is_some_and(|v| v < 1 << 63) {
        let (m64, n64) = (m as u64, n as u64);
        first_max(cells, |c| (m64 * s2[c] - s1[c] * s1[c], m64 * (n64 * s1[c] - s2[c])))
    } else {
        // beyond exact u64 range: rank by the rounded ratio
        let value = |c: usize| kernel_from_sums(mw, nw, s1[c] as u128, s2[c] as u128).value();
        (1..cells).fold(0, |best, c| if value(c) > value(best) { c } else { best })
    };
    let r = kernel_from_sums(mw, nw, s1[c] as u128, s2[c] as u128);
    let argmax = (0..d).map(|p| axes[p][(c / strides[p]) % lens[p]]).collect();
    Ok(MvRInfinity {
        value: r.value(),
        argmax,
        direction: dir.clone(),
        disjoint_supports: r.is_disjoint(),
    })
}

/// Index of the first largest `between / within`, with `within = 0` and
/// `between > 0` ranking above every finite ratio.
fn first_max<F: Fn(usize) -> (u64, u64)>(cells: usize, ratio: F) -> usize {
    let greater = |(b1, w1): (u64, u64), (b2, w2): (u64, u64)| {
        if b1 == 0 {
            false
        } else if b2 == 0 {
            true
        } else if w1 == 0 {
            w2 != 0
        } else if w2 == 0 {
            false
        } else {
            b1 as u128 * w2 as u128 > b2 as u128 * w1 as u128
        }
    };
    let mut best_cell = 0;
    let mut best = ratio(0);
    for cell in 1..cells {
        let r = ratio(cell);
        if greater(r, best) {
            best = r;
            best_cell = cell;
        }
    }
    best_cell
}

/// `R̂∞` for one direction on the budgeted order-statistic grid.
///
/// For `d ≥ 2` the grid is a subsample, so this is a lower bound of the
/// supremum over all sample points.
pub fn mv_rhat_infinity(cs: &ChainSet, dir: &Direction, grid: &MvGrid) -> Result<MvRInfinity> {
    if dir.dim() != cs.dim() {
        return Err(Error::DimensionMismatch {
            expected: cs.dim(),
            got: dir.dim(),
        });
    }
    let margins = SortedMargins::new(cs, grid);
    evaluate_direction(cs, &margins, dir)
}

/// Maximum of `R̂∞` over a direction set; ties go to the first direction
/// in enumeration order.
pub fn rhat_max_infinity(
    cs: &ChainSet,
    grid: &MvGrid,
    set: DirectionSet,
    cap: usize,
) -> Result<MvRInfinity> {
    let d = cs.dim();
    if d > cap {
        return Err(Error::TooManyDirections { d, cap });
    }
    let margins = SortedMargins::new(cs, grid);
    let results = set
        .directions(d)
        .par_iter()
        .map(|dir| evaluate_direction(cs, &margins, dir))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<MvRInfinity> = None;
    for r in results {
        if best.as_ref().is_none_or(|b| r.value > b.value) {
            best = Some(r);
        }
    }
    best.ok_or(Error::EmptyGrid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvConfig {
    pub alpha: f64,
    /// Fixed cutoffs; skips calibration.
    pub thresholds: Option<MvThresholds>,
    pub reps: usize,
    pub seed: u64,
    pub grid: MvGrid,
    pub directions: DirectionSet,
    pub cap: usize,
    pub calibration: CopulaCalibration,
}

/// How the copula cutoff is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaCalibration {
    /// Univariate null quantile at level `(α/2) / 2^(d-1)`.
    #[default]
    Bonferroni,
    /// Null quantile of `R̂∞^(max)` itself at level `α/2`, simulated on
    /// independent `d`-variate chains.
    Direct,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            thresholds: None,
            reps: 2000,
            seed: 1,
            grid: MvGrid::default(),
            directions: DirectionSet::Canonical,
            cap: DEFAULT_DIRECTION_CAP,
            calibration: CopulaCalibration::Bonferroni,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvReport {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub margin_rhat_inf: Vec<f64>,
    pub margin_threshold: f64,
    pub margin_verdict: Verdict,
    pub copula_rhat_max_inf: f64,
    pub copula_direction: String,
    pub copula_threshold: f64,
    pub copula_verdict: Verdict,
    pub verdict: Verdict,
}

/// Margins first at level `α/2` split over `d` coordinates, then the
/// dependence structure at level `α/2` through `R̂∞^(max)`.
pub fn two_step_diagnosis(cs: &ChainSet, config: &MvConfig) -> Result<MvReport> {
    let d = cs.dim();
    if d < 2 {
        return Err(Error::InvalidParameter("two-step diagnosis needs d >= 2".into()));
    }
    let (m, ess) = (cs.num_chains(), cs.total_draws() as f64);
    let limits = match config.thresholds {
        Some(t) => t,
        None => {
            let bonferroni = mv_thresholds(m, d, config.alpha, ess, config.reps, config.seed)?;
            match config.calibration {
                CopulaCalibration::Bonferroni => bonferroni,
                CopulaCalibration::Direct => MvThresholds {
                    margin: bonferroni.margin,
                    copula: copula_null_sample(m, d, ess, config.reps, config.seed, &config.grid, config.directions)?
                        .quantile(config.alpha / 2.0)?,
                },
            }
        }
    };
    let margin_rhat_inf = (0..d)
        .map(|p| Ok(rhat_infinity(&cs.coordinate(p), &Grid::AllPoints)?.value))
        .collect::<Result<Vec<f64>>>()?;
    let worst_margin = margin_rhat_inf.iter().copied().fold(1.0, f64::max);
    let margin_verdict = Verdict::from_statistic(worst_margin, limits.margin);
    let copula = rhat_max_infinity(cs, &config.grid, config.directions, config.cap)?;
    let copula_verdict = Verdict::from_statistic(copula.value, limits.copula);
    let verdict = if margin_verdict == Verdict::Converged && copula_verdict == Verdict::Converged {
        Verdict::Converged
    } else {
        Verdict::NotConverged
    };
    Ok(MvReport {
        m: cs.num_chains(),
        n: cs.num_iterations(),
        d,
        margin_rhat_inf,
        margin_threshold: limits.margin,
        margin_verdict,
        copula_rhat_max_inf: copula.value,
        copula_direction: copula.direction.label(),
        copula_threshold: limits.copula,
        copula_verdict,
        verdict,
    })
}

/// Null `R̂∞^(max)` values from `m` chains of independent uniform
/// coordinates with `n = round(target_ess / m)`.
pub fn copula_null_sample(
    m: usize,
    d: usize,
    target_ess: f64,
    reps: usize,
    seed: u64,
    grid: &MvGrid,
    set: DirectionSet,
) -> Result<NullSample> {
    let spec = ThresholdSpec {
        m,
        d,
        alpha: 0.05,
        target_ess,
        reps,
        seed,
    };
    spec.validate()?;
    let n = spec.chain_length();
    let values = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rs = replication_seed(seed, rep);
            let mut draws = Vec::with_capacity(m * n * d);
            for j in 0..m {
                let mut rng = chain_rng(rs, j);
                draws.extend((0..n * d).map(|_| open_unit(&mut rng)));
            }
            let cs = ChainSet::from_flat(m, n, d, draws)?;
            Ok(rhat_max_infinity(&cs, grid, set, DEFAULT_DIRECTION_CAP)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    NullSample::from_values(values)
}

/// `sqrt((d + 1) / 2)`: largest `R∞` between any two `d`-variate copulas.
pub fn frechet_r_infinity_bound(d: usize) -> f64 {
    ((d as f64 + 1.0) / 2.0).sqrt()
}

/// `sqrt(1 + (m - 1)(d - 1) / 2)`.
pub fn pairwise_bound(m: usize, d: usize) -> f64 {
    (1.0 + (m as f64 - 1.0) * (d as f64 - 1.0) / 2.0).sqrt()
}

/// Largest `R∞` between two negatively lower orthant dependent copulas.
pub fn nlod_bound(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("bound needs d >= 2, got {d}")));
    }
    let df = d as f64;
    // (1 - 1/d)^(-d), accurate for huge d
    let q_inv = (-df * (-1.0 / df).ln_1p()).exp();
    Ok((1.0 + 0.5 / (q_inv - 1.0)).sqrt())
}

/// `f_d(u)` from the diagonal of `(Π_d, M_d)`.
fn plod_objective(u: f64, d: i32) -> f64 {
    let ud = u.powi(d);
    (ud - u).powi(2) / (ud * (1.0 - ud) + u * (1.0 - u))
}

/// Derivative numerator of `plod_objective` up to positive factors.
fn plod_stationarity(u: f64, d: i32) -> f64 {
    let k = (d - 1) as f64;
    -2.0 * k * u.powi(2 * d - 1) + d as f64 * u.powi(2 * d - 2) - 2.0 * k * u.powi(d) + 3.0 * k * u.powi(d - 1) - 1.0
}

/// Largest `R∞` between two positively lower orthant dependent copulas.
pub fn plod_bound(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("bound needs d >= 2, got {d}")));
    }
    if d == 2 {
        return Ok((0.5 + 1.0 / 3f64.sqrt()).sqrt());
    }
    let d = i32::try_from(d).map_err(|_| Error::InvalidParameter("dimension too large".into()))?;
    // g < 0 near 0 and changes sign once inside (0, 1)
    const SCAN: usize = 10_000;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..SCAN {
        let u = i as f64 / SCAN as f64;
        if plod_stationarity(u, d) > 0.0 {
            hi = Some(u);
            break;
        }
        lo = u;
    }
    let mut hi = hi.ok_or(Error::NoConvergence("PLOD root scan", SCAN))?;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if plod_stationarity(mid, d) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    Ok((1.0 + plod_objective(u, d) / 2.0).sqrt())
}

/// Copula evaluators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Copula {
    /// Lower Fréchet–Hoeffding bound `max(Σu - d + 1, 0)`.
    Lower,
    /// Upper Fréchet–Hoeffding bound `min u`.
    Upper,
    Independence,
    /// Bivariate Gaussian copula.
    Gaussian { rho: f64 },
    /// Convex combination.
    Mixture(Vec<(f64, Copula)>),
}

impl Copula {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Copula::Lower => (u.iter().sum::<f64>() - u.len() as f64 + 1.0).max(0.0),
            Copula::Upper => u.iter().copied().fold(1.0, f64::min),
            Copula::Independence => u.iter().product(),
            Copula::Gaussian { rho } => {
                let h = std_normal_quantile(u[0]).unwrap_or(if u[0] <= 0.0 { f64::NEG_INFINITY } else { f64::INFINITY });
                let k = std_normal_quantile(u[1]).unwrap_or(if u[1] <= 0.0 { f64::NEG_INFINITY } else { f64::INFINITY });
                bivariate_normal_cdf(h, k, *rho)
            }
            Copula::Mixture(parts) => parts.iter().map(|(w, c)| w * c.eval(u)).sum(),
        }
    }

    fn is_fh_or_independence(&self) -> bool {
        matches!(self, Copula::Lower | Copula::Upper | Copula::Independence)
    }
}

const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * GL_NODES
        .iter()
        .zip(&GL_WEIGHTS)
        .map(|(&x, &w)| w * (f(c - h * x) + f(c + h * x)))
        .sum::<f64>()
}

fn adaptive_gl<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss_legendre(f, a, mid);
    let right = gauss_legendre(f, mid, b);
    if depth == 0 || (left + right - whole).abs() <= tol {
        left + right
    } else {
        adaptive_gl(f, a, mid, left, tol / 2.0, depth - 1) + adaptive_gl(f, mid, b, right, tol / 2.0, depth - 1)
    }
}

/// `P(X ≤ h, Y ≤ k)` for standard bivariate normal with correlation `rho`.
///
/// `Φ(h)Φ(k) + (1/2π) ∫_0^{asin ρ} exp(-(h² - 2hk sin t + k²) / (2 cos² t)) dt`,
/// integrated by adaptive Gauss–Legendre.
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return std_normal_cdf(k);
    }
    if k == f64::INFINITY {
        return std_normal_cdf(h);
    }
    let base = std_normal_cdf(h) * std_normal_cdf(k);
    let top = rho.clamp(-1.0, 1.0).asin();
    if top == 0.0 {
        return base;
    }
    let integrand = |t: f64| {
        let (s, c) = t.sin_cos();
        (-(h * h - 2.0 * h * k * s + k * k) / (2.0 * c * c)).exp()
    };
    let whole = gauss_legendre(&integrand, 0.0, top);
    let integral = adaptive_gl(&integrand, 0.0, top, whole, 1e-13, 30);
    (base + integral / (2.0 * PI)).clamp(0.0, 1.0)
}

pub const COPULA_EPS: f64 = 1e-6;

/// Population `R∞` between two copulas.
///
/// Maximum over a `grid_n^d` product grid on `[ε, 1-ε]^d`; for pairs drawn
/// from the Fréchet–Hoeffding bounds and independence, also golden-section
/// along the diagonal, where those pairs attain their maximum.
pub fn copula_population_r_infinity(c1: &Copula, c2: &Copula, d: usize, grid_n: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if (matches!(c1, Copula::Gaussian { .. }) || matches!(c2, Copula::Gaussian { .. })) && d != 2 {
        return Err(Error::InvalidParameter("Gaussian copula is bivariate only".into()));
    }
    if grid_n < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points per axis".into()));
    }
    let cells = grid_n
        .checked_pow(d as u32)
        .filter(|&c| c <= 50_000_000)
        .ok_or_else(|| Error::InvalidParameter(format!("grid {grid_n}^{d} too large")))?;
    let axis: Vec<f64> = (0..grid_n)
        .map(|i| COPULA_EPS + (1.0 - 2.0 * COPULA_EPS) * i as f64 / (grid_n - 1) as f64)
        .collect();
    let r_at = |u: &[f64]| rhat_from_cdfs(&[c1.eval(u), c2.eval(u)]).value();

    let grid_max = (0..cells)
        .into_par_iter()
        .map(|c| {
            let mut u = Vec::with_capacity(d);
            let mut rest = c;
            for _ in 0..d {
                u.push(axis[rest % grid_n]);
                rest /= grid_n;
            }
            r_at(&u)
        })
        .reduce(|| 1.0, f64::max);

    let mut best = grid_max;
    if c1.is_fh_or_independence() && c2.is_fh_or_independence() {
        let (_, v) = golden_max(|t| r_at(&vec![t; d]), COPULA_EPS, 1.0 - COPULA_EPS, 1e-12);
        best = best.max(v);
    }
    Ok(best)
}

/// `d,frechet,plod,nlod` rows.
pub fn bounds_csv(ds: &[usize]) -> Result<String> {
    let mut out = String::from("d,frechet,plod,nlod\n");
    for &d in ds {
        out.push_str(&format!(
            "{d},{},{},{}\n",
            frechet_r_infinity_bound(d),
            plod_bound(d)?,
            nlod_bound(d)?
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{bivariate_correlation, generate_mvn};
    use crate::diagnostics::local_rhat;

    fn small_bivariate() -> ChainSet {
        ChainSet::from_draws(vec![
            vec![vec![0.1, 2.0], vec![1.5, -0.3], vec![0.7, 0.9]],
            vec![vec![1.1, 0.2], vec![-0.4, 1.8], vec![0.3, 0.4]],
        ])
        .unwrap()
    }

    #[test]
    fn direction_sets() {
        let c = DirectionSet::Canonical.directions(3);
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|dir| !dir.ge[0]));
        assert_eq!(DirectionSet::Full.directions(3).len(), 8);
        assert_eq!(Direction::from_code(0b10, 2).label(), "<=,>=");
    }

    #[test]
    fn reduces_to_univariate_for_d1() {
        let cs = ChainSet::from_chains(vec![vec![0.1, 0.5, 0.9, 0.3], vec![0.4, 0.2, 0.8, 0.6]]).unwrap();
        for x in [0.0, 0.25, 0.5, 0.85, 1.0] {
            assert_eq!(mv_local_rhat(&cs, &[x], &Direction::all_le(1)).unwrap(), local_rhat(&cs, x).unwrap());
        }
        let r = mv_rhat_infinity(&cs, &Direction::all_le(1), &MvGrid::default()).unwrap();
        assert_eq!(r.value, rhat_infinity(&cs, &Grid::AllPoints).unwrap().value);
    }

    #[test]
    fn hand_sized_bivariate_matches_brute_force() {
        let cs = small_bivariate();
        for dir in DirectionSet::Full.directions(2) {
            for x in [[0.5, 0.5], [1.2, 1.0], [0.0, 0.3], [2.0, -1.0]] {
                let counts: Vec<f64> = (0..2)
                    .map(|j| (0..3).filter(|&i| dir.admits(cs.draw(j, i), &x)).count() as f64 / 3.0)
                    .collect();
                let want = rhat_from_cdfs(&counts);
                let got = mv_local_rhat(&cs, &x, &dir).unwrap();
                match (want, got) {
                    (LocalRhat::Finite(a), LocalRhat::Finite(b)) => assert!((a - b).abs() < 1e-12),
                    _ => assert_eq!(want, got),
                }
            }
        }
    }

    #[test]
    fn grid_evaluation_matches_pointwise() {
        let cs = generate_mvn(&[bivariate_correlation(0.0), bivariate_correlation(0.6), bivariate_correlation(-0.3)], 30, 5).unwrap();
        let grid = MvGrid::default();
        for dir in DirectionSet::Full.directions(2) {
            let fast = mv_rhat_infinity(&cs, &dir, &grid).unwrap();
            // brute force over every pair of pooled values
            let xs: Vec<f64> = (0..cs.total_draws()).map(|k| cs.as_flat()[2 * k]).collect();
            let ys: Vec<f64> = (0..cs.total_draws()).map(|k| cs.as_flat()[2 * k + 1]).collect();
            let mut best = 1.0f64;
            for &x in &xs {
                for &y in &ys {
                    best = best.max(mv_local_rhat(&cs, &[x, y], &dir).unwrap().value());
                }
            }
            assert_eq!(fast.value, best);
            assert_eq!(mv_local_rhat(&cs, &fast.argmax, &dir).unwrap().value(), fast.value);
        }
    }

    #[test]
    fn identical_chains_give_one() {
        let cs = ChainSet::from_draws(vec![
            vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, 1.5]];
            3
        ])
        .unwrap();
        let r = rhat_max_infinity(&cs, &MvGrid::default(), DirectionSet::Full, 12).unwrap();
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn direction_cap() {
        let cs = ChainSet::from_flat(2, 1, 13, vec![0.0; 26]).unwrap();
        assert!(matches!(
            rhat_max_infinity(&cs, &MvGrid::default(), DirectionSet::Canonical, 12),
            Err(Error::TooManyDirections { d: 13, cap: 12 })
        ));
    }

    #[test]
    fn budget_rounding() {
        let g = MvGrid::default();
        assert_eq!(g.points_per_coordinate(10_000_000, 2), 1000);
        assert_eq!(g.points_per_coordinate(10_000_000, 3), 100);
        assert_eq!(g.points_per_coordinate(10_000_000, 6), 10);
        assert_eq!(g.points_per_coordinate(400, 2), 400);
    }

    #[test]
    fn closed_form_bounds() {
        assert!((frechet_r_infinity_bound(2) - 1.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(frechet_r_infinity_bound(1), 1.0);
        for d in 1..10 {
            assert_eq!(pairwise_bound(2, d), frechet_r_infinity_bound(d));
        }
        assert!((plod_bound(2).unwrap() - 1.038).abs() < 5e-4);
        assert!((nlod_bound(2).unwrap() - (7.0f64 / 6.0).sqrt()).abs() < 1e-12);
        let limit = (1.0 + 1.0 / (2.0 * (std::f64::consts::E - 1.0))).sqrt();
        assert!((nlod_bound(1_000_000).unwrap() - limit).abs() < 1e-4);
    }

    #[test]
    fn plod_root_maximizes_objective() {
        for d in 2..8 {
            let (_, f) = golden_max(|u| plod_objective(u, d), 1e-9, 1.0 - 1e-9, 1e-13);
            let want = (1.0 + f / 2.0).sqrt();
            assert!((plod_bound(d as usize).unwrap() - want).abs() < 1e-10, "d={d}");
        }
    }

    #[test]
    fn bivariate_normal_identities() {
        for rho in [-0.95, -0.5, 0.0, 0.3, 0.9, 0.999] {
            let want = 0.25 + f64::asin(rho) / (2.0 * PI);
            assert!((bivariate_normal_cdf(0.0, 0.0, rho) - want).abs() < 1e-12);
        }
        // independence and symmetry
        assert!((bivariate_normal_cdf(0.7, -0.2, 0.0) - std_normal_cdf(0.7) * std_normal_cdf(-0.2)).abs() < 1e-15);
        let a = bivariate_normal_cdf(0.4, 1.3, 0.6);
        let b = bivariate_normal_cdf(1.3, 0.4, 0.6);
        assert!((a - b).abs() < 1e-14);
        // Fréchet limits as rho -> +-1
        assert!((bivariate_normal_cdf(0.5, 1.0, 0.999_999) - std_normal_cdf(0.5)).abs() < 1e-3);
        assert!(bivariate_normal_cdf(-0.5, -0.5, -0.999_999) < 1e-3);
    }

    #[test]
    fn copula_bound_values() {
        let v = copula_population_r_infinity(&Copula::Lower, &Copula::Upper, 2, 201).unwrap();
        assert!((v - 1.5f64.sqrt()).abs() < 1e-6);
        let v = copula_population_r_infinity(&Copula::Independence, &Copula::Upper, 2, 201).unwrap();
        assert!((v - plod_bound(2).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn direct_null_dominates_single_direction() {
        let grid = MvGrid::default();
        let a = copula_null_sample(2, 2, 40.0, 100, 3, &grid, DirectionSet::Canonical).unwrap();
        let b = copula_null_sample(2, 2, 40.0, 100, 3, &grid, DirectionSet::Canonical).unwrap();
        assert_eq!(a, b);
        let one = copula_null_sample(2, 2, 40.0, 100, 3, &grid, DirectionSet::Full).unwrap();
        // the full set contains the canonical one
        for (x, y) in a.values().iter().zip(one.values()) {
            assert!(y >= x);
        }
    }

    #[test]
    fn nlod_matches_lower_vs_independence() {
        for (d, g) in [(2, 201), (3, 61), (5, 15)] {
            let v = copula_population_r_infinity(&Copula::Independence, &Copula::Lower, d, g).unwrap();
            assert!((v - nlod_bound(d).unwrap()).abs() < 1e-6, "d={d}: {v}");
        }
    }

    #[test]
    fn mixtures_respect_frechet_bound() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(17);
        for _ in 0..50 {
            let d = rng.random_range(2..=3);
            let mut mix = || {
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                let mut parts = vec![(a, Copula::Independence), (b, Copula::Upper)];
                if d == 2 {
                    parts.push((rng.random::<f64>(), Copula::Lower));
                }
                let total: f64 = parts.iter().map(|p| p.0).sum();
                Copula::Mixture(parts.into_iter().map(|(w, c)| (w / total, c)).collect())
            };
            let (c1, c2) = (mix(), mix());
            let v = copula_population_r_infinity(&c1, &c2, d, 41).unwrap();
            assert!(v <= frechet_r_infinity_bound(d) + 1e-6);
        }
    }

    #[test]
    fn gaussian_copula_between_bounds() {
        let g = Copula::Gaussian { rho: 0.9 };
        let u = [0.3, 0.6];
        let v = g.eval(&u);
        assert!(v >= Copula::Independence.eval(&u) && v <= Copula::Upper.eval(&u));
        let r = copula_population_r_infinity(&Copula::Independence, &g, 2, 101).unwrap();
        assert!(r > 1.0 && r < plod_bound(2).unwrap());
    }
}
