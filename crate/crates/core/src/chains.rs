//! Multi-chain MCMC output: the `ChainSet` container, CSV ingestion and
//! emission, and the seeded generators behind every synthetic scenario.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{chain_rng, open_unit};
use crate::statdist::{std_normal_quantile, DistributionSpec};

/// Draws from `m` chains of `n` iterations in `d` dimensions.
///
/// Stored chain-major: draw `(j, i, p)` lives at `(j * n + i) * d + p`.
/// Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSet {
    m: usize,
    n: usize,
    d: usize,
    draws: Vec<f64>,
    labels: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Header `chain_1,...,chain_m`, one row per iteration, d = 1.
    Wide,
    /// Header `chain,iteration,p_1,...,p_d`, 1-based chain and iteration.
    Long,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" => Ok(Layout::Wide),
            "long" => Ok(Layout::Long),
            other => Err(Error::Layout(format!("unknown layout {other:?}"))),
        }
    }
}

impl ChainSet {
    /// Builds from flat chain-major storage.
    pub fn from_flat(m: usize, n: usize, d: usize, draws: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::TooFewChains(m));
        }
        if n == 0 {
            return Err(Error::TooShort(0, 1));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if draws.len() != m * n * d {
            return Err(Error::DimensionMismatch {
                expected: m * n * d,
                got: draws.len(),
            });
        }
        if let Some(k) = draws.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                chain: k / (n * d) + 1,
                iteration: (k / d) % n + 1,
            });
        }
        Ok(Self {
            m,
            n,
            d,
            draws,
            labels: None,
        })
    }

    /// Univariate chains, one `Vec` per chain.
    pub fn from_chains(chains: Vec<Vec<f64>>) -> Result<Self> {
        let m = chains.len();
        if m < 2 {
            return Err(Error::TooFewChains(m));
        }
        let n = chains[0].len();
        if let Some((j, c)) = chains.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::RaggedChains {
                chain: j + 1,
                len: c.len(),
                expected: n,
            });
        }
        Self::from_flat(m, n, 1, chains.into_iter().flatten().collect())
    }

    /// Multivariate chains: `chains[j][i]` is a length-`d` draw.
    pub fn from_draws(chains: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let m = chains.len();
        if m < 2 {
            return Err(Error::TooFewChains(m));
        }
        let n = chains[0].len();
        let d = chains[0].first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(m * n * d);
        for (j, c) in chains.into_iter().enumerate() {
            if c.len() != n {
                return Err(Error::RaggedChains {
                    chain: j + 1,
                    len: c.len(),
                    expected: n,
                });
            }
            for draw in c {
                if draw.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: draw.len(),
                    });
                }
                flat.extend(draw);
            }
        }
        Self::from_flat(m, n, d, flat)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn num_chains(&self) -> usize {
        self.m
    }
    pub fn num_iterations(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn total_draws(&self) -> usize {
        self.m * self.n
    }
    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
    pub fn as_flat(&self) -> &[f64] {
        &self.draws
    }

    #[inline]
    pub fn get(&self, chain: usize, iter: usize, coord: usize) -> f64 {
        self.draws[(chain * self.n + iter) * self.d + coord]
    }

    /// The `d` coordinates of one draw.
    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let start = (chain * self.n + iter) * self.d;
        &self.draws[start..start + self.d]
    }

    /// Chain `j` as a contiguous slice; only meaningful for d = 1.
    pub fn chain(&self, j: usize) -> &[f64] {
        let len = self.n * self.d;
        &self.draws[j * len..(j + 1) * len]
    }

    /// Chains as slices, requiring d = 1.
    pub fn univariate_chains(&self) -> Result<Vec<&[f64]>> {
        self.require_univariate()?;
        Ok((0..self.m).map(|j| self.chain(j)).collect())
    }

    pub fn require_univariate(&self) -> Result<()> {
        if self.d == 1 {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: 1,
                got: self.d,
            })
        }
    }

    /// Univariate `ChainSet` holding coordinate `p` of every draw.
    pub fn coordinate(&self, p: usize) -> ChainSet {
        assert!(p < self.d, "coordinate {p} out of range");
        let draws = self.draws.iter().skip(p).step_by(self.d).copied().collect();
        ChainSet {
            m: self.m,
            n: self.n,
            d: 1,
            draws,
            labels: self.labels.as_ref().map(|l| vec![l[p].clone()]),
        }
    }

    /// Applies `f(coord, value)` to every draw.
    pub fn map_values<F: Fn(usize, f64) -> f64>(&self, f: F) -> Result<ChainSet> {
        let d = self.d;
        let draws = self
            .draws
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % d, v))
            .collect();
        let mut out = ChainSet::from_flat(self.m, self.n, d, draws)?;
        out.labels = self.labels.clone();
        Ok(out)
    }

    /// Same draws with chains reordered: output chain `k` is input chain `order[k]`.
    pub fn permute_chains(&self, order: &[usize]) -> Result<ChainSet> {
        if order.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: order.len(),
            });
        }
        let mut draws = Vec::with_capacity(self.draws.len());
        for &j in order {
            draws.extend_from_slice(self.chain_block(j));
        }
        ChainSet::from_flat(self.m, self.n, self.d, draws)
    }

    fn chain_block(&self, j: usize) -> &[f64] {
        let len = self.n * self.d;
        &self.draws[j * len..(j + 1) * len]
    }

    /// Halves every chain: `2m` chains of `floor(n / 2)` draws, first halves
    /// then second halves chain by chain. An odd final draw is dropped.
    pub fn split(&self) -> Result<ChainSet> {
        if self.n < 4 {
            return Err(Error::TooShort(self.n, 4));
        }
        let half = self.n / 2;
        let mut draws = Vec::with_capacity(2 * self.m * half * self.d);
        for j in 0..self.m {
            let block = self.chain_block(j);
            draws.extend_from_slice(&block[..half * self.d]);
            draws.extend_from_slice(&block[half * self.d..2 * half * self.d]);
        }
        let mut out = ChainSet::from_flat(2 * self.m, half, self.d, draws)?;
        out.labels = self.labels.clone();
        Ok(out)
    }

    pub fn to_csv(&self, layout: Layout) -> Result<String> {
        let mut out = String::new();
        match layout {
            Layout::Wide => {
                self.require_univariate()?;
                let header: Vec<String> = (1..=self.m).map(|j| format!("chain_{j}")).collect();
                out.push_str(&header.join(","));
                out.push('\n');
                for i in 0..self.n {
                    for j in 0..self.m {
                        if j > 0 {
                            out.push(',');
                        }
                        let _ = write!(out, "{}", self.get(j, i, 0));
                    }
                    out.push('\n');
                }
            }
            Layout::Long => {
                out.push_str("chain,iteration");
                for p in 1..=self.d {
                    let _ = write!(out, ",p_{p}");
                }
                out.push('\n');
                for j in 0..self.m {
                    for i in 0..self.n {
                        let _ = write!(out, "{},{}", j + 1, i + 1);
                        for &v in self.draw(j, i) {
                            let _ = write!(out, ",{v}");
                        }
                        out.push('\n');
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, layout: Layout) -> Result<()> {
        let text = self.to_csv(layout)?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads a chain file in the given layout.
pub fn load_chains(path: &Path, layout: Layout) -> Result<ChainSet> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_chains(&text, layout)
}

fn parse_cell(s: &str, row: usize, column: usize) -> Result<f64> {
    let t = s.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            row,
            column,
            value: t.to_string(),
        }),
    }
}

/// Parses CSV text; rows and columns in errors are 1-based, header = row 1.
pub fn parse_chains(text: &str, layout: Layout) -> Result<ChainSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    match layout {
        Layout::Wide => {
            for (k, h) in headers.iter().enumerate() {
                if *h != format!("chain_{}", k + 1) {
                    return Err(Error::Layout(format!(
                        "wide header column {} should be chain_{}, found {h:?}",
                        k + 1,
                        k + 1
                    )));
                }
            }
            let m = headers.len();
            if m < 2 {
                return Err(Error::TooFewChains(m));
            }
            let mut chains: Vec<Vec<f64>> = vec![Vec::new(); m];
            for (r, rec) in reader.records().enumerate() {
                let rec = rec?;
                let row = r + 2;
                for (c, cell) in rec.iter().enumerate() {
                    if cell.is_empty() {
                        continue;
                    }
                    chains[c].push(parse_cell(cell, row, c + 1)?);
                }
            }
            ChainSet::from_chains(chains)
        }
        Layout::Long => {
            if headers.len() < 3 || headers[0] != "chain" || headers[1] != "iteration" {
                return Err(Error::Layout(
                    "long header must start with chain,iteration,p_1".into(),
                ));
            }
            for (k, h) in headers[2..].iter().enumerate() {
                if *h != format!("p_{}", k + 1) {
                    return Err(Error::Layout(format!(
                        "long header column {} should be p_{}, found {h:?}",
                        k + 3,
                        k + 1
                    )));
                }
            }
            let d = headers.len() - 2;
            let mut chains: Vec<Vec<f64>> = Vec::new();
            for (r, rec) in reader.records().enumerate() {
                let rec = rec?;
                let row = r + 2;
                let chain_cell = rec.get(0).unwrap_or("");
                let chain: usize = match chain_cell.parse() {
                    Ok(c) if c >= 1 => c,
                    _ => {
                        return Err(Error::NonNumeric {
                            row,
                            column: 1,
                            value: chain_cell.to_string(),
                        })
                    }
                };
                let it_cell = rec.get(1).unwrap_or("");
                if it_cell.parse::<usize>().is_err() {
                    return Err(Error::NonNumeric {
                        row,
                        column: 2,
                        value: it_cell.to_string(),
                    });
                }
                if rec.len() != d + 2 {
                    return Err(Error::DimensionMismatch {
                        expected: d + 2,
                        got: rec.len(),
                    });
                }
                if chains.len() < chain {
                    chains.resize(chain, Vec::new());
                }
                for p in 0..d {
                    let v = parse_cell(&rec[p + 2], row, p + 3)?;
                    chains[chain - 1].push(v);
                }
            }
            let m = chains.len();
            if m < 2 {
                return Err(Error::TooFewChains(m));
            }
            let n = chains[0].len() / d;
            for (j, c) in chains.iter().enumerate() {
                if c.len() != n * d {
                    return Err(Error::RaggedChains {
                        chain: j + 1,
                        len: c.len() / d,
                        expected: n,
                    });
                }
            }
            ChainSet::from_flat(m, n, d, chains.into_iter().flatten().collect())
        }
    }
}

/// `n` i.i.d. draws per chain, chain `j` from `specs[j]`.
pub fn generate_iid(specs: &[DistributionSpec], n: usize, seed: u64) -> Result<ChainSet> {
    for s in specs {
        s.validate()?;
    }
    let mut draws = Vec::with_capacity(specs.len() * n);
    for (j, spec) in specs.iter().enumerate() {
        let mut rng = chain_rng(seed, j);
        draws.extend((0..n).map(|_| spec.sample(&mut rng)));
    }
    ChainSet::from_flat(specs.len(), n, 1, draws)
}

/// Gaussian AR(1) chains `x[i+1] = rho x[i] + N(0, sigma_j^2)`, started from
/// the stationary law `N(0, sigma_j^2 / (1 - rho^2))`.
pub fn generate_ar1(rho: f64, sigmas: &[f64], n: usize, seed: u64) -> Result<ChainSet> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("AR(1) requires rho in (0, 1), got {rho}")));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidParameter(format!("innovation scale must be positive, got {s}")));
    }
    let stationary = (1.0 - rho * rho).sqrt();
    let mut draws = Vec::with_capacity(sigmas.len() * n);
    for (j, &sigma) in sigmas.iter().enumerate() {
        let mut rng = chain_rng(seed, j);
        let mut z = || std_normal_quantile(open_unit(&mut rng)).expect("open interval");
        let mut x = sigma / stationary * z();
        for _ in 0..n {
            draws.push(x);
            x = rho * x + sigma * z();
        }
    }
    ChainSet::from_flat(sigmas.len(), n, 1, draws)
}

const UNIT_DIAG_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

/// Lower factor `L` with `L L^T = cov`; validated unit-diagonal PSD input.
/// Cholesky first, eigenvalue clipping for semi-definite matrices.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if cov.ncols() != d || d == 0 {
        return Err(Error::InvalidParameter("covariance must be square".into()));
    }
    for i in 0..d {
        if (cov[(i, i)] - 1.0).abs() > UNIT_DIAG_TOL {
            return Err(Error::InvalidParameter(format!(
                "covariance diagonal must be 1, found {} at {i}",
                cov[(i, i)]
            )));
        }
        for k in 0..i {
            if (cov[(i, k)] - cov[(k, i)]).abs() > UNIT_DIAG_TOL || !cov[(i, k)].is_finite() {
                return Err(Error::InvalidParameter("covariance must be symmetric".into()));
            }
        }
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::InvalidParameter(format!(
            "covariance is not positive semi-definite (eigenvalue {min})"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// `n` i.i.d. draws per chain from `N(0, covs[j])`.
pub fn generate_mvn(covs: &[DMatrix<f64>], n: usize, seed: u64) -> Result<ChainSet> {
    let d = covs.first().map_or(0, DMatrix::nrows);
    let factors = covs
        .iter()
        .map(|c| {
            if c.nrows() != d {
                Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.nrows(),
                })
            } else {
                covariance_factor(c)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut draws = Vec::with_capacity(covs.len() * n * d);
    for (j, l) in factors.iter().enumerate() {
        let mut rng = chain_rng(seed, j);
        for _ in 0..n {
            let z = DVector::from_fn(d, |_, _| {
                std_normal_quantile(open_unit(&mut rng)).expect("open interval")
            });
            draws.extend((l * z).iter());
        }
    }
    ChainSet::from_flat(covs.len(), n, d, draws)
}

/// `D^{-1/2} S D^{-1/2}` with `S ~ Wishart(d, I_d)` and `D = diag(S)`.
pub fn random_unitdiag_covariance(d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("dimension must be >= 2, got {d}")));
    }
    let mut rng = chain_rng(seed, 0);
    let mut s = DMatrix::<f64>::zeros(d, d);
    for _ in 0..d {
        let z = DVector::from_fn(d, |_, _| {
            std_normal_quantile(open_unit(&mut rng)).expect("open interval")
        });
        s += &z * z.transpose();
    }
    let inv_sd: Vec<f64> = (0..d).map(|i| 1.0 / s[(i, i)].sqrt()).collect();
    Ok(DMatrix::from_fn(d, d, |i, k| {
        if i == k {
            1.0
        } else {
            s[(i, k)] * (inv_sd[i] * inv_sd[k])
        }
    }))
}

/// Unit-diagonal 2x2 matrix with off-diagonal `rho`.
pub fn bivariate_correlation(rho: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
}
