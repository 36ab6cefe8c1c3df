//! Distribution toolkit: CDFs, quantiles and inverse-transform samplers for
//! every family used by the generators and population oracles, plus the
//! normal and chi-square special functions needed by the thresholds.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::open_unit;

/// Below this |xi| the GPD uses its exponential limit plus a first-order
/// correction.
pub const GPD_XI_ZERO: f64 = 1e-12;

/// Parametric family with its parameters.
///
/// Serialized as `{"family": "...", "params": {...}}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum DistributionSpec {
    Uniform { a: f64, b: f64 },
    Normal { mu: f64, sigma: f64 },
    Pareto { alpha: f64, eta: f64 },
    Gpd { mu: f64, sigma: f64, xi: f64 },
    Exponential { lambda: f64 },
    Laplace { mu: f64, b: f64 },
    Cauchy { mu: f64, s: f64 },
    ChiSquare { k: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

impl DistributionSpec {
    pub fn uniform(a: f64, b: f64) -> Self {
        Self::Uniform { a, b }
    }
    pub fn normal(mu: f64, sigma: f64) -> Self {
        Self::Normal { mu, sigma }
    }
    pub fn pareto(alpha: f64, eta: f64) -> Self {
        Self::Pareto { alpha, eta }
    }
    pub fn gpd(mu: f64, sigma: f64, xi: f64) -> Self {
        Self::Gpd { mu, sigma, xi }
    }
    pub fn exponential(lambda: f64) -> Self {
        Self::Exponential { lambda }
    }
    pub fn laplace(mu: f64, b: f64) -> Self {
        Self::Laplace { mu, b }
    }
    pub fn cauchy(mu: f64, s: f64) -> Self {
        Self::Cauchy { mu, s }
    }
    pub fn chi_square(k: f64) -> Self {
        Self::ChiSquare { k }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { a, b } => {
                finite("a", a)?;
                finite("b", b)?;
                if a < b {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("uniform requires a < b, got ({a}, {b})")))
                }
            }
            Self::Normal { mu, sigma } => finite("mu", mu).and(positive("sigma", sigma)),
            Self::Pareto { alpha, eta } => positive("alpha", alpha).and(positive("eta", eta)),
            Self::Gpd { mu, sigma, xi } => {
                finite("mu", mu)?;
                positive("sigma", sigma)?;
                finite("xi", xi)
            }
            Self::Exponential { lambda } => positive("lambda", lambda),
            Self::Laplace { mu, b } => finite("mu", mu).and(positive("b", b)),
            Self::Cauchy { mu, s } => finite("mu", mu).and(positive("s", s)),
            Self::ChiSquare { k } => {
                if k.is_finite() && k >= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("chi-square requires k >= 1, got {k}")))
                }
            }
        }
    }

    /// Lower and upper support endpoints (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Uniform { a, b } => (a, b),
            Self::Pareto { eta, .. } => (eta, f64::INFINITY),
            Self::Gpd { mu, sigma, xi } => {
                if xi < 0.0 {
                    (mu, mu - sigma / xi)
                } else {
                    (mu, f64::INFINITY)
                }
            }
            Self::Exponential { .. } | Self::ChiSquare { .. } => (0.0, f64::INFINITY),
            Self::Normal { .. } | Self::Laplace { .. } | Self::Cauchy { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Self::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Self::Normal { mu, sigma } => std_normal_cdf((x - mu) / sigma),
            Self::Pareto { alpha, eta } => {
                if x <= eta {
                    0.0
                } else {
                    -(-alpha * (x / eta).ln()).exp_m1()
                }
            }
            Self::Gpd { mu, sigma, xi } => gpd_cdf(mu, sigma, xi, x),
            Self::Exponential { lambda } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-lambda * x).exp_m1()
                }
            }
            Self::Laplace { mu, b } => {
                let z = (x - mu) / b;
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            Self::Cauchy { mu, s } => 0.5 + ((x - mu) / s).atan() / PI,
            Self::ChiSquare { k } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(0.5 * k, 0.5 * x)
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(match *self {
            Self::Uniform { a, b } => a + p * (b - a),
            Self::Normal { mu, sigma } => mu + sigma * std_normal_quantile(p)?,
            Self::Pareto { alpha, eta } => eta * (-(-p).ln_1p() / alpha).exp(),
            Self::Gpd { mu, sigma, xi } => gpd_quantile(mu, sigma, xi, p),
            Self::Exponential { lambda } => -(-p).ln_1p() / lambda,
            Self::Laplace { mu, b } => {
                if p < 0.5 {
                    mu + b * (2.0 * p).ln()
                } else {
                    mu - b * (2.0 * (1.0 - p)).ln()
                }
            }
            Self::Cauchy { mu, s } => mu + s * (PI * (p - 0.5)).tan(),
            Self::ChiSquare { k } => chi_square_quantile(k, p)?,
        })
    }

    /// Inverse-transform draw: `quantile(U)` with `U` uniform on (0, 1).
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open_unit(rng);
        // u is strictly inside (0, 1), so quantile cannot fail on a valid spec.
        self.quantile(u).expect("open-interval uniform")
    }
}

fn gpd_cdf(mu: f64, sigma: f64, xi: f64, x: f64) -> f64 {
    let z = (x - mu) / sigma;
    if z <= 0.0 {
        return 0.0;
    }
    if xi.abs() < GPD_XI_ZERO {
        // (1 + xi z)^(-1/xi) = exp(-z) (1 + xi z^2 / 2 + O(xi^2))
        return 1.0 - (-z).exp() * (1.0 + 0.5 * xi * z * z);
    }
    let t = 1.0 + xi * z;
    if t <= 0.0 {
        return 1.0;
    }
    -(-(xi * z).ln_1p() / xi).exp_m1()
}

fn gpd_quantile(mu: f64, sigma: f64, xi: f64, p: f64) -> f64 {
    // log survival, always negative
    let ls = (-p).ln_1p();
    if xi.abs() < GPD_XI_ZERO {
        mu + sigma * (-ls + 0.5 * xi * ls * ls)
    } else {
        mu + sigma * (-xi * ls).exp_m1() / xi
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation followed by
/// one Halley correction against `erfc`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley step; work with the smaller tail to keep relative accuracy.
    let e = if p < 0.5 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - 0.5 * erfc(x / SQRT_2)
    };
    let u = e / std_normal_pdf(x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Regularized lower incomplete gamma P(df/2, z/2), the chi-square CDF.
pub fn chi_square_cdf(df: f64, z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * df, 0.5 * z)
    }
}

/// Chi-square survival function.
pub fn chi_square_sf(df: f64, z: f64) -> f64 {
    if z <= 0.0 {
        1.0
    } else {
        gamma_ur(0.5 * df, 0.5 * z)
    }
}

fn chi_square_pdf(df: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let h = 0.5 * df;
    ((h - 1.0) * z.ln() - 0.5 * z - h * LN_2 - ln_gamma(h)).exp()
}

const CHI2_MAX_ITER: usize = 500;

/// Quantile of the chi-square distribution: the z with P(chi2_df <= z) = p.
///
/// Newton iterations on the regularized incomplete gamma function inside a
/// maintained bracket; a step leaving the bracket is replaced by bisection.
pub fn chi_square_quantile(df: f64, p: f64) -> Result<f64> {
    check_probability(p)?;
    if !(df.is_finite() && df >= 1.0) {
        return Err(Error::InvalidParameter(format!("chi-square df must be >= 1, got {df}")));
    }
    // Wilson-Hilferty start
    let c = 2.0 / (9.0 * df);
    let wh = df * (1.0 - c + std_normal_quantile(p)? * c.sqrt()).powi(3);
    let mut x = if wh > 0.0 { wh } else { 0.5 * df.min(1.0) * p };

    // residual in whichever tail keeps precision
    let upper = p > 0.5;
    let resid = |z: f64| -> f64 {
        if upper {
            (1.0 - p) - chi_square_sf(df, z)
        } else {
            chi_square_cdf(df, z) - p
        }
    };

    let mut lo = 0.0;
    let mut hi = x.max(1.0);
    while resid(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoConvergence("chi-square bracket", 0));
        }
    }
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }

    for _ in 0..CHI2_MAX_ITER {
        let r = resid(x);
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chi_square_pdf(df, x);
        let mut next = if dens > 0.0 { x - r / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
            || hi - lo <= 4.0 * f64::EPSILON * hi
        {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence("chi-square quantile", CHI2_MAX_ITER))
}
