//! Population `R(x)` and `R∞` for chains with known stationary laws, with
//! closed forms for the uniform-scale, Pareto-scale and Laplace/uniform
//! families and a generic quantile-grid maximizer for everything else.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{rhat_from_cdfs, LocalRhat};
use crate::error::{Error, Result};
use crate::statdist::DistributionSpec;

/// One stationary law per chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub chains: Vec<DistributionSpec>,
}

impl PopulationModel {
    pub fn new(chains: Vec<DistributionSpec>) -> Result<Self> {
        let model = Self { chains };
        model.validate()?;
        Ok(model)
    }

    /// `m - 1` copies of `common` followed by `odd`.
    pub fn one_odd_chain(common: DistributionSpec, odd: DistributionSpec, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::TooFewChains(m));
        }
        let mut chains = vec![common; m - 1];
        chains.push(odd);
        Self::new(chains)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains.len() < 2 {
            return Err(Error::TooFewChains(self.chains.len()));
        }
        self.chains.iter().try_for_each(DistributionSpec::validate)
    }

    pub fn m(&self) -> usize {
        self.chains.len()
    }

    fn cdfs(&self, x: f64) -> Vec<f64> {
        self.chains.iter().map(|s| s.cdf(x)).collect()
    }

    fn mixture_cdf(&self, x: f64) -> f64 {
        self.chains.iter().map(|s| s.cdf(x)).sum::<f64>() / self.m() as f64
    }

    /// Smallest `x` with mixture CDF `>= p`, by bisection between the
    /// extreme component quantiles.
    fn mixture_quantile(&self, p: f64) -> Result<f64> {
        let qs = self
            .chains
            .iter()
            .map(|s| s.quantile(p))
            .collect::<Result<Vec<f64>>>()?;
        let mut lo = qs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.mixture_cdf(lo) >= p {
            return Ok(lo);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.mixture_cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Which closed form, if any, describes this model.
    pub fn closed_form(&self) -> Option<ClosedForm> {
        let m = self.m();
        let first = self.chains[0];
        if self.chains.iter().all(|s| *s == first) {
            return Some(ClosedForm::Identical);
        }
        let odd = self.chains[m - 1];
        let common_ok = self.chains[..m - 1].iter().all(|s| *s == first);
        if common_ok {
            match (first, odd) {
                (DistributionSpec::Uniform { a, b }, DistributionSpec::Uniform { a: am, b: bm })
                    if a == -b && am == -bm && b <= bm =>
                {
                    return Some(ClosedForm::Uniform {
                        sigma: b,
                        sigma_m: bm,
                        m,
                    });
                }
                (
                    DistributionSpec::Pareto { alpha, eta },
                    DistributionSpec::Pareto {
                        alpha: alpha_m,
                        eta: eta_m,
                    },
                ) if alpha == alpha_m && eta <= eta_m => {
                    return Some(ClosedForm::Pareto { alpha, eta, eta_m, m });
                }
                _ => {}
            }
        }
        if m == 2 {
            let pair = |u: DistributionSpec, l: DistributionSpec| match (u, l) {
                (DistributionSpec::Uniform { a, b }, DistributionSpec::Laplace { mu, b: scale })
                    if a == mu - 2.0 * scale && b == mu + 2.0 * scale =>
                {
                    Some(ClosedForm::LaplaceUniform { mu, scale })
                }
                _ => None,
            };
            return pair(self.chains[0], self.chains[1]).or_else(|| pair(self.chains[1], self.chains[0]));
        }
        None
    }
}

/// Models with a known `R∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    Identical,
    /// `m - 1` chains `U(-σ, σ)` and one `U(-σ_m, σ_m)`, `σ ≤ σ_m`.
    Uniform { sigma: f64, sigma_m: f64, m: usize },
    /// `m - 1` chains `Pareto(α, η)` and one `Pareto(α, η_m)`, `η ≤ η_m`.
    Pareto { alpha: f64, eta: f64, eta_m: f64, m: usize },
    /// Two chains, `Laplace(μ, b)` and `U(μ - 2b, μ + 2b)`.
    LaplaceUniform { mu: f64, scale: f64 },
}

impl ClosedForm {
    pub fn r_infinity(&self) -> Result<PopulationRInfinity> {
        Ok(match *self {
            ClosedForm::Identical => PopulationRInfinity {
                value: 1.0,
                argmax_x: f64::NAN,
            },
            ClosedForm::Uniform { sigma, sigma_m, m } => PopulationRInfinity {
                value: uniform_r_infinity(sigma, sigma_m, m)?,
                argmax_x: -sigma,
            },
            ClosedForm::Pareto { alpha, eta, eta_m, m } => PopulationRInfinity {
                value: pareto_r_infinity(alpha, eta, eta_m, m)?,
                argmax_x: eta_m,
            },
            ClosedForm::LaplaceUniform { mu, scale } => PopulationRInfinity {
                value: laplace_uniform_r_infinity(),
                argmax_x: mu - 2.0 * scale,
            },
        })
    }
}

/// Population `R(x)`; `+inf` where the supports are disjoint.
pub fn population_local_r(model: &PopulationModel, x: f64) -> f64 {
    rhat_from_cdfs(&model.cdfs(x)).value()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Closed form when the model matches one, grid otherwise.
    Auto,
    Analytic,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRInfinity {
    pub value: f64,
    /// `NaN` when `R` is identically 1.
    pub argmax_x: f64,
}

pub const GRID_POINTS: usize = 10_000;
pub const GRID_TAIL: f64 = 1e-8;
pub const REFINE_TOL: f64 = 1e-10;

pub fn population_r_infinity(model: &PopulationModel, method: Method) -> Result<PopulationRInfinity> {
    model.validate()?;
    match method {
        Method::Analytic => model
            .closed_form()
            .ok_or_else(|| Error::InvalidParameter("model has no closed-form R-infinity".into()))?
            .r_infinity(),
        Method::Auto => match model.closed_form() {
            Some(cf) => cf.r_infinity(),
            None => grid_r_infinity(model),
        },
        Method::Grid => grid_r_infinity(model),
    }
}

/// Maximum over a grid equally spaced in mixture-CDF probability plus the
/// chains' support endpoints, refined by golden section around the best
/// grid point.
pub fn grid_r_infinity(model: &PopulationModel) -> Result<PopulationRInfinity> {
    let k = GRID_POINTS;
    let mut xs = Vec::with_capacity(k + 2 * model.m());
    for i in 0..k {
        let p = GRID_TAIL + (1.0 - 2.0 * GRID_TAIL) * i as f64 / (k - 1) as f64;
        xs.push(model.mixture_quantile(p)?);
    }
    // support endpoints: kinks of R, and the only points inside a support gap
    for spec in &model.chains {
        let (a, b) = spec.support();
        xs.extend([a, b].into_iter().filter(|v| v.is_finite()));
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let k = xs.len();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, &x) in xs.iter().enumerate() {
        match rhat_from_cdfs(&model.cdfs(x)) {
            LocalRhat::DisjointSupports => {
                return Err(Error::UnboundedRInfinity(format!("chain supports do not overlap at x = {x}")))
            }
            LocalRhat::Finite(r) => {
                if r > best.0 {
                    best = (r, i);
                }
            }
        }
    }
    let (grid_value, i) = best;
    if grid_value == 1.0 {
        return Ok(PopulationRInfinity {
            value: 1.0,
            argmax_x: xs[i],
        });
    }
    let lo = xs[i.saturating_sub(1)];
    let hi = xs[(i + 1).min(k - 1)];
    let (x_ref, v_ref) = golden_max(|x| population_local_r(model, x), lo, hi, REFINE_TOL);
    Ok(if v_ref >= grid_value {
        PopulationRInfinity {
            value: v_ref,
            argmax_x: x_ref,
        }
    } else {
        PopulationRInfinity {
            value: grid_value,
            argmax_x: xs[i],
        }
    })
}

/// Golden-section search for a maximum of `f` on `[a, b]`; returns the best
/// point seen, including the endpoints.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = {
        let (fa, fb) = (f(a), f(b));
        if fb > fa {
            (b, fb)
        } else {
            (a, fa)
        }
    };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..500 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v > best.1 {
                best = (x, v);
            }
        }
    }
    best
}

/// `R(x)` when `m - 1` chains share CDF value `f` and one has `fm`.
pub fn single_odd_chain_r(f: f64, fm: f64, m: usize) -> f64 {
    let mf = m as f64;
    let within = (mf - 1.0) * f * (1.0 - f) + fm * (1.0 - fm);
    if f == fm {
        return 1.0;
    }
    if within <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 + (mf - 1.0) * (f - fm).powi(2) / (mf * within)).sqrt()
}

fn check_scale_pair(name: &str, s: f64, s_m: f64) -> Result<()> {
    if !(s.is_finite() && s > 0.0 && s_m.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be positive and finite")));
    }
    if s > s_m {
        return Err(Error::InvalidParameter(format!(
            "{name} of the common chains ({s}) must not exceed the odd chain's ({s_m})"
        )));
    }
    Ok(())
}

/// `R∞` for `m - 1` chains `U(-σ, σ)` and one `U(-σ_m, σ_m)`.
pub fn uniform_r_infinity(sigma: f64, sigma_m: f64, m: usize) -> Result<f64> {
    check_scale_pair("sigma", sigma, sigma_m)?;
    if m < 2 {
        return Err(Error::TooFewChains(m));
    }
    let mf = m as f64;
    Ok((1.0 + (mf - 1.0) / mf * (1.0 - 2.0 / (1.0 + sigma_m / sigma))).sqrt())
}

/// Piecewise `R(x)` of the uniform-scale model.
pub fn uniform_r(x: f64, sigma: f64, sigma_m: f64, m: usize) -> Result<f64> {
    check_scale_pair("sigma", sigma, sigma_m)?;
    let mf = m as f64;
    let ax = x.abs();
    Ok(if ax >= sigma_m {
        1.0
    } else if ax >= sigma {
        (1.0 + (mf - 1.0) / mf * (1.0 - 2.0 / (1.0 + sigma_m / ax))).sqrt()
    } else if ax == 0.0 {
        1.0
    } else {
        let num = (1.0 / sigma - 1.0 / sigma_m).powi(2);
        let den = mf * mf / ((mf - 1.0) * x * x) - mf * (1.0 / (sigma * sigma) + 1.0 / ((mf - 1.0) * sigma_m * sigma_m));
        (1.0 + num / den).sqrt()
    })
}

/// `R∞` for `m - 1` chains `Pareto(α, η)` and one `Pareto(α, η_m)`,
/// attained at `x = η_m`.
pub fn pareto_r_infinity(alpha: f64, eta: f64, eta_m: f64, m: usize) -> Result<f64> {
    check_scale_pair("eta", eta, eta_m)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if m < 2 {
        return Err(Error::TooFewChains(m));
    }
    Ok((1.0 + ((eta_m / eta).powf(alpha) - 1.0) / m as f64).sqrt())
}

/// Piecewise `R(x)` of the Pareto-scale model.
pub fn pareto_r(x: f64, alpha: f64, eta: f64, eta_m: f64, m: usize) -> Result<f64> {
    check_scale_pair("eta", eta, eta_m)?;
    Ok(if x <= eta {
        1.0
    } else if x <= eta_m {
        (1.0 + ((x / eta).powf(alpha) - 1.0) / m as f64).sqrt()
    } else {
        let f = DistributionSpec::pareto(alpha, eta).cdf(x);
        let fm = DistributionSpec::pareto(alpha, eta_m).cdf(x);
        single_odd_chain_r(f, fm, m)
    })
}

/// `R∞` of the Laplace-versus-uniform pair; free of the scale.
pub fn laplace_uniform_r_infinity() -> f64 {
    (1.0 + 1.0 / (2.0 * (2.0 * E * E - 1.0))).sqrt()
}

/// `R` of `Laplace(0, 1)` against `U(-2, 2)` at `xnorm`; for scale `b`
/// evaluate at `x / b`. Maximal at `xnorm = ±2`.
pub fn laplace_uniform_r(xnorm: f64) -> f64 {
    let a = xnorm.abs();
    let e = (-a).exp();
    let r2 = if a >= 2.0 {
        1.0 + e / (2.0 * (2.0 - e))
    } else {
        1.0 + 0.5 * (a / 2.0 - 1.0 + e).powi(2) / (1.0 - a * a / 4.0 + e * (2.0 - e))
    };
    r2.sqrt()
}

/// `(x, R(x))` rows for overlaying on an empirical curve.
pub fn population_curve_csv(model: &PopulationModel, xs: &[f64]) -> String {
    let mut out = String::from("x,r\n");
    for &x in xs {
        out.push_str(&format!("{x},{}\n", population_local_r(model, x)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: f64) -> DistributionSpec {
        DistributionSpec::uniform(-s, s)
    }

    #[test]
    fn identical_model_is_one() {
        let model = PopulationModel::new(vec![DistributionSpec::normal(0.0, 1.0); 3]).unwrap();
        for x in [-1e6, -1.0, 0.0, 2.5, 1e6] {
            assert_eq!(population_local_r(&model, x), 1.0);
        }
        assert_eq!(population_r_infinity(&model, Method::Auto).unwrap().value, 1.0);
        assert_eq!(population_r_infinity(&model, Method::Grid).unwrap().value, 1.0);
    }

    #[test]
    fn uniform_closed_form() {
        assert!((uniform_r_infinity(0.75, 1.0, 4).unwrap() - 1.052_209).abs() < 1e-6);
        assert_eq!(uniform_r_infinity(1.0, 1.0, 4).unwrap(), 1.0);
        let limit = (2.0 - 1.0 / 4.0f64).sqrt();
        assert!((uniform_r_infinity(1.0, 1e12, 4).unwrap() - limit).abs() < 1e-9);
        assert!(uniform_r_infinity(1.0, 0.5, 4).is_err());
    }

    #[test]
    fn uniform_branches_match_generic() {
        let model = PopulationModel::one_odd_chain(u(0.75), u(1.0), 4).unwrap();
        for i in -60..=60 {
            let x = i as f64 / 50.0;
            let a = uniform_r(x, 0.75, 1.0, 4).unwrap();
            let b = population_local_r(&model, x);
            assert!((a - b).abs() < 1e-12, "x={x}: {a} vs {b}");
        }
        assert!((population_local_r(&model, 0.75) - 1.052_209).abs() < 1e-6);
    }

    #[test]
    fn pareto_closed_form_and_divergence() {
        assert!((pareto_r_infinity(0.8, 1.0, 1.5, 4).unwrap() - 1.046_800).abs() < 1e-6);
        assert_eq!(pareto_r_infinity(0.8, 1.0, 1.0, 4).unwrap(), 1.0);
        let seq: Vec<f64> = [2.0, 10.0, 1e3, 1e6]
            .iter()
            .map(|&r| pareto_r_infinity(0.8, 1.0, r, 4).unwrap())
            .collect();
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
        assert!(seq[3] > 50.0);
    }

    #[test]
    fn pareto_branches_match_generic() {
        let model = PopulationModel::one_odd_chain(
            DistributionSpec::pareto(0.8, 1.0),
            DistributionSpec::pareto(0.8, 1.5),
            4,
        )
        .unwrap();
        for i in 0..200 {
            let x = 0.5 + i as f64 * 0.05;
            let a = pareto_r(x, 0.8, 1.0, 1.5, 4).unwrap();
            let b = population_local_r(&model, x);
            assert!((a - b).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn laplace_uniform_constant_and_seam() {
        assert!((laplace_uniform_r_infinity() - 1.01799).abs() < 1e-5);
        let e2 = (-2.0f64).exp();
        let outer = (1.0 + e2 / (2.0 * (2.0 - e2))).sqrt();
        let inner = (1.0 + 0.5 * e2 * e2 / (e2 * (2.0 - e2))).sqrt();
        assert!((outer - inner).abs() < 1e-12);
        assert!((laplace_uniform_r(2.0 - 1e-13) - laplace_uniform_r(2.0)).abs() < 1e-12);
        // the inner branch at 0: (-1 + 1)^2 = 0
        assert_eq!(laplace_uniform_r(0.0), 1.0);
    }

    #[test]
    fn laplace_uniform_branches_match_generic() {
        let b = 0.25;
        let model = PopulationModel::new(vec![
            DistributionSpec::laplace(0.0, b),
            DistributionSpec::uniform(-2.0 * b, 2.0 * b),
        ])
        .unwrap();
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            let a = laplace_uniform_r(x / b);
            let g = population_local_r(&model, x);
            assert!((a - g).abs() < 1e-12, "x={x}");
        }
        let grid = grid_r_infinity(&model).unwrap();
        assert!((grid.value - laplace_uniform_r_infinity()).abs() < 1e-8);
        assert!((grid.argmax_x.abs() - 2.0 * b).abs() < 1e-6);
    }

    #[test]
    fn dispatch_recognises_closed_forms() {
        let model = PopulationModel::one_odd_chain(u(0.75), u(1.0), 4).unwrap();
        assert!(matches!(model.closed_form(), Some(ClosedForm::Uniform { .. })));
        let swapped = PopulationModel::new(vec![
            DistributionSpec::uniform(-2.0, 2.0),
            DistributionSpec::laplace(0.0, 1.0),
        ])
        .unwrap();
        assert!(matches!(swapped.closed_form(), Some(ClosedForm::LaplaceUniform { .. })));
        let other = PopulationModel::new(vec![DistributionSpec::normal(0.0, 1.0), DistributionSpec::normal(0.5, 1.0)]).unwrap();
        assert!(other.closed_form().is_none());
        assert!(population_r_infinity(&other, Method::Analytic).is_err());
        assert!(population_r_infinity(&other, Method::Auto).unwrap().value > 1.0);
    }

    #[test]
    fn disjoint_supports_are_rejected() {
        let model = PopulationModel::new(vec![
            DistributionSpec::uniform(0.0, 1.0),
            DistributionSpec::uniform(2.0, 3.0),
        ])
        .unwrap();
        assert!(matches!(grid_r_infinity(&model), Err(Error::UnboundedRInfinity(_))));
    }

    #[test]
    fn golden_section_finds_kink() {
        let (x, v) = golden_max(|x| -(x - 0.3).abs(), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-11);
        assert!(v > -1e-11);
    }
}
