//! Probability mass functions for the Poisson and negative binomial families,
//! their zero-inflated versions, partial cumulative masses, and means.
//!
//! Everything is evaluated in natural-log space. The negative binomial
//! coefficient is generalised to real `r` through log-gamma.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Below this count the rising factorial `ln Γ(r+x) - ln Γ(r)` is summed term
/// by term, which avoids cancellation for large `r`.
const DIRECT_SUM_LIMIT: u32 = 64;

/// Parameters of one base count distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseParams {
    Poisson { rate: f64 },
    NegBin { r: f64, p: f64 },
}

impl BaseParams {
    pub fn poisson(rate: f64) -> Result<Self> {
        let bp = BaseParams::Poisson { rate };
        bp.validate()?;
        Ok(bp)
    }

    pub fn negbin(r: f64, p: f64) -> Result<Self> {
        let bp = BaseParams::NegBin { r, p };
        bp.validate()?;
        Ok(bp)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseParams::Poisson { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Domain(format!("Poisson rate must be > 0, got {rate}")));
                }
            }
            BaseParams::NegBin { r, p } => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Domain(format!("negative binomial r must be > 0, got {r}")));
                }
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Domain(format!(
                        "negative binomial p must lie in (0, 1), got {p}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Log of `f(x+1) / f(x)`.
    fn log_ratio(&self, x: u32) -> f64 {
        let x = x as f64;
        match *self {
            BaseParams::Poisson { rate } => rate.ln() - (x + 1.0).ln(),
            BaseParams::NegBin { r, p } => (r + x).ln() + (1.0 - p).ln() - (x + 1.0).ln(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            BaseParams::Poisson { rate } => rate,
            BaseParams::NegBin { r, p } => r * (1.0 - p) / (p * p),
        }
    }
}

/// One latent or observed component: a base distribution plus an optional
/// zero-inflation probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityParams {
    #[serde(flatten)]
    pub base: BaseParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
}

impl EntityParams {
    pub fn plain(base: BaseParams) -> Self {
        EntityParams { base, pi: None }
    }

    pub fn inflated(base: BaseParams, pi: f64) -> Self {
        EntityParams { base, pi: Some(pi) }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if let Some(pi) = self.pi {
            check_pi(pi)?;
        }
        Ok(())
    }

    /// Log pmf, zero-inflated when `pi` is present.
    pub fn log_pmf(&self, x: u32) -> f64 {
        match self.pi {
            Some(pi) => zi_log_pmf_unchecked(x, pi, &self.base),
            None => log_pmf_unchecked(x, &self.base),
        }
    }

    /// `ln P(X <= k)` under the (possibly zero-inflated) distribution.
    pub fn log_cumulative_mass(&self, k: u32) -> f64 {
        let base = log_cumulative_mass(&self.base, k);
        match self.pi {
            Some(pi) if pi > 0.0 => log_add_exp(pi.ln(), (1.0 - pi).ln() + base),
            _ => base,
        }
    }

    /// `ln f(x)` for every `x` in `0..=max`.
    pub fn log_pmf_table(&self, max: u32) -> Vec<f64> {
        (0..=max).map(|x| self.log_pmf(x)).collect()
    }

    /// `ln P(X <= k)` for every `k` in `0..=max`.
    pub fn log_cumulative_table(&self, max: u32) -> Vec<f64> {
        let mut out = Vec::with_capacity(max as usize + 1);
        let mut log_f = log_pmf_unchecked(0, &self.base);
        let mut acc = log_f;
        for k in 0..=max {
            if k > 0 {
                log_f += self.base.log_ratio(k - 1);
                acc = log_add_exp(acc, log_f);
            }
            let v = match self.pi {
                Some(pi) if pi > 0.0 => log_add_exp(pi.ln(), (1.0 - pi).ln() + acc),
                _ => acc,
            };
            out.push(v.min(0.0));
        }
        out
    }

    pub fn mean(&self) -> f64 {
        let m = mean(&self.base);
        match self.pi {
            Some(pi) => (1.0 - pi) * m,
            None => m,
        }
    }
}

fn check_pi(pi: f64) -> Result<()> {
    if !(0.0..1.0).contains(&pi) {
        return Err(Error::Domain(format!("zero-inflation probability must lie in [0, 1), got {pi}")));
    }
    Ok(())
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Γ(r+x) - ln Γ(r)`.
fn ln_rising(r: f64, x: u32) -> f64 {
    if x < DIRECT_SUM_LIMIT {
        (0..x).map(|k| (r + k as f64).ln()).sum()
    } else {
        ln_gamma(r + x as f64) - ln_gamma(r)
    }
}

fn ln_factorial(x: u32) -> f64 {
    if x < DIRECT_SUM_LIMIT {
        (2..=x).map(|k| (k as f64).ln()).sum()
    } else {
        ln_gamma(x as f64 + 1.0)
    }
}

/// Log pmf of the base distribution.
pub fn log_pmf(x: u32, params: &BaseParams) -> Result<f64> {
    params.validate()?;
    Ok(log_pmf_unchecked(x, params))
}

pub(crate) fn log_pmf_unchecked(x: u32, params: &BaseParams) -> f64 {
    match *params {
        BaseParams::Poisson { rate } => {
            if x == 0 {
                -rate
            } else {
                x as f64 * rate.ln() - rate - ln_factorial(x)
            }
        }
        BaseParams::NegBin { r, p } => {
            let head = r * p.ln();
            if x == 0 {
                head
            } else {
                ln_rising(r, x) - ln_factorial(x) + head + x as f64 * (-p).ln_1p()
            }
        }
    }
}

/// Log pmf with extra mass `pi` at zero.
pub fn zi_log_pmf(x: u32, pi: f64, params: &BaseParams) -> Result<f64> {
    check_pi(pi)?;
    params.validate()?;
    Ok(zi_log_pmf_unchecked(x, pi, params))
}

pub(crate) fn zi_log_pmf_unchecked(x: u32, pi: f64, params: &BaseParams) -> f64 {
    let base = log_pmf_unchecked(x, params);
    if pi == 0.0 {
        return base;
    }
    let keep = (-pi).ln_1p() + base;
    if x == 0 {
        log_add_exp(pi.ln(), keep)
    } else {
        keep
    }
}

/// `ln Σ_{x=0..k} f(x)` by forward recurrence from `f(0)`.
pub fn log_cumulative_mass(params: &BaseParams, k: u32) -> f64 {
    let mut log_f = log_pmf_unchecked(0, params);
    let mut acc = log_f;
    for x in 0..k {
        log_f += params.log_ratio(x);
        acc = log_add_exp(acc, log_f);
    }
    acc.min(0.0)
}

/// `Σ_{x=0..k} f(x)`.
pub fn cumulative_mass(params: &BaseParams, k: u32) -> f64 {
    log_cumulative_mass(params, k).exp()
}

/// Mean of the base distribution: `θ` or `r(1-p)/p`.
pub fn mean(params: &BaseParams) -> f64 {
    match *params {
        BaseParams::Poisson { rate } => rate,
        BaseParams::NegBin { r, p } => r * (1.0 - p) / p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn poisson_values() {
        let p1 = BaseParams::poisson(1.0).unwrap();
        assert_eq!(log_pmf(0, &p1).unwrap(), -1.0);
        let p2 = BaseParams::poisson(2.0).unwrap();
        let expected = (2.0f64 * (-2.0f64).exp()).ln();
        assert!(close(log_pmf(2, &p2).unwrap(), expected, 1e-14));
        assert!(close(log_pmf(2, &p2).unwrap(), -1.30685, 1e-5));
    }

    #[test]
    fn negbin_values() {
        let nb = BaseParams::negbin(2.0, 0.5).unwrap();
        assert!(close(log_pmf(1, &nb).unwrap(), 0.25f64.ln(), 1e-14));
        let nb = BaseParams::negbin(3.7, 0.42).unwrap();
        assert_eq!(log_pmf(0, &nb).unwrap(), 3.7 * 0.42f64.ln());
    }

    #[test]
    fn large_counts_do_not_overflow() {
        let p = BaseParams::poisson(1e6).unwrap();
        let v = log_pmf(1_000_000, &p).unwrap();
        // Stirling: ln f(λ; λ) ≈ -0.5 ln(2πλ)
        assert!(close(v, -0.5 * (2.0 * std::f64::consts::PI * 1e6).ln(), 1e-6));
        let nb = BaseParams::negbin(0.7, 0.3).unwrap();
        assert!(log_pmf(1_000_000, &nb).unwrap().is_finite());
    }

    #[test]
    fn invalid_params_are_domain_errors() {
        assert!(matches!(BaseParams::poisson(0.0), Err(Error::Domain(_))));
        assert!(matches!(BaseParams::negbin(1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(BaseParams::negbin(-1.0, 0.5), Err(Error::Domain(_))));
        let bad = BaseParams::Poisson { rate: -2.0 };
        assert!(log_pmf(1, &bad).is_err());
        let p = BaseParams::poisson(1.0).unwrap();
        assert!(matches!(zi_log_pmf(0, 1.0, &p), Err(Error::Domain(_))));
        assert!(zi_log_pmf(0, -0.1, &p).is_err());
    }

    #[test]
    fn zero_inflated_values() {
        let p = BaseParams::poisson(1.0).unwrap();
        for x in 0..6 {
            assert_eq!(zi_log_pmf(x, 0.0, &p).unwrap(), log_pmf(x, &p).unwrap());
        }
        let v = zi_log_pmf(0, 0.3, &p).unwrap();
        assert!(close(v, 0.557515f64.ln(), 1e-6));
        assert!(close(v, (0.3 + 0.7 * (-1.0f64).exp()).ln(), 1e-14));
        let v2 = zi_log_pmf(2, 0.3, &p).unwrap();
        assert!(close(v2, 0.7f64.ln() + log_pmf(2, &p).unwrap(), 1e-14));
    }

    #[test]
    fn cumulative_values() {
        let p = BaseParams::poisson(1.0).unwrap();
        assert!(close(cumulative_mass(&p, 1), 2.0 * (-1.0f64).exp(), 1e-14));
        assert!(close(cumulative_mass(&p, 1), 0.735759, 1e-6));
        assert!((cumulative_mass(&p, 200) - 1.0).abs() < 1e-12);
        let nb = BaseParams::negbin(1.0, 0.5).unwrap();
        assert!(close(cumulative_mass(&nb, 0), 0.5, 1e-15));
    }

    #[test]
    fn cumulative_table_matches_pointwise() {
        let e = EntityParams::inflated(BaseParams::negbin(1.7, 0.35).unwrap(), 0.2);
        let table = e.log_cumulative_table(12);
        for (k, v) in table.iter().enumerate() {
            assert!(close(*v, e.log_cumulative_mass(k as u32), 1e-13));
        }
    }

    #[test]
    fn means() {
        assert_eq!(mean(&BaseParams::poisson(2.5).unwrap()), 2.5);
        assert_eq!(mean(&BaseParams::negbin(2.0, 0.5).unwrap()), 2.0);
        assert_eq!(mean(&BaseParams::negbin(3.0, 0.25).unwrap()), 9.0);
    }

    #[test]
    fn entity_params_serde_shape() {
        let e = EntityParams::inflated(BaseParams::negbin(1.5, 0.4).unwrap(), 0.1);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"r":1.5,"p":0.4,"pi":0.1}"#);
        let back: EntityParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        let q: EntityParams = serde_json::from_str(r#"{"rate":2.0}"#).unwrap();
        assert_eq!(q, EntityParams::plain(BaseParams::Poisson { rate: 2.0 }));
    }
}
