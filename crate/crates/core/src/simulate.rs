//! Synthetic data from any family and partition.
//!
//! Each group row draws one latent `U` and one `X_j` per member and sets
//! `Y_j = U + X_j`; singletons have no `U`. Zero inflation acts on every
//! component separately. Under truncation the whole group row is redrawn
//! until every value is at most `A`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::distributions::{BaseParams, EntityParams};
use crate::error::{Error, Result};
use crate::types::{Dataset, GroupParameters, ModelFamily, Partition};

const REJECTION_WINDOW: u64 = 100_000;
const MIN_ACCEPTANCE: f64 = 1e-6;

/// Generating configuration. `partition` is 1-based; `params[k]` belongs
/// to `partition[k]`, with variable parameters in the listed member order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub partition: Vec<Vec<usize>>,
    pub family: ModelFamily,
    pub params: Vec<GroupParameters>,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl SimSpec {
    pub fn n_vars(&self) -> usize {
        self.partition.iter().map(Vec::len).sum()
    }

    /// Validates the spec and returns its groups as (0-based members, params),
    /// in canonical group order.
    pub fn resolved_groups(&self) -> Result<Vec<(Vec<usize>, GroupParameters)>> {
        let n_vars = self.n_vars();
        self.family.validate()?;
        if self.n == 0 {
            return Err(Error::Config("simulation needs n >= 1".into()));
        }
        let canonical = Partition::from_one_based(&self.partition, n_vars)?;
        if self.params.len() != self.partition.len() {
            return Err(Error::Structural(format!(
                "{} parameter groups for {} partition groups",
                self.params.len(),
                self.partition.len()
            )));
        }
        if let Some(names) = &self.names {
            if names.len() != n_vars {
                return Err(Error::Config(format!("{} names for {n_vars} variables", names.len())));
            }
        }
        let mut groups = Vec::with_capacity(self.partition.len());
        for (members, gp) in self.partition.iter().zip(&self.params) {
            gp.validate(&self.family, members.len())?;
            let mut paired: Vec<(usize, EntityParams)> =
                members.iter().map(|&m| m - 1).zip(gp.variables.iter().copied()).collect();
            paired.sort_by_key(|(m, _)| *m);
            let (idx, variables): (Vec<usize>, Vec<EntityParams>) = paired.into_iter().unzip();
            groups.push((idx, GroupParameters { factor: gp.factor, variables }));
        }
        groups.sort_by_key(|(m, _)| m[0]);
        debug_assert_eq!(
            groups.iter().map(|(m, _)| m.clone()).collect::<Vec<_>>(),
            canonical.groups().to_vec()
        );
        Ok(groups)
    }
}

enum Sampler {
    Poisson(Option<Poisson<f64>>),
    NegBin(Option<Gamma<f64>>),
}

impl Sampler {
    fn new(params: &BaseParams) -> Self {
        match *params {
            BaseParams::Poisson { rate } => Sampler::Poisson(Poisson::new(rate).ok()),
            BaseParams::NegBin { r, p } => Sampler::NegBin(Gamma::new(r, (1.0 - p) / p).ok()),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            Sampler::Poisson(Some(d)) => to_count(d.sample(rng)),
            Sampler::NegBin(Some(g)) => {
                let lambda = g.sample(rng);
                if lambda > 0.0 && lambda.is_finite() {
                    Poisson::new(lambda).map_or(0, |d| to_count(d.sample(rng)))
                } else {
                    0
                }
            }
            _ => 0,
        }
    }
}

fn to_count(x: f64) -> u32 {
    x.min(u32::MAX as f64) as u32
}

/// One draw from a base distribution (negative binomial as a gamma-Poisson mixture).
pub fn draw_base<R: Rng + ?Sized>(params: &BaseParams, rng: &mut R) -> u32 {
    Sampler::new(params).draw(rng)
}

struct EntitySampler {
    sampler: Sampler,
    pi: f64,
}

impl EntitySampler {
    fn new(e: &EntityParams) -> Self {
        EntitySampler { sampler: Sampler::new(&e.base), pi: e.pi.unwrap_or(0.0) }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.pi > 0.0 && rng.random::<f64>() < self.pi {
            0
        } else {
            self.sampler.draw(rng)
        }
    }
}

/// Generates a dataset; deterministic given the spec (including its seed).
pub fn simulate(spec: &SimSpec) -> Result<Dataset> {
    let groups = spec.resolved_groups()?;
    let n_vars = spec.n_vars();
    let trunc = spec.family.trunc;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samplers: Vec<(Option<EntitySampler>, Vec<EntitySampler>)> = groups
        .iter()
        .map(|(_, gp)| {
            (gp.factor.as_ref().map(EntitySampler::new), gp.variables.iter().map(EntitySampler::new).collect())
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(spec.n); n_vars];
    let mut proposals = vec![0u64; groups.len()];
    let mut accepted = vec![0u64; groups.len()];
    let mut row = Vec::new();
    for _ in 0..spec.n {
        for (k, ((members, _), (factor, vars))) in groups.iter().zip(&samplers).enumerate() {
            loop {
                let u = factor.as_ref().map_or(0, |f| f.draw(&mut rng));
                row.clear();
                row.extend(vars.iter().map(|v| u.saturating_add(v.draw(&mut rng))));
                proposals[k] += 1;
                let ok = trunc.is_none_or(|a| row.iter().all(|&y| y <= a));
                if ok {
                    accepted[k] += 1;
                    break;
                }
                if proposals[k] == REJECTION_WINDOW
                    && (accepted[k] as f64) < MIN_ACCEPTANCE * REJECTION_WINDOW as f64
                {
                    return Err(Error::Numeric(format!(
                        "truncation bound incompatible with parameters: {} of the first {} \
                         proposals for group {} fell inside [0, {}]",
                        accepted[k],
                        REJECTION_WINDOW,
                        k + 1,
                        trunc.unwrap_or(0)
                    )));
                }
            }
            for (&j, &y) in members.iter().zip(&row) {
                columns[j].push(y);
            }
        }
    }
    let names = spec.names.clone().unwrap_or_else(|| Dataset::default_names(n_vars));
    Dataset::new(names, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Base;

    fn pois(rate: f64) -> EntityParams {
        EntityParams::plain(BaseParams::Poisson { rate })
    }

    #[test]
    fn tiny_rate_draws_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BaseParams::Poisson { rate: 1e-12 };
        assert!((0..10_000).all(|_| draw_base(&p, &mut rng) == 0));
    }

    #[test]
    fn poisson_and_negbin_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> =
            (0..n).map(|_| draw_base(&BaseParams::Poisson { rate: 2.0 }, &mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");

        let nb = BaseParams::NegBin { r: 2.0, p: 0.5 };
        let xs: Vec<f64> = (0..n).map(|_| draw_base(&nb, &mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 2.0).abs() < 0.07, "{mean}");
        assert!((var - 4.0).abs() < 0.3, "{var}");
    }

    #[test]
    fn saturated_inflation_gives_zeros() {
        let family = ModelFamily::new(Base::Poisson, true, None).unwrap();
        let e = |t| EntityParams::inflated(BaseParams::Poisson { rate: t }, 1.0 - 1e-9);
        let spec = SimSpec {
            partition: vec![vec![1, 2], vec![3]],
            family,
            params: vec![
                GroupParameters { factor: Some(e(2.0)), variables: vec![e(1.0), e(3.0)] },
                GroupParameters { factor: None, variables: vec![e(4.0)] },
            ],
            n: 500,
            seed: 1,
            names: None,
        };
        let d = simulate(&spec).unwrap();
        assert_eq!(d.max_value(), 0);
    }

    #[test]
    fn truncation_bound_holds_and_is_deterministic() {
        let family = ModelFamily::new(Base::Poisson, false, Some(6)).unwrap();
        let spec = SimSpec {
            partition: vec![vec![2, 3], vec![1]],
            family,
            params: vec![
                GroupParameters { factor: Some(pois(2.0)), variables: vec![pois(2.0), pois(3.0)] },
                GroupParameters { factor: None, variables: vec![pois(5.0)] },
            ],
            n: 2000,
            seed: 9,
            names: None,
        };
        let d = simulate(&spec).unwrap();
        assert!(d.max_value() <= 6);
        assert_eq!(d, simulate(&spec).unwrap());
    }

    #[test]
    fn impossible_truncation_errors() {
        let family = ModelFamily::new(Base::Poisson, false, Some(1)).unwrap();
        let spec = SimSpec {
            partition: vec![vec![1, 2]],
            family,
            params: vec![GroupParameters {
                factor: Some(pois(60.0)),
                variables: vec![pois(60.0), pois(60.0)],
            }],
            n: 10,
            seed: 0,
            names: None,
        };
        assert!(matches!(simulate(&spec), Err(Error::Numeric(_))));
    }

    #[test]
    fn spec_validation() {
        let spec = SimSpec {
            partition: vec![vec![1, 2]],
            family: ModelFamily::poisson(),
            params: vec![GroupParameters { factor: None, variables: vec![pois(1.0), pois(1.0)] }],
            n: 10,
            seed: 0,
            names: None,
        };
        assert!(matches!(simulate(&spec), Err(Error::Structural(_))));
        let json = r#"{"partition":[[1],[2,3]],"family":{"base":"negbin","zero_inflated":true,"trunc":6},
            "params":[{"factor":null,"variables":[{"r":1.0,"p":0.5,"pi":0.3}]},
                      {"factor":{"r":1.0,"p":0.5,"pi":0.1},"variables":[{"r":2.0,"p":0.5,"pi":0.3},{"r":1.0,"p":0.6,"pi":0.3}]}],
            "n":50,"seed":7}"#;
        let spec: SimSpec = serde_json::from_str(json).unwrap();
        let d = simulate(&spec).unwrap();
        assert_eq!((d.n_rows(), d.n_vars()), (50, 3));
        assert!(d.max_value() <= 6);
    }
}
