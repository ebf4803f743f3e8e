//! Test-only reference implementations. Nothing here calls into the
//! library's likelihood code; probabilities are built in linear space from
//! the textbook pmf products.
#![allow(dead_code)]

use discfa::{Base, BaseParams, Dataset, EntityParams, GroupParameters, ModelFamily, Partition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// pmf by explicit products, no log-gamma.
pub fn pmf(x: u32, e: &EntityParams) -> f64 {
    let base = match e.base {
        BaseParams::Poisson { rate } => {
            let mut v = (-rate).exp();
            for k in 1..=x {
                v *= rate / k as f64;
            }
            v
        }
        BaseParams::NegBin { r, p } => {
            let mut v = p.powf(r);
            for k in 0..x {
                v *= (r + k as f64) * (1.0 - p) / (k as f64 + 1.0);
            }
            v
        }
    };
    match e.pi {
        Some(pi) => pi * f64::from(u8::from(x == 0)) + (1.0 - pi) * base,
        None => base,
    }
}

/// Joint probability of one observed row `y` of a group.
pub fn joint_row(y: &[u32], gp: &GroupParameters) -> f64 {
    match &gp.factor {
        None => y.iter().zip(&gp.variables).map(|(&v, e)| pmf(v, e)).product(),
        Some(f) => {
            let top = *y.iter().max().unwrap();
            let mut total = 0.0;
            for u in 0..=top {
                if y.iter().any(|&v| v < u) {
                    continue;
                }
                let mut term = pmf(u, f);
                for (&v, e) in y.iter().zip(&gp.variables) {
                    term *= pmf(v - u, e);
                }
                total += term;
            }
            total
        }
    }
}

/// Mass of `[0, a]^m` by exhaustive enumeration of the grid.
pub fn grid_mass(m: usize, a: u32, gp: &GroupParameters) -> f64 {
    let mut y = vec![0u32; m];
    let mut total = 0.0;
    loop {
        total += joint_row(&y, gp);
        let mut k = 0;
        loop {
            if k == m {
                return total;
            }
            if y[k] < a {
                y[k] += 1;
                break;
            }
            y[k] = 0;
            k += 1;
        }
    }
}

/// Log-likelihood of a group's rows (each row a Vec of m values).
pub fn group_log_lik(rows: &[Vec<u32>], gp: &GroupParameters, trunc: Option<u32>) -> f64 {
    let m = gp.variables.len();
    let norm = trunc.map_or(1.0, |a| grid_mass(m, a, gp));
    let lik: f64 = rows.iter().map(|r| joint_row(r, gp) / norm).product();
    lik.ln()
}

pub fn model_log_lik(d: &Dataset, p: &Partition, params: &[GroupParameters], trunc: Option<u32>) -> f64 {
    p.groups()
        .iter()
        .zip(params)
        .map(|(members, gp)| {
            let rows: Vec<Vec<u32>> =
                (0..d.n_rows()).map(|i| members.iter().map(|&j| d.column(j)[i]).collect()).collect();
            group_log_lik(&rows, gp, trunc)
        })
        .sum()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_entity<R: Rng>(rng: &mut R, family: &ModelFamily) -> EntityParams {
    let base = match family.base {
        Base::Poisson => BaseParams::Poisson { rate: rng.random_range(0.2..2.5) },
        Base::NegBin => BaseParams::NegBin { r: rng.random_range(0.3..4.0), p: rng.random_range(0.2..0.85) },
    };
    EntityParams { base, pi: family.zero_inflated.then(|| rng.random_range(0.0..0.6)) }
}

pub fn random_group_params<R: Rng>(rng: &mut R, family: &ModelFamily, m: usize) -> GroupParameters {
    GroupParameters {
        factor: (m >= 2).then(|| random_entity(rng, family)),
        variables: (0..m).map(|_| random_entity(rng, family)).collect(),
    }
}

/// Relative difference.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn sample_cov(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb)).sum::<f64>() / (n - 1.0)
}

pub fn sample_corr(a: &[u32], b: &[u32]) -> f64 {
    sample_cov(a, b) / (sample_cov(a, a) * sample_cov(b, b)).sqrt()
}

pub fn pois(rate: f64) -> EntityParams {
    EntityParams::plain(BaseParams::Poisson { rate })
}
