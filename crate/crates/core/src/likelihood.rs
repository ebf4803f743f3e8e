//! Exact log-likelihoods of the additive latent-factor model.
//!
//! A group of `m >= 2` variables shares one latent count `U`, so that
//! `Y_j = U + X_j`. The marginal likelihood of a row sums over `u` from 0 to
//! the row minimum. Under truncation at `A` each row is renormalised by the
//! joint mass of `[0, A]^m`, which factors as
//! `D = Σ_u f_U(u) · Π_j M_j(A - u)` with `M_j` the partial cumulative mass.

use std::collections::BTreeMap;

use crate::distributions::EntityParams;
use crate::error::{Error, Result};
use crate::types::{Dataset, GroupParameters, ModelFamily, Partition};

/// Threshold below which the truncation normaliser is treated as underflowed.
const LOG_NORMALIZER_FLOOR: f64 = -700.0;

/// Compensated (Kahan) accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Running log-sum-exp with a moving maximum.
#[derive(Debug, Clone, Copy)]
struct StreamingLse {
    max: f64,
    acc: f64,
}

impl StreamingLse {
    fn new() -> Self {
        StreamingLse { max: f64::NEG_INFINITY, acc: 0.0 }
    }

    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.acc += (x - self.max).exp();
        } else {
            self.acc = self.acc * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.acc.ln()
        }
    }
}

/// The data columns of one group, with per-row minima and a weighted table
/// of distinct rows.
#[derive(Debug, Clone)]
pub struct GroupData {
    columns: Vec<Vec<u32>>,
    row_mins: Vec<u32>,
    unique_rows: Vec<(Vec<u32>, f64)>,
    col_max: Vec<u32>,
}

impl GroupData {
    pub fn new(columns: Vec<Vec<u32>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || n == 0 {
            return Err(Error::Structural("group data needs at least one column and row".into()));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Structural("group columns differ in length".into()));
        }
        let row_mins = (0..n).map(|i| columns.iter().map(|c| c[i]).min().unwrap_or(0)).collect();
        let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
        for i in 0..n {
            *counts.entry(columns.iter().map(|c| c[i]).collect()).or_default() += 1;
        }
        let unique_rows = counts.into_iter().map(|(r, w)| (r, w as f64)).collect();
        let col_max = columns.iter().map(|c| c.iter().copied().max().unwrap_or(0)).collect();
        Ok(GroupData { columns, row_mins, unique_rows, col_max })
    }

    /// Extracts the columns `members` (0-based) from a dataset.
    pub fn from_dataset(d: &Dataset, members: &[usize]) -> Result<Self> {
        GroupData::new(members.iter().map(|&j| d.column(j).to_vec()).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.row_mins.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn row_mins(&self) -> &[u32] {
        &self.row_mins
    }

    pub fn max_value(&self) -> u32 {
        self.col_max.iter().copied().max().unwrap_or(0)
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.n_rows() as f64;
        self.columns.iter().map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / n).collect()
    }

    /// Unbiased sample variances (zero when n = 1).
    pub fn variances(&self) -> Vec<f64> {
        let means = self.means();
        (0..self.n_cols()).map(|j| self.covariance(j, j, &means)).collect()
    }

    fn covariance(&self, a: usize, b: usize, means: &[f64]) -> f64 {
        let n = self.n_rows();
        if n < 2 {
            return 0.0;
        }
        let s: f64 = self.columns[a]
            .iter()
            .zip(&self.columns[b])
            .map(|(&x, &y)| (x as f64 - means[a]) * (y as f64 - means[b]))
            .sum();
        s / (n as f64 - 1.0)
    }

    /// Mean of the pairwise sample covariances between distinct columns.
    pub fn mean_pairwise_covariance(&self) -> f64 {
        let m = self.n_cols();
        if m < 2 {
            return 0.0;
        }
        let means = self.means();
        let mut total = 0.0;
        let mut k = 0usize;
        for a in 0..m {
            for b in a + 1..m {
                total += self.covariance(a, b, &means);
                k += 1;
            }
        }
        total / k as f64
    }

    pub fn zero_fractions(&self) -> Vec<f64> {
        let n = self.n_rows() as f64;
        self.columns.iter().map(|c| c.iter().filter(|&&v| v == 0).count() as f64 / n).collect()
    }

    fn check_bound(&self, a: u32) -> Result<()> {
        for (j, col) in self.columns.iter().enumerate() {
            if let Some(i) = col.iter().position(|&v| v > a) {
                return Err(Error::Data(format!(
                    "value {} in row {} of group column {} exceeds the truncation bound {a}",
                    col[i],
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(())
    }
}

fn entity_with_family(e: &EntityParams, family: &ModelFamily) -> EntityParams {
    // Plain families ignore any stray pi; zero-inflated ones require it (checked upstream).
    if family.zero_inflated {
        *e
    } else {
        EntityParams::plain(e.base)
    }
}

/// `Σ_i log Σ_u f_U(u) Π_j f_j(y_ij - u)` without any truncation.
pub(crate) fn numerator_unchecked(g: &GroupData, factor: &EntityParams, vars: &[EntityParams]) -> f64 {
    let max_min = g.unique_rows.iter().map(|(r, _)| *r.iter().min().unwrap()).max().unwrap_or(0);
    let lf_u = factor.log_pmf_table(max_min);
    let lf: Vec<Vec<f64>> =
        vars.iter().zip(&g.col_max).map(|(v, &mx)| v.log_pmf_table(mx)).collect();
    let mut total = KahanSum::default();
    for (row, w) in &g.unique_rows {
        let mn = *row.iter().min().unwrap();
        let mut lse = StreamingLse::new();
        for u in 0..=mn {
            let mut t = lf_u[u as usize];
            for (table, &y) in lf.iter().zip(row) {
                t += table[(y - u) as usize];
            }
            lse.push(t);
        }
        total.add(w * lse.value());
    }
    total.value()
}

/// `ln D` for truncation at `a`, in the factored form.
pub(crate) fn log_normalizer(factor: &EntityParams, vars: &[EntityParams], a: u32) -> f64 {
    let lf_u = factor.log_pmf_table(a);
    let lm: Vec<Vec<f64>> = vars.iter().map(|v| v.log_cumulative_table(a)).collect();
    let mut lse = StreamingLse::new();
    for u in 0..=a {
        let k = (a - u) as usize;
        lse.push(lf_u[u as usize] + lm.iter().map(|t| t[k]).sum::<f64>());
    }
    lse.value()
}

fn check_group(g: &GroupData, gp: &GroupParameters, family: &ModelFamily) -> Result<()> {
    if g.n_cols() < 2 {
        return Err(Error::Structural("latent-factor likelihood needs at least two columns".into()));
    }
    gp.validate(family, g.n_cols())
}

/// Untruncated group log-likelihood.
pub fn group_log_lik(g: &GroupData, gp: &GroupParameters, family: &ModelFamily) -> Result<f64> {
    if family.trunc.is_some() {
        return Err(Error::Structural(
            "group_log_lik takes an untruncated family; use truncated_group_log_lik".into(),
        ));
    }
    check_group(g, gp, family)?;
    let factor = gp.factor.as_ref().expect("validated");
    Ok(numerator_unchecked(g, factor, &gp.variables))
}

/// Group log-likelihood conditioned on every value lying in `[0, A]`.
pub fn truncated_group_log_lik(
    g: &GroupData,
    gp: &GroupParameters,
    family: &ModelFamily,
) -> Result<f64> {
    let a = family
        .trunc
        .ok_or_else(|| Error::Structural("truncated likelihood needs a truncation bound".into()))?;
    check_group(g, gp, family)?;
    g.check_bound(a)?;
    let factor = gp.factor.as_ref().expect("validated");
    let log_d = log_normalizer(factor, &gp.variables, a);
    if !(log_d >= LOG_NORMALIZER_FLOOR) {
        return Err(Error::Numeric(format!(
            "truncation normaliser underflowed (ln D = {log_d:.3}) for bound {a}; \
             parameters put almost no mass on [0, {a}]"
        )));
    }
    Ok(numerator_unchecked(g, factor, &gp.variables) - g.n_rows() as f64 * log_d)
}

pub(crate) fn singleton_unchecked(column: &[u32], vp: &EntityParams, trunc: Option<u32>) -> f64 {
    let max = column.iter().copied().max().unwrap_or(0);
    let table = vp.log_pmf_table(max);
    let mut counts = vec![0usize; max as usize + 1];
    for &y in column {
        counts[y as usize] += 1;
    }
    let mut total = KahanSum::default();
    for (y, &c) in counts.iter().enumerate() {
        if c > 0 {
            total.add(c as f64 * table[y]);
        }
    }
    let mut ll = total.value();
    if let Some(a) = trunc {
        ll -= column.len() as f64 * vp.log_cumulative_mass(a);
    }
    ll
}

/// Log-likelihood of one variable with no latent component.
pub fn singleton_log_lik(column: &[u32], vp: &EntityParams, family: &ModelFamily) -> Result<f64> {
    let gp = GroupParameters { factor: None, variables: vec![*vp] };
    gp.validate(family, 1)?;
    if let Some(a) = family.trunc {
        if let Some(i) = column.iter().position(|&v| v > a) {
            return Err(Error::Data(format!(
                "value {} in row {} exceeds the truncation bound {a}",
                column[i],
                i + 1
            )));
        }
    }
    Ok(singleton_unchecked(column, &entity_with_family(vp, family), family.trunc))
}

/// Log-likelihood of any group, dispatching on its size and the family.
pub fn any_group_log_lik(g: &GroupData, gp: &GroupParameters, family: &ModelFamily) -> Result<f64> {
    if g.n_cols() == 1 {
        singleton_log_lik(&g.columns[0], &gp.variables.first().copied().ok_or_else(|| {
            Error::Structural("missing variable parameters".into())
        })?, family)
    } else if family.trunc.is_some() {
        truncated_group_log_lik(g, gp, family)
    } else {
        group_log_lik(g, gp, family)
    }
}

/// Total log-likelihood: the sum over independent groups.
pub fn model_log_lik(
    d: &Dataset,
    partition: &Partition,
    family: &ModelFamily,
    params: &[GroupParameters],
) -> Result<f64> {
    if partition.n_vars() != d.n_vars() {
        return Err(Error::Structural("partition does not cover the dataset".into()));
    }
    if params.len() != partition.n_groups() {
        return Err(Error::Structural(format!(
            "{} parameter groups for {} partition groups",
            params.len(),
            partition.n_groups()
        )));
    }
    let mut total = KahanSum::default();
    for (members, gp) in partition.groups().iter().zip(params) {
        let g = GroupData::from_dataset(d, members)?;
        total.add(any_group_log_lik(&g, gp, family)?);
    }
    Ok(total.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{log_pmf, BaseParams};
    use crate::types::Base;

    fn pois(rate: f64) -> EntityParams {
        EntityParams::plain(BaseParams::Poisson { rate })
    }

    fn pois_group(t0: f64, ts: &[f64]) -> GroupParameters {
        GroupParameters { factor: Some(pois(t0)), variables: ts.iter().map(|&t| pois(t)).collect() }
    }

    #[test]
    fn bivariate_single_row() {
        let g = GroupData::new(vec![vec![1], vec![1]]).unwrap();
        let ll = group_log_lik(&g, &pois_group(1.0, &[1.0, 1.0]), &ModelFamily::poisson()).unwrap();
        let expected = (2.0 * (-3.0f64).exp()).ln();
        assert!((ll - expected).abs() < 1e-14);
        assert!((ll + 2.30685).abs() < 1e-5);
    }

    #[test]
    fn zero_minimum_collapses_sum() {
        let g = GroupData::new(vec![vec![0], vec![5]]).unwrap();
        let gp = pois_group(0.7, &[1.3, 2.1]);
        let ll = group_log_lik(&g, &gp, &ModelFamily::poisson()).unwrap();
        let p = |x, t| log_pmf(x, &BaseParams::Poisson { rate: t }).unwrap();
        assert!((ll - (p(0, 0.7) + p(0, 1.3) + p(5, 2.1))).abs() < 1e-14);
    }

    #[test]
    fn truncated_hand_value() {
        let g = GroupData::new(vec![vec![1], vec![1]]).unwrap();
        let f = ModelFamily::new(Base::Poisson, false, Some(1)).unwrap();
        let ll = truncated_group_log_lik(&g, &pois_group(1.0, &[1.0, 1.0]), &f).unwrap();
        assert!((ll - 0.4f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn wide_truncation_matches_untruncated() {
        let g = GroupData::new(vec![vec![0, 1, 2, 3], vec![1, 1, 4, 2]]).unwrap();
        let gp = pois_group(1.0, &[1.0, 1.0]);
        let f = ModelFamily::new(Base::Poisson, false, Some(60)).unwrap();
        let a = truncated_group_log_lik(&g, &gp, &f).unwrap();
        let b = group_log_lik(&g, &gp, &ModelFamily::poisson()).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn truncation_errors() {
        let g = GroupData::new(vec![vec![0, 7], vec![1, 1]]).unwrap();
        let f = ModelFamily::new(Base::Poisson, false, Some(6)).unwrap();
        let gp = pois_group(1.0, &[1.0, 1.0]);
        assert!(matches!(truncated_group_log_lik(&g, &gp, &f), Err(Error::Data(_))));
        assert!(matches!(singleton_log_lik(&[7], &pois(1.0), &f), Err(Error::Data(_))));
        let g = GroupData::new(vec![vec![0], vec![0]]).unwrap();
        let far = pois_group(900.0, &[900.0, 900.0]);
        assert!(matches!(truncated_group_log_lik(&g, &far, &f), Err(Error::Numeric(_))));
        assert!(group_log_lik(&g, &gp, &f).is_err());
    }

    #[test]
    fn singleton_examples() {
        let col = [0, 1, 2, 3];
        let ll = singleton_log_lik(&col, &pois(1.5), &ModelFamily::poisson()).unwrap();
        let direct: f64 =
            col.iter().map(|&y| log_pmf(y, &BaseParams::Poisson { rate: 1.5 }).unwrap()).sum();
        assert!((ll - direct).abs() < 1e-13);

        let f = ModelFamily::new(Base::Poisson, false, Some(1)).unwrap();
        let ll = singleton_log_lik(&[1], &pois(1.0), &f).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-14);

        let zi = ModelFamily::new(Base::Poisson, true, None).unwrap();
        let e = EntityParams::inflated(BaseParams::Poisson { rate: 1.5 }, 0.0);
        let a = singleton_log_lik(&col, &e, &zi).unwrap();
        assert!((a - direct).abs() < 1e-13);
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let g = GroupData::new(vec![vec![1], vec![1], vec![2]]).unwrap();
        let gp = pois_group(1.0, &[1.0, 1.0]);
        assert!(matches!(
            group_log_lik(&g, &gp, &ModelFamily::poisson()),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn model_additivity() {
        let names = Dataset::default_names(4);
        let rows = vec![vec![0, 1, 2, 1], vec![3, 2, 0, 0], vec![1, 1, 1, 4]];
        let d = Dataset::from_rows(names, &rows).unwrap();
        let f = ModelFamily::poisson();
        let ind = Partition::independence(4);
        let params: Vec<_> = (0..4)
            .map(|j| GroupParameters { factor: None, variables: vec![pois(0.5 + j as f64)] })
            .collect();
        let total = model_log_lik(&d, &ind, &f, &params).unwrap();
        let sum: f64 = (0..4)
            .map(|j| singleton_log_lik(d.column(j), &params[j].variables[0], &f).unwrap())
            .sum();
        assert!((total - sum).abs() < 1e-12);

        let p = Partition::from_one_based(&[vec![1, 3], vec![2, 4]], 4).unwrap();
        let gps = vec![pois_group(0.4, &[1.0, 1.2]), pois_group(0.9, &[0.3, 2.0])];
        let total = model_log_lik(&d, &p, &f, &gps).unwrap();
        let g1 = GroupData::from_dataset(&d, &[0, 2]).unwrap();
        let g2 = GroupData::from_dataset(&d, &[1, 3]).unwrap();
        let sep = group_log_lik(&g1, &gps[0], &f).unwrap() + group_log_lik(&g2, &gps[1], &f).unwrap();
        assert!((total - sep).abs() < 1e-12);
        assert!(model_log_lik(&d, &p, &f, &gps[..1]).is_err());
    }

    #[test]
    fn streaming_lse_matches_direct() {
        let xs = [-3.0, 2.0, -700.0, 1.5, 0.0];
        let mut s = StreamingLse::new();
        for x in xs {
            s.push(x);
        }
        let direct = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((s.value() - direct).abs() < 1e-14);
    }

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }
}
