//! Maximum-likelihood fitting of single groups and whole models.
//!
//! For the plain Poisson and plain negative binomial families the fitted
//! mean of every variable equals its sample mean at the optimum, so the
//! variable parameters are tied to the factor parameters and only the
//! factor (plus the NB `p`s) is searched numerically. Zero-inflated and
//! truncated families are optimised over every parameter.
//!
//! Positive parameters are optimised on the log scale and probabilities on
//! the logit scale, each inside a box.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::distributions::{BaseParams, EntityParams};
use crate::error::{Error, Result};
use crate::likelihood::{self, GroupData};
use crate::optim::{minimize_box, minimize_scalar, Bound, MinimizeOptions};
use crate::types::{parameter_count, Base, Dataset, GroupParameters, ModelFamily, Partition};

/// Positivity clamp for rates, means and `r`.
pub const EPS: f64 = 1e-8;
const PROB_LO: f64 = 1e-6;
const PROB_HI: f64 = 1.0 - 1e-6;
const POSITIVE_HI: f64 = 1e4;
const JITTER_SD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub multistart: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { rel_tol: 1e-9, max_iter: 500, multistart: 3, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if self.max_iter == 0 || self.multistart == 0 {
            return Err(Error::Config("max_iter and multistart must be at least 1".into()));
        }
        Ok(())
    }

    fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions { rel_tol: self.rel_tol, max_iter: self.max_iter, ..Default::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    /// Iterations of the winning start.
    pub iterations: usize,
    pub n_starts_used: usize,
    /// Parameters that ended on their box boundary, e.g. `factor.rate`, `var2.pi`.
    pub boundary_flags: Vec<String>,
}

/// Fitted parameters and maximised log-likelihood of one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupFit {
    pub params: GroupParameters,
    pub log_lik: f64,
    pub diagnostics: FitDiagnostics,
}

/// A fully fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub partition: Partition,
    pub family: ModelFamily,
    pub params: Vec<GroupParameters>,
    pub diagnostics: Vec<FitDiagnostics>,
    pub log_lik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub aic_normalized: f64,
    pub n_rows: usize,
    pub converged: bool,
    pub wall_time: f64,
}

/// `(AIC, AIC / n)` for a maximised log-likelihood.
pub fn aic(log_lik: f64, n_params: usize, n_rows: usize) -> (f64, f64) {
    let a = -2.0 * log_lik + 2.0 * n_params as f64;
    (a, a / n_rows as f64)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn prob_bound() -> Bound {
    Bound::new(logit(PROB_LO), logit(PROB_HI))
}

fn positive_bound() -> Bound {
    Bound::new(EPS.ln(), POSITIVE_HI.ln())
}

/// Moment-based starting values for one entity with the given mean.
fn entity_from_mean(family: &ModelFamily, mean: f64, p: f64, pi: f64) -> EntityParams {
    let pi = family.zero_inflated.then_some(pi);
    let base_mean = (mean / (1.0 - pi.unwrap_or(0.0))).max(EPS);
    let base = match family.base {
        Base::Poisson => BaseParams::Poisson { rate: base_mean.min(POSITIVE_HI) },
        Base::NegBin => {
            BaseParams::NegBin { r: (base_mean * p / (1.0 - p)).clamp(EPS, POSITIVE_HI), p }
        }
    };
    EntityParams { base, pi }
}

/// Layout of the full transformed parameter vector:
/// `[factor?, var_1, ..., var_m]`, each `[ln θ] | [ln r, logit p]` then `[logit π]` if ZI.
struct FullLayout {
    family: ModelFamily,
    has_factor: bool,
    m: usize,
}

impl FullLayout {
    fn per_entity(&self) -> usize {
        self.family.params_per_entity()
    }

    fn n_entities(&self) -> usize {
        self.m + usize::from(self.has_factor)
    }

    fn bounds(&self) -> Vec<Bound> {
        let mut one = match self.family.base {
            Base::Poisson => vec![positive_bound()],
            Base::NegBin => vec![positive_bound(), prob_bound()],
        };
        if self.family.zero_inflated {
            one.push(prob_bound());
        }
        one.iter().copied().cycle().take(one.len() * self.n_entities()).collect()
    }

    fn names(&self) -> Vec<String> {
        let mut one: Vec<&str> = match self.family.base {
            Base::Poisson => vec!["rate"],
            Base::NegBin => vec!["r", "p"],
        };
        if self.family.zero_inflated {
            one.push("pi");
        }
        let mut out = Vec::new();
        for e in 0..self.n_entities() {
            let label =
                if self.has_factor && e == 0 { "factor".to_string() } else { format!("var{}", e + 1 - usize::from(self.has_factor)) };
            out.extend(one.iter().map(|n| format!("{label}.{n}")));
        }
        out
    }

    fn encode_entity(&self, e: &EntityParams, out: &mut Vec<f64>) {
        match e.base {
            BaseParams::Poisson { rate } => out.push(rate.clamp(EPS, POSITIVE_HI).ln()),
            BaseParams::NegBin { r, p } => {
                out.push(r.clamp(EPS, POSITIVE_HI).ln());
                out.push(logit(p.clamp(PROB_LO, PROB_HI)));
            }
        }
        if self.family.zero_inflated {
            out.push(logit(e.pi.unwrap_or(0.01).clamp(PROB_LO, PROB_HI)));
        }
    }

    fn encode(&self, factor: Option<&EntityParams>, vars: &[EntityParams]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.per_entity() * self.n_entities());
        if let Some(f) = factor {
            self.encode_entity(f, &mut out);
        }
        for v in vars {
            self.encode_entity(v, &mut out);
        }
        out
    }

    fn decode_entity(&self, chunk: &[f64]) -> EntityParams {
        let (base, rest) = match self.family.base {
            Base::Poisson => (BaseParams::Poisson { rate: chunk[0].exp() }, &chunk[1..]),
            Base::NegBin => {
                (BaseParams::NegBin { r: chunk[0].exp(), p: sigmoid(chunk[1]) }, &chunk[2..])
            }
        };
        let pi = self.family.zero_inflated.then(|| sigmoid(rest[0]));
        EntityParams { base, pi }
    }

    fn decode(&self, x: &[f64]) -> (Option<EntityParams>, Vec<EntityParams>) {
        let k = self.per_entity();
        let mut chunks = x.chunks(k).map(|c| self.decode_entity(c));
        let factor = if self.has_factor { chunks.next() } else { None };
        (factor, chunks.collect())
    }
}

/// Negative log-likelihood, `+∞` when the parameters are unusable.
fn neg_log_lik(g: &GroupData, factor: Option<&EntityParams>, vars: &[EntityParams], trunc: Option<u32>) -> f64 {
    let ll = match factor {
        None => likelihood::singleton_unchecked(&g.columns()[0], &vars[0], trunc),
        Some(f) => {
            let num = likelihood::numerator_unchecked(g, f, vars);
            match trunc {
                None => num,
                Some(a) => {
                    let log_d = likelihood::log_normalizer(f, vars, a);
                    if !(log_d >= -700.0) {
                        return f64::INFINITY;
                    }
                    num - g.n_rows() as f64 * log_d
                }
            }
        }
    };
    if ll.is_nan() {
        f64::INFINITY
    } else {
        -ll
    }
}

fn data_seed(cfg: &OptimizerConfig, g: &GroupData, family: &ModelFamily) -> u64 {
    // FNV-1a over the group's contents so restarts do not depend on evaluation order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ cfg.seed;
    let mut feed = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(g.n_cols() as u64);
    feed(family.code().len() as u64 + u64::from(family.trunc.unwrap_or(0)) * 31);
    for c in g.columns() {
        for &v in c {
            feed(u64::from(v));
        }
    }
    h
}

/// Starting points shared by the numeric fits.
struct Starts {
    moment: (Option<EntityParams>, Vec<EntityParams>),
    nested: Option<(Option<EntityParams>, Vec<EntityParams>)>,
}

fn moment_starts(g: &GroupData, family: &ModelFamily) -> Starts {
    let means = g.means();
    let vars = g.variances();
    let zeros = g.zero_fractions();
    let m = g.n_cols();
    let min_mean = means.iter().copied().fold(f64::INFINITY, f64::min);
    let pis: Vec<f64> = means
        .iter()
        .zip(&zeros)
        .map(|(&mu, &z)| {
            let p0 = (-mu).exp();
            let excess = if p0 < 1.0 { (z - p0) / (1.0 - p0) } else { 0.0 };
            excess.clamp(0.01, 0.9)
        })
        .collect();
    let ps: Vec<f64> = means
        .iter()
        .zip(&vars)
        .map(|(&mu, &s2)| if s2 > 0.0 { (mu / s2).clamp(0.05, 0.95) } else { 0.95 })
        .collect();
    if m == 1 {
        let v = entity_from_mean(family, means[0].max(EPS), ps[0], pis[0]);
        return Starts { moment: (None, vec![v]), nested: None };
    }
    let factor_mean = if min_mean > EPS {
        g.mean_pairwise_covariance().clamp(EPS, 0.9 * min_mean)
    } else {
        EPS
    };
    let p0 = ps.iter().sum::<f64>() / m as f64;
    let pi0 = pis.iter().copied().fold(f64::INFINITY, f64::min);
    let factor = entity_from_mean(family, factor_mean, p0, pi0);
    let variables: Vec<EntityParams> = (0..m)
        .map(|j| entity_from_mean(family, (means[j] - factor_mean).max(EPS), ps[j], pis[j]))
        .collect();
    let nested_factor = entity_from_mean(family, EPS, 0.5, 0.01);
    let nested_vars: Vec<EntityParams> =
        (0..m).map(|j| entity_from_mean(family, means[j].max(EPS), ps[j], pis[j])).collect();
    Starts { moment: (Some(factor), variables), nested: Some((Some(nested_factor), nested_vars)) }
}

fn boundary_flags(x: &[f64], bounds: &[Bound], names: &[String]) -> Vec<String> {
    x.iter()
        .zip(bounds)
        .zip(names)
        .filter(|((&v, b), _)| b.on_boundary(v, 1e-6 * (1.0 + v.abs())))
        .map(|(_, n)| n.clone())
        .collect()
}

/// Runs `minimize_box` from every start and keeps the best.
fn multistart_minimize<F>(
    f: F,
    deterministic: Vec<Vec<f64>>,
    bounds: &[Bound],
    cfg: &OptimizerConfig,
    seed: u64,
) -> (crate::optim::Minimum, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let opts = cfg.minimize_options();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, JITTER_SD).expect("valid sd");
    let base = deterministic[0].clone();
    let mut starts = deterministic;
    for _ in 1..cfg.multistart {
        starts.push(base.iter().zip(bounds).map(|(&v, b)| b.clamp(v + jitter.sample(&mut rng))).collect());
    }
    let n_starts = starts.len();
    let mut best: Option<crate::optim::Minimum> = None;
    for s in &starts {
        let m = minimize_box(&f, s, bounds, &opts);
        let better = match &best {
            None => true,
            Some(b) => m.value < b.value || (!b.value.is_finite() && m.value.is_finite()),
        };
        if better {
            best = Some(m);
        }
    }
    (best.expect("at least one start"), n_starts)
}

fn full_numeric_fit(
    g: &GroupData,
    family: &ModelFamily,
    cfg: &OptimizerConfig,
    warm: Option<&GroupParameters>,
) -> Result<GroupFit> {
    let layout = FullLayout { family: *family, has_factor: g.n_cols() >= 2, m: g.n_cols() };
    let bounds = layout.bounds();
    let starts = moment_starts(g, family);
    let mut det = Vec::new();
    det.push(layout.encode(starts.moment.0.as_ref(), &starts.moment.1));
    if let Some((f, v)) = &starts.nested {
        det.push(layout.encode(f.as_ref(), v));
    }
    if let Some(w) = warm {
        det.push(layout.encode(w.factor.as_ref(), &w.variables));
    }
    let trunc = family.trunc;
    let objective = |x: &[f64]| {
        let (f, v) = layout.decode(x);
        neg_log_lik(g, f.as_ref(), &v, trunc)
    };
    let (best, n_starts) = multistart_minimize(objective, det, &bounds, cfg, data_seed(cfg, g, family));
    if !best.value.is_finite() {
        return Err(Error::Numeric(format!(
            "no start produced a finite likelihood for a {}-variable {} group",
            g.n_cols(),
            family.code()
        )));
    }
    let (factor, variables) = layout.decode(&best.x);
    Ok(GroupFit {
        params: GroupParameters { factor, variables },
        log_lik: -best.value,
        diagnostics: FitDiagnostics {
            converged: best.converged,
            iterations: best.iterations,
            n_starts_used: n_starts,
            boundary_flags: boundary_flags(&best.x, &bounds, &layout.names()),
        },
    })
}

/// Fits a single variable with no latent component.
pub fn fit_singleton(column: &[u32], family: &ModelFamily, cfg: &OptimizerConfig) -> Result<GroupFit> {
    cfg.validate()?;
    let g = GroupData::new(vec![column.to_vec()])?;
    if let Some(a) = family.trunc {
        if let Some(&v) = column.iter().find(|&&v| v > a) {
            return Err(Error::Data(format!("value {v} exceeds the truncation bound {a}")));
        }
    }
    let mean = g.means()[0];
    if !family.is_exponential_family() {
        return full_numeric_fit(&g, family, cfg, None);
    }
    let mut flags = Vec::new();
    let mu = if mean <= EPS {
        flags.push("var1.mean".to_string());
        EPS
    } else {
        mean
    };
    match family.base {
        Base::Poisson => {
            if !flags.is_empty() {
                flags = vec!["var1.rate".to_string()];
            }
            let vp = EntityParams::plain(BaseParams::Poisson { rate: mu });
            let log_lik = likelihood::singleton_unchecked(column, &vp, None);
            Ok(GroupFit {
                params: GroupParameters { factor: None, variables: vec![vp] },
                log_lik,
                diagnostics: FitDiagnostics {
                    converged: true,
                    iterations: 0,
                    n_starts_used: 1,
                    boundary_flags: flags,
                },
            })
        }
        Base::NegBin => {
            let entity = |t: f64| {
                let p = sigmoid(t);
                EntityParams::plain(BaseParams::NegBin { r: (mu * p / (1.0 - p)).max(EPS), p })
            };
            let b = prob_bound();
            let obj = |t: f64| -likelihood::singleton_unchecked(column, &entity(t), None);
            let (t, value, evals) = minimize_scalar(obj, b.lo, b.hi, 41, 1e-10);
            if b.on_boundary(t, 1e-6) {
                flags.push("var1.p".to_string());
            }
            Ok(GroupFit {
                params: GroupParameters { factor: None, variables: vec![entity(t)] },
                log_lik: -value,
                diagnostics: FitDiagnostics {
                    converged: value.is_finite(),
                    iterations: evals,
                    n_starts_used: 1,
                    boundary_flags: flags,
                },
            })
        }
    }
}

/// Plain Poisson group: one-dimensional search over the factor rate with
/// `θ_j = ȳ_j - θ₀`.
fn fit_poisson_reduced(g: &GroupData) -> GroupFit {
    let means = g.means();
    let min_mean = means.iter().copied().fold(f64::INFINITY, f64::min);
    let build = |t0: f64| {
        let factor = EntityParams::plain(BaseParams::Poisson { rate: t0 });
        let vars: Vec<EntityParams> = means
            .iter()
            .map(|&mu| EntityParams::plain(BaseParams::Poisson { rate: (mu - t0).max(EPS) }))
            .collect();
        (factor, vars)
    };
    let upper = min_mean - EPS;
    if upper <= EPS {
        let (factor, vars) = build(EPS);
        let log_lik = -neg_log_lik(g, Some(&factor), &vars, None);
        return GroupFit {
            params: GroupParameters { factor: Some(factor), variables: vars },
            log_lik,
            diagnostics: FitDiagnostics {
                converged: true,
                iterations: 0,
                n_starts_used: 1,
                boundary_flags: vec!["factor.rate".into()],
            },
        };
    }
    let obj = |s: f64| {
        let (factor, vars) = build(s.exp());
        neg_log_lik(g, Some(&factor), &vars, None)
    };
    let (lo, hi) = (EPS.ln(), upper.ln());
    let (s, value, evals) = minimize_scalar(obj, lo, hi, 40, 1e-11);
    let t0 = s.exp();
    let (factor, vars) = build(t0);
    let mut flags = Vec::new();
    if s - lo <= 1e-6 || hi - s <= 1e-6 {
        flags.push("factor.rate".to_string());
    }
    GroupFit {
        params: GroupParameters { factor: Some(factor), variables: vars },
        log_lik: -value,
        diagnostics: FitDiagnostics {
            converged: value.is_finite(),
            iterations: evals,
            n_starts_used: 1,
            boundary_flags: flags,
        },
    }
}

/// Plain negative binomial group, searched over the factor mean share,
/// `p₀`, and `p_1..p_m`; each `r_j` follows from `μ_j = ȳ_j - μ₀`.
fn fit_negbin_reduced(
    g: &GroupData,
    cfg: &OptimizerConfig,
    warm: Option<&GroupParameters>,
) -> GroupFit {
    let family = ModelFamily::negbin();
    let means = g.means();
    let m = g.n_cols();
    let min_mean = means.iter().copied().fold(f64::INFINITY, f64::min).max(2.0 * EPS);
    let share = Bound::new(logit(EPS / min_mean), logit(PROB_HI));
    let mut bounds = vec![share, prob_bound()];
    bounds.extend(std::iter::repeat_n(prob_bound(), m));
    let decode = |x: &[f64]| {
        let mu0 = min_mean * sigmoid(x[0]);
        let p0 = sigmoid(x[1]);
        let factor = EntityParams::plain(BaseParams::NegBin { r: (mu0 * p0 / (1.0 - p0)).max(1e-300), p: p0 });
        let vars: Vec<EntityParams> = (0..m)
            .map(|j| {
                let pj = sigmoid(x[2 + j]);
                let mu = (means[j] - mu0).max(EPS);
                EntityParams::plain(BaseParams::NegBin { r: mu * pj / (1.0 - pj), p: pj })
            })
            .collect();
        (factor, vars)
    };
    let encode = |f: &EntityParams, vars: &[EntityParams]| {
        let mu0 = crate::distributions::mean(&f.base);
        let p_of = |e: &EntityParams| match e.base {
            BaseParams::NegBin { p, .. } => p,
            BaseParams::Poisson { .. } => 0.5,
        };
        let mut x = vec![share.clamp(logit((mu0 / min_mean).clamp(1e-12, PROB_HI))), logit(p_of(f).clamp(PROB_LO, PROB_HI))];
        x.extend(vars.iter().map(|v| logit(p_of(v).clamp(PROB_LO, PROB_HI))));
        x
    };
    let starts = moment_starts(g, &family);
    let mut det = vec![encode(starts.moment.0.as_ref().unwrap(), &starts.moment.1)];
    if let Some((Some(f), v)) = &starts.nested {
        det.push(encode(f, v));
    }
    if let Some(w) = warm {
        if let Some(f) = &w.factor {
            det.push(encode(f, &w.variables));
        }
    }
    let objective = |x: &[f64]| {
        let (f, v) = decode(x);
        neg_log_lik(g, Some(&f), &v, None)
    };
    let (best, n_starts) = multistart_minimize(objective, det, &bounds, cfg, data_seed(cfg, g, &family));
    let (factor, variables) = decode(&best.x);
    let mut names = vec!["factor.mean".to_string(), "factor.p".to_string()];
    names.extend((1..=m).map(|j| format!("var{j}.p")));
    GroupFit {
        params: GroupParameters { factor: Some(factor), variables },
        log_lik: -best.value,
        diagnostics: FitDiagnostics {
            converged: best.converged,
            iterations: best.iterations,
            n_starts_used: n_starts,
            boundary_flags: boundary_flags(&best.x, &bounds, &names),
        },
    }
}

/// Fits a group of two or more variables.
pub fn fit_group(g: &GroupData, family: &ModelFamily, cfg: &OptimizerConfig) -> Result<GroupFit> {
    fit_group_warm(g, family, cfg, None)
}

/// [`fit_group`] with an extra starting point, typically assembled from the
/// fits of the groups being merged.
pub fn fit_group_warm(
    g: &GroupData,
    family: &ModelFamily,
    cfg: &OptimizerConfig,
    warm: Option<&GroupParameters>,
) -> Result<GroupFit> {
    cfg.validate()?;
    if g.n_cols() < 2 {
        return Err(Error::Structural("fit_group needs at least two variables".into()));
    }
    if let Some(a) = family.trunc {
        if g.max_value() > a {
            return Err(Error::Data(format!(
                "value {} exceeds the truncation bound {a}",
                g.max_value()
            )));
        }
    }
    if let Some(w) = warm {
        w.validate(family, g.n_cols())?;
    }
    let fit = match (family.is_exponential_family(), family.base) {
        (true, Base::Poisson) => fit_poisson_reduced(g),
        (true, Base::NegBin) => fit_negbin_reduced(g, cfg, warm),
        (false, _) => full_numeric_fit(g, family, cfg, warm)?,
    };
    if !fit.log_lik.is_finite() {
        return Err(Error::Numeric("group fit ended at a non-finite likelihood".into()));
    }
    Ok(fit)
}

/// Fits whichever kind of group `members` forms.
pub fn fit_any_group(
    d: &Dataset,
    members: &[usize],
    family: &ModelFamily,
    cfg: &OptimizerConfig,
    warm: Option<&GroupParameters>,
) -> Result<GroupFit> {
    if members.len() == 1 {
        fit_singleton(d.column(members[0]), family, cfg)
    } else {
        fit_group_warm(&GroupData::from_dataset(d, members)?, family, cfg, warm)
    }
}

/// Builds a starting point for the union of two fitted groups: keep the
/// factor of the part that has one (the larger if both do), and shift the
/// other part's variable means down by that factor's mean.
pub fn merged_warm_start(
    family: &ModelFamily,
    left: (&[usize], &GroupParameters),
    right: (&[usize], &GroupParameters),
) -> (Vec<usize>, GroupParameters) {
    let (primary, secondary) = match (&left.1.factor, &right.1.factor) {
        (Some(_), Some(_)) if right.0.len() > left.0.len() => (right, left),
        (None, Some(_)) => (right, left),
        _ => (left, right),
    };
    let factor = primary.1.factor.unwrap_or_else(|| entity_from_mean(family, EPS, 0.5, 0.01));
    let f_mean = factor.mean();
    let mut members: Vec<(usize, EntityParams)> =
        primary.0.iter().copied().zip(primary.1.variables.iter().copied()).collect();
    let old_factor_mean = secondary.1.factor.map_or(0.0, |f| f.mean());
    for (&j, v) in secondary.0.iter().zip(&secondary.1.variables) {
        let marginal = v.mean() + old_factor_mean;
        let target = (marginal - f_mean).max(EPS);
        let p = match v.base {
            BaseParams::NegBin { p, .. } => p,
            BaseParams::Poisson { .. } => 0.5,
        };
        members.push((j, entity_from_mean(family, target, p, v.pi.unwrap_or(0.01))));
    }
    members.sort_by_key(|(j, _)| *j);
    let (idx, variables): (Vec<usize>, Vec<EntityParams>) = members.into_iter().unzip();
    (idx, GroupParameters { factor: Some(factor), variables })
}

type CacheKey = (Vec<usize>, ModelFamily);

/// Memoised group fits keyed by (sorted member set, family). Safe to share
/// between threads; identical keys always map to identical fits.
#[derive(Debug, Default)]
pub struct GroupFitCache {
    map: Mutex<HashMap<CacheKey, GroupFit>>,
    fits: AtomicUsize,
    hits: AtomicUsize,
}

impl GroupFitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, members: &[usize], family: &ModelFamily) -> Option<GroupFit> {
        let found = self.map.lock().expect("cache lock").get(&(members.to_vec(), *family)).cloned();
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    pub fn contains(&self, members: &[usize], family: &ModelFamily) -> bool {
        self.map.lock().expect("cache lock").contains_key(&(members.to_vec(), *family))
    }

    pub fn insert(&self, members: &[usize], family: &ModelFamily, fit: GroupFit) {
        self.map.lock().expect("cache lock").insert((members.to_vec(), *family), fit);
    }

    /// Returns the cached fit or computes, stores and returns it.
    pub fn get_or_fit(
        &self,
        d: &Dataset,
        members: &[usize],
        family: &ModelFamily,
        cfg: &OptimizerConfig,
        warm: Option<&GroupParameters>,
    ) -> Result<GroupFit> {
        if let Some(f) = self.get(members, family) {
            return Ok(f);
        }
        let fit = fit_any_group(d, members, family, cfg, warm)?;
        self.fits.fetch_add(1, Ordering::Relaxed);
        self.insert(members, family, fit.clone());
        Ok(fit)
    }

    /// Number of optimisations run through this cache.
    pub fn fits(&self) -> usize {
        self.fits.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rejects data that cannot be fitted under `family`.
pub fn check_data_for_family(d: &Dataset, family: &ModelFamily) -> Result<()> {
    if let Some(a) = family.trunc {
        for (j, col) in d.columns().iter().enumerate() {
            if let Some(i) = col.iter().position(|&v| v > a) {
                return Err(Error::Data(format!(
                    "value {} at row {}, column {} exceeds the truncation bound {a}",
                    col[i],
                    i + 1,
                    d.names()[j]
                )));
            }
        }
    }
    Ok(())
}

/// Fits every group of `partition` (through the cache) and assembles the model.
pub fn fit_model(
    d: &Dataset,
    partition: &Partition,
    family: &ModelFamily,
    cfg: &OptimizerConfig,
    cache: &GroupFitCache,
) -> Result<FitResult> {
    let start = Instant::now();
    family.validate()?;
    cfg.validate()?;
    if partition.n_vars() != d.n_vars() {
        return Err(Error::Structural("partition does not cover the dataset".into()));
    }
    check_data_for_family(d, family)?;
    let fits = partition
        .groups()
        .iter()
        .map(|members| cache.get_or_fit(d, members, family, cfg, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(d, partition, family, fits, start.elapsed().as_secs_f64()))
}

pub(crate) fn assemble(
    d: &Dataset,
    partition: &Partition,
    family: &ModelFamily,
    fits: Vec<GroupFit>,
    wall_time: f64,
) -> FitResult {
    let mut total = likelihood::KahanSum::default();
    for f in &fits {
        total.add(f.log_lik);
    }
    let log_lik = total.value();
    let n_params = parameter_count(partition, family);
    let (aic, aic_normalized) = aic(log_lik, n_params, d.n_rows());
    let converged = fits.iter().all(|f| f.diagnostics.converged);
    let (params, diagnostics) = fits.into_iter().map(|f| (f.params, f.diagnostics)).unzip();
    FitResult {
        partition: partition.clone(),
        family: *family,
        params,
        diagnostics,
        log_lik,
        n_params,
        aic,
        aic_normalized,
        n_rows: d.n_rows(),
        converged,
        wall_time,
    }
}
