//! Forward stepwise model selection by AIC.
//!
//! The search starts at the independence model and, at every step, tries
//! every pairwise merge of the incumbent's groups. The best candidate is
//! adopted only if its AIC is strictly lower than the incumbent's. Group
//! fits are cached, so a step after the first only optimises the groups
//! that contain the most recently merged one.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{
    assemble, check_data_for_family, fit_model, merged_warm_start, FitResult, GroupFitCache,
    OptimizerConfig,
};
use crate::types::{Dataset, ModelFamily, Partition};

/// AIC differences at or below this are ties.
pub const AIC_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub model: String,
    pub groups: String,
    pub log_lik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub aic_normalized: f64,
    pub converged: bool,
}

impl CandidateRecord {
    fn from_fit(fit: &FitResult) -> Self {
        CandidateRecord {
            model: fit.partition.to_string(),
            groups: fit.partition.listing(),
            log_lik: fit.log_lik,
            n_params: fit.n_params,
            aic: fit.aic,
            aic_normalized: fit.aic_normalized,
            converged: fit.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchStep {
    pub step: usize,
    pub incumbent: CandidateRecord,
    pub candidates: Vec<CandidateRecord>,
    /// Index into `candidates` of the adopted model; `None` when the search stopped here.
    pub chosen: Option<usize>,
    /// Group optimisations run during this step (cache misses).
    pub new_group_fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrace {
    pub independence: CandidateRecord,
    pub steps: Vec<SearchStep>,
    pub total_fits: usize,
    pub cache_hits: usize,
}

impl SearchTrace {
    /// AICs of the independence model followed by each adopted model.
    pub fn accepted_aics(&self) -> Vec<f64> {
        let mut out = vec![self.independence.aic];
        for s in &self.steps {
            if let Some(k) = s.chosen {
                out.push(s.candidates[k].aic);
            }
        }
        out
    }
}

/// Every pairwise merge of `p`'s groups, with the merged group indices.
pub fn candidate_models(p: &Partition) -> Vec<(Partition, (usize, usize))> {
    let g = p.n_groups();
    let mut out = Vec::with_capacity(g * g.saturating_sub(1) / 2);
    for i in 0..g {
        for j in i + 1..g {
            out.push((p.merge(i, j).expect("valid group indices"), (i, j)));
        }
    }
    out
}

/// Picks the lowest AIC; near-ties go to fewer parameters, then to the
/// lexicographically smallest canonical grouping. `None` for empty input.
pub fn tie_break(candidates: &[(Partition, FitResult)]) -> Option<usize> {
    let keys: Vec<(f64, usize, &Partition)> =
        candidates.iter().map(|(p, f)| (f.aic, f.n_params, p)).collect();
    tie_break_keys(&keys)
}

pub(crate) fn tie_break_keys(keys: &[(f64, usize, &Partition)]) -> Option<usize> {
    let best = keys.iter().map(|k| k.0).filter(|a| !a.is_nan()).fold(f64::INFINITY, f64::min);
    keys.iter()
        .enumerate()
        .filter(|(_, k)| k.0 <= best + AIC_TIE_TOL)
        .min_by(|(_, a), (_, b)| a.1.cmp(&b.1).then_with(|| a.2.cmp(b.2)))
        .map(|(i, _)| i)
}

/// Runs the forward search with a fresh cache.
pub fn forward_search(
    d: &Dataset,
    family: &ModelFamily,
    cfg: &OptimizerConfig,
) -> Result<(FitResult, SearchTrace)> {
    forward_search_with_cache(d, family, cfg, &GroupFitCache::new())
}

pub fn forward_search_with_cache(
    d: &Dataset,
    family: &ModelFamily,
    cfg: &OptimizerConfig,
    cache: &GroupFitCache,
) -> Result<(FitResult, SearchTrace)> {
    let start = Instant::now();
    if d.n_vars() < 2 {
        return Err(Error::Input("the forward search needs at least two variables".into()));
    }
    family.validate()?;
    cfg.validate()?;
    check_data_for_family(d, family)?;
    let hits_before = cache.hits();
    let fits_before = cache.fits();

    (0..d.n_vars())
        .into_par_iter()
        .map(|j| cache.get_or_fit(d, &[j], family, cfg, None).map(|_| ()))
        .collect::<Result<Vec<_>>>()?;
    let mut incumbent = fit_model(d, &Partition::independence(d.n_vars()), family, cfg, cache)?;
    let independence = CandidateRecord::from_fit(&incumbent);
    let mut steps = Vec::new();

    while incumbent.partition.n_groups() > 1 {
        let step_fits_before = cache.fits();
        let cands = candidate_models(&incumbent.partition);
        let fits: Vec<FitResult> = cands
            .par_iter()
            .map(|(p, (i, j))| evaluate_candidate(d, family, cfg, cache, &incumbent, p, *i, *j))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<CandidateRecord> = fits.iter().map(CandidateRecord::from_fit).collect();
        let keys: Vec<(f64, usize, &Partition)> =
            fits.iter().map(|f| (f.aic, f.n_params, &f.partition)).collect();
        let best = tie_break_keys(&keys).expect("at least one candidate");
        let improved = fits[best].aic < incumbent.aic;
        steps.push(SearchStep {
            step: steps.len() + 1,
            incumbent: CandidateRecord::from_fit(&incumbent),
            candidates: records,
            chosen: improved.then_some(best),
            new_group_fits: cache.fits() - step_fits_before,
        });
        if !improved {
            break;
        }
        incumbent = fits.into_iter().nth(best).expect("index in range");
    }

    incumbent.wall_time = start.elapsed().as_secs_f64();
    let trace = SearchTrace {
        independence,
        steps,
        total_fits: cache.fits() - fits_before,
        cache_hits: cache.hits() - hits_before,
    };
    Ok((incumbent, trace))
}

#[allow(clippy::too_many_arguments)]
fn evaluate_candidate(
    d: &Dataset,
    family: &ModelFamily,
    cfg: &OptimizerConfig,
    cache: &GroupFitCache,
    incumbent: &FitResult,
    candidate: &Partition,
    i: usize,
    j: usize,
) -> Result<FitResult> {
    let groups = incumbent.partition.groups();
    let (members, warm) = merged_warm_start(
        family,
        (&groups[i], &incumbent.params[i]),
        (&groups[j], &incumbent.params[j]),
    );
    cache.get_or_fit(d, &members, family, cfg, Some(&warm))?;
    let fits = candidate
        .groups()
        .iter()
        .map(|m| cache.get_or_fit(d, m, family, cfg, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(d, candidate, family, fits, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::FitDiagnostics;

    fn part(groups: &[&[usize]], n: usize) -> Partition {
        Partition::from_one_based(&groups.iter().map(|g| g.to_vec()).collect::<Vec<_>>(), n)
            .unwrap()
    }

    fn dummy(p: Partition, aic: f64, n_params: usize) -> (Partition, FitResult) {
        let fit = FitResult {
            partition: p.clone(),
            family: ModelFamily::poisson(),
            params: vec![],
            diagnostics: vec![FitDiagnostics::default()],
            log_lik: 0.0,
            n_params,
            aic,
            aic_normalized: aic,
            n_rows: 1,
            converged: true,
            wall_time: 0.0,
        };
        (p, fit)
    }

    #[test]
    fn candidate_counts() {
        let c = candidate_models(&Partition::independence(5));
        assert_eq!(c.len(), 10);
        assert!(c.iter().all(|(p, _)| p.size_multiset() == vec![1, 1, 1, 2]));
        let p = part(&[&[1, 2], &[3], &[4], &[5]], 5);
        let c = candidate_models(&p);
        assert_eq!(c.len(), 6);
        let threes = c.iter().filter(|(p, _)| p.size_multiset() == vec![1, 1, 3]).count();
        let twos = c.iter().filter(|(p, _)| p.size_multiset() == vec![1, 2, 2]).count();
        assert_eq!((threes, twos), (3, 3));
        let mut uniq: Vec<_> = c.iter().map(|(p, _)| p.clone()).collect();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 6);
        assert!(candidate_models(&part(&[&[1, 2, 3]], 3)).is_empty());
    }

    #[test]
    fn tie_break_examples() {
        let p = Partition::independence(3);
        let c = vec![dummy(p.clone(), 10.0, 5), dummy(p.clone(), 9.5, 6), dummy(p.clone(), 9.5, 4)];
        assert_eq!(tie_break(&c), Some(2));
        let c = vec![dummy(p.clone(), 3.0, 1), dummy(p.clone(), 2.0, 1), dummy(p.clone(), 1.0, 1)];
        assert_eq!(tie_break(&c), Some(2));
        let c = vec![dummy(part(&[&[1, 3], &[2]], 3), 4.0, 3), dummy(part(&[&[1, 2], &[3]], 3), 4.0, 3)];
        assert_eq!(tie_break(&c), Some(1));
        assert_eq!(tie_break(&[]), None);
    }

    #[test]
    fn single_variable_is_rejected() {
        let d = Dataset::from_rows(vec!["a".into()], &[vec![1], vec![2]]).unwrap();
        let r = forward_search(&d, &ModelFamily::poisson(), &Default::default());
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
