//! Human-readable and JSON reports of a fitted model.

use std::fmt::Write as _;

use serde::Serialize;

use crate::distributions::{BaseParams, EntityParams};
use crate::estimation::{FitDiagnostics, FitResult, OptimizerConfig};
use crate::search::SearchTrace;
use crate::types::{Base, Dataset, ModelFamily};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub label: String,
    pub variables: Vec<String>,
    pub factor: Option<EntityParams>,
    pub variable_params: Vec<EntityParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub call: String,
    pub model: String,
    pub family: ModelFamily,
    pub family_code: String,
    pub n_rows: usize,
    pub n_vars: usize,
    pub log_lik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub aic_normalized: f64,
    pub converged: bool,
    pub groups: Vec<GroupReport>,
    pub diagnostics: Vec<FitDiagnostics>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub optimizer: OptimizerConfig,
    pub wall_time_secs: Option<f64>,
    pub trace: Option<SearchTrace>,
}

impl Report {
    pub fn new(call: String, d: &Dataset, fit: &FitResult, cfg: &OptimizerConfig) -> Self {
        let groups = fit
            .partition
            .groups()
            .iter()
            .zip(&fit.params)
            .enumerate()
            .map(|(k, (members, gp))| GroupReport {
                label: format!("Factor{}", k + 1),
                variables: members.iter().map(|&j| d.names()[j].clone()).collect(),
                factor: gp.factor,
                variable_params: gp.variables.clone(),
            })
            .collect();
        let mut warnings = Vec::new();
        if !fit.converged {
            warnings.push(
                "at least one group fit did not converge; estimates may not be maxima".to_string(),
            );
        }
        Report {
            schema: SCHEMA_VERSION,
            call,
            model: fit.partition.to_string(),
            family: fit.family,
            family_code: fit.family.code(),
            n_rows: fit.n_rows,
            n_vars: d.n_vars(),
            log_lik: fit.log_lik,
            n_params: fit.n_params,
            aic: fit.aic,
            aic_normalized: fit.aic_normalized,
            converged: fit.converged,
            groups,
            diagnostics: fit.diagnostics.clone(),
            warnings,
            notes: Vec::new(),
            optimizer: *cfg,
            wall_time_secs: Some(fit.wall_time),
            trace: None,
        }
    }

    /// Number of parameter values listed across all tables.
    pub fn listed_parameter_count(&self) -> usize {
        let per = self.family.params_per_entity();
        self.groups
            .iter()
            .map(|g| per * (g.variable_params.len() + usize::from(g.factor.is_some())))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self, verbose: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Call:\n{}\n", self.call);
        let _ = writeln!(out, "Family: {}\n", self.family.describe());
        let _ = writeln!(out, "This is a {} model.\n", self.model);
        let _ = writeln!(out, "AIC value is {}.", fmt4(self.aic_normalized));
        let _ = writeln!(
            out,
            "Raw AIC {} (log-likelihood {}, {} parameters, n = {}).\n",
            fmt4(self.aic),
            fmt4(self.log_lik),
            self.n_params,
            self.n_rows
        );
        let _ = writeln!(out, "Factors and variables in each factor:");
        out.push_str(&self.table(|g| g.variables.clone()));
        out.push('\n');

        let zi = self.family.zero_inflated;
        if zi {
            let _ = writeln!(out, "Estimated zero-inflated parameters for each variable within each factor:");
            out.push_str(&self.param_table(|e| e.pi.unwrap_or(0.0)));
            out.push('\n');
        }
        match self.family.base {
            Base::Poisson => {
                let _ = writeln!(out, "Estimated parameters for each variable within each factor:");
                out.push_str(&self.param_table(rate_of));
                out.push('\n');
            }
            Base::NegBin => {
                let _ = writeln!(out, "Estimated value of r for each variable within each factor:");
                out.push_str(&self.param_table(|e| nb_of(e).0));
                out.push('\n');
                let _ = writeln!(out, "Estimated value of p for each variable within each factor:");
                out.push_str(&self.param_table(|e| nb_of(e).1));
                out.push('\n');
            }
        }
        let factors: Vec<&EntityParams> = self.groups.iter().filter_map(|g| g.factor.as_ref()).collect();
        if zi {
            let _ = writeln!(out, "Estimated zero-inflated parameters for factors:");
            let _ = writeln!(out, "{}\n", join_values(factors.iter().map(|e| e.pi.unwrap_or(0.0))));
        }
        match self.family.base {
            Base::Poisson => {
                let _ = writeln!(out, "Estimated parameters for factors:");
                let _ = writeln!(out, "{}\n", join_values(factors.iter().map(|e| rate_of(e))));
            }
            Base::NegBin => {
                let _ = writeln!(out, "Estimated value of r for factors:");
                let _ = writeln!(out, "{}\n", join_values(factors.iter().map(|e| nb_of(e).0)));
                let _ = writeln!(out, "Estimated value of p for factors:");
                let _ = writeln!(out, "{}\n", join_values(factors.iter().map(|e| nb_of(e).1)));
            }
        }

        let flagged: Vec<String> = self
            .groups
            .iter()
            .zip(&self.diagnostics)
            .filter(|(_, d)| !d.converged || !d.boundary_flags.is_empty())
            .map(|(g, d)| {
                let mut s = format!("{}:", g.label);
                if !d.converged {
                    s.push_str(" not converged;");
                }
                if !d.boundary_flags.is_empty() {
                    let _ = write!(s, " on bound: {}", d.boundary_flags.join(", "));
                }
                s
            })
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "Diagnostics:");
            for f in flagged {
                let _ = writeln!(out, "  {f}");
            }
            out.push('\n');
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(out, "Warnings:");
            for w in &self.warnings {
                let _ = writeln!(out, "  {w}");
            }
            out.push('\n');
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out, "Notes:");
            for n in &self.notes {
                let _ = writeln!(out, "  {n}");
            }
            out.push('\n');
        }
        if verbose {
            if let Some(trace) = &self.trace {
                out.push_str(&trace_text(trace));
                out.push('\n');
            }
        }
        if let Some(t) = self.wall_time_secs {
            let _ = writeln!(out, "Timing:\n{t:.3} secs");
        }
        out
    }

    fn param_table(&self, pick: impl Fn(&EntityParams) -> f64) -> String {
        self.table(|g| g.variable_params.iter().map(|e| fmt4(pick(e))).collect())
    }

    /// One column per group, rows numbered like the membership table.
    fn table(&self, cells: impl Fn(&GroupReport) -> Vec<String>) -> String {
        let columns: Vec<(String, Vec<String>)> =
            self.groups.iter().map(|g| (g.label.clone(), cells(g))).collect();
        let depth = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
        let width = columns
            .iter()
            .flat_map(|(h, c)| std::iter::once(h.len()).chain(c.iter().map(String::len)))
            .max()
            .unwrap_or(0);
        let index_width = depth.to_string().len();
        let mut out = String::new();
        let _ = write!(out, "{:index_width$}", "");
        for (h, _) in &columns {
            let _ = write!(out, " {h:<width$}");
        }
        out.push('\n');
        for r in 0..depth {
            let _ = write!(out, "{:<index_width$}", r + 1);
            for (_, c) in &columns {
                let _ = write!(out, " {:<width$}", c.get(r).map(String::as_str).unwrap_or(""));
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        }
        out
    }
}

fn rate_of(e: &EntityParams) -> f64 {
    match e.base {
        BaseParams::Poisson { rate } => rate,
        BaseParams::NegBin { .. } => f64::NAN,
    }
}

fn nb_of(e: &EntityParams) -> (f64, f64) {
    match e.base {
        BaseParams::NegBin { r, p } => (r, p),
        BaseParams::Poisson { .. } => (f64::NAN, f64::NAN),
    }
}

/// Four-decimal rendering used everywhere in text output.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn join_values(vals: impl Iterator<Item = f64>) -> String {
    let v: Vec<String> = vals.map(fmt4).collect();
    if v.is_empty() {
        "(none)".to_string()
    } else {
        v.join(" ")
    }
}

pub fn trace_text(trace: &SearchTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Search trace:");
    let _ = writeln!(
        out,
        "  independence {} AIC/n {}",
        trace.independence.groups,
        fmt4(trace.independence.aic_normalized)
    );
    for step in &trace.steps {
        let _ = writeln!(
            out,
            "  step {} (incumbent {} AIC/n {}, {} new group fits)",
            step.step,
            step.incumbent.model,
            fmt4(step.incumbent.aic_normalized),
            step.new_group_fits
        );
        for (k, c) in step.candidates.iter().enumerate() {
            let mark = if step.chosen == Some(k) { '*' } else { ' ' };
            let _ = writeln!(out, "   {mark} {:<28} {}", c.groups, fmt4(c.aic_normalized));
        }
    }
    let _ = writeln!(out, "  group fits {}, cache hits {}", trace.total_fits, trace.cache_hits);
    out
}
