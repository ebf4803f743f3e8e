//! Shared data model: datasets, partitions, model families and parameter
//! bundles, plus the partition algebra used by the forward search.
//!
//! Variable indices are 0-based in memory. Everything user-facing (display
//! strings, listings, simulation specs) is 1-based.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{BaseParams, EntityParams};
use crate::error::{Error, Result};

/// Immutable n×N matrix of non-negative counts, stored column-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<u32>>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<u32>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Input("dataset has no variables".into()));
        }
        if names.len() != columns.len() {
            return Err(Error::Input(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = columns[0].len();
        if n_rows == 0 {
            return Err(Error::Input("dataset has no rows".into()));
        }
        if let Some(j) = columns.iter().position(|c| c.len() != n_rows) {
            return Err(Error::Input(format!("column {} has a different length", names[j])));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Input(format!("duplicate variable name {name:?}")));
            }
        }
        Ok(Dataset { names, columns, n_rows })
    }

    /// Builds a dataset from row-major data.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<u32>]) -> Result<Self> {
        let n_vars = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n_vars];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_vars {
                return Err(Error::Input(format!(
                    "row {} has {} cells, expected {n_vars}",
                    i + 1,
                    row.len()
                )));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Dataset::new(names, columns)
    }

    /// Default names `Var1..VarN`.
    pub fn default_names(n_vars: usize) -> Vec<String> {
        (1..=n_vars).map(|j| format!("Var{j}")).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[u32] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn max_value(&self) -> u32 {
        self.columns.iter().flat_map(|c| c.iter().copied()).max().unwrap_or(0)
    }

    /// Subtracts `k` from every cell; fails if any cell would become negative.
    pub fn shifted(&self, k: u32) -> Result<Self> {
        let mut columns = self.columns.clone();
        for (j, col) in columns.iter_mut().enumerate() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = v.checked_sub(k).ok_or_else(|| {
                    Error::Data(format!(
                        "negative values in the data after shifting by {k} (row {}, column {})",
                        i + 1,
                        self.names[j]
                    ))
                })?;
            }
        }
        Ok(Dataset { names: self.names.clone(), columns, n_rows: self.n_rows })
    }
}

/// Disjoint grouping of variable indices, kept in canonical order: groups
/// sorted by their smallest member, members sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    /// Validates coverage of `0..n_vars` and returns the canonical form.
    pub fn canonicalize(groups: Vec<Vec<usize>>, n_vars: usize) -> Result<Self> {
        let mut seen = vec![false; n_vars];
        let mut groups = groups;
        for g in &mut groups {
            if g.is_empty() {
                return Err(Error::Structural("empty group".into()));
            }
            g.sort_unstable();
            for &v in g.iter() {
                if v >= n_vars {
                    return Err(Error::Structural(format!(
                        "variable {} out of range 1..={n_vars}",
                        v + 1
                    )));
                }
                if seen[v] {
                    return Err(Error::Structural(format!("variable {} appears twice", v + 1)));
                }
                seen[v] = true;
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::Structural(format!("variable {} is not in any group", v + 1)));
        }
        groups.sort_unstable_by_key(|g| g[0]);
        Ok(Partition { groups })
    }

    /// Same as [`Partition::canonicalize`] but with 1-based indices.
    pub fn from_one_based(groups: &[Vec<usize>], n_vars: usize) -> Result<Self> {
        let shifted = groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&v| {
                        v.checked_sub(1).ok_or_else(|| {
                            Error::Structural("variable indices are 1-based".into())
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::canonicalize(shifted, n_vars)
    }

    /// The independence model `(1, 1, ..., 1)`.
    pub fn independence(n_vars: usize) -> Self {
        Partition { groups: (0..n_vars).map(|j| vec![j]).collect() }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_vars(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Group sizes sorted ascending, for order-free comparisons.
    pub fn size_multiset(&self) -> Vec<usize> {
        let mut s = self.sizes();
        s.sort_unstable();
        s
    }

    /// Unions groups `i` and `j` (0-based group indices).
    pub fn merge(&self, i: usize, j: usize) -> Result<Self> {
        let g = self.groups.len();
        if i == j || i >= g || j >= g {
            return Err(Error::Structural(format!(
                "cannot merge groups {i} and {j} of a {g}-group partition"
            )));
        }
        let mut groups = Vec::with_capacity(g - 1);
        let mut merged = self.groups[i].clone();
        merged.extend_from_slice(&self.groups[j]);
        for (k, grp) in self.groups.iter().enumerate() {
            if k == i {
                groups.push(std::mem::take(&mut merged));
            } else if k != j {
                groups.push(grp.clone());
            }
        }
        Partition::canonicalize(groups, self.n_vars())
    }

    /// 1-based listing such as `{1},{2,3,4}`.
    pub fn listing(&self) -> String {
        self.groups
            .iter()
            .map(|g| {
                let inner: Vec<String> = g.iter().map(|v| (v + 1).to_string()).collect();
                format!("{{{}}}", inner.join(","))
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the output of [`Partition::listing`].
    pub fn parse_listing(s: &str, n_vars: usize) -> Result<Self> {
        let mut groups = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            rest = rest.trim_start_matches(',').trim_start();
            let body = rest
                .strip_prefix('{')
                .ok_or_else(|| Error::Structural(format!("bad group listing {s:?}")))?;
            let end = body
                .find('}')
                .ok_or_else(|| Error::Structural(format!("unterminated group in {s:?}")))?;
            let group = body[..end]
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Structural(format!("bad index {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(group);
            rest = body[end + 1..].trim_start();
        }
        Partition::from_one_based(&groups, n_vars)
    }

    /// Parses a size tuple such as `(1, 3, 4, 2)`.
    pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| Error::Structural(format!("bad size tuple {s:?}")))?;
        inner
            .split(',')
            .map(|t| {
                t.trim().parse::<usize>().map_err(|_| Error::Structural(format!("bad size {t:?}")))
            })
            .collect()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.groups.iter().map(|g| g.len().to_string()).collect();
        write!(f, "({})", sizes.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    Poisson,
    #[serde(alias = "nb", alias = "negative_binomial")]
    NegBin,
}

/// Base distribution, zero inflation, and optional truncation bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelFamily {
    pub base: Base,
    pub zero_inflated: bool,
    #[serde(default)]
    pub trunc: Option<u32>,
}

impl ModelFamily {
    pub fn new(base: Base, zero_inflated: bool, trunc: Option<u32>) -> Result<Self> {
        let f = ModelFamily { base, zero_inflated, trunc };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunc == Some(0) {
            return Err(Error::Config("truncation bound must be at least 1".into()));
        }
        Ok(())
    }

    pub fn poisson() -> Self {
        ModelFamily { base: Base::Poisson, zero_inflated: false, trunc: None }
    }

    pub fn negbin() -> Self {
        ModelFamily { base: Base::NegBin, zero_inflated: false, trunc: None }
    }

    /// Parses one of `p, pt, zip, zipt, nb, nbt, zinb, zinbt`. Truncated
    /// codes require `trunc`; the others forbid it.
    pub fn from_code(code: &str, trunc: Option<u32>) -> Result<Self> {
        let (zi, rest) = match code.strip_prefix("zi") {
            Some(r) => (true, r),
            None => (false, code),
        };
        let (base, truncated) = match rest {
            "p" => (Base::Poisson, false),
            "pt" => (Base::Poisson, true),
            "nb" => (Base::NegBin, false),
            "nbt" => (Base::NegBin, true),
            _ => return Err(Error::Config(format!("unknown family {code:?}"))),
        };
        match (truncated, trunc) {
            (true, None) => Err(Error::Config(format!("family {code} requires --trunc"))),
            (false, Some(_)) => {
                Err(Error::Config(format!("family {code} is not truncated; drop --trunc")))
            }
            _ => ModelFamily::new(base, zi, trunc),
        }
    }

    pub fn code(&self) -> String {
        let mut s = String::new();
        if self.zero_inflated {
            s.push_str("zi");
        }
        s.push_str(match self.base {
            Base::Poisson => "p",
            Base::NegBin => "nb",
        });
        if self.trunc.is_some() {
            s.push('t');
        }
        s
    }

    /// All eight families, truncated ones at bound `a`.
    pub fn all(a: u32) -> [ModelFamily; 8] {
        let mut out = [ModelFamily::poisson(); 8];
        let mut k = 0;
        for base in [Base::Poisson, Base::NegBin] {
            for zero_inflated in [false, true] {
                for trunc in [None, Some(a)] {
                    out[k] = ModelFamily { base, zero_inflated, trunc };
                    k += 1;
                }
            }
        }
        out
    }

    /// Parameters carried by one entity (a latent factor or a variable).
    pub fn params_per_entity(&self) -> usize {
        let base = match self.base {
            Base::Poisson => 1,
            Base::NegBin => 2,
        };
        base + usize::from(self.zero_inflated)
    }

    /// Whether the mean-constraint reduction applies.
    pub fn is_exponential_family(&self) -> bool {
        !self.zero_inflated && self.trunc.is_none()
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        if self.zero_inflated {
            s.push_str("zero-inflated ");
        }
        if let Some(a) = self.trunc {
            s.push_str(&format!("truncated (A = {a}) "));
        }
        s.push_str(match self.base {
            Base::Poisson => "Poisson",
            Base::NegBin => "negative binomial",
        });
        s
    }
}

/// Total number of free parameters of a partition under a family.
pub fn parameter_count(partition: &Partition, family: &ModelFamily) -> usize {
    let k = family.params_per_entity();
    partition
        .groups()
        .iter()
        .map(|g| k * g.len() + if g.len() >= 2 { k } else { 0 })
        .sum()
}

/// Parameters of one group: the shared latent factor (absent for
/// singletons) and one entry per member variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupParameters {
    pub factor: Option<EntityParams>,
    pub variables: Vec<EntityParams>,
}

impl GroupParameters {
    /// Checks shapes and domains against a family and group size.
    pub fn validate(&self, family: &ModelFamily, size: usize) -> Result<()> {
        if self.variables.len() != size {
            return Err(Error::Structural(format!(
                "{} variable parameter sets for a group of {size}",
                self.variables.len()
            )));
        }
        if self.factor.is_some() != (size >= 2) {
            return Err(Error::Structural(
                "factor parameters must be present exactly when the group has 2+ members".into(),
            ));
        }
        for e in self.factor.iter().chain(&self.variables) {
            e.validate()?;
            let base_ok = matches!(
                (family.base, e.base),
                (Base::Poisson, BaseParams::Poisson { .. }) | (Base::NegBin, BaseParams::NegBin { .. })
            );
            if !base_ok {
                return Err(Error::Structural(format!(
                    "parameters {e:?} do not match the {} family",
                    family.code()
                )));
            }
            if e.pi.is_some() != family.zero_inflated {
                return Err(Error::Structural(
                    "zero-inflation parameters must be present exactly for zero-inflated families"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_params(&self, family: &ModelFamily) -> usize {
        family.params_per_entity() * (self.variables.len() + usize::from(self.factor.is_some()))
    }
}
