//! Command-line surface: CSV ingestion and validation, fitting, simulation
//! and data checks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{fit_singleton, FitResult, OptimizerConfig};
use crate::report::{trace_text, Report};
use crate::search::forward_search;
use crate::simulate::{simulate, SimSpec};
use crate::types::{parameter_count, Dataset, GroupParameters, ModelFamily, Partition};

/// Correlations below this trigger an instability warning.
pub const NEGATIVE_CORRELATION_THRESHOLD: f64 = -0.50;

#[derive(Debug, Parser)]
#[command(name = "discfa", version, about = "Discrete factor analysis for count data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select and fit a factor model by forward AIC search.
    Fit(FitArgs),
    /// Generate a dataset from a JSON simulation spec.
    Simulate(SimulateArgs),
    /// Validate a CSV file and report correlation warnings.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum FamilyCode {
    P,
    Pt,
    Zip,
    Zipt,
    Nb,
    Nbt,
    Zinb,
    Zinbt,
}

impl FamilyCode {
    fn as_str(self) -> &'static str {
        match self {
            FamilyCode::P => "p",
            FamilyCode::Pt => "pt",
            FamilyCode::Zip => "zip",
            FamilyCode::Zipt => "zipt",
            FamilyCode::Nb => "nb",
            FamilyCode::Nbt => "nbt",
            FamilyCode::Zinb => "zinb",
            FamilyCode::Zinbt => "zinbt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub family: FamilyCode,
    /// Truncation bound A; required for the *t families.
    #[arg(long)]
    pub trunc: Option<u32>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub output: OutputFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for candidate fits (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 3)]
    pub multistart: usize,
    /// Subtract this from every cell before fitting (e.g. 1 for 1-based Likert items).
    #[arg(long, default_value_t = 0)]
    pub shift: u32,
    /// Fit a lone variable instead of failing when the file has one column.
    #[arg(long)]
    pub allow_single: bool,
    /// Include the step-by-step search trace in text output.
    #[arg(long)]
    pub verbose: bool,
    /// Leave wall-clock timing out of the report.
    #[arg(long)]
    pub no_timing: bool,
}

impl FitArgs {
    pub fn new(input: impl Into<PathBuf>, family: FamilyCode) -> Self {
        FitArgs {
            input: input.into(),
            family,
            trunc: None,
            output: OutputFormat::Text,
            seed: 0,
            threads: 0,
            rel_tol: 1e-9,
            max_iter: 500,
            multistart: 3,
            shift: 0,
            allow_single: false,
            verbose: false,
            no_timing: false,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
            multistart: self.multistart,
            seed: self.seed,
        }
    }

    fn call(&self) -> String {
        let mut s = format!("discfa fit --family {}", self.family.as_str());
        if let Some(a) = self.trunc {
            s.push_str(&format!(" --trunc {a}"));
        }
        if self.shift > 0 {
            s.push_str(&format!(" --shift {}", self.shift));
        }
        let name = self.input.file_name().map_or_else(
            || self.input.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        s.push_str(&format!(" --input {name}"));
        s
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON simulation spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub shift: u32,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub output: OutputFormat,
}

/// Reads a header + integer-cell CSV file into a dataset.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Input(format!("bad CSV header: {e}")))?;
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Input("CSV has no header row".into()));
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("bad CSV row {}: {e}", i + 1)))?;
        if record.len() > names.len() {
            return Err(Error::Data(format!(
                "row {} has {} cells but the header has {}",
                i + 1,
                record.len(),
                names.len()
            )));
        }
        for (j, name) in names.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                return Err(Error::Data(format!(
                    "missing value at row {}, column {name}; impute missing data before fitting \
                     (e.g. multiple imputation) or drop incomplete rows",
                    i + 1
                )));
            }
            let value: i64 = match cell.parse() {
                Ok(v) => v,
                Err(_) => {
                    let msg = if cell.parse::<f64>().is_ok() {
                        format!("non-integer value {cell:?} at row {}, column {name}", i + 1)
                    } else {
                        format!("unparseable value {cell:?} at row {}, column {name}", i + 1)
                    };
                    return Err(Error::Data(msg));
                }
            };
            if value < 0 {
                return Err(Error::Data(format!(
                    "negative values in the data: {value} at row {}, column {name}",
                    i + 1
                )));
            }
            let value = u32::try_from(value).map_err(|_| {
                Error::Data(format!("value {value} at row {}, column {name} is too large", i + 1))
            })?;
            columns[j].push(value);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Data("CSV has a header but no data rows".into()));
    }
    Dataset::new(names, columns).map_err(|e| match e {
        Error::Input(m) => Error::Data(m),
        other => other,
    })
}

/// Writes a dataset in the same CSV layout `load_csv` reads.
pub fn write_csv<W: Write>(d: &Dataset, w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    writer.write_record(d.names()).map_err(io)?;
    for i in 0..d.n_rows() {
        writer.write_record(d.row(i).iter().map(u32::to_string)).map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub name: String,
    pub zero_fraction: f64,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataCheck {
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub columns: Vec<ColumnSummary>,
}

/// Flags strongly negatively correlated pairs and summarises each column.
pub fn check_data(d: &Dataset) -> DataCheck {
    let n = d.n_rows() as f64;
    let stats: Vec<(f64, f64)> = d
        .columns()
        .iter()
        .map(|c| {
            let mean = c.iter().map(|&v| v as f64).sum::<f64>() / n;
            let ss = c.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
            (mean, ss)
        })
        .collect();
    let mut warnings = Vec::new();
    let mut notes = Vec::new();
    for (j, (_, ss)) in stats.iter().enumerate() {
        if *ss == 0.0 {
            notes.push(format!(
                "column {} is constant; its correlations are undefined",
                d.names()[j]
            ));
        }
    }
    for a in 0..d.n_vars() {
        for b in a + 1..d.n_vars() {
            let (ma, sa) = stats[a];
            let (mb, sb) = stats[b];
            if sa == 0.0 || sb == 0.0 {
                continue;
            }
            let cross: f64 = d
                .column(a)
                .iter()
                .zip(d.column(b))
                .map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb))
                .sum();
            let r = cross / (sa * sb).sqrt();
            if r < NEGATIVE_CORRELATION_THRESHOLD {
                warnings.push(format!(
                    "strong negative correlation ({r:.2}) between {} and {}; findings may not be stable",
                    d.names()[a],
                    d.names()[b]
                ));
            }
        }
    }
    let columns = d
        .columns()
        .iter()
        .zip(d.names())
        .map(|(c, name)| ColumnSummary {
            name: name.clone(),
            zero_fraction: c.iter().filter(|&&v| v == 0).count() as f64 / n,
            max: c.iter().copied().max().unwrap_or(0),
        })
        .collect();
    DataCheck { warnings, notes, columns }
}

fn load_for_fit(input: &Path, shift: u32) -> Result<Dataset> {
    let d = load_csv(input)?;
    if shift > 0 {
        d.shifted(shift)
    } else {
        Ok(d)
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the forward search (or a lone singleton fit) and builds the report.
pub fn run_fit(args: &FitArgs) -> Result<Report> {
    let family = ModelFamily::from_code(args.family.as_str(), args.trunc)?;
    let cfg = args.optimizer();
    cfg.validate()?;
    let d = load_for_fit(&args.input, args.shift)?;
    if let Some(a) = family.trunc {
        let max = d.max_value();
        if max > a {
            return Err(Error::Data(format!(
                "data contain the value {max}, above the truncation bound {a}"
            )));
        }
    }
    let check = check_data(&d);
    let (fit, trace) = if d.n_vars() < 2 {
        if !args.allow_single {
            return Err(Error::Input(
                "the search needs at least two variables; pass --allow-single to fit one variable"
                    .into(),
            ));
        }
        (single_variable_fit(&d, &family, &cfg)?, None)
    } else {
        let (fit, trace) = with_threads(args.threads, || forward_search(&d, &family, &cfg))??;
        (fit, Some(trace))
    };
    let mut report = Report::new(args.call(), &d, &fit, &cfg);
    report.warnings.extend(check.warnings);
    report.notes.extend(check.notes);
    report.trace = trace;
    if args.no_timing {
        report.wall_time_secs = None;
    }
    debug_assert_eq!(report.listed_parameter_count(), parameter_count(&fit.partition, &family));
    Ok(report)
}

fn single_variable_fit(d: &Dataset, family: &ModelFamily, cfg: &OptimizerConfig) -> Result<FitResult> {
    let start = std::time::Instant::now();
    let g = fit_singleton(d.column(0), family, cfg)?;
    let partition = Partition::independence(1);
    let n_params = parameter_count(&partition, family);
    let (aic, aic_normalized) = crate::estimation::aic(g.log_lik, n_params, d.n_rows());
    Ok(FitResult {
        partition,
        family: *family,
        params: vec![GroupParameters { factor: None, variables: g.params.variables }],
        converged: g.diagnostics.converged,
        diagnostics: vec![g.diagnostics],
        log_lik: g.log_lik,
        n_params,
        aic,
        aic_normalized,
        n_rows: d.n_rows(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

pub fn render_fit(report: &Report, args: &FitArgs) -> String {
    match args.output {
        OutputFormat::Json => report.to_json() + "\n",
        OutputFormat::Text => report.to_text(args.verbose),
    }
}

/// Reads a simulation spec, generates the data and writes CSV. Returns a
/// one-paragraph summary of the generating configuration.
pub fn run_simulate(args: &SimulateArgs) -> Result<String> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.spec.display())))?;
    let spec: SimSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("bad simulation spec: {e}")))?;
    let d = simulate(&spec)?;
    match &args.out {
        Some(path) => write_csv(&d, fs::File::create(path)?)?,
        None => write_csv(&d, std::io::stdout().lock())?,
    }
    let partition = Partition::from_one_based(&spec.partition, spec.n_vars())?;
    Ok(format!(
        "simulated {} rows x {} variables from a {} {} model (seed {})",
        spec.n,
        spec.n_vars(),
        spec.family.describe(),
        partition,
        spec.seed
    ))
}

pub fn run_check(args: &CheckArgs) -> Result<String> {
    let d = load_for_fit(&args.input, args.shift)?;
    let check = check_data(&d);
    Ok(match args.output {
        OutputFormat::Json => serde_json::to_string_pretty(&check)? + "\n",
        OutputFormat::Text => {
            let mut out = format!("{} rows, {} variables\n", d.n_rows(), d.n_vars());
            for c in &check.columns {
                out.push_str(&format!(
                    "  {:<12} zeros {:>6.2}%  max {}\n",
                    c.name,
                    100.0 * c.zero_fraction,
                    c.max
                ));
            }
            for w in &check.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
            for n in &check.notes {
                out.push_str(&format!("note: {n}\n"));
            }
            out
        }
    })
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Fit(args) => run_fit(args).map(|r| {
            print!("{}", render_fit(&r, args));
            if args.verbose && args.output == OutputFormat::Json {
                if let Some(t) = &r.trace {
                    eprint!("{}", trace_text(t));
                }
            }
        }),
        Command::Simulate(args) => run_simulate(args).map(|s| eprintln!("{s}")),
        Command::Check(args) => run_check(args).map(|s| print!("{s}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_examples() {
        let d = parse_csv("a,b\n0,1\n2,3\n1,1").unwrap();
        assert_eq!((d.n_rows(), d.n_vars()), (3, 2));
        let e = parse_csv("a,b\n0,1\n-1,3\n").unwrap_err();
        assert!(matches!(e, Error::Data(_)));
        let msg = e.to_string();
        assert!(msg.contains("negative") && msg.contains("row 2") && msg.contains("column a"), "{msg}");
        let e = parse_csv("a,b\n0,1.5\n").unwrap_err();
        assert!(e.to_string().contains("non-integer"), "{e}");
        let e = parse_csv("a,b\n0,\n").unwrap_err();
        assert!(e.to_string().contains("impute"), "{e}");
        let e = parse_csv("a,b\n0\n").unwrap_err();
        assert!(e.to_string().contains("missing"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn correlation_warnings() {
        // columns with correlation close to -0.58
        let rows = [(0, 0), (1, 1), (2, 0), (3, 0), (1, 1), (2, 0), (0, 1), (3, 0)];
        let mut text = String::from("x3,x4\n");
        for (a, b) in rows {
            text.push_str(&format!("{a},{b}\n"));
        }
        let d = parse_csv(&text).unwrap();
        let check = check_data(&d);
        assert_eq!(check.warnings.len(), 1, "{check:?}");
        assert!(check.warnings[0].contains("-0.58"), "{}", check.warnings[0]);

        let d = parse_csv("a,b,c\n1,0,2\n1,1,0\n1,2,1\n").unwrap();
        let check = check_data(&d);
        assert!(check.warnings.is_empty());
        assert_eq!(check.notes.len(), 1);
        assert_eq!(check.columns[1].max, 2);
        assert!((check.columns[1].zero_fraction - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn call_string_omits_threads() {
        let mut a = FitArgs::new("/tmp/some/data.csv", FamilyCode::Zipt);
        a.trunc = Some(6);
        a.threads = 8;
        assert_eq!(a.call(), "discfa fit --family zipt --trunc 6 --input data.csv");
    }
}
