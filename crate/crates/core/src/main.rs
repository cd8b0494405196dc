use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use perccal::harness::{run_grid, subsample_study, StudyConfig, SubsampleSpec};
use perccal::intervals::{interval_set, BootConfig, IntervalEstimate, IntervalWarning, Method};
use perccal::report::{report_from_log, write_report};
use perccal::standin::{stand_in_population, DEFAULT_SIZE, RESPONSE};
use perccal::synthetic::{scenario_grid, GridConfig};
use perccal::table::{read_table, write_table, Table};

/// Bootstrap confidence intervals for regression slopes under
/// misspecification, and coverage studies for them.
#[derive(Debug, Parser)]
#[command(name = "perccal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Intervals for every coefficient of a regression on a data file.
    Ci(CiArgs),
    /// Coverage over the simulated scenario grid.
    Simulate(SimulateArgs),
    /// Coverage over repeated subsamples of a finite population.
    Subsample(SubsampleArgs),
    /// Recompute aggregate tables from a per-replication log.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Miscoverage; the nominal level is 1 - alpha.
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// First-level bootstrap resamples.
    #[arg(long, default_value_t = 2000)]
    b1: usize,
    /// Second-level bootstrap resamples per first-level resample.
    #[arg(long, default_value_t = 2000)]
    b2: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated interval methods (default: all).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
}

impl Common {
    fn level(&self) -> Result<f64> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("--alpha must lie strictly between 0 and 1");
        }
        Ok(1.0 - self.alpha)
    }

    fn methods(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            Method::ALL.to_vec()
        } else {
            let mut m: Vec<Method> = Vec::new();
            for &x in &self.methods {
                if !m.contains(&x) {
                    m.push(x);
                }
            }
            m
        }
    }

    fn boot(&self) -> BootConfig {
        BootConfig::new(self.b1, self.b2, self.seed)
    }

    fn study(&self, reps: usize) -> Result<StudyConfig> {
        Ok(StudyConfig { methods: self.methods(), level: self.level()?, reps, boot: self.boot() })
    }
}

#[derive(Debug, Args)]
struct CiArgs {
    #[command(flatten)]
    common: Common,
    /// Delimited input table with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    response: String,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Replications per cell.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// TOML file with factor levels and exclusions (default: the 48-cell grid).
    #[arg(long)]
    grid_config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Skip the per-replication log.
    #[arg(long)]
    no_log: bool,
}

#[derive(Debug, Args)]
struct SubsampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Subsample size.
    #[arg(long, default_value_t = 500)]
    m: usize,
    /// Population table; without it the synthetic stand-in population is used.
    #[arg(long, requires = "response")]
    input: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// Rows of the stand-in population.
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    population_size: usize,
    /// Seed of the stand-in population.
    #[arg(long, default_value_t = 1)]
    population_seed: u64,
    /// Write the population used to this file.
    #[arg(long)]
    write_population: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_log: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Per-replication log written by `simulate` or `subsample`.
    #[arg(long)]
    log: PathBuf,
    /// Output directory for the recomputed tables.
    #[arg(long)]
    out: PathBuf,
}

fn parse_delimiter(s: &str) -> std::result::Result<u8, String> {
    match s {
        "tab" | "\\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be a single ASCII character or `tab`, got `{s}`")),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Ci(a) => a.common.threads,
        Command::Simulate(a) => a.common.threads,
        Command::Subsample(a) => a.common.threads,
        Command::Report(_) => None,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("building the worker pool")?;
    pool.install(|| match cli.command {
        Command::Ci(a) => ci(a),
        Command::Simulate(a) => simulate(a),
        Command::Subsample(a) => subsample(a),
        Command::Report(a) => report(a),
    })
}

fn load(path: &Path, delimiter: u8, response: &str) -> Result<Table> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_table(BufReader::new(file), delimiter, response).with_context(|| format!("reading {}", path.display()))
}

fn ci(a: CiArgs) -> Result<()> {
    let level = a.common.level()?;
    let table = load(&a.input, a.delimiter, &a.response)?;
    let coefs: Vec<usize> = (0..table.data.k()).collect();
    let methods = a.common.methods();
    let set = interval_set(&table.data, &coefs, &methods, level, &a.common.boot())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["coefficient", "method", "level", "lower", "upper", "lambda_hat", "note"])?;
    for (c, row) in set.iter().enumerate() {
        for (m, est) in methods.iter().zip(row) {
            w.write_record(interval_row(&table.names[c], *m, level, est))?;
        }
    }
    let bytes = w.into_inner()?;
    io::stdout().write_all(&bytes)?;
    if let Some(out) = a.out {
        fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn interval_row(name: &str, method: Method, level: f64, est: &perccal::Result<IntervalEstimate>) -> Vec<String> {
    let mut row = vec![name.to_string(), method.name().to_string(), level.to_string()];
    match est {
        Ok(e) => {
            row.push(e.lower.to_string());
            row.push(e.upper.to_string());
            row.push(e.lambda_hat.map(|l| l.to_string()).unwrap_or_default());
            row.push(match e.warning {
                Some(IntervalWarning::DegenerateBias) => "degenerate bias correction; percentile endpoints".into(),
                None => String::new(),
            });
        }
        Err(err) => {
            row.extend([String::new(), String::new(), String::new()]);
            row.push(format!("error: {err}"));
        }
    }
    row
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let grid_cfg = match &a.grid_config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            GridConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GridConfig::default(),
    };
    let grid = scenario_grid(&grid_cfg);
    if grid.is_empty() {
        bail!("the grid configuration leaves no scenarios");
    }
    let report = run_grid(&grid, &a.common.study(a.reps)?)?;
    write_report(&a.out, &report, !a.no_log)?;
    for (id, reason) in &report.failed_cells {
        eprintln!("cell {id} failed: {reason}");
    }
    eprintln!("{} cells written to {}", grid.len() - report.failed_cells.len(), a.out.display());
    Ok(())
}

fn subsample(a: SubsampleArgs) -> Result<()> {
    let (table, response) = match (&a.input, &a.response) {
        (Some(path), Some(resp)) => (load(path, a.delimiter, resp)?, resp.clone()),
        _ => {
            let s = stand_in_population(a.population_size, a.population_seed)?;
            (Table { names: s.names, data: s.data }, RESPONSE.to_string())
        }
    };
    if let Some(p) = &a.write_population {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_table(io::BufWriter::new(f), &table.names, &response, &table.data)?;
    }
    let spec = SubsampleSpec { population: &table.data, names: table.names.clone(), m: a.m };
    let report = subsample_study(&spec, &a.common.study(a.reps)?)?;
    write_report(&a.out, &report, !a.no_log)?;
    eprintln!("coverage for {} coefficients written to {}", table.names.len(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let f = File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let report = report_from_log(BufReader::new(f))?;
    write_report(&a.out, &report, false)?;
    Ok(())
}
