//! Monte Carlo coverage studies: simulated scenario cells, the scenario
//! grid, and repeated subsampling from a finite population.
//!
//! Every study first produces one [`ReplicationRecord`] per (replication,
//! coefficient, method). Aggregates are computed from those records only,
//! so a persisted log reproduces the report exactly.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::{interval_set, BootConfig, Method};
use crate::regress::{fit_ols, Dataset};
use crate::resample::{context, derive_stream, Stream, StreamKey};
use crate::synthetic::{draw_scenario, Scenario};

/// Descriptor of one study cell, as written to every output row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellInfo {
    pub id: usize,
    pub n: usize,
    pub mean_fn: String,
    pub x_dist: String,
    pub noise: String,
}

impl CellInfo {
    pub fn for_scenario(id: usize, s: &Scenario) -> Self {
        Self {
            id,
            n: s.n,
            mean_fn: s.mean_fn.to_string(),
            x_dist: s.x_dist.to_string(),
            noise: s.noise.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Covered,
    Missed,
    Failed,
}

/// One interval from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub replication: usize,
    pub coefficient: usize,
    pub coefficient_name: String,
    pub method: Method,
    pub level: f64,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub outcome: Outcome,
    pub error: Option<String>,
}

impl ReplicationRecord {
    /// Interval length; for one-sided intervals the distance from the
    /// estimate to the finite endpoint.
    pub fn length(&self) -> f64 {
        if self.method.is_one_sided() {
            self.upper - self.estimate
        } else {
            self.upper - self.lower
        }
    }
}

/// Coverage of one method for one coefficient in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCell {
    pub cell: usize,
    pub coefficient: usize,
    pub coefficient_name: String,
    pub method: Method,
    pub target_level: f64,
    /// Share of successful replications whose interval held the truth.
    pub coverage: f64,
    pub avg_length: f64,
    /// `sqrt(coverage (1 - coverage) / replications)`.
    pub mc_se: f64,
    /// Successful replications.
    pub replications: usize,
    pub covered: usize,
    pub failures: usize,
    /// Rank of this cell by ascending PERC_CAL_2 coverage, from 1.
    pub scenario_number: usize,
}

impl CoverageCell {
    pub fn missed(&self) -> usize {
        self.replications - self.covered
    }
}

/// Aggregated study results plus the raw log they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub level: f64,
    pub cells: Vec<CellInfo>,
    pub coverage: Vec<CoverageCell>,
    /// Mean absolute deviation of coverage from the target, per method.
    pub mad: Vec<(Method, f64)>,
    /// Cells that could not run at all, with the reason.
    pub failed_cells: Vec<(usize, String)>,
    pub records: Vec<ReplicationRecord>,
}

impl CoverageReport {
    pub fn cell(&self, cell: usize, coefficient: usize, method: Method) -> Option<&CoverageCell> {
        self.coverage
            .iter()
            .find(|c| c.cell == cell && c.coefficient == coefficient && c.method == method)
    }

    pub fn mad_of(&self, method: Method) -> Option<f64> {
        self.mad.iter().find(|(m, _)| *m == method).map(|&(_, v)| v)
    }

    pub fn info(&self, cell: usize) -> Option<&CellInfo> {
        self.cells.iter().find(|c| c.id == cell)
    }
}

/// Inputs shared by every replication of a study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    pub level: f64,
    pub reps: usize,
    pub boot: BootConfig,
}

impl StudyConfig {
    fn check(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidConfig("at least two replications are required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no interval methods requested".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidProbability(self.level));
        }
        Ok(())
    }
}

/// Bootstrap configuration for replication `r` of cell `cell`.
fn replication_boot(cfg: &StudyConfig, cell: usize, r: usize) -> BootConfig {
    let seed = StreamKey::new(cfg.boot.master_seed, &[context::REPLICATION_SEED, cell as u64, r as u64]).digest();
    cfg.boot.with_seed(seed)
}

/// Intervals for `coefs` on one dataset, as records.
fn replicate(
    cfg: &StudyConfig,
    cell: usize,
    r: usize,
    data: Result<Dataset>,
    coefs: &[(usize, String, f64)],
) -> Vec<ReplicationRecord> {
    let boot = replication_boot(cfg, cell, r);
    let computed = data.and_then(|d| {
        let fit = fit_ols(&d)?;
        let idx: Vec<usize> = coefs.iter().map(|c| c.0).collect();
        let set = interval_set(&d, &idx, &cfg.methods, cfg.level, &boot)?;
        Ok((fit.beta_hat, set))
    });
    let mut out = Vec::with_capacity(coefs.len() * cfg.methods.len());
    for (c, (j, name, truth)) in coefs.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let mut rec = ReplicationRecord {
                cell,
                replication: r,
                coefficient: *j,
                coefficient_name: name.clone(),
                method,
                level: cfg.level,
                truth: *truth,
                estimate: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
                outcome: Outcome::Failed,
                error: None,
            };
            let est = match &computed {
                Ok((beta, set)) => {
                    rec.estimate = beta[*j];
                    set[c][mi].clone()
                }
                Err(e) => Err(e.clone()),
            };
            match est {
                Ok(iv) => {
                    rec.lower = iv.lower;
                    rec.upper = iv.upper;
                    rec.outcome = if iv.contains(*truth) { Outcome::Covered } else { Outcome::Missed };
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            out.push(rec);
        }
    }
    out
}

/// Runs `cfg.reps` replications of a cell whose data come from `draw`.
///
/// `draw` receives the replication's data stream `[SIMULATION, cell, r]`.
/// The records are in replication order regardless of thread count.
pub fn run_custom_cell<F>(
    cell: usize,
    truth: f64,
    coefficient_name: &str,
    cfg: &StudyConfig,
    draw: F,
) -> Result<Vec<ReplicationRecord>>
where
    F: Fn(&mut Stream) -> Result<Dataset> + Sync,
{
    cfg.check()?;
    let coefs = [(1usize, coefficient_name.to_string(), truth)];
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_stream(StreamKey::new(
                cfg.boot.master_seed,
                &[context::SIMULATION, cell as u64, r as u64],
            ));
            replicate(cfg, cell, r, draw(&mut rng), &coefs)
        })
        .collect();
    Ok(per_rep.into_iter().flatten().collect())
}

/// Slope coverage for one scenario.
pub fn run_cell(cell: usize, scenario: &Scenario, cfg: &StudyConfig) -> Result<Vec<CoverageCell>> {
    let records = scenario_records(cell, scenario, cfg)?;
    Ok(aggregate(&records).0)
}

fn scenario_records(cell: usize, scenario: &Scenario, cfg: &StudyConfig) -> Result<Vec<ReplicationRecord>> {
    let truth = scenario.true_slope()?;
    run_custom_cell(cell, truth, "x", cfg, |rng| draw_scenario(scenario, rng))
}

/// Runs every scenario; the cell id is the scenario's position in `grid`.
///
/// A cell that cannot run (for example, a non-finite estimand) is listed in
/// `failed_cells` and the remaining cells still run.
pub fn run_grid(grid: &[Scenario], cfg: &StudyConfig) -> Result<CoverageReport> {
    cfg.check()?;
    let mut records = Vec::new();
    let mut failed_cells = Vec::new();
    for (id, s) in grid.iter().enumerate() {
        match scenario_records(id, s, cfg) {
            Ok(r) => records.extend(r),
            Err(e) => failed_cells.push((id, e.to_string())),
        }
    }
    let cells = grid.iter().enumerate().map(|(id, s)| CellInfo::for_scenario(id, s)).collect();
    Ok(build_report(cfg.level, cells, records, failed_cells))
}

/// Repeated subsampling from a finite population.
#[derive(Debug, Clone)]
pub struct SubsampleSpec<'a> {
    pub population: &'a Dataset,
    /// Names of the design columns, intercept first.
    pub names: Vec<String>,
    /// Subsample size; at most the population size.
    pub m: usize,
}

/// Per-coefficient coverage of the full-population OLS coefficients by
/// intervals from subsamples drawn without replacement.
///
/// Replication `r` draws its rows from stream `[SUBSAMPLE, r]`; rows are kept
/// in population order.
pub fn subsample_study(spec: &SubsampleSpec<'_>, cfg: &StudyConfig) -> Result<CoverageReport> {
    cfg.check()?;
    let pop = spec.population;
    let big_n = pop.n();
    if spec.m < pop.k() + 1 || spec.m > big_n {
        return Err(Error::InvalidConfig(format!(
            "subsample size {} must lie in {}..={big_n}",
            spec.m,
            pop.k() + 1
        )));
    }
    if spec.names.len() != pop.k() {
        return Err(Error::InvalidConfig(format!("{} names for {} design columns", spec.names.len(), pop.k())));
    }
    let truth = fit_ols(pop)?.beta_hat;
    let coefs: Vec<(usize, String, f64)> = (0..pop.k()).map(|j| (j, spec.names[j].clone(), truth[j])).collect();
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_stream(StreamKey::new(cfg.boot.master_seed, &[context::SUBSAMPLE, r as u64]));
            let mut rows = index::sample(&mut rng, big_n, spec.m).into_vec();
            rows.sort_unstable();
            replicate(cfg, 0, r, Ok(pop.select(&rows)), &coefs)
        })
        .collect();
    let cells = vec![CellInfo {
        id: 0,
        n: spec.m,
        mean_fn: "population".into(),
        x_dist: "population".into(),
        noise: "population".into(),
    }];
    Ok(build_report(cfg.level, cells, per_rep.into_iter().flatten().collect(), Vec::new()))
}

/// Builds the report from records and cell descriptors.
pub fn build_report(
    level: f64,
    cells: Vec<CellInfo>,
    records: Vec<ReplicationRecord>,
    failed_cells: Vec<(usize, String)>,
) -> CoverageReport {
    let (coverage, mad) = aggregate(&records);
    CoverageReport { level, cells, coverage, mad, failed_cells, records }
}

type Key = (usize, usize, usize);

/// Per-(cell, coefficient, method) coverage, numbered by ascending
/// PERC_CAL_2 coverage, and the per-method mean absolute deviation.
pub fn aggregate(records: &[ReplicationRecord]) -> (Vec<CoverageCell>, Vec<(Method, f64)>) {
    let method_pos = |m: Method| Method::ALL.iter().position(|&x| x == m).unwrap();
    let mut groups: BTreeMap<Key, Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.cell, r.coefficient, method_pos(r.method))).or_default().push(r);
    }
    let mut cells: Vec<CoverageCell> = groups
        .into_values()
        .map(|rs| {
            let first = rs[0];
            let ok: Vec<&&ReplicationRecord> = rs.iter().filter(|r| r.outcome != Outcome::Failed).collect();
            let covered = ok.iter().filter(|r| r.outcome == Outcome::Covered).count();
            let reps = ok.len();
            let coverage = if reps == 0 { f64::NAN } else { covered as f64 / reps as f64 };
            let avg_length = if reps == 0 {
                f64::NAN
            } else {
                ok.iter().map(|r| r.length()).sum::<f64>() / reps as f64
            };
            CoverageCell {
                cell: first.cell,
                coefficient: first.coefficient,
                coefficient_name: first.coefficient_name.clone(),
                method: first.method,
                target_level: first.level,
                coverage,
                avg_length,
                mc_se: (coverage * (1.0 - coverage) / reps as f64).sqrt(),
                replications: reps,
                covered,
                failures: rs.len() - reps,
                scenario_number: 0,
            }
        })
        .collect();

    // Number (cell, coefficient) units by PERC_CAL_2 coverage; units without
    // it sort last, then by key.
    let mut units: Vec<(usize, usize)> = cells.iter().map(|c| (c.cell, c.coefficient)).collect();
    units.dedup();
    let key_cov = |u: &(usize, usize)| {
        cells
            .iter()
            .find(|c| (c.cell, c.coefficient) == *u && c.method == Method::PercCal2)
            .map(|c| c.coverage)
            .filter(|v| !v.is_nan())
    };
    let mut order: Vec<((usize, usize), Option<f64>)> = units.iter().map(|u| (*u, key_cov(u))).collect();
    order.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    let number: BTreeMap<(usize, usize), usize> = order.iter().enumerate().map(|(i, (u, _))| (*u, i + 1)).collect();
    for c in &mut cells {
        c.scenario_number = number[&(c.cell, c.coefficient)];
    }

    let mut mad = Vec::new();
    for m in Method::ALL {
        let devs: Vec<f64> = cells
            .iter()
            .filter(|c| c.method == m && c.replications > 0)
            .map(|c| (c.coverage - c.target_level).abs())
            .collect();
        if !devs.is_empty() {
            mad.push((m, devs.iter().sum::<f64>() / devs.len() as f64));
        }
    }
    (cells, mad)
}
