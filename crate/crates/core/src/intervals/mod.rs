//! Confidence intervals for a single least-squares coefficient.
//!
//! The normal-theory intervals (`Z`, the sandwich family) come straight from
//! the full-sample fit. Every resampling method draws from the same keyed
//! pairs-bootstrap tree, so requesting several methods at once through
//! [`interval_set`] costs one pass and yields exactly what each method's
//! standalone function returns.

mod engine;

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::regress::{fit_prepared, se_for, Dataset, LsFit, PreparedDesign, SeVariant, Workspace};
use crate::resample::quantile_sorted;

pub(crate) use engine::sample_sd;
use engine::{CoefReplicates, Engine, Request};

/// Resampling budget and seed. Fully determines every random draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootConfig {
    /// First-level resamples.
    pub b1: usize,
    /// Second-level resamples per first-level resample.
    pub b2: usize,
    pub master_seed: u64,
    /// Consecutive degenerate draws tolerated per resample slot.
    pub max_redraws: usize,
}

impl Default for BootConfig {
    fn default() -> Self {
        Self { b1: 2000, b2: 2000, master_seed: 0, max_redraws: 100 }
    }
}

impl BootConfig {
    pub fn new(b1: usize, b2: usize, master_seed: u64) -> Self {
        Self { b1, b2, master_seed, ..Self::default() }
    }

    pub fn with_seed(&self, master_seed: u64) -> Self {
        Self { master_seed, ..self.clone() }
    }

    fn check(&self, second_level: bool) -> Result<()> {
        if self.b1 < 2 {
            return Err(Error::InvalidConfig(format!("b1 must be at least 2, got {}", self.b1)));
        }
        if second_level && self.b2 < 2 {
            return Err(Error::InvalidConfig(format!("b2 must be at least 2, got {}", self.b2)));
        }
        Ok(())
    }
}

/// Interval construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Z,
    SandHc0,
    SandHc1,
    SandHc2,
    SandHc3,
    SandHc4,
    SandHc5,
    Perc,
    Stud,
    BootT,
    Bca,
    /// Two-sided calibrated percentile interval.
    PercCal2,
    /// Left-sided calibrated percentile interval `(-inf, upper]`.
    PercCal1,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Z,
        Method::SandHc0,
        Method::SandHc1,
        Method::SandHc2,
        Method::SandHc3,
        Method::SandHc4,
        Method::SandHc5,
        Method::Perc,
        Method::Stud,
        Method::BootT,
        Method::Bca,
        Method::PercCal2,
        Method::PercCal1,
    ];

    /// The ten comparison methods of the simulation study; the five sandwich
    /// variants are HC1 through HC5.
    pub const BASELINES: [Method; 10] = [
        Method::Z,
        Method::SandHc1,
        Method::SandHc2,
        Method::SandHc3,
        Method::SandHc4,
        Method::SandHc5,
        Method::Stud,
        Method::BootT,
        Method::Bca,
        Method::Perc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Z => "Z",
            Method::SandHc0 => "SAND_HC0",
            Method::SandHc1 => "SAND_HC1",
            Method::SandHc2 => "SAND_HC2",
            Method::SandHc3 => "SAND_HC3",
            Method::SandHc4 => "SAND_HC4",
            Method::SandHc5 => "SAND_HC5",
            Method::Perc => "PERC",
            Method::Stud => "STUD",
            Method::BootT => "BOOT_T",
            Method::Bca => "BCA",
            Method::PercCal2 => "PERC_CAL_2",
            Method::PercCal1 => "PERC_CAL_1",
        }
    }

    pub fn se_variant(self) -> Option<SeVariant> {
        Some(match self {
            Method::Z => SeVariant::Classical,
            Method::SandHc0 => SeVariant::Hc0,
            Method::SandHc1 => SeVariant::Hc1,
            Method::SandHc2 => SeVariant::Hc2,
            Method::SandHc3 => SeVariant::Hc3,
            Method::SandHc4 => SeVariant::Hc4,
            Method::SandHc5 => SeVariant::Hc5,
            _ => return None,
        })
    }

    fn from_variant(v: SeVariant) -> Method {
        match v {
            SeVariant::Classical => Method::Z,
            SeVariant::Hc0 => Method::SandHc0,
            SeVariant::Hc1 => Method::SandHc1,
            SeVariant::Hc2 => Method::SandHc2,
            SeVariant::Hc3 => Method::SandHc3,
            SeVariant::Hc4 => Method::SandHc4,
            SeVariant::Hc5 => Method::SandHc5,
        }
    }

    pub fn is_one_sided(self) -> bool {
        self == Method::PercCal1
    }

    pub fn is_bootstrap(self) -> bool {
        self.se_variant().is_none()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    /// Accepts the report names (`PERC_CAL_2`) case-insensitively with `-` or
    /// `_`, plus the short names `sand1`..`sand5`, `boot-t` and `perc-cal`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let m = match key.as_str() {
            "z" => Method::Z,
            "sand_hc0" | "hc0" => Method::SandHc0,
            "sand_hc1" | "hc1" | "sand1" => Method::SandHc1,
            "sand_hc2" | "hc2" | "sand2" => Method::SandHc2,
            "sand_hc3" | "hc3" | "sand3" => Method::SandHc3,
            "sand_hc4" | "hc4" | "sand4" => Method::SandHc4,
            "sand_hc5" | "hc5" | "sand5" => Method::SandHc5,
            "perc" => Method::Perc,
            "stud" => Method::Stud,
            "boot_t" => Method::BootT,
            "bca" => Method::Bca,
            "perc_cal" | "perc_cal_2" => Method::PercCal2,
            "perc_cal_1" => Method::PercCal1,
            _ => return Err(format!("unknown interval method `{s}`")),
        };
        Ok(m)
    }
}

/// Interval sidedness for the calibrated percentile method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sided {
    One,
    Two,
}

/// Non-fatal conditions met while building an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalWarning {
    /// Every bootstrap estimate fell on one side of the full-sample
    /// estimate; the BCa interval fell back to percentile endpoints.
    DegenerateBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalEstimate {
    pub method: Method,
    /// Nominal coverage `1 - alpha`.
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    /// Calibrated percentile level, present for the calibrated methods only.
    pub lambda_hat: Option<f64>,
    pub warning: Option<IntervalWarning>,
}

impl IntervalEstimate {
    fn new(method: Method, level: f64, lower: f64, upper: f64) -> Self {
        Self { method, level, lower, upper, lambda_hat: None, warning: None }
    }

    fn point(method: Method, level: f64, at: f64) -> Self {
        Self::new(method, level, at, at)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Full-sample estimate, first-level replicates, and the depth of the
/// full-sample estimate within each second-level histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapHistograms {
    pub theta_hat: f64,
    pub first_level: Vec<f64>,
    /// `depths[j]` is the fraction of second-level estimates of resample `j`
    /// that are `<= theta_hat`.
    pub depths: Vec<f64>,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(level))
    }
}

fn check_coef(data: &Dataset, j: usize) -> Result<()> {
    if j < data.k() {
        Ok(())
    } else {
        Err(Error::CoefficientOutOfRange { index: j, k: data.k() })
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Upper `q` quantile of the standard normal.
pub fn normal_quantile(q: f64) -> f64 {
    std_normal().inverse_cdf(q)
}

pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn symmetric_interval(
    method: Method,
    fit: &LsFit,
    data: &Dataset,
    j: usize,
    level: f64,
    variant: SeVariant,
) -> Result<IntervalEstimate> {
    let se = se_for(fit, data, variant, j)?;
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let centre = fit.beta_hat[j];
    Ok(IntervalEstimate::new(method, level, centre - z * se, centre + z * se))
}

/// `beta_j +/- z * se` with the classical standard error.
pub fn z_interval(data: &Dataset, j: usize, level: f64) -> Result<IntervalEstimate> {
    sandwich_interval(data, j, level, SeVariant::Classical)
}

/// `beta_j +/- z * se` with the given standard-error variant.
pub fn sandwich_interval(
    data: &Dataset,
    j: usize,
    level: f64,
    variant: SeVariant,
) -> Result<IntervalEstimate> {
    check_level(level)?;
    check_coef(data, j)?;
    let fit = fit_prepared(&PreparedDesign::new(data))?;
    symmetric_interval(Method::from_variant(variant), &fit, data, j, level, variant)
}

/// Equal-tailed percentile endpoints of the first-level replicates.
pub fn percentile_from_replicates(replicates: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    let alpha = 1.0 - level;
    let s = sorted(replicates.to_vec());
    Ok((quantile_sorted(&s, alpha / 2.0)?, quantile_sorted(&s, 1.0 - alpha / 2.0)?))
}

/// `[theta - se * t_(1-alpha/2), theta - se * t_(alpha/2)]` from bootstrap pivots.
pub fn studentized_from_pivots(
    theta_hat: f64,
    se: f64,
    pivots: &[f64],
    level: f64,
) -> Result<(f64, f64)> {
    check_level(level)?;
    let alpha = 1.0 - level;
    let s = sorted(pivots.to_vec());
    let t_hi = quantile_sorted(&s, 1.0 - alpha / 2.0)?;
    let t_lo = quantile_sorted(&s, alpha / 2.0)?;
    Ok((theta_hat - se * t_hi, theta_hat - se * t_lo))
}

/// Bias correction, acceleration and adjusted tail probabilities of a BCa
/// interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcaAdjustment {
    pub z0: f64,
    pub acceleration: f64,
    pub alpha_low: f64,
    pub alpha_high: f64,
}

/// Jackknife acceleration `sum d^3 / (6 (sum d^2)^{3/2})`, `d_i = mean - theta_(i)`.
pub fn jackknife_acceleration(jackknife: &[f64]) -> f64 {
    let mean = jackknife.iter().sum::<f64>() / jackknife.len() as f64;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    for &t in jackknife {
        let d = mean - t;
        s2 += d * d;
        s3 += d * d * d;
    }
    if s2 > 0.0 {
        s3 / (6.0 * s2.powf(1.5))
    } else {
        0.0
    }
}

/// BCa adjustment, or `None` when every replicate lies on one side of
/// `theta_hat` (infinite bias correction).
pub fn bca_adjustment(
    theta_hat: f64,
    replicates: &[f64],
    jackknife: &[f64],
    level: f64,
) -> Option<BcaAdjustment> {
    let below = replicates.iter().filter(|&&t| t < theta_hat).count();
    if below == 0 || below == replicates.len() {
        return None;
    }
    let z0 = normal_quantile(below as f64 / replicates.len() as f64);
    let a = jackknife_acceleration(jackknife);
    let alpha = 1.0 - level;
    let adjust = |z: f64| {
        let w = z0 + z;
        normal_cdf(z0 + w / (1.0 - a * w))
    };
    Some(BcaAdjustment {
        z0,
        acceleration: a,
        alpha_low: adjust(normal_quantile(alpha / 2.0)),
        alpha_high: adjust(normal_quantile(1.0 - alpha / 2.0)),
    })
}

/// BCa endpoints from replicates and jackknife values.
pub fn bca_from_parts(
    theta_hat: f64,
    replicates: &[f64],
    jackknife: &[f64],
    level: f64,
) -> Result<(f64, f64, Option<IntervalWarning>)> {
    check_level(level)?;
    match bca_adjustment(theta_hat, replicates, jackknife, level) {
        None => {
            let (lo, hi) = percentile_from_replicates(replicates, level)?;
            Ok((lo, hi, Some(IntervalWarning::DegenerateBias)))
        }
        Some(adj) => {
            let s = sorted(replicates.to_vec());
            let lo = quantile_sorted(&s, open_unit(adj.alpha_low))?;
            let hi = quantile_sorted(&s, open_unit(adj.alpha_high))?;
            Ok((lo, hi, None))
        }
    }
}

/// Clamps an adjusted tail probability into the open unit interval; the
/// ceiling rule maps the extremes to the smallest or largest replicate.
fn open_unit(p: f64) -> f64 {
    if p.is_nan() {
        0.5
    } else {
        p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }
}

/// Leave-one-out estimates of coefficient `j`.
pub fn jackknife_estimates(data: &Dataset, j: usize) -> Result<Vec<f64>> {
    check_coef(data, j)?;
    let design = PreparedDesign::new(data);
    jackknife_prepared(&design, &[j]).map(|mut v| v.remove(0))
}

fn jackknife_prepared(design: &PreparedDesign, coefs: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = design.n();
    let mut ws = Workspace::new();
    let mut out = vec![Vec::with_capacity(n); coefs.len()];
    let mut weights = vec![1u32; n];
    for i in 0..n {
        weights[i] = 0;
        let fit = design.fit_weighted(&weights, &mut ws);
        weights[i] = 1;
        fit?;
        for (o, &c) in out.iter_mut().zip(coefs) {
            o.push(design.coefficient(&ws, c));
        }
    }
    Ok(out)
}

/// Largest admissible percentile level given the depth statistics.
///
/// Two-sided: the `(1 - alpha)` quantile of `max(q, 1 - q)`. One-sided: the
/// `(1 - alpha)` quantile of `q`. The result is kept inside
/// `[1/2 + 1/(2 b2), 1 - 1/(2 b2)]`.
pub fn calibrate_lambda(hist: &BootstrapHistograms, alpha: f64, sided: Sided, b2: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    let stats: Vec<f64> = match sided {
        Sided::Two => hist.depths.iter().map(|&q| q.max(1.0 - q)).collect(),
        Sided::One => hist.depths.clone(),
    };
    let raw = quantile_sorted(&sorted(stats), 1.0 - alpha)?;
    let margin = 1.0 / (2.0 * b2 as f64);
    Ok(raw.clamp(0.5 + margin, 1.0 - margin))
}

/// Calibrated percentile interval from precomputed histograms.
pub fn perc_cal_from_histograms(
    hist: &BootstrapHistograms,
    level: f64,
    sided: Sided,
    b2: usize,
) -> Result<IntervalEstimate> {
    check_level(level)?;
    let lambda = calibrate_lambda(hist, 1.0 - level, sided, b2)?;
    let s = sorted(hist.first_level.clone());
    let upper = quantile_sorted(&s, lambda)?;
    let (method, lower) = match sided {
        Sided::Two => (Method::PercCal2, quantile_sorted(&s, 1.0 - lambda)?),
        Sided::One => (Method::PercCal1, f64::NEG_INFINITY),
    };
    let mut est = IntervalEstimate::new(method, level, lower, upper);
    est.lambda_hat = Some(lambda);
    Ok(est)
}

/// Single-level percentile interval.
pub fn percentile_interval(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> Result<IntervalEstimate> {
    single(data, j, Method::Perc, level, cfg)
}

/// Pivot `(beta* - beta) / se*` with HC0 standard errors on each resample.
pub fn studentized_interval(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> Result<IntervalEstimate> {
    single(data, j, Method::Stud, level, cfg)
}

/// Pivot `(beta* - beta) / sd*` with `sd*` from `b2` nested resamples.
pub fn boot_t_interval(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> Result<IntervalEstimate> {
    single(data, j, Method::BootT, level, cfg)
}

/// Bias-corrected and accelerated percentile interval.
pub fn bca_interval(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> Result<IntervalEstimate> {
    single(data, j, Method::Bca, level, cfg)
}

/// Calibrated percentile interval, two-sided or left-sided.
pub fn perc_cal_interval(
    data: &Dataset,
    j: usize,
    level: f64,
    cfg: &BootConfig,
    sided: Sided,
) -> Result<IntervalEstimate> {
    let method = match sided {
        Sided::Two => Method::PercCal2,
        Sided::One => Method::PercCal1,
    };
    single(data, j, method, level, cfg)
}

fn single(data: &Dataset, j: usize, method: Method, level: f64, cfg: &BootConfig) -> Result<IntervalEstimate> {
    check_coef(data, j)?;
    interval_set(data, &[j], &[method], level, cfg)?.remove(0).remove(0)
}

/// First-level replicates and second-level depths for coefficient `j`.
pub fn compute_histograms(data: &Dataset, j: usize, cfg: &BootConfig) -> Result<BootstrapHistograms> {
    check_coef(data, j)?;
    cfg.check(true)?;
    let design = PreparedDesign::new(data);
    let theta_hat = full_estimates(&design, &[j])?;
    let mut req = Request::new(vec![j]);
    req.first_level = true;
    req.depths = true;
    let mut reps = Engine::new(&design, cfg, &theta_hat, &req).run();
    let r = reps.remove(0);
    Ok(BootstrapHistograms {
        theta_hat: theta_hat[0],
        first_level: r.first_level.unwrap()?,
        depths: r.depths.unwrap()?,
    })
}

fn full_estimates(design: &PreparedDesign, coefs: &[usize]) -> Result<Vec<f64>> {
    let mut ws = Workspace::new();
    design.fit_all(&mut ws)?;
    Ok(coefs.iter().map(|&c| design.coefficient(&ws, c)).collect())
}

/// Every requested method for every requested coefficient from one shared
/// bootstrap pass.
///
/// The outer error covers invalid arguments and a singular full-sample fit;
/// per-method failures (degenerate resamples, unit leverage) are reported in
/// place. The result is indexed `[coefficient][method]` in request order.
pub fn interval_set(
    data: &Dataset,
    coefs: &[usize],
    methods: &[Method],
    level: f64,
    cfg: &BootConfig,
) -> Result<Vec<Vec<Result<IntervalEstimate>>>> {
    check_level(level)?;
    for &j in coefs {
        check_coef(data, j)?;
    }
    let wants = |m: Method| methods.contains(&m);
    let any_boot = methods.iter().any(|m| m.is_bootstrap());
    let second = wants(Method::PercCal2) || wants(Method::PercCal1) || wants(Method::BootT);
    if any_boot {
        cfg.check(second)?;
    }

    let design = PreparedDesign::new(data);
    let fit = fit_prepared(&design)?;
    let theta_hat: Vec<f64> = coefs.iter().map(|&c| fit.beta_hat[c]).collect();

    // Pivot methods collapse to a point when the full-sample residuals carry
    // no spread for this coefficient.
    let hc0: Vec<f64> = coefs
        .iter()
        .map(|&c| se_for(&fit, data, SeVariant::Hc0, c))
        .collect::<Result<_>>()?;
    let degenerate: Vec<bool> = hc0.iter().map(|&s| s == 0.0).collect();

    let mut req = Request::new(coefs.to_vec());
    req.first_level = wants(Method::Perc) || wants(Method::Bca) || wants(Method::PercCal2) || wants(Method::PercCal1);
    req.depths = wants(Method::PercCal2) || wants(Method::PercCal1);
    for c in 0..coefs.len() {
        req.student[c] = wants(Method::Stud) && !degenerate[c];
        req.boot_t[c] = wants(Method::BootT) && !degenerate[c];
    }
    let needs_engine = req.first_level || req.student.iter().any(|&b| b) || req.boot_t.iter().any(|&b| b);
    let reps: Vec<CoefReplicates> = if needs_engine {
        Engine::new(&design, cfg, &theta_hat, &req).run()
    } else {
        Vec::new()
    };
    let jackknife = if wants(Method::Bca) {
        Some(jackknife_prepared(&design, coefs))
    } else {
        None
    };

    let mut out = Vec::with_capacity(coefs.len());
    for (c, &j) in coefs.iter().enumerate() {
        let th = theta_hat[c];
        let row = methods
            .iter()
            .map(|&method| -> Result<IntervalEstimate> {
                if let Some(variant) = method.se_variant() {
                    return symmetric_interval(method, &fit, data, j, level, variant);
                }
                let r = &reps[c];
                match method {
                    Method::Perc => {
                        let first = r.first_level.clone().unwrap()?;
                        let (lo, hi) = percentile_from_replicates(&first, level)?;
                        Ok(IntervalEstimate::new(method, level, lo, hi))
                    }
                    Method::Bca => {
                        let first = r.first_level.clone().unwrap()?;
                        let jack = match &jackknife {
                            Some(Ok(v)) => &v[c],
                            Some(Err(e)) => return Err(e.clone()),
                            None => unreachable!(),
                        };
                        let (lo, hi, warning) = bca_from_parts(th, &first, jack, level)?;
                        let mut est = IntervalEstimate::new(method, level, lo, hi);
                        est.warning = warning;
                        Ok(est)
                    }
                    Method::PercCal2 | Method::PercCal1 => {
                        let hist = BootstrapHistograms {
                            theta_hat: th,
                            first_level: r.first_level.clone().unwrap()?,
                            depths: r.depths.clone().unwrap()?,
                        };
                        let sided = if method == Method::PercCal2 { Sided::Two } else { Sided::One };
                        perc_cal_from_histograms(&hist, level, sided, cfg.b2)
                    }
                    Method::Stud => {
                        if degenerate[c] {
                            return Ok(IntervalEstimate::point(method, level, th));
                        }
                        let pairs = r.student.clone().unwrap()?;
                        let pivots: Vec<f64> = pairs.iter().map(|&(t, se)| (t - th) / se).collect();
                        let (lo, hi) = studentized_from_pivots(th, hc0[c], &pivots, level)?;
                        Ok(IntervalEstimate::new(method, level, lo, hi))
                    }
                    Method::BootT => {
                        if degenerate[c] {
                            return Ok(IntervalEstimate::point(method, level, th));
                        }
                        let pairs = r.boot_t.clone().unwrap()?;
                        let outer: Vec<f64> = pairs.iter().map(|&(t, _)| t).collect();
                        let se = sample_sd(&outer);
                        let pivots: Vec<f64> = pairs.iter().map(|&(t, sd)| (t - th) / sd).collect();
                        let (lo, hi) = studentized_from_pivots(th, se, &pivots, level)?;
                        Ok(IntervalEstimate::new(method, level, lo, hi))
                    }
                    _ => unreachable!(),
                }
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}
