//! Data-generating processes for the simple-regression coverage study, the
//! population slopes they define, and the factorial scenario grid.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::Dataset;

/// Mean of the response given the covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFn {
    Linear,
    Exp,
    Cubic,
}

/// Marginal law of the covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XDist {
    StdNormal,
    Lognormal,
}

/// Error term added to the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Standard normal.
    HomoskNormal,
    /// `|X|` times a standard normal.
    HeteroAbsx,
    /// `exp(Z)` with `Z` standard normal; not recentred.
    LognormalNoise,
}

impl MeanFn {
    pub const ALL: [MeanFn; 3] = [MeanFn::Linear, MeanFn::Exp, MeanFn::Cubic];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            MeanFn::Linear => x,
            MeanFn::Exp => x.exp(),
            MeanFn::Cubic => x * x * x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeanFn::Linear => "linear",
            MeanFn::Exp => "exp",
            MeanFn::Cubic => "cubic",
        }
    }
}

impl XDist {
    pub const ALL: [XDist; 2] = [XDist::StdNormal, XDist::Lognormal];

    pub fn name(self) -> &'static str {
        match self {
            XDist::StdNormal => "std_normal",
            XDist::Lognormal => "lognormal",
        }
    }

    pub fn sample<R: RngCore + ?Sized>(self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match self {
            XDist::StdNormal => z,
            XDist::Lognormal => z.exp(),
        }
    }
}

impl Noise {
    pub const ALL: [Noise; 3] = [Noise::HomoskNormal, Noise::HeteroAbsx, Noise::LognormalNoise];

    pub fn name(self) -> &'static str {
        match self {
            Noise::HomoskNormal => "homosk_normal",
            Noise::HeteroAbsx => "hetero_absx",
            Noise::LognormalNoise => "lognormal_noise",
        }
    }

    pub fn sample<R: RngCore + ?Sized>(self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match self {
            Noise::HomoskNormal => z,
            Noise::HeteroAbsx => x.abs() * z,
            Noise::LognormalNoise => z.exp(),
        }
    }
}

macro_rules! name_parsing {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let key = s.trim().to_ascii_lowercase().replace('-', "_");
                <$ty>::ALL
                    .into_iter()
                    .find(|v| v.name() == key)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown factor level `{s}`")))
            }
        }
    };
}

name_parsing!(MeanFn);
name_parsing!(XDist);
name_parsing!(Noise);

/// How a population slope was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeSource {
    ClosedForm,
    MonteCarlo,
}

/// Slope of the best linear approximation `Cov(X, m(X)) / Var(X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationSlope {
    pub value: f64,
    pub source: SlopeSource,
    pub mc_se: Option<f64>,
}

/// Population slope of the mean function under the covariate law.
///
/// Noise never moves the slope: it is independent of `X` given `X` for the
/// homoskedastic and lognormal cases, and mean-zero given `X` for `|X| Z`.
/// Lognormal moments are `E[X^k] = exp(k^2 / 2)`.
pub fn population_slope(mean_fn: MeanFn, x_dist: XDist) -> Result<PopulationSlope> {
    let value = match (mean_fn, x_dist) {
        (MeanFn::Linear, _) => 1.0,
        // Stein: E[X e^X] = E[e^X] = e^{1/2}.
        (MeanFn::Exp, XDist::StdNormal) => 0.5f64.exp(),
        // E[X^4] = 3 for a standard normal.
        (MeanFn::Cubic, XDist::StdNormal) => 3.0,
        // E[X e^X] diverges for lognormal X.
        (MeanFn::Exp, XDist::Lognormal) => return Err(Error::NonFiniteEstimand),
        (MeanFn::Cubic, XDist::Lognormal) => {
            let e = |t: f64| t.exp();
            (e(8.0) - e(0.5) * e(4.5)) / (e(2.0) - e(1.0))
        }
    };
    Ok(PopulationSlope { value, source: SlopeSource::ClosedForm, mc_se: None })
}

/// Monte Carlo estimate of the population slope from `draws` covariate
/// draws, with a delta-method standard error.
pub fn monte_carlo_slope<R: RngCore + ?Sized>(
    mean_fn: MeanFn,
    x_dist: XDist,
    draws: usize,
    rng: &mut R,
) -> PopulationSlope {
    let xs: Vec<f64> = (0..draws).map(|_| x_dist.sample(rng)).collect();
    let nf = draws as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = xs.iter().map(|&x| mean_fn.eval(x)).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &x in &xs {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (mean_fn.eval(x) - my);
    }
    let var = sxx / nf;
    let slope = sxy / sxx;
    let mut ss = 0.0;
    for &x in &xs {
        let dx = x - mx;
        let psi = (dx * (mean_fn.eval(x) - my) - slope * dx * dx) / var;
        ss += psi * psi;
    }
    PopulationSlope {
        value: slope,
        source: SlopeSource::MonteCarlo,
        mc_se: Some((ss / nf).sqrt() / nf.sqrt()),
    }
}

/// One cell of the factorial design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub n: usize,
    pub mean_fn: MeanFn,
    pub x_dist: XDist,
    pub noise: Noise,
}

impl Scenario {
    pub fn new(n: usize, mean_fn: MeanFn, x_dist: XDist, noise: Noise) -> Self {
        Self { n, mean_fn, x_dist, noise }
    }

    /// The estimand; fails for cells whose population slope is not finite.
    pub fn true_slope(&self) -> Result<f64> {
        population_slope(self.mean_fn, self.x_dist).map(|s| s.value)
    }

    pub fn label(&self) -> String {
        format!("n{}-{}-{}-{}", self.n, self.mean_fn, self.x_dist, self.noise)
    }
}

/// Draws `n` observations `Y = m(X) + e` with an intercept column.
///
/// Each observation consumes the covariate draw, then the noise draw.
pub fn draw_scenario<R: RngCore + ?Sized>(s: &Scenario, rng: &mut R) -> Result<Dataset> {
    let mut x = Vec::with_capacity(s.n);
    let mut y = Vec::with_capacity(s.n);
    for _ in 0..s.n {
        let xi = s.x_dist.sample(rng);
        let ei = s.noise.sample(xi, rng);
        x.push(xi);
        y.push(s.mean_fn.eval(xi) + ei);
    }
    Dataset::simple(&x, &y)
}

/// A factor combination removed from the grid; unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclusion {
    pub n: Option<usize>,
    pub mean_fn: Option<MeanFn>,
    pub x_dist: Option<XDist>,
    pub noise: Option<Noise>,
}

impl Exclusion {
    fn matches(&self, s: &Scenario) -> bool {
        self.n.is_none_or(|n| n == s.n)
            && self.mean_fn.is_none_or(|m| m == s.mean_fn)
            && self.x_dist.is_none_or(|x| x == s.x_dist)
            && self.noise.is_none_or(|e| e == s.noise)
    }
}

/// Factor levels and exclusions of the scenario grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub sample_sizes: Vec<usize>,
    pub mean_fns: Vec<MeanFn>,
    pub x_dists: Vec<XDist>,
    pub noises: Vec<Noise>,
    pub exclude: Vec<Exclusion>,
}

impl Default for GridConfig {
    /// 4 sample sizes x 3 means x 2 covariate laws x 3 noises, without the
    /// exponential and cubic means under a lognormal covariate: 48 cells.
    fn default() -> Self {
        Self {
            sample_sizes: vec![32, 64, 128, 256],
            mean_fns: MeanFn::ALL.to_vec(),
            x_dists: XDist::ALL.to_vec(),
            noises: Noise::ALL.to_vec(),
            exclude: vec![
                Exclusion { mean_fn: Some(MeanFn::Exp), x_dist: Some(XDist::Lognormal), ..Default::default() },
                Exclusion { mean_fn: Some(MeanFn::Cubic), x_dist: Some(XDist::Lognormal), ..Default::default() },
            ],
        }
    }
}

impl GridConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Scenarios in factor order (sample size, mean, covariate law, noise),
/// skipping excluded combinations. A scenario's position is its cell id.
pub fn scenario_grid(config: &GridConfig) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &n in &config.sample_sizes {
        for &mean_fn in &config.mean_fns {
            for &x_dist in &config.x_dists {
                for &noise in &config.noises {
                    let s = Scenario::new(n, mean_fn, x_dist, noise);
                    if !config.exclude.iter().any(|e| e.matches(&s)) {
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}
