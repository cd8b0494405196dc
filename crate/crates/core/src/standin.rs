//! Synthetic stand-in for a large administrative sentencing table.
//!
//! This is not real data. It mimics the qualitative structure of such a
//! table: mixed binary and continuous covariates, a log-scale response, and
//! one covariate (`prior_jaildays`) that is zero-inflated, heavy-tailed and
//! related to the response through a rise-then-fall curve. The linear fit is
//! badly misspecified in that covariate, which is what makes classical
//! standard errors too small for its coefficient.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::regress::Dataset;
use crate::resample::{context, derive_stream, StreamKey};

/// Covariate names in design order (the intercept is column 0).
pub const COVARIATES: [&str; 8] = [
    "race_white",
    "seriousness",
    "age",
    "pct_nonwhite_zip",
    "in_state",
    "juvenile",
    "prior_jaildays",
    "age_firstcrime",
];

/// Name of the response column.
pub const RESPONSE: &str = "log_jaildays";

/// Default population size.
pub const DEFAULT_SIZE: usize = 50_000;

/// Design column of the deliberately nonlinear covariate.
pub const NONLINEAR_COLUMN: usize = 7;

/// Mean contribution of prior jail days: a sharp rise for short records,
/// then a slow decline for long ones.
pub fn prior_days_effect(days: f64) -> f64 {
    const AMP: f64 = 1.6;
    AMP * (1.0 - (-days / 40.0).exp()) - 0.9 * AMP * (1.0 - (-days / 900.0).exp())
}

/// A generated population with its column names.
#[derive(Debug, Clone)]
pub struct StandIn {
    pub names: Vec<String>,
    pub data: Dataset,
}

/// Generates `size` rows from the stream `[STAND_IN]` of `seed`.
pub fn stand_in_population(size: usize, seed: u64) -> Result<StandIn> {
    if size < COVARIATES.len() + 2 {
        return Err(Error::InvalidConfig(format!("stand-in population needs at least {} rows", COVARIATES.len() + 2)));
    }
    let mut rng = derive_stream(StreamKey::new(seed, &[context::STAND_IN]));
    let seriousness = Beta::new(2.0, 3.0).unwrap();
    let age_span = Beta::new(2.0, 5.0).unwrap();
    let first_crime = Beta::new(2.0, 2.0).unwrap();
    let short_record = Exp::new(1.0 / 3.0).unwrap();
    let long_record = Gamma::new(9.0, 40.0).unwrap();

    let k = COVARIATES.len() + 1;
    let mut design = Vec::with_capacity(size * k);
    let mut response = Vec::with_capacity(size);
    for _ in 0..size {
        let white = rng.random_bool(0.55);
        let ser = 10.0 * seriousness.sample(&mut rng);
        let age = 18.0 + 55.0 * age_span.sample(&mut rng);
        let nonwhite_share = if white { 1.5 } else { 3.0 };
        let pct = 100.0 * Beta::new(nonwhite_share, 3.0).unwrap().sample(&mut rng);
        let in_state = rng.random_bool(0.85);
        let juvenile = rng.random_bool(0.18);
        let repeat = rng.random_bool(if juvenile { 0.5 } else { 0.3 });
        let days = if repeat {
            long_record.sample(&mut rng)
        } else {
            short_record.sample(&mut rng)
        };
        let afc = 18.0 + (age - 18.0) * first_crime.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);

        let (w, s, j) = (f64::from(u8::from(white)), f64::from(u8::from(in_state)), f64::from(u8::from(juvenile)));
        let sd = 0.7 + 0.002 * days;
        let y = 1.0 + 0.15 * w + 0.22 * ser + 0.01 * age + 0.004 * pct - 0.3 * s + 0.35 * j
            + prior_days_effect(days)
            - 0.01 * afc
            + sd * z;
        design.extend_from_slice(&[1.0, w, ser, age, pct, s, j, days, afc]);
        response.push(y);
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(COVARIATES.iter().map(|s| s.to_string()));
    Ok(StandIn { names, data: Dataset::new(design, k, response)? })
}
