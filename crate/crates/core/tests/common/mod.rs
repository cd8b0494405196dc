//! Shared fixtures and slow reference implementations.
//!
//! The references walk the resampling tree one resample at a time with plain
//! loops: they redraw, count depths, sort, and apply the ceiling rule on
//! their own. The only code they share with the library is the least-squares
//! estimator of a row multiset (`fit_weighted`, `hc0_se_weighted`), which is
//! tested separately against dense-matrix oracles.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use perccal::intervals::BootConfig;
use perccal::regress::{fit_ols, se_for, Centering, Dataset, PreparedDesign, SeVariant, Workspace};
use perccal::resample::{derive_stream, draw_index, Stream, StreamKey};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> rand_xoshiro::Xoshiro256PlusPlus {
    rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// `n` rows with `p` covariates, skewed covariates and heteroskedastic noise.
pub fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut r = rng(seed);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    if r.random_bool(0.5) { z } else { z.exp() }
                })
                .collect()
        })
        .collect();
    let y = (0..n)
        .map(|i| {
            let x0 = cols.first().map_or(0.0, |c| c[i]);
            let e: f64 = StandardNormal.sample(&mut r);
            0.5 + x0.exp().min(20.0) + cols.iter().skip(1).map(|c| 0.3 * c[i]).sum::<f64>() + (1.0 + x0.abs()) * e
        })
        .collect();
    Dataset::from_columns(&cols, y).unwrap()
}

/// `y = 2 x` exactly.
pub fn noiseless(n: usize) -> Dataset {
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.61).sin() * 3.0 + i as f64 * 0.01).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    Dataset::simple(&x, &y).unwrap()
}

pub fn hand() -> Dataset {
    Dataset::simple(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap()
}

// ---------------------------------------------------------------------------
// Reference conventions

/// `x_(ceil(qB))` of the sorted values, with a 1e-9 guard against rounding
/// noise in `qB`.
pub fn ref_quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let b = s.len() as f64;
    let rank = ((q * b) - 1e-9).ceil().max(1.0).min(b) as usize;
    s[rank - 1]
}

pub fn ref_sd(v: &[f64]) -> f64 {
    if v.iter().all(|&x| x == v[0]) {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

fn z(q: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(q)
}

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

// ---------------------------------------------------------------------------
// Reference resampling tree

pub struct RefTree<'a> {
    pub data: &'a Dataset,
    pub design: PreparedDesign,
    pub cfg: BootConfig,
    pub j: usize,
    pub theta_hat: f64,
}

pub enum Slot {
    Ok(f64),
    Err,
}

impl<'a> RefTree<'a> {
    pub fn new(data: &'a Dataset, j: usize, cfg: &BootConfig) -> Self {
        Self {
            data,
            design: PreparedDesign::new(data),
            cfg: cfg.clone(),
            j,
            theta_hat: fit_ols(data).unwrap().beta_hat[j],
        }
    }

    fn outer(&self, slot: usize) -> Stream {
        derive_stream(StreamKey::new(self.cfg.master_seed, &[1, slot as u64]))
    }

    fn inner_streams(&self, slot: usize) -> Vec<Stream> {
        (0..self.cfg.b2)
            .map(|k| derive_stream(StreamKey::new(self.cfg.master_seed, &[1, slot as u64, k as u64])))
            .collect()
    }

    fn counts(&self, rows: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.data.n()];
        for &r in rows {
            c[r] += 1;
        }
        c
    }

    /// Fit of the row multiset; `None` when singular. Leaves the fit in `ws`.
    fn fit(&self, rows: &[usize], ws: &mut Workspace) -> Option<f64> {
        self.design.fit_weighted(&self.counts(rows), ws).ok()?;
        Some(self.design.coefficient(ws, self.j))
    }

    fn draw(rng: &mut Stream, n: usize) -> Vec<usize> {
        (0..n).map(|_| draw_index(rng, n)).collect()
    }

    /// Second-level estimates of resample `rows`, continuing the inner
    /// streams; `None` when some inner resample stays singular.
    fn inner(&self, rows: &[usize], streams: &mut [Stream]) -> Option<Vec<f64>> {
        let n = rows.len();
        let mut ws = Workspace::new();
        let mut out = Vec::new();
        for s in streams.iter_mut() {
            let mut redraws = 0;
            loop {
                let pos = Self::draw(s, n);
                let rows2: Vec<usize> = pos.iter().map(|&p| rows[p]).collect();
                if let Some(t) = self.fit(&rows2, &mut ws) {
                    out.push(t);
                    break;
                }
                redraws += 1;
                if redraws > self.cfg.max_redraws {
                    return None;
                }
            }
        }
        Some(out)
    }

    /// First nonsingular first-level resample of `slot`.
    fn first_ok(&self, rng: &mut Stream, ws: &mut Workspace) -> Option<(Vec<usize>, f64)> {
        for _ in 0..=self.cfg.max_redraws {
            let rows = Self::draw(rng, self.data.n());
            if let Some(t) = self.fit(&rows, ws) {
                return Some((rows, t));
            }
        }
        None
    }

    pub fn first_level(&self) -> Option<Vec<f64>> {
        let mut ws = Workspace::new();
        (0..self.cfg.b1)
            .map(|slot| self.first_ok(&mut self.outer(slot), &mut ws).map(|(_, t)| t))
            .collect()
    }

    /// `(theta*, depth)` per slot.
    pub fn histograms(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut ws = Workspace::new();
        let mut first = Vec::new();
        let mut depths = Vec::new();
        for slot in 0..self.cfg.b1 {
            let (rows, t) = self.first_ok(&mut self.outer(slot), &mut ws)?;
            let inner = self.inner(&rows, &mut self.inner_streams(slot))?;
            let below = inner.iter().filter(|&&v| v <= self.theta_hat).count();
            first.push(t);
            depths.push(below as f64 / self.cfg.b2 as f64);
        }
        Some((first, depths))
    }

    /// `(theta*, hc0 se*)` per slot, redrawing resamples with zero se.
    pub fn student_pairs(&self) -> Option<Vec<(f64, f64)>> {
        let mut ws = Workspace::new();
        let mut out = Vec::new();
        for slot in 0..self.cfg.b1 {
            let mut rng = self.outer(slot);
            let mut found = None;
            for _ in 0..=self.cfg.max_redraws {
                let rows = Self::draw(&mut rng, self.data.n());
                let Some(t) = self.fit(&rows, &mut ws) else { continue };
                let se = self.design.hc0_se_weighted(&mut ws, &self.counts(&rows), self.j);
                if se > 0.0 {
                    found = Some((t, se));
                    break;
                }
            }
            out.push(found?);
        }
        Some(out)
    }

    /// `(theta*, inner sd)` per slot, redrawing resamples with zero inner sd.
    pub fn boot_t_pairs(&self) -> Option<Vec<(f64, f64)>> {
        let mut ws = Workspace::new();
        let mut out = Vec::new();
        for slot in 0..self.cfg.b1 {
            let mut rng = self.outer(slot);
            let mut streams = self.inner_streams(slot);
            let mut found = None;
            for _ in 0..=self.cfg.max_redraws {
                let rows = Self::draw(&mut rng, self.data.n());
                let Some(t) = self.fit(&rows, &mut ws) else { continue };
                let inner = self.inner(&rows, &mut streams)?;
                let sd = ref_sd(&inner);
                if sd > 0.0 {
                    found = Some((t, sd));
                    break;
                }
            }
            out.push(found?);
        }
        Some(out)
    }

    fn data_hc0(&self) -> f64 {
        se_for(&fit_ols(self.data).unwrap(), self.data, SeVariant::Hc0, self.j).unwrap()
    }
}

pub fn ref_percentile(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> (f64, f64) {
    let first = RefTree::new(data, j, cfg).first_level().unwrap();
    let alpha = 1.0 - level;
    (ref_quantile(&first, alpha / 2.0), ref_quantile(&first, 1.0 - alpha / 2.0))
}

fn pivot_interval(theta: f64, se: f64, pivots: &[f64], level: f64) -> (f64, f64) {
    let alpha = 1.0 - level;
    (theta - se * ref_quantile(pivots, 1.0 - alpha / 2.0), theta - se * ref_quantile(pivots, alpha / 2.0))
}

pub fn ref_studentized(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> (f64, f64) {
    let tree = RefTree::new(data, j, cfg);
    let se = tree.data_hc0();
    if se == 0.0 {
        return (tree.theta_hat, tree.theta_hat);
    }
    let pivots: Vec<f64> = tree
        .student_pairs()
        .unwrap()
        .iter()
        .map(|&(t, s)| (t - tree.theta_hat) / s)
        .collect();
    pivot_interval(tree.theta_hat, se, &pivots, level)
}

pub fn ref_boot_t(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> (f64, f64) {
    let tree = RefTree::new(data, j, cfg);
    if tree.data_hc0() == 0.0 {
        return (tree.theta_hat, tree.theta_hat);
    }
    let pairs = tree.boot_t_pairs().unwrap();
    let outer: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let pivots: Vec<f64> = pairs.iter().map(|&(t, s)| (t - tree.theta_hat) / s).collect();
    pivot_interval(tree.theta_hat, ref_sd(&outer), &pivots, level)
}

/// Leave-one-out estimates from materialized datasets.
pub fn ref_jackknife(data: &Dataset, j: usize) -> Vec<f64> {
    let centering = Centering::of(data);
    let mut ws = Workspace::new();
    (0..data.n())
        .map(|i| {
            let d = data.without_row(i);
            let design = PreparedDesign::with_centering(&d, centering.clone());
            design.fit_all(&mut ws).unwrap();
            design.coefficient(&ws, j)
        })
        .collect()
}

/// `(lower, upper, degenerate)`.
pub fn ref_bca(data: &Dataset, j: usize, level: f64, cfg: &BootConfig) -> (f64, f64, bool) {
    let tree = RefTree::new(data, j, cfg);
    let first = tree.first_level().unwrap();
    let alpha = 1.0 - level;
    let below = first.iter().filter(|&&t| t < tree.theta_hat).count();
    if below == 0 || below == first.len() {
        return (ref_quantile(&first, alpha / 2.0), ref_quantile(&first, 1.0 - alpha / 2.0), true);
    }
    let z0 = z(below as f64 / first.len() as f64);
    let jack = ref_jackknife(data, j);
    let mean = jack.iter().sum::<f64>() / jack.len() as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for t in &jack {
        let d = mean - t;
        s2 += d * d;
        s3 += d * d * d;
    }
    let a = if s2 > 0.0 { s3 / (6.0 * s2.powf(1.5)) } else { 0.0 };
    let tail = |zq: f64| {
        let w = z0 + zq;
        let p = phi(z0 + w / (1.0 - a * w));
        p.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON)
    };
    let lo = ref_quantile(&first, tail(z(alpha / 2.0)));
    let hi = ref_quantile(&first, tail(z(1.0 - alpha / 2.0)));
    (lo, hi, false)
}

/// `(lower, upper, lambda)`; the one-sided lower end is minus infinity.
pub fn ref_perc_cal(data: &Dataset, j: usize, level: f64, cfg: &BootConfig, two_sided: bool) -> (f64, f64, f64) {
    let tree = RefTree::new(data, j, cfg);
    let (first, depths) = tree.histograms().unwrap();
    let alpha = 1.0 - level;
    let stats: Vec<f64> = if two_sided {
        depths.iter().map(|&q| if q > 1.0 - q { q } else { 1.0 - q }).collect()
    } else {
        depths
    };
    let raw = ref_quantile(&stats, 1.0 - alpha);
    let lo_clamp = 0.5 + 1.0 / (2.0 * cfg.b2 as f64);
    let hi_clamp = 1.0 - 1.0 / (2.0 * cfg.b2 as f64);
    let lambda = raw.max(lo_clamp).min(hi_clamp);
    let upper = ref_quantile(&first, lambda);
    let lower = if two_sided { ref_quantile(&first, 1.0 - lambda) } else { f64::NEG_INFINITY };
    (lower, upper, lambda)
}

// ---------------------------------------------------------------------------
// Dense-matrix oracle

/// Dense evaluation of every quantity straight from the matrix formulas.
pub struct Dense {
    pub beta: Vec<f64>,
    pub h: Vec<f64>,
    /// Per variant in `SeVariant::ALL` order, per coefficient.
    pub se: Vec<Vec<f64>>,
}

pub fn dense(data: &Dataset) -> Dense {
    let (n, k) = (data.n(), data.k());
    let x = DMatrix::from_row_slice(n, k, data.design());
    let y = DVector::from_column_slice(data.response());
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let beta = &xtx_inv * x.transpose() * &y;
    let e = &y - &x * &beta;
    let hat = &x * &xtx_inv * x.transpose();
    let h: Vec<f64> = (0..n).map(|i| hat[(i, i)]).collect();
    let (nf, kf) = (n as f64, k as f64);
    let h_max = h.iter().cloned().fold(0.0, f64::max);
    let sigma2 = e.dot(&e) / (nf - kf);

    let se = SeVariant::ALL
        .iter()
        .map(|&v| {
            if v == SeVariant::Classical {
                return (0..k).map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt()).collect();
            }
            let omega = DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let c = match v {
                        SeVariant::Hc0 => 1.0,
                        SeVariant::Hc1 => nf / (nf - kf),
                        SeVariant::Hc2 => 1.0 / (1.0 - h[i]),
                        SeVariant::Hc3 => (1.0 - h[i]).powi(-2),
                        SeVariant::Hc4 => (1.0 - h[i]).powf(-(nf * h[i] / kf).min(4.0)),
                        SeVariant::Hc5 => {
                            (1.0 - h[i]).powf(-(nf * h[i] / kf).min((0.7 * nf * h_max / kf).max(4.0)))
                        }
                        SeVariant::Classical => unreachable!(),
                    };
                    e[i] * e[i] * c
                }),
            ));
            let cov = &xtx_inv * x.transpose() * omega * &x * &xtx_inv;
            (0..k).map(|j| cov[(j, j)].sqrt()).collect()
        })
        .collect();
    Dense { beta: beta.iter().copied().collect(), h, se }
}
