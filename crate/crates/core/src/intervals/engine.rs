//! One pass over the pairs-bootstrap tree serving every resampling method.
//!
//! First-level slot `j` draws from stream `[1, j]`; its second-level resample
//! `k` draws from `[1, j, k]`, indexing into the first-level rows. A slot is
//! redrawn (by continuing its stream) when its resample is singular, and for
//! the pivot methods also when the resample's standard error is zero. Each
//! consumer accepts the first attempt that satisfies its own rule, so the
//! values handed to a method are the ones it would have produced alone.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::regress::{PreparedDesign, Workspace};
use crate::resample::{context, derive_stream, draw_index, Stream, StreamKey};

use super::BootConfig;

/// Which replicate families to produce, per requested coefficient.
#[derive(Debug, Clone)]
pub(crate) struct Request {
    pub coefs: Vec<usize>,
    pub first_level: bool,
    pub depths: bool,
    pub student: Vec<bool>,
    pub boot_t: Vec<bool>,
}

impl Request {
    pub fn new(coefs: Vec<usize>) -> Self {
        let m = coefs.len();
        Self {
            coefs,
            first_level: false,
            depths: false,
            student: vec![false; m],
            boot_t: vec![false; m],
        }
    }

    fn needs_inner(&self) -> bool {
        self.depths || self.boot_t.iter().any(|&b| b)
    }
}

/// Replicates for one coefficient, each family failing independently.
#[derive(Debug, Clone)]
pub(crate) struct CoefReplicates {
    pub first_level: Option<Result<Vec<f64>>>,
    pub depths: Option<Result<Vec<f64>>>,
    /// `(theta*, hc0 se*)` per slot.
    pub student: Option<Result<Vec<(f64, f64)>>>,
    /// `(theta*, inner sd)` per slot.
    pub boot_t: Option<Result<Vec<(f64, f64)>>>,
}

type Pending<T> = Option<Result<T>>;

struct SlotOut {
    first: Pending<Vec<f64>>,
    depths: Pending<Vec<f64>>,
    student: Vec<Pending<(f64, f64)>>,
    boot_t: Vec<Pending<(f64, f64)>>,
}

struct Inner {
    streams: Vec<Stream>,
    /// `estimates[c * b2 + k]`
    estimates: Vec<f64>,
}

pub(crate) struct Engine<'a> {
    design: &'a PreparedDesign,
    cfg: &'a BootConfig,
    theta_hat: &'a [f64],
    request: &'a Request,
}

impl<'a> Engine<'a> {
    pub fn new(
        design: &'a PreparedDesign,
        cfg: &'a BootConfig,
        theta_hat: &'a [f64],
        request: &'a Request,
    ) -> Self {
        Self { design, cfg, theta_hat, request }
    }

    pub fn run(&self) -> Vec<CoefReplicates> {
        let slots: Vec<SlotOut> = (0..self.cfg.b1)
            .into_par_iter()
            .with_min_len(if self.request.needs_inner() { 1 } else { 64 })
            .map_init(Workspace::new, |ws, j| self.run_slot(j, ws))
            .collect();
        self.merge(slots)
    }

    fn slot_key(&self, j: usize) -> StreamKey {
        StreamKey::new(self.cfg.master_seed, &[context::BOOTSTRAP, j as u64])
    }

    fn run_slot(&self, j: usize, ws: &mut Workspace) -> SlotOut {
        let req = self.request;
        let m = req.coefs.len();
        let n = self.design.n();
        let mut out = SlotOut {
            first: None,
            depths: None,
            student: vec![None; m],
            boot_t: vec![None; m],
        };
        let mut first_done = !req.first_level && !req.depths;
        let mut student_done: Vec<bool> = req.student.iter().map(|&s| !s).collect();
        let mut boot_done: Vec<bool> = req.boot_t.iter().map(|&b| !b).collect();

        let key = self.slot_key(j);
        let mut outer = derive_stream(key);
        let mut inner: Option<Inner> = None;
        let mut idx = vec![0usize; n];
        let mut weights = vec![0u32; n];
        let mut theta = vec![0.0; m];
        let mut attempts = 0usize;

        loop {
            if first_done && student_done.iter().all(|&d| d) && boot_done.iter().all(|&d| d) {
                break;
            }
            if attempts > self.cfg.max_redraws {
                let err = Error::TooManyDegenerateResamples { slot: j, redraws: attempts - 1 };
                if !first_done {
                    if req.first_level {
                        out.first = Some(Err(err.clone()));
                    }
                    if req.depths {
                        out.depths = Some(Err(err.clone()));
                    }
                }
                for c in 0..m {
                    if !student_done[c] {
                        out.student[c] = Some(Err(err.clone()));
                    }
                    if !boot_done[c] {
                        out.boot_t[c] = Some(Err(err.clone()));
                    }
                }
                break;
            }
            attempts += 1;

            weights.iter_mut().for_each(|w| *w = 0);
            for slot in idx.iter_mut() {
                *slot = draw_index(&mut outer, n);
                weights[*slot] += 1;
            }
            if self.design.fit_weighted(&weights, ws).is_err() {
                continue;
            }
            for (t, &c) in theta.iter_mut().zip(&req.coefs) {
                *t = self.design.coefficient(ws, c);
            }

            // Inner estimates for this attempt, computed at most once.
            let mut inner_result: Option<Result<()>> = None;

            if !first_done {
                first_done = true;
                if req.first_level {
                    out.first = Some(Ok(theta.clone()));
                }
                if req.depths {
                    let res = self.run_inner(j, &idx, &mut inner, ws);
                    out.depths = Some(res.clone().map(|_| {
                        let est = &inner.as_ref().unwrap().estimates;
                        let b2 = self.cfg.b2;
                        (0..m)
                            .map(|c| {
                                let th = self.theta_hat[c];
                                let hist = &est[c * b2..(c + 1) * b2];
                                hist.iter().filter(|&&v| v <= th).count() as f64 / b2 as f64
                            })
                            .collect()
                    }));
                    inner_result = Some(res);
                }
            }

            if inner_result.is_some() && student_done.iter().any(|&d| !d) {
                // Inner fits overwrote the workspace.
                self.design.fit_weighted(&weights, ws).expect("refit of an accepted resample");
            }
            for c in 0..m {
                if student_done[c] {
                    continue;
                }
                let se = self.design.hc0_se_weighted(ws, &weights, req.coefs[c]);
                if se > 0.0 {
                    out.student[c] = Some(Ok((theta[c], se)));
                    student_done[c] = true;
                }
            }

            if boot_done.iter().any(|&d| !d) {
                let res = match inner_result.take() {
                    Some(r) => r,
                    None => self.run_inner(j, &idx, &mut inner, ws),
                };
                for c in 0..m {
                    if boot_done[c] {
                        continue;
                    }
                    match &res {
                        Err(e) => {
                            out.boot_t[c] = Some(Err(e.clone()));
                            boot_done[c] = true;
                        }
                        Ok(()) => {
                            let b2 = self.cfg.b2;
                            let est = &inner.as_ref().unwrap().estimates[c * b2..(c + 1) * b2];
                            let sd = sample_sd(est);
                            if sd > 0.0 {
                                out.boot_t[c] = Some(Ok((theta[c], sd)));
                                boot_done[c] = true;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Second-level fits of the first-level rows `idx`. Inner streams persist
    /// across attempts of the same slot.
    fn run_inner(
        &self,
        j: usize,
        idx: &[usize],
        inner: &mut Option<Inner>,
        ws: &mut Workspace,
    ) -> Result<()> {
        let b2 = self.cfg.b2;
        let m = self.request.coefs.len();
        let n = idx.len();
        let inner = inner.get_or_insert_with(|| {
            let key = self.slot_key(j);
            Inner {
                streams: (0..b2).map(|k| derive_stream(key.child(k as u64))).collect(),
                estimates: vec![0.0; m * b2],
            }
        });
        let mut weights = vec![0u32; n];
        for k in 0..b2 {
            let rng = &mut inner.streams[k];
            let mut redraws = 0;
            loop {
                weights.iter_mut().for_each(|w| *w = 0);
                for _ in 0..n {
                    weights[idx[draw_index(rng, n)]] += 1;
                }
                if self.design.fit_weighted(&weights, ws).is_ok() {
                    break;
                }
                redraws += 1;
                if redraws > self.cfg.max_redraws {
                    return Err(Error::TooManyDegenerateResamples { slot: j, redraws: redraws - 1 });
                }
            }
            for (c, &coef) in self.request.coefs.iter().enumerate() {
                inner.estimates[c * b2 + k] = self.design.coefficient(ws, coef);
            }
        }
        Ok(())
    }

    fn merge(&self, slots: Vec<SlotOut>) -> Vec<CoefReplicates> {
        let req = self.request;
        (0..req.coefs.len())
            .map(|c| CoefReplicates {
                first_level: req.first_level.then(|| {
                    collect(slots.iter().map(|s| s.first.as_ref().unwrap().as_ref().map(|v| v[c])))
                }),
                depths: req.depths.then(|| {
                    collect(slots.iter().map(|s| s.depths.as_ref().unwrap().as_ref().map(|v| v[c])))
                }),
                student: req.student[c].then(|| {
                    collect(slots.iter().map(|s| s.student[c].as_ref().unwrap().as_ref().map(|&p| p)))
                }),
                boot_t: req.boot_t[c].then(|| {
                    collect(slots.iter().map(|s| s.boot_t[c].as_ref().unwrap().as_ref().map(|&p| p)))
                }),
            })
            .collect()
    }
}

/// Values in slot order, or the error of the lowest failing slot.
fn collect<'r, T: 'r>(items: impl Iterator<Item = std::result::Result<T, &'r Error>>) -> Result<Vec<T>> {
    items.map(|r| r.map_err(Clone::clone)).collect()
}

/// Sample standard deviation (divisor `len - 1`); exactly zero when all
/// values coincide.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let first = values[0];
    if values.len() < 2 || values.iter().all(|&v| v == first) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
