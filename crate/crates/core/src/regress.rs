//! Least-squares fitting for small dense designs and the classical and
//! heteroskedasticity-consistent standard errors.
//!
//! Every fit goes through [`PreparedDesign`]: rows are shifted by a fixed
//! reference point (the covariate and response means of the dataset the
//! design was prepared from), their cross products are cached, and a fit on
//! any multiset of rows is a sum of cached products followed by an
//! elimination on the `k x k` system. The full-sample fit is the same code
//! path applied to the identity index list, so a resample that happens to
//! reproduce the original rows reproduces the original estimate bit for bit.

use crate::error::{Error, Result};

/// Relative pivot threshold: a pivot must exceed this fraction of the
/// diagonal entry it was eliminated from.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Leverages at or above `1 - LEVERAGE_TOLERANCE` are treated as one.
pub const LEVERAGE_TOLERANCE: f64 = 1e-12;

const HC5_CONSTANT: f64 = 0.7;

/// `n` observations of an intercept-led design row and a response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    design: Vec<f64>,
    response: Vec<f64>,
    k: usize,
}

impl Dataset {
    /// Builds a dataset from a row-major `n x k` design whose first column is
    /// the intercept.
    pub fn new(design: Vec<f64>, k: usize, response: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidData("design needs at least the intercept column".into()));
        }
        let n = response.len();
        if design.len() != n * k {
            return Err(Error::InvalidData(format!(
                "design has {} entries, expected {n} rows x {k} columns",
                design.len()
            )));
        }
        if n < k + 1 {
            return Err(Error::InvalidData(format!(
                "{n} observations cannot support {k} coefficients and a residual variance"
            )));
        }
        for (i, row) in design.chunks_exact(k).enumerate() {
            if row[0] != 1.0 {
                return Err(Error::InvalidData(format!("row {i}: intercept column is not 1")));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("row {i}, column {c}: non-finite value")));
            }
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {i}: non-finite response")));
        }
        Ok(Self { design, response, k })
    }

    /// Builds a dataset from covariate columns, prepending the intercept.
    pub fn from_columns(covariates: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        if let Some(c) = covariates.iter().position(|col| col.len() != n) {
            return Err(Error::InvalidData(format!(
                "covariate {c} has {} values, response has {n}",
                covariates[c].len()
            )));
        }
        let k = covariates.len() + 1;
        let mut design = Vec::with_capacity(n * k);
        for i in 0..n {
            design.push(1.0);
            design.extend(covariates.iter().map(|col| col[i]));
        }
        Self::new(design, k, response)
    }

    /// Simple regression of `y` on one covariate `x` with an intercept.
    pub fn simple(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::from_columns(&[x.to_vec()], y.to_vec())
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    /// Number of fitted columns, intercept included.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of covariates, intercept excluded.
    pub fn p(&self) -> usize {
        self.k - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.design.chunks_exact(self.k)
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    /// The rows at `indices`, in that order, repeats allowed.
    ///
    /// The result skips the size check of [`Dataset::new`]; every row is a
    /// row of `self`, so the remaining invariants carry over.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut design = Vec::with_capacity(indices.len() * self.k);
        let mut response = Vec::with_capacity(indices.len());
        for &i in indices {
            design.extend_from_slice(self.row(i));
            response.push(self.response[i]);
        }
        Dataset { design, response, k: self.k }
    }

    /// Leave-one-out copy.
    pub fn without_row(&self, skip: usize) -> Dataset {
        let keep: Vec<usize> = (0..self.n()).filter(|&i| i != skip).collect();
        self.select(&keep)
    }

    /// Same design with a new response vector.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.design.clone(), self.k, response)
    }
}

/// Standard-error estimator for a single coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeVariant {
    Classical,
    Hc0,
    Hc1,
    Hc2,
    Hc3,
    Hc4,
    Hc5,
}

impl SeVariant {
    pub const ALL: [SeVariant; 7] = [
        SeVariant::Classical,
        SeVariant::Hc0,
        SeVariant::Hc1,
        SeVariant::Hc2,
        SeVariant::Hc3,
        SeVariant::Hc4,
        SeVariant::Hc5,
    ];

    fn needs_leverage(self) -> bool {
        matches!(self, SeVariant::Hc2 | SeVariant::Hc3 | SeVariant::Hc4 | SeVariant::Hc5)
    }
}

/// Reference point subtracted from every row before cross products are formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Centering {
    /// Covariate means; entry 0 belongs to the intercept and is always 0.
    x_shift: Vec<f64>,
    y_shift: f64,
}

impl Centering {
    /// Column and response means of `data`.
    pub fn of(data: &Dataset) -> Self {
        let n = data.n() as f64;
        let mut x_shift = vec![0.0; data.k()];
        for row in data.rows() {
            for (s, v) in x_shift.iter_mut().zip(row).skip(1) {
                *s += v;
            }
        }
        for s in x_shift.iter_mut().skip(1) {
            *s /= n;
        }
        let y_shift = data.response().iter().sum::<f64>() / n;
        Self { x_shift, y_shift }
    }

    fn center(&self, row: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for l in 1..row.len() {
            out[l] = row[l] - self.x_shift[l];
        }
    }
}

/// Length of the packed per-row cross-product vector for `k` columns.
pub(crate) fn packed_len(k: usize) -> usize {
    k * (k + 1) / 2 + k
}

/// A dataset with its rows centered and their cross products cached, ready
/// for repeated fits on index multisets.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    centering: Centering,
    k: usize,
    n: usize,
    centered: Vec<f64>,
    centered_y: Vec<f64>,
    packed: Vec<f64>,
}

impl PreparedDesign {
    pub fn new(data: &Dataset) -> Self {
        Self::with_centering(data, Centering::of(data))
    }

    pub fn with_centering(data: &Dataset, centering: Centering) -> Self {
        let k = data.k();
        let n = data.n();
        let len = packed_len(k);
        let mut centered = vec![0.0; n * k];
        let mut centered_y = Vec::with_capacity(n);
        let mut packed = vec![0.0; n * len];
        for i in 0..n {
            let xc = &mut centered[i * k..(i + 1) * k];
            centering.center(data.row(i), xc);
            let yc = data.response()[i] - centering.y_shift;
            centered_y.push(yc);
            let out = &mut packed[i * len..(i + 1) * len];
            let mut t = 0;
            for a in 0..k {
                for b in a..k {
                    out[t] = xc[a] * xc[b];
                    t += 1;
                }
            }
            for a in 0..k {
                out[t] = xc[a] * yc;
                t += 1;
            }
        }
        Self { centering, k, n, centered, centered_y, packed }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn centering(&self) -> &Centering {
        &self.centering
    }

    /// Fits the multiset of rows given by `weights` (row multiplicities).
    ///
    /// Cross products are summed in ascending row order, so the result
    /// depends only on the multiset, not on the order rows were drawn in.
    pub fn fit_weighted(&self, weights: &[u32], ws: &mut Workspace) -> Result<()> {
        debug_assert_eq!(weights.len(), self.n);
        ws.reset(self.k);
        accumulate(&mut ws.acc, &self.packed, weights);
        ws.solve(self.k)
    }

    /// Fits the rows listed in `indices` (repeats allowed).
    pub fn fit_indices(&self, indices: &[usize], ws: &mut Workspace) -> Result<()> {
        let weights = self.weights_of(indices);
        self.fit_weighted(&weights, ws)
    }

    /// Fits every row once.
    pub fn fit_all(&self, ws: &mut Workspace) -> Result<()> {
        self.fit_weighted(&vec![1; self.n], ws)
    }

    /// Row multiplicities of an index multiset.
    pub fn weights_of(&self, indices: &[usize]) -> Vec<u32> {
        let mut w = vec![0u32; self.n];
        for &i in indices {
            w[i] += 1;
        }
        w
    }

    /// Coefficient `j` in the original (uncentered) parameterization of the
    /// last successful fit in `ws`.
    pub fn coefficient(&self, ws: &Workspace, j: usize) -> f64 {
        if j == 0 {
            let mut b0 = self.centering.y_shift + ws.beta[0];
            for l in 1..self.k {
                b0 -= self.centering.x_shift[l] * ws.beta[l];
            }
            b0
        } else {
            ws.beta[j]
        }
    }

    /// Writes every coefficient of the last fit into `out`.
    pub fn coefficients_into(&self, ws: &Workspace, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.coefficient(ws, j);
        }
    }

    /// HC0 standard error of coefficient `j` for the last fit in `ws`, which
    /// must have been produced from exactly `weights`.
    pub fn hc0_se_weighted(&self, ws: &mut Workspace, weights: &[u32], j: usize) -> f64 {
        let k = self.k;
        // Gradient of coefficient j with respect to the centered coefficients.
        ws.rhs.clear();
        ws.rhs.resize(k, 0.0);
        if j == 0 {
            ws.rhs[0] = 1.0;
            for l in 1..k {
                ws.rhs[l] = -self.centering.x_shift[l];
            }
        } else {
            ws.rhs[j] = 1.0;
        }
        ws.solve_rhs(k);
        let mut meat = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0 {
                continue;
            }
            let xc = self.centered_row(i);
            let mut fitted = 0.0;
            let mut g = 0.0;
            for l in 0..k {
                fitted += xc[l] * ws.beta[l];
                g += xc[l] * ws.rhs[l];
            }
            let e = self.centered_y[i] - fitted;
            meat += w as f64 * (e * e * g * g);
        }
        meat.sqrt()
    }

    fn centered_row(&self, i: usize) -> &[f64] {
        &self.centered[i * self.k..(i + 1) * self.k]
    }
}

/// Scratch space for repeated fits; reuse one per thread.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    acc: Vec<f64>,
    lu: Vec<f64>,
    beta: Vec<f64>,
    rhs: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn reset(&mut self, k: usize) {
        self.acc.clear();
        self.acc.resize(packed_len(k), 0.0);
    }

    /// Centered coefficients of the last fit.
    pub fn centered_beta(&self) -> &[f64] {
        &self.beta
    }

    /// Eliminates the accumulated normal equations without pivoting.
    pub(crate) fn solve(&mut self, k: usize) -> Result<()> {
        let lu = &mut self.lu;
        lu.clear();
        lu.resize(k * k, 0.0);
        let mut t = 0;
        for a in 0..k {
            for b in a..k {
                lu[a * k + b] = self.acc[t];
                lu[b * k + a] = self.acc[t];
                t += 1;
            }
        }
        self.beta.clear();
        self.beta.extend_from_slice(&self.acc[t..t + k]);

        for l in 0..k {
            let diag = self.acc[diag_offset(l, k)];
            let pivot = lu[l * k + l];
            if !(pivot.is_finite() && diag > 0.0 && pivot > PIVOT_TOLERANCE * diag) {
                return Err(Error::SingularDesign);
            }
            for i in l + 1..k {
                let m = lu[i * k + l] / pivot;
                lu[i * k + l] = m;
                for c in l + 1..k {
                    lu[i * k + c] -= m * lu[l * k + c];
                }
                self.beta[i] -= m * self.beta[l];
            }
        }
        back_substitute(lu, &mut self.beta, k);
        Ok(())
    }

    /// Solves against the factored matrix of the last fit, in place on `rhs`.
    fn solve_rhs(&mut self, k: usize) {
        let lu = &self.lu;
        for l in 0..k {
            for i in l + 1..k {
                self.rhs[i] -= lu[i * k + l] * self.rhs[l];
            }
        }
        back_substitute(lu, &mut self.rhs, k);
    }
}

/// `acc += w[i] * row_i` over rows with nonzero weight, in row order.
fn accumulate(acc: &mut [f64], packed: &[f64], weights: &[u32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at run time.
        return unsafe { accumulate_avx2(acc, packed, weights) };
    }
    accumulate_generic(acc, packed, weights)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_avx2(acc: &mut [f64], packed: &[f64], weights: &[u32]) {
    // Same operations as the generic path; only the vector width differs.
    accumulate_generic(acc, packed, weights)
}

#[inline(always)]
fn accumulate_generic(acc: &mut [f64], packed: &[f64], weights: &[u32]) {
    let len = acc.len();
    // Branch-free compaction of the rows that carry weight.
    let mut live = [0u32; 256];
    for (block, ws) in weights.chunks(live.len()).enumerate() {
        let base = block * live.len();
        let mut m = 0;
        for (i, &w) in ws.iter().enumerate() {
            live[m] = i as u32;
            m += (w != 0) as usize;
        }
        for &i in &live[..m] {
            let i = i as usize;
            let wf = ws[i] as f64;
            let row = &packed[(base + i) * len..(base + i + 1) * len];
            for (a, r) in acc.iter_mut().zip(row) {
                *a += wf * r;
            }
        }
    }
}

fn diag_offset(l: usize, k: usize) -> usize {
    // Row a of the packed upper triangle starts at a*k - a*(a-1)/2.
    l * k - l * l.saturating_sub(1) / 2
}

fn back_substitute(lu: &[f64], x: &mut [f64], k: usize) {
    for i in (0..k).rev() {
        let mut s = x[i];
        for c in i + 1..k {
            s -= lu[i * k + c] * x[c];
        }
        x[i] = s / lu[i * k + i];
    }
}

/// Full-sample least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LsFit {
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    pub leverages: Vec<f64>,
    /// Row-major `k x k` inverse of `X'X` in the original parameterization.
    pub xtx_inv: Vec<f64>,
    /// Residual sum of squares over `n - p - 1`.
    pub sigma2_hat: f64,
    pub k: usize,
}

impl LsFit {
    pub fn xtx_inv_at(&self, a: usize, b: usize) -> f64 {
        self.xtx_inv[a * self.k + b]
    }
}

/// Ordinary least squares of the response on the design.
pub fn fit_ols(data: &Dataset) -> Result<LsFit> {
    let design = PreparedDesign::new(data);
    fit_prepared(&design)
}

pub(crate) fn fit_prepared(design: &PreparedDesign) -> Result<LsFit> {
    let k = design.k;
    let n = design.n;
    let mut ws = Workspace::new();
    design.fit_all(&mut ws)?;
    let mut beta_hat = vec![0.0; k];
    design.coefficients_into(&ws, &mut beta_hat);

    let beta_c = ws.beta.clone();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let fitted: f64 = design.centered_row(i).iter().zip(&beta_c).map(|(x, b)| x * b).sum();
            design.centered_y[i] - fitted
        })
        .collect();

    // Inverse of the centered cross-product matrix, column by column.
    let mut inv_c = vec![0.0; k * k];
    for col in 0..k {
        ws.rhs.clear();
        ws.rhs.resize(k, 0.0);
        ws.rhs[col] = 1.0;
        ws.solve_rhs(k);
        for row in 0..k {
            inv_c[row * k + col] = ws.rhs[row];
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            let s = 0.5 * (inv_c[a * k + b] + inv_c[b * k + a]);
            inv_c[a * k + b] = s;
            inv_c[b * k + a] = s;
        }
    }

    let leverages: Vec<f64> = (0..n)
        .map(|i| quadratic_form(&inv_c, design.centered_row(i), k))
        .collect();

    // X = Xc M with M[0][l] = shift_l, so (X'X)^-1 = M^-1 (Xc'Xc)^-1 M^-T and
    // M^-1 differs from the identity only in row 0, which is (1, -shift).
    let shift = &design.centering.x_shift;
    let transform = |v: &[f64]| -> f64 {
        let mut s = v[0];
        for l in 1..k {
            s -= shift[l] * v[l];
        }
        s
    };
    let mut xtx_inv = inv_c.clone();
    let row0: Vec<f64> = (0..k)
        .map(|c| transform(&(0..k).map(|r| inv_c[r * k + c]).collect::<Vec<_>>()))
        .collect();
    let corner = transform(&row0);
    for c in 1..k {
        xtx_inv[c] = row0[c];
        xtx_inv[c * k] = row0[c];
    }
    xtx_inv[0] = corner;

    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let sigma2_hat = rss / (n - k) as f64;
    Ok(LsFit { beta_hat, residuals, leverages, xtx_inv, sigma2_hat, k })
}

fn quadratic_form(m: &[f64], v: &[f64], k: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..k {
        let mut row = 0.0;
        for b in 0..k {
            row += m[a * k + b] * v[b];
        }
        s += v[a] * row;
    }
    s
}

/// Diagonal of the hat matrix, `x_i' (X'X)^-1 x_i`, evaluated from the stored
/// inverse and the original rows.
pub fn leverages(fit: &LsFit, data: &Dataset) -> Vec<f64> {
    data.rows().map(|row| quadratic_form(&fit.xtx_inv, row, fit.k)).collect()
}

/// Standard error of coefficient `coef_index` under `variant`.
pub fn se_for(fit: &LsFit, data: &Dataset, variant: SeVariant, coef_index: usize) -> Result<f64> {
    let k = fit.k;
    if coef_index >= k {
        return Err(Error::CoefficientOutOfRange { index: coef_index, k });
    }
    if variant == SeVariant::Classical {
        return Ok((fit.sigma2_hat * fit.xtx_inv_at(coef_index, coef_index)).max(0.0).sqrt());
    }
    if variant.needs_leverage() {
        if let Some(index) = fit.leverages.iter().position(|&h| h >= 1.0 - LEVERAGE_TOLERANCE) {
            return Err(Error::LeverageOne { index });
        }
    }
    let n = data.n() as f64;
    let kf = k as f64;
    let h_max = fit.leverages.iter().cloned().fold(0.0, f64::max);
    let bread_row = &fit.xtx_inv[coef_index * k..(coef_index + 1) * k];
    let mut meat = 0.0;
    for (i, row) in data.rows().enumerate() {
        let e = fit.residuals[i];
        let h = fit.leverages[i];
        let weight = match variant {
            SeVariant::Classical => unreachable!(),
            SeVariant::Hc0 => 1.0,
            SeVariant::Hc1 => n / (n - kf),
            SeVariant::Hc2 => 1.0 / (1.0 - h),
            SeVariant::Hc3 => 1.0 / ((1.0 - h) * (1.0 - h)),
            SeVariant::Hc4 => {
                let delta = (n * h / kf).min(4.0);
                (1.0 - h).powf(-delta)
            }
            SeVariant::Hc5 => {
                let gamma = (n * h / kf).min((HC5_CONSTANT * n * h_max / kf).max(4.0));
                (1.0 - h).powf(-gamma)
            }
        };
        let g: f64 = bread_row.iter().zip(row).map(|(b, x)| b * x).sum();
        meat += e * e * weight * g * g;
    }
    Ok(meat.sqrt())
}
