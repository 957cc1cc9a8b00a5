//! Regression kernels: datasets, segmentations, break designs and least squares.
//!
//! Observation indices in the public API are 1-based where they name break
//! dates (`tau` is the last observation of a regime); row ranges handed to the
//! internal caches are 0-based half-open.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Chol;

/// Relative rank tolerance for the pivoted QR.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let t = y.len();
        let k = x.ncols();
        if x.nrows() != t {
            return Err(Error::InvalidInput(format!(
                "response has {t} rows but covariates have {}",
                x.nrows()
            )));
        }
        if k == 0 {
            return Err(Error::InvalidInput("no covariates".into()));
        }
        if t < k + 1 {
            return Err(Error::InvalidInput(format!("need at least {} observations, got {t}", k + 1)));
        }
        if names.len() != k {
            return Err(Error::InvalidInput(format!("{} names for {k} covariates", names.len())));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in data".into()));
        }
        Ok(Dataset { y: DVector::from_vec(y), x, names })
    }

    /// Builds a dataset with generated names `x0, x1, ...`.
    pub fn unnamed(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(y, x, names)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_cov(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// First `n` observations.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.n_obs());
        Dataset::new(
            self.y.rows(0, n).iter().cloned().collect(),
            self.x.rows(0, n).clone_owned(),
            self.names.clone(),
        )
    }

    /// Rows `[a, b)` as a plain design and response.
    pub fn rows(&self, a: usize, b: usize) -> (DMatrix<f64>, DVector<f64>) {
        (self.x.rows(a, b - a).clone_owned(), self.y.rows(a, b - a).clone_owned())
    }

    /// Population variance of the response.
    pub fn var_y(&self) -> f64 {
        let n = self.n_obs() as f64;
        let m = self.y.sum() / n;
        self.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
    }
}

/// Ordered break dates `0 < tau_1 < ... < tau_{m-1} < T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segmentation {
    n_obs: usize,
    breaks: Vec<usize>,
}

impl Segmentation {
    pub fn new(n_obs: usize, breaks: Vec<usize>) -> Result<Self> {
        for w in breaks.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSegmentation(format!("breaks not increasing: {breaks:?}")));
            }
        }
        if let (Some(&f), Some(&l)) = (breaks.first(), breaks.last()) {
            if f == 0 || l >= n_obs {
                return Err(Error::InvalidSegmentation(format!(
                    "breaks {breaks:?} outside 1..{}",
                    n_obs.saturating_sub(1)
                )));
            }
        }
        Ok(Segmentation { n_obs, breaks })
    }

    pub fn none(n_obs: usize) -> Self {
        Segmentation { n_obs, breaks: Vec::new() }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn breaks(&self) -> &[usize] {
        &self.breaks
    }

    pub fn n_regimes(&self) -> usize {
        self.breaks.len() + 1
    }

    /// 0-based half-open row range of regime `j` (1-based).
    pub fn regime_rows(&self, j: usize) -> (usize, usize) {
        let a = if j == 1 { 0 } else { self.breaks[j - 2] };
        let b = if j == self.n_regimes() { self.n_obs } else { self.breaks[j - 1] };
        (a, b)
    }

    /// First row (0-based) of break-design block `j` (1-based).
    pub fn block_start(&self, j: usize) -> usize {
        self.regime_rows(j).0
    }

    pub fn regime_lengths(&self) -> Vec<usize> {
        (1..=self.n_regimes())
            .map(|j| {
                let (a, b) = self.regime_rows(j);
                b - a
            })
            .collect()
    }

    pub fn min_regime_len(&self) -> usize {
        self.regime_lengths().into_iter().min().unwrap_or(0)
    }
}

/// `X_tau = (X_0, ..., X_{m-1})` where block `j` equals `X` on rows after
/// the `j`-th break and zero before it.
pub fn build_break_design(data: &Dataset, seg: &Segmentation) -> Result<DMatrix<f64>> {
    if seg.n_obs() != data.n_obs() {
        return Err(Error::InvalidSegmentation(format!(
            "segmentation covers {} observations, data has {}",
            seg.n_obs(),
            data.n_obs()
        )));
    }
    let (t, k, m) = (data.n_obs(), data.n_cov(), seg.n_regimes());
    let mut xt = DMatrix::zeros(t, m * k);
    for j in 1..=m {
        let s = seg.block_start(j);
        for c in 0..k {
            for r in s..t {
                xt[(r, (j - 1) * k + c)] = data.x()[(r, c)];
            }
        }
    }
    Ok(xt)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub rss: f64,
    pub rank: usize,
}

impl OlsFit {
    /// Maximum-likelihood residual variance `rss / T`.
    pub fn sigma2(&self, n_obs: usize) -> f64 {
        self.rss / n_obs as f64
    }
}

struct PivotedQr {
    rank: usize,
    perm: Vec<usize>,
    r: DMatrix<f64>,
    qty: DVector<f64>,
}

fn pivoted_qr(x: &DMatrix<f64>, y: &DVector<f64>) -> PivotedQr {
    let (n, p) = x.shape();
    let mut a = x.clone();
    let mut qty = y.clone();
    let mut perm: Vec<usize> = (0..p).collect();
    let tol = RANK_TOL * x.norm();
    let steps = n.min(p);
    let mut rank = steps;
    for k in 0..steps {
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..p {
            let v = a.view((k, j), (n - k, 1)).norm_squared();
            if v > best_norm {
                best_norm = v;
                best = j;
            }
        }
        if best_norm.sqrt() <= tol {
            rank = k;
            break;
        }
        if best != k {
            a.swap_columns(k, best);
            perm.swap(k, best);
        }
        let norm = best_norm.sqrt();
        let akk = a[(k, k)];
        let alpha = if akk >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|e| e * e).sum();
        if vtv > 0.0 {
            for j in (k + 1)..p {
                let mut col = a.column_mut(j);
                let d: f64 = v.iter().enumerate().map(|(i, vi)| vi * col[k + i]).sum();
                let f = 2.0 * d / vtv;
                for (i, vi) in v.iter().enumerate() {
                    col[k + i] -= f * vi;
                }
            }
            let d: f64 = v.iter().enumerate().map(|(i, vi)| vi * qty[k + i]).sum();
            let f = 2.0 * d / vtv;
            for (i, vi) in v.iter().enumerate() {
                qty[k + i] -= f * vi;
            }
        }
        a[(k, k)] = alpha;
        for i in (k + 1)..n {
            a[(i, k)] = 0.0;
        }
    }
    PivotedQr { rank, perm, r: a, qty }
}

fn qr_solution(qr: &PivotedQr, p: usize) -> (Vec<f64>, f64) {
    let r = qr.rank;
    let mut z: Vec<f64> = (0..r).map(|i| qr.qty[i]).collect();
    for i in (0..r).rev() {
        let mut s = z[i];
        for j in (i + 1)..r {
            s -= qr.r[(i, j)] * z[j];
        }
        z[i] = s / qr.r[(i, i)];
    }
    let mut beta = vec![0.0; p];
    for i in 0..r {
        beta[qr.perm[i]] = z[i];
    }
    let rss = qr.qty.iter().skip(r).map(|v| v * v).sum();
    (beta, rss)
}

/// Least squares via column-pivoted Householder QR. A rank-deficient design
/// is an error naming the lowest-indexed column left out of the pivot order.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput("design and response lengths differ".into()));
    }
    let p = x.ncols();
    let qr = pivoted_qr(x, y);
    if qr.rank < p {
        let column = qr.perm[qr.rank..].iter().cloned().min().unwrap_or(0);
        return Err(Error::Singular { column });
    }
    let (beta, rss) = qr_solution(&qr, p);
    Ok(OlsFit { beta, rss, rank: p })
}

/// Residual sum of squares of the projection of `y` on the column space of
/// `x`, tolerating rank deficiency.
pub fn projection_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> (f64, usize) {
    let qr = pivoted_qr(x, y);
    let (_, rss) = qr_solution(&qr, x.ncols());
    (rss, qr.rank)
}

/// Sum over regimes of the separate least-squares residual sums.
pub fn rss_partitioned(data: &Dataset, seg: &Segmentation) -> Result<f64> {
    let k = data.n_cov();
    let mut total = 0.0;
    for j in 1..=seg.n_regimes() {
        let (a, b) = seg.regime_rows(j);
        if b - a < k {
            return Err(Error::InvalidSegmentation(format!(
                "regime {j} has {} observations, fewer than {k} covariates",
                b - a
            )));
        }
        let (x, y) = data.rows(a, b);
        total += ols(&x, &y)?.rss;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub loglik: f64,
    pub sigma2: f64,
    /// Set when the residual variance hit the floor (near-perfect fit).
    pub degenerate: bool,
}

/// Floor applied to segment residual variances.
pub fn variance_floor(data: &Dataset) -> f64 {
    let v = data.var_y();
    1e-12 * if v > 0.0 { v } else { 1.0 }
}

fn segment_fit(rss: f64, n: usize, floor: f64) -> SegmentFit {
    let mut sigma2 = rss.max(0.0) / n as f64;
    let degenerate = sigma2 <= floor;
    if degenerate {
        sigma2 = floor;
    }
    let loglik = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    SegmentFit { loglik, sigma2, degenerate }
}

/// Maximized Gaussian log-likelihood of the regression restricted to
/// observations `a..=b` (1-based, inclusive).
pub fn gaussian_loglik(data: &Dataset, a: usize, b: usize) -> Result<SegmentFit> {
    if a == 0 || b > data.n_obs() || a > b {
        return Err(Error::InvalidInput(format!("segment {a}..={b} out of range")));
    }
    let n = b - a + 1;
    if n < data.n_cov() + 1 {
        return Err(Error::InvalidInput(format!(
            "segment of length {n} needs at least {} observations",
            data.n_cov() + 1
        )));
    }
    let (x, y) = data.rows(a - 1, b);
    let (rss, _) = projection_rss(&x, &y);
    Ok(segment_fit(rss, n, variance_floor(data)))
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    i * (i + 1) / 2 + j
}

/// Prefix sums of `x_t x_t'`, `x_t y_t` and `y_t^2`, giving O(K^2) access to
/// the cross products of any row window.
#[derive(Debug, Clone)]
pub struct Moments {
    n: usize,
    k: usize,
    kk: usize,
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: Vec<f64>,
}

/// Normal-equation summary of a regression: `X'X`, `X'y`, `y'y`.
#[derive(Debug, Clone)]
pub struct Normal {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n_obs: usize,
}

impl Moments {
    pub fn new(data: &Dataset) -> Self {
        let (n, k) = (data.n_obs(), data.n_cov());
        let kk = k * (k + 1) / 2;
        let mut xx = vec![0.0; (n + 1) * kk];
        let mut xy = vec![0.0; (n + 1) * k];
        let mut yy = vec![0.0; n + 1];
        let x = data.x();
        let y = data.y();
        let mut row = vec![0.0; k];
        for t in 0..n {
            for c in 0..k {
                row[c] = x[(t, c)];
            }
            let (prev, next) = xx.split_at_mut((t + 1) * kk);
            let prev = &prev[t * kk..];
            let next = &mut next[..kk];
            for i in 0..k {
                for j in 0..=i {
                    let p = i * (i + 1) / 2 + j;
                    next[p] = prev[p] + row[i] * row[j];
                }
            }
            for c in 0..k {
                xy[(t + 1) * k + c] = xy[t * k + c] + row[c] * y[t];
            }
            yy[t + 1] = yy[t] + y[t] * y[t];
        }
        Moments { n, k, kk, xx, xy, yy }
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    /// Cross products over rows `[a, b)`.
    pub fn window(&self, a: usize, b: usize) -> Normal {
        let k = self.k;
        let (pa, pb) = (a * self.kk, b * self.kk);
        let gram = DMatrix::from_fn(k, k, |i, j| {
            let p = packed(i, j);
            self.xx[pb + p] - self.xx[pa + p]
        });
        let xty = DVector::from_fn(k, |c, _| self.xy[b * k + c] - self.xy[a * k + c]);
        Normal { gram, xty, yty: self.yy[b] - self.yy[a], n_obs: b - a }
    }

    /// Normal equations of the full break design.
    pub fn break_normal(&self, seg: &Segmentation) -> Normal {
        let (k, m) = (self.k, seg.n_regimes());
        let starts: Vec<usize> = (1..=m).map(|j| seg.block_start(j)).collect();
        let n = self.n;
        let mut gram = DMatrix::zeros(m * k, m * k);
        for bi in 0..m {
            for bj in 0..m {
                let s = starts[bi].max(starts[bj]);
                let (ps, pn) = (s * self.kk, n * self.kk);
                for i in 0..k {
                    for j in 0..k {
                        let p = packed(i, j);
                        gram[(bi * k + i, bj * k + j)] = self.xx[pn + p] - self.xx[ps + p];
                    }
                }
            }
        }
        let xty = DVector::from_fn(m * k, |r, _| {
            let (b, c) = (r / k, r % k);
            self.xy[n * k + c] - self.xy[starts[b] * k + c]
        });
        Normal { gram, xty, yty: self.yy[n], n_obs: n }
    }
}

impl Normal {
    /// Least squares on the columns `cols`. Returns coefficients in the
    /// order of `cols` and the residual sum of squares.
    pub fn subset_ols(&self, cols: &[usize]) -> Result<(DVector<f64>, f64)> {
        let g = crate::linalg::submatrix(&self.gram, cols);
        let xty = crate::linalg::subvector(&self.xty, cols);
        let chol = Chol::factor(&g).map_err(|c| Error::Singular { column: cols[c] })?;
        let beta = chol.solve(&xty);
        let rss = (self.yty - beta.dot(&xty)).max(0.0);
        Ok((beta, rss))
    }

    /// Residual sum of squares `|y - X b|^2` for an arbitrary coefficient vector.
    pub fn rss_at(&self, beta: &DVector<f64>) -> f64 {
        let gb = &self.gram * beta;
        (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&gb)).max(0.0)
    }
}

/// Segment log-likelihoods over row windows, served from [`Moments`] with a
/// QR fallback when the window's cross-product matrix is ill conditioned.
pub struct SegmentLik<'a> {
    data: &'a Dataset,
    moments: Moments,
    floor: f64,
}

impl<'a> SegmentLik<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        SegmentLik { data, moments: Moments::new(data), floor: variance_floor(data) }
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn moments(&self) -> &Moments {
        &self.moments
    }

    /// Fit over rows `[a, b)`.
    pub fn fit(&self, a: usize, b: usize) -> SegmentFit {
        let nrm = self.moments.window(a, b);
        let rss = match Chol::factor(&nrm.gram) {
            Ok(ch) => {
                let mut z = nrm.xty.as_slice().to_vec();
                ch.forward(&mut z);
                let explained: f64 = z.iter().map(|v| v * v).sum();
                let rss = nrm.yty - explained;
                // cancellation guard: small residuals go through QR
                if rss > 1e-8 * nrm.yty {
                    rss
                } else {
                    let (x, y) = self.data.rows(a, b);
                    projection_rss(&x, &y).0
                }
            }
            Err(_) => {
                let (x, y) = self.data.rows(a, b);
                projection_rss(&x, &y).0
            }
        };
        segment_fit(rss, b - a, self.floor)
    }

    pub fn loglik(&self, a: usize, b: usize) -> f64 {
        self.fit(a, b).loglik
    }
}
