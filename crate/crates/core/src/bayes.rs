//! Conjugate posteriors under the g-prior, Student-t predictive densities,
//! posterior sampling and model averaging.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::active::ActiveSet;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, submatrix, subvector, Chol};
use crate::regress::{Dataset, Segmentation};
use crate::select::{g_prior, ModelCandidate};
use crate::selo::BreakProblem;

/// Posterior of `(beta1, dbeta_active, sigma2)` for one model.
///
/// `sigma2 ~ IG(a_sigma, b_sigma)`; conditional on `sigma2`, `psi = (beta1, dbeta_active)`
/// is normal with mean `mu_psi` and covariance `sigma2 * sigma_psi_scale`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub g: f64,
    pub mu_dbeta: Vec<f64>,
    pub sigma_dbeta_scale: DMatrix<f64>,
    pub mu_psi: Vec<f64>,
    pub sigma_psi_scale: DMatrix<f64>,
    pub active: ActiveSet,
    pub n_obs: usize,
}

impl PosteriorParams {
    pub fn n_cov(&self) -> usize {
        self.active.n_cov()
    }

    pub fn dim(&self) -> usize {
        self.mu_psi.len()
    }

    pub fn mean_sigma2(&self) -> Option<f64> {
        (self.a_sigma > 1.0).then(|| self.b_sigma / (self.a_sigma - 1.0))
    }

    /// Posterior mean of the full change vector, zeros off the active set.
    pub fn dbeta_full(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.active.capacity()];
        for (i, e) in self.active.mask().iter().enumerate().filter(|(_, m)| **m).map(|(e, _)| e).enumerate() {
            out[e] = self.mu_dbeta[i];
        }
        out
    }

    /// Regime-specific coefficients implied by the posterior mean, one row per regime.
    pub fn regime_coefficients(&self) -> Vec<Vec<f64>> {
        let k = self.n_cov();
        let d = self.dbeta_full();
        let mut cur = self.mu_psi[..k].to_vec();
        let mut out = vec![cur.clone()];
        for j in 0..self.active.n_regimes().saturating_sub(1) {
            for c in 0..k {
                cur[c] += d[j * k + c];
            }
            out.push(cur.clone());
        }
        out
    }

    /// Marginal posterior standard deviations matching [`Self::regime_coefficients`].
    /// `None` when the posterior variance is infinite (`a_sigma <= 1`).
    pub fn regime_coefficient_sd(&self) -> Option<Vec<Vec<f64>>> {
        let s2 = self.mean_sigma2()?;
        let k = self.n_cov();
        let idx: Vec<usize> = self.active.mask().iter().enumerate().filter(|(_, m)| **m).map(|(e, _)| e).collect();
        let mut out = Vec::with_capacity(self.active.n_regimes());
        for j in 0..self.active.n_regimes() {
            let row = (0..k)
                .map(|c| {
                    // psi positions summed for coefficient c in regime j
                    let mut pos = vec![c];
                    pos.extend(idx.iter().enumerate().filter(|(_, &e)| e % k == c && e / k < j).map(|(i, _)| k + i));
                    let q: f64 = pos.iter().flat_map(|&p| pos.iter().map(move |&r| (p, r))).map(|(p, r)| self.sigma_psi_scale[(p, r)]).sum();
                    (s2 * q.max(0.0)).sqrt()
                })
                .collect();
            out.push(row);
        }
        Some(out)
    }
}

/// Posterior for the model letting only `active` change, under the g-prior.
pub fn posterior_params(data: &Dataset, seg: &Segmentation, active: &ActiveSet) -> Result<PosteriorParams> {
    posterior_problem(&BreakProblem::new(data, seg)?, active)
}

pub fn posterior_problem(prob: &BreakProblem, active: &ActiveSet) -> Result<PosteriorParams> {
    let (t, k) = (prob.n_obs, prob.n_cov);
    let ka = active.len();
    if k + ka >= t {
        return Err(Error::InvalidInput(format!("{} regressors with {t} observations", k + ka)));
    }
    let base: Vec<usize> = (0..k).collect();
    let cols = active.columns();
    let act = &cols[k..];
    let nrm = &prob.normal;

    let g11 = submatrix(&nrm.gram, &base);
    let c11 = Chol::factor(&g11).map_err(|c| Error::Singular { column: c })?;
    let x1y = subvector(&nrm.xty, &base);
    let beta_hat = c11.solve(&x1y);
    let s_base = (nrm.yty - beta_hat.dot(&x1y)).max(0.0);
    let g11_inv = c11.inverse();
    let (_, g) = g_prior(t, ka, active.n_effective_regimes());

    // X2'M X2, X2'M y and B = (X1'X1)^-1 X1'X2
    let g12 = DMatrix::from_fn(k, ka, |i, j| nrm.gram[(i, act[j])]);
    let mut b = DMatrix::zeros(k, ka);
    for j in 0..ka {
        let mut col: Vec<f64> = g12.column(j).iter().cloned().collect();
        c11.solve_in_place(&mut col);
        b.column_mut(j).copy_from_slice(&col);
    }
    let g22 = submatrix(&nrm.gram, act);
    let a_mat = &g22 - g12.transpose() * &b;
    let c_vec = subvector(&nrm.xty, act) - b.transpose() * &x1y;

    let (mu_dbeta, v, s_full) = if ka == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0), s_base)
    } else {
        let ca = Chol::factor(&a_mat).map_err(|c| Error::Singular { column: act[c] })?;
        let d_hat = ca.solve(&c_vec);
        let s_full = (s_base - d_hat.dot(&c_vec)).max(0.0);
        let shrink = 1.0 / (1.0 + g);
        (d_hat * shrink, ca.inverse() * shrink, s_full)
    };
    let shrink = 1.0 / (1.0 + g);
    let b_sigma = 0.5 * ((1.0 - shrink) * s_base + shrink * s_full);
    if !(b_sigma > 0.0) {
        return Err(Error::Numerical("posterior scale of sigma2 is not positive (perfect fit)".into()));
    }

    let mu_b1 = &beta_hat - &b * &mu_dbeta;
    let bv = &b * &v;
    let p = k + ka;
    let mut sp = DMatrix::zeros(p, p);
    sp.view_mut((0, 0), (k, k)).copy_from(&(&g11_inv + &bv * b.transpose()));
    sp.view_mut((0, k), (k, ka)).copy_from(&(-&bv));
    sp.view_mut((k, 0), (ka, k)).copy_from(&(-bv.transpose()));
    sp.view_mut((k, k), (ka, ka)).copy_from(&v);
    let sp = (&sp + sp.transpose()) * 0.5;

    let mut mu_psi: Vec<f64> = mu_b1.iter().cloned().collect();
    mu_psi.extend(mu_dbeta.iter());
    Ok(PosteriorParams {
        a_sigma: 0.5 * (t - k) as f64,
        b_sigma,
        g,
        mu_dbeta: mu_dbeta.iter().cloned().collect(),
        sigma_dbeta_scale: v,
        mu_psi,
        sigma_psi_scale: sp,
        active: active.clone(),
        n_obs: t,
    })
}

/// Forecast-period design row: the base covariates followed by one copy of
/// the covariate for each active entry (every break precedes the forecast).
pub fn forecast_row(x: &[f64], active: &ActiveSet) -> Vec<f64> {
    let mut row = x.to_vec();
    row.extend(active.entries().iter().map(|&(_, k)| x[k]));
    row
}

/// Location-scale Student-t. `scale_sq` is the squared scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDensity {
    pub location: f64,
    pub scale_sq: f64,
    pub dof: f64,
}

impl PredictiveDensity {
    pub fn log_density(&self, y: f64) -> f64 {
        let nu = self.dof;
        let z2 = (y - self.location).powi(2) / self.scale_sq;
        ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI * self.scale_sq).ln()
            - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    pub fn variance(&self) -> Option<f64> {
        (self.dof > 2.0).then(|| self.scale_sq * self.dof / (self.dof - 2.0))
    }

    pub fn cdf(&self, y: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        StudentsT::new(self.location, self.scale_sq.sqrt(), self.dof).map(|d| d.cdf(y)).unwrap_or(f64::NAN)
    }
}

/// One-step predictive density at the forecast-period row `x_next`
/// (layout of [`forecast_row`]).
pub fn predictive(pp: &PosteriorParams, x_next: &[f64]) -> Result<PredictiveDensity> {
    if x_next.len() != pp.dim() {
        return Err(Error::InvalidInput(format!("forecast row has {} entries, expected {}", x_next.len(), pp.dim())));
    }
    let x = DVector::from_column_slice(x_next);
    let loc = x.dot(&DVector::from_column_slice(&pp.mu_psi));
    let q = x.dot(&(&pp.sigma_psi_scale * &x));
    Ok(PredictiveDensity { location: loc, scale_sq: pp.b_sigma / pp.a_sigma * (q + 1.0), dof: 2.0 * pp.a_sigma })
}

/// Joint predictive of several future periods with known exogenous
/// covariates: multivariate t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiStudent {
    pub location: Vec<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl MultiStudent {
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        let h = self.location.len();
        let ch = Chol::factor(&self.scale).map_err(|c| Error::Singular { column: c })?;
        let mut r: Vec<f64> = y.iter().zip(&self.location).map(|(a, b)| a - b).collect();
        ch.forward(&mut r);
        let q: f64 = r.iter().map(|v| v * v).sum();
        let (nu, hf) = (self.dof, h as f64);
        Ok(ln_gamma(0.5 * (nu + hf)) - ln_gamma(0.5 * nu) - 0.5 * hf * (nu * std::f64::consts::PI).ln()
            - 0.5 * ch.log_det()
            - 0.5 * (nu + hf) * (q / nu).ln_1p())
    }

    /// Marginal of period `i`.
    pub fn marginal(&self, i: usize) -> PredictiveDensity {
        PredictiveDensity { location: self.location[i], scale_sq: self.scale[(i, i)], dof: self.dof }
    }
}

/// Multi-period predictive; rows of `x_future` use the [`forecast_row`] layout.
/// Valid when no covariate depends on past `y`.
pub fn predictive_path(pp: &PosteriorParams, x_future: &DMatrix<f64>) -> Result<MultiStudent> {
    if x_future.ncols() != pp.dim() {
        return Err(Error::InvalidInput("forecast design has the wrong number of columns".into()));
    }
    let h = x_future.nrows();
    let loc = x_future * DVector::from_column_slice(&pp.mu_psi);
    let mut s = x_future * &pp.sigma_psi_scale * x_future.transpose() + DMatrix::identity(h, h);
    s *= pp.b_sigma / pp.a_sigma;
    Ok(MultiStudent { location: loc.iter().cloned().collect(), scale: s, dof: 2.0 * pp.a_sigma })
}

/// Iterated point forecasts for models with lagged `y` among the covariates.
/// `lag_cols[i]` is the base column holding `y_{t-1-i}`; the other entries of
/// `x_base` are held fixed. Each step plugs in the previous point forecast,
/// so densities beyond the first step ignore the propagated uncertainty.
pub fn iterated_forecast(pp: &PosteriorParams, x_base: &[f64], lag_cols: &[usize], h: usize) -> Result<Vec<PredictiveDensity>> {
    let mut x = x_base.to_vec();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let d = predictive(pp, &forecast_row(&x, &pp.active))?;
        for i in (1..lag_cols.len()).rev() {
            x[lag_cols[i]] = x[lag_cols[i - 1]];
        }
        if let Some(&c) = lag_cols.first() {
            x[c] = d.location;
        }
        out.push(d);
    }
    Ok(out)
}

/// Finite mixture of Student-t predictives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BmaPredictive {
    pub weights: Vec<f64>,
    pub components: Vec<PredictiveDensity>,
    pub point: f64,
}

impl BmaPredictive {
    pub fn new(weights: Vec<f64>, components: Vec<PredictiveDensity>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidInput("model averaging needs at least one weighted component".into()));
        }
        let point = weights.iter().zip(&components).map(|(w, c)| w * c.location).sum();
        Ok(BmaPredictive { weights, components, point })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| w.ln() + c.log_density(y))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }
}

/// Model-averaged one-step predictive over `candidates` (posterior
/// probabilities as weights). `x_next` holds the base covariates only.
pub fn bma_predictive(data: &Dataset, seg: &Segmentation, candidates: &[ModelCandidate], x_next: &[f64]) -> Result<BmaPredictive> {
    bma_problem(&BreakProblem::new(data, seg)?, candidates, x_next)
}

pub fn bma_problem(prob: &BreakProblem, candidates: &[ModelCandidate], x_next: &[f64]) -> Result<BmaPredictive> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate models".into()));
    }
    let total: f64 = candidates.iter().map(|c| c.post_prob).sum();
    if !((total - 1.0).abs() < 1e-6) {
        return Err(Error::InvalidInput(format!("posterior probabilities sum to {total}")));
    }
    let comps = candidates
        .par_iter()
        .map(|c| predictive(&posterior_problem(prob, &c.active)?, &forecast_row(x_next, &c.active)))
        .collect::<Result<Vec<_>>>()?;
    BmaPredictive::new(candidates.iter().map(|c| c.post_prob).collect(), comps)
}

/// Independent posterior draws. `dbeta` rows have the full change length
/// with exact zeros off the active set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub beta1: DMatrix<f64>,
    pub dbeta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
}

pub fn sample_posterior(pp: &PosteriorParams, n: usize, seed: u64) -> Result<PosteriorDraws> {
    let k = pp.n_cov();
    let ka = pp.mu_dbeta.len();
    let cap = pp.active.capacity();
    // Conditional factors: dbeta | s2 has covariance s2 * V, beta1 | s2, dbeta
    // has covariance s2 * (X1'X1)^-1 = s2 * (Sigma_psi11 - B V B').
    let cv = if ka > 0 {
        Some(Chol::factor(&pp.sigma_dbeta_scale).map_err(|c| Error::Singular { column: c })?)
    } else {
        None
    };
    let s11 = pp.sigma_psi_scale.view((0, 0), (k, k)).into_owned();
    let (b, s_b1) = if ka > 0 {
        // -B V is the off-diagonal block, so B = -(off) V^-1
        let off = pp.sigma_psi_scale.view((0, k), (k, ka)).into_owned();
        let vinv = cv.as_ref().unwrap().inverse();
        let b = -(&off * &vinv);
        let cond = &s11 + &off * &b.transpose();
        (b, cond)
    } else {
        (DMatrix::zeros(k, 0), s11)
    };
    let c1 = Chol::factor(&((&s_b1 + s_b1.transpose()) * 0.5)).map_err(|c| Error::Singular { column: c })?;
    let gamma = Gamma::new(pp.a_sigma, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active_idx: Vec<usize> = (0..cap).filter(|&e| pp.active.contains_index(e)).collect();
    let mu_b1 = &pp.mu_psi[..k];

    let mut beta1 = DMatrix::zeros(n, k);
    let mut dbeta = DMatrix::zeros(n, cap);
    let mut sigma2 = Vec::with_capacity(n);
    let lower = |ch: &Chol, z: &mut [f64]| {
        // L z with L = R'
        let r = ch.upper();
        let m = z.len();
        for i in (0..m).rev() {
            let mut s = 0.0;
            for j in 0..=i {
                s += r[(j, i)] * z[j];
            }
            z[i] = s;
        }
    };
    for d in 0..n {
        let s2 = pp.b_sigma / gamma.sample(&mut rng);
        let sd = s2.sqrt();
        let mut zd: Vec<f64> = (0..ka).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if let Some(cv) = &cv {
            lower(cv, &mut zd);
        }
        let draw_d: Vec<f64> = (0..ka).map(|i| pp.mu_dbeta[i] + sd * zd[i]).collect();
        let mut z1: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        lower(&c1, &mut z1);
        for c in 0..k {
            let shift: f64 = (0..ka).map(|i| b[(c, i)] * (draw_d[i] - pp.mu_dbeta[i])).sum();
            beta1[(d, c)] = mu_b1[c] - shift + sd * z1[c];
        }
        for (i, &e) in active_idx.iter().enumerate() {
            dbeta[(d, e)] = draw_d[i];
        }
        sigma2.push(s2);
    }
    Ok(PosteriorDraws { beta1, dbeta, sigma2 })
}
