//! SELO penalty, its spike-and-slab approximation, and the annealed EM fit.

mod daem;
mod init;

pub use daem::{daem_e_step, daem_fit, daem_fit_problem, DaemConfig, DaemFit, ZeroRule};
pub use init::{default_n_init, init_search, swap, CandidatePool, SwapResult};
pub(crate) use daem::daem_from_init;
pub(crate) use init::ols_on_set;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::{Dataset, Moments, Normal, Segmentation};

/// Default `y` in `pen(a) = lambda * y`.
pub const DEFAULT_Y0: f64 = 0.99;
/// Ratio of slab to spike variance.
pub const SLAB_RATIO: f64 = 10000.0;

/// `zeta = (2^y - 2) / (1 - 2^y)`, chosen so that `pen(a) = lambda * y`.
pub fn zeta(y0: f64) -> f64 {
    let p = 2f64.powf(y0);
    (p - 2.0) / (1.0 - p)
}

/// Penalty divided by `lambda`: `log2((2x + zeta) / (x + zeta))` with `x = |w| / a`.
#[inline]
pub fn selo_shape(x: f64, zeta: f64) -> f64 {
    ((2.0 * x + zeta) / (x + zeta)).ln() / std::f64::consts::LN_2
}

pub fn selo_penalty(w: f64, a: f64, lambda: f64, zeta: f64) -> f64 {
    lambda * selo_shape(w.abs() / a, zeta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeloParams {
    pub lambda: f64,
    /// Bias interval per covariate.
    pub a: Vec<f64>,
    pub y0: f64,
}

impl SeloParams {
    pub fn new(lambda: f64, a: Vec<f64>) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("bias interval must be positive: {a:?}")));
        }
        Ok(SeloParams { lambda, a, y0: DEFAULT_Y0 })
    }

    pub fn zeta(&self) -> f64 {
        zeta(self.y0)
    }

    /// Penalty of a change `w` in covariate `k`.
    pub fn penalty(&self, w: f64, k: usize) -> f64 {
        selo_penalty(w, self.a[k], self.lambda, self.zeta())
    }
}

/// One covariate's two-component mixture: spike `N(0, r0)` with weight
/// `omega` and slab `N(0, r1)` with weight `1 - omega`. The log weights are
/// stored so that very large `lambda` stays finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub omega: f64,
    pub r0: f64,
    pub r1: f64,
    pub ln_omega: f64,
    pub ln_one_minus_omega: f64,
}

impl MixtureComponent {
    /// Log of the weighted spike and slab densities at `w`.
    #[inline]
    pub fn log_weighted(&self, w: f64) -> [f64; 2] {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        [
            self.ln_omega - 0.5 * (ln2pi + self.r0.ln()) - w * w / (2.0 * self.r0),
            self.ln_one_minus_omega - 0.5 * (ln2pi + self.r1.ln()) - w * w / (2.0 * self.r1),
        ]
    }

    pub fn log_density(&self, w: f64) -> f64 {
        crate::linalg::log_sum_exp(&self.log_weighted(w))
    }
}

/// `ln(exp(x) - 1)` without overflow.
fn ln_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureApprox {
    pub components: Vec<MixtureComponent>,
    /// Penalty height actually used (differs from the request only at ln 2).
    pub lambda: f64,
}

/// Calibrates the mixture so that the weighted densities cross at
/// `|w| = a/2` and the induced penalty saturates at `lambda`.
pub fn calibrate_mixture(a: f64, lambda: f64) -> MixtureComponent {
    let lambda = adjust_lambda(lambda);
    let c = SLAB_RATIO;
    let le = ln_expm1(lambda);
    // ln(sqrt(c) / (e^lambda - 1))
    let q = 0.5 * c.ln() - le;
    let ln_omega = -q.exp().ln_1p();
    let ln_one_minus_omega = q + ln_omega;
    let r0 = a * a / 8.0 * (1.0 - 1.0 / c) / le.abs();
    MixtureComponent { omega: ln_omega.exp(), r0, r1: c * r0, ln_omega, ln_one_minus_omega }
}

fn adjust_lambda(lambda: f64) -> f64 {
    if (lambda.exp_m1() - 1.0).abs() < 1e-14 {
        log::warn!("lambda = ln 2 makes the spike variance infinite; using lambda + 1e-8");
        lambda + 1e-8
    } else {
        lambda
    }
}

pub fn calibrate(sp: &SeloParams) -> MixtureApprox {
    MixtureApprox {
        components: sp.a.iter().map(|&a| calibrate_mixture(a, sp.lambda)).collect(),
        lambda: adjust_lambda(sp.lambda),
    }
}

/// Normal equations of one (data, segmentation) pair, shared by every fit
/// on that pair.
#[derive(Debug, Clone)]
pub struct BreakProblem {
    pub normal: Normal,
    pub n_obs: usize,
    pub n_cov: usize,
    pub n_regimes: usize,
}

impl BreakProblem {
    pub fn new(data: &Dataset, seg: &Segmentation) -> Result<Self> {
        Self::from_moments(&Moments::new(data), seg)
    }

    pub fn from_moments(mom: &Moments, seg: &Segmentation) -> Result<Self> {
        if seg.n_obs() != mom.n_obs() {
            return Err(Error::InvalidSegmentation("segmentation length differs from data".into()));
        }
        let normal = mom.break_normal(seg);
        let n_cov = normal.gram.nrows() / seg.n_regimes();
        Ok(BreakProblem { normal, n_obs: seg.n_obs(), n_cov, n_regimes: seg.n_regimes() })
    }

    pub fn n_entries(&self) -> usize {
        (self.n_regimes - 1) * self.n_cov
    }

    /// Sum of penalties over the change entries of a full-length `beta`.
    pub fn penalty_sum(&self, beta: &[f64], sp: &SeloParams) -> f64 {
        let z = sp.zeta();
        let k = self.n_cov;
        beta[k..]
            .iter()
            .enumerate()
            .map(|(e, w)| selo_penalty(*w, sp.a[e % k], sp.lambda, z))
            .sum()
    }

    pub fn objective(&self, beta: &[f64], sp: &SeloParams) -> f64 {
        let b = DVector::from_column_slice(beta);
        self.normal.rss_at(&b) + self.n_obs as f64 * self.penalty_sum(beta, sp)
    }
}

/// `|y - X_tau beta|^2 + T * sum pen(delta beta)`.
pub fn penalized_objective(beta: &[f64], data: &Dataset, seg: &Segmentation, sp: &SeloParams) -> Result<f64> {
    let xt = crate::regress::build_break_design(data, seg)?;
    if beta.len() != xt.ncols() {
        return Err(Error::InvalidInput(format!("beta has {} entries, design {}", beta.len(), xt.ncols())));
    }
    let r = data.y() - xt * DVector::from_column_slice(beta);
    let k = data.n_cov();
    let z = sp.zeta();
    let pen: f64 = beta[k..].iter().enumerate().map(|(e, w)| selo_penalty(*w, sp.a[e % k], sp.lambda, z)).sum();
    Ok(r.norm_squared() + data.n_obs() as f64 * pen)
}
