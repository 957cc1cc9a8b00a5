//! Deterministic-annealing EM under the spike-and-slab approximation.

use serde::{Deserialize, Serialize};

use super::init::{init_problem, ols_on_set};
use super::{calibrate, BreakProblem, MixtureApprox, SeloParams};
use crate::active::ActiveSet;
use crate::error::Result;
use crate::linalg::{log_sum_exp, Chol};
use crate::regress::{Dataset, Segmentation};

/// How the final EM coefficients are mapped to an active set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroRule {
    /// Active when the untempered slab responsibility exceeds one half.
    Slab,
    /// Active when `|dbeta| >= max(1e-6, 1e-3 a_k)`.
    Absolute,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaemConfig {
    pub n_anneal: usize,
    pub tol: f64,
    /// `None` means `min(2^{(m-1)K-1}, 3000)`.
    pub n_init: Option<usize>,
    pub max_inner_iter: usize,
    pub seed: u64,
    pub zero_rule: ZeroRule,
}

impl Default for DaemConfig {
    fn default() -> Self {
        DaemConfig { n_anneal: 10, tol: 1e-5, n_init: None, max_inner_iter: 500, seed: 0, zero_rule: ZeroRule::Slab }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaemFit {
    /// Base coefficients followed by the changes at each break.
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub active: ActiveSet,
    /// Penalized least-squares objective at `beta`.
    pub objective: f64,
    /// Tempered log-posterior after each iteration, one vector per stage;
    /// the first value of a stage is its starting point.
    pub trace: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Tempered spike/slab responsibilities for every change entry of `beta`.
pub fn daem_e_step(beta: &[f64], n_cov: usize, mix: &MixtureApprox, phi: f64) -> Vec<[f64; 2]> {
    beta[n_cov..]
        .iter()
        .enumerate()
        .map(|(e, &w)| {
            let lw = mix.components[e % n_cov].log_weighted(w);
            let (s, b) = (phi * lw[0], phi * lw[1]);
            let m = s.max(b);
            let (es, eb) = ((s - m).exp(), (b - m).exp());
            let ps = es / (es + eb);
            [ps, 1.0 - ps]
        })
        .collect()
}

/// Tempered objective whose value the EM iterations cannot decrease:
/// Gaussian log-likelihood plus `(1/phi) ln sum_i (w_i f_i)^phi` per entry.
fn tempered_log_post(prob: &BreakProblem, beta: &[f64], sigma2: f64, mix: &MixtureApprox, phi: f64) -> f64 {
    let b = nalgebra::DVector::from_column_slice(beta);
    let rss = prob.normal.rss_at(&b);
    let t = prob.n_obs as f64;
    let k = prob.n_cov;
    let prior: f64 = beta[k..]
        .iter()
        .enumerate()
        .map(|(e, &w)| {
            let lw = mix.components[e % k].log_weighted(w);
            log_sum_exp(&[phi * lw[0], phi * lw[1]]) / phi
        })
        .sum();
    -0.5 * t * sigma2.ln() - rss / (2.0 * sigma2) + prior
}

fn classify(prob: &BreakProblem, beta: &[f64], sp: &SeloParams, mix: &MixtureApprox, rule: ZeroRule) -> ActiveSet {
    let k = prob.n_cov;
    let mask = beta[k..]
        .iter()
        .enumerate()
        .map(|(e, &w)| match rule {
            ZeroRule::Slab => {
                let lw = mix.components[e % k].log_weighted(w);
                lw[1] > lw[0]
            }
            ZeroRule::Absolute => w.abs() >= (1e-3 * sp.a[e % k]).max(1e-6),
        })
        .collect();
    ActiveSet::from_mask(prob.n_regimes, k, mask)
}

pub fn daem_fit(data: &Dataset, seg: &Segmentation, sp: &SeloParams, cfg: &DaemConfig) -> Result<DaemFit> {
    let prob = BreakProblem::new(data, seg)?;
    daem_fit_problem(&prob, sp, cfg)
}

pub fn daem_fit_problem(prob: &BreakProblem, sp: &SeloParams, cfg: &DaemConfig) -> Result<DaemFit> {
    if prob.n_regimes == 1 {
        let set = ActiveSet::empty(1, prob.n_cov);
        let (beta, rss) = ols_on_set(prob, &set)?;
        return Ok(DaemFit {
            beta,
            sigma2: rss / prob.n_obs as f64,
            active: set,
            objective: rss,
            trace: Vec::new(),
            converged: true,
        });
    }
    let init = init_problem(prob, sp, cfg)?;
    daem_from_init(prob, sp, init.beta, cfg)
}

pub(crate) fn daem_from_init(prob: &BreakProblem, sp: &SeloParams, beta0: Vec<f64>, cfg: &DaemConfig) -> Result<DaemFit> {
    let mix = calibrate(sp);
    let nrm = &prob.normal;
    let p = nrm.gram.nrows();
    let k = prob.n_cov;
    let t = prob.n_obs as f64;
    let mut beta = beta0;
    let floor = 1e-300f64;
    let mut sigma2 = (nrm.rss_at(&nalgebra::DVector::from_column_slice(&beta)) / t).max(floor);
    let mut trace = Vec::with_capacity(cfg.n_anneal);
    let mut converged = true;
    let mut a = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];

    for r in 1..=cfg.n_anneal {
        let phi = (r as f64 / cfg.n_anneal as f64).powi(2);
        let mut stage = vec![tempered_log_post(prob, &beta, sigma2, &mix, phi)];
        let mut dist = f64::INFINITY;
        let mut n = 0;
        while dist > cfg.tol && n < cfg.max_inner_iter {
            let resp = daem_e_step(&beta, k, &mix, phi);
            a.copy_from_slice(nrm.gram.as_slice());
            let inv_s2 = 1.0 / sigma2;
            a.iter_mut().for_each(|v| *v *= inv_s2);
            for (e, pr) in resp.iter().enumerate() {
                let c = &mix.components[e % k];
                let i = k + e;
                a[i * p + i] += pr[0] / c.r0 + pr[1] / c.r1;
            }
            for i in 0..p {
                rhs[i] = nrm.xty[i] * inv_s2;
            }
            let chol = match Chol::factor_vec(std::mem::take(&mut a), p) {
                Ok(c) => c,
                Err(col) => return Err(crate::error::Error::Singular { column: col }),
            };
            let mut next = rhs.clone();
            chol.solve_in_place(&mut next);
            a = vec![0.0; p * p];
            let nb = nalgebra::DVector::from_column_slice(&next);
            let ns2 = (nrm.rss_at(&nb) / t).max(floor);
            let mut d2 = (ns2 - sigma2).powi(2);
            for i in 0..p {
                d2 += (next[i] - beta[i]).powi(2);
            }
            dist = d2.sqrt();
            beta = next;
            sigma2 = ns2;
            stage.push(tempered_log_post(prob, &beta, sigma2, &mix, phi));
            n += 1;
        }
        if dist > cfg.tol {
            converged = false;
            log::warn!("annealing stage {r} stopped after {n} iterations (dist {dist:.3e})");
        }
        trace.push(stage);
    }

    let active = classify(prob, &beta, sp, &mix, cfg.zero_rule);
    let (beta, rss) = ols_on_set(prob, &active)?;
    let objective = rss + t * prob.penalty_sum(&beta, sp);
    Ok(DaemFit { beta, sigma2: rss / t, active, objective, trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn series(t: usize, tau: usize, shift: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, 2, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let y = (0..t)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                0.5 + 0.8 * x[(i, 1)] + if i >= tau { shift * x[(i, 1)] } else { 0.0 } + e
            })
            .collect();
        Dataset::unnamed(y, x).unwrap()
    }

    fn a_scale(d: &Dataset) -> Vec<f64> {
        let f = crate::regress::ols(d.x(), d.y()).unwrap();
        let s2 = f.rss / (d.n_obs() - d.n_cov()) as f64;
        let inv = (d.x().transpose() * d.x()).try_inverse().unwrap();
        (0..d.n_cov()).map(|k| (s2 * inv[(k, k)]).sqrt()).collect()
    }

    #[test]
    fn e_step_properties() {
        let mix = calibrate(&SeloParams::new(2.0, vec![0.1]).unwrap());
        let r = daem_e_step(&[1.0, 0.0, 0.3], 1, &mix, 0.3);
        for p in &r {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        }
        assert!(r[0][0] > r[0][1]);
        assert!(r[1][1] > r[1][0]);
        // phi = 1 is the plain posterior responsibility
        let r1 = daem_e_step(&[1.0, 0.04], 1, &mix, 1.0);
        let c = mix.components[0];
        let lw = c.log_weighted(0.04);
        let ps = lw[0].exp() / (lw[0].exp() + lw[1].exp());
        assert!((r1[0][0] - ps).abs() < 1e-12);
    }

    #[test]
    fn single_regime_is_ols() {
        let d = series(60, 30, 0.0, 1);
        let fit = daem_fit(&d, &Segmentation::none(60), &SeloParams::new(1.0, vec![0.1, 0.1]).unwrap(), &DaemConfig::default())
            .unwrap();
        let o = crate::regress::ols(d.x(), d.y()).unwrap();
        assert!(fit.active.is_empty());
        for i in 0..2 {
            assert!((fit.beta[i] - o.beta[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn ascent_within_stages() {
        for seed in 0..10 {
            let d = series(150, 70, if seed % 2 == 0 { 1.0 } else { 0.0 }, seed);
            let seg = Segmentation::new(150, vec![70]).unwrap();
            let sp = SeloParams::new(1.5, a_scale(&d)).unwrap();
            let fit = daem_fit(&d, &seg, &sp, &DaemConfig { seed, ..Default::default() }).unwrap();
            for st in &fit.trace {
                for w in st.windows(2) {
                    assert!(w[1] >= w[0] - 1e-10, "seed {seed}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn finds_single_break() {
        let d = series(400, 200, 3.0, 9);
        let seg = Segmentation::new(400, vec![200]).unwrap();
        let sp = SeloParams::new(1.0, a_scale(&d)).unwrap();
        let fit = daem_fit(&d, &seg, &sp, &DaemConfig::default()).unwrap();
        assert_eq!(fit.active.entries(), vec![(2, 1)]);
        assert!(fit.converged);
    }

    #[test]
    fn tiny_lambda_gives_full_ols() {
        let d = series(100, 50, 0.5, 2);
        let seg = Segmentation::new(100, vec![50]).unwrap();
        let sp = SeloParams::new(1e-6, a_scale(&d)).unwrap();
        let fit = daem_fit(&d, &seg, &sp, &DaemConfig::default()).unwrap();
        let xt = crate::regress::build_break_design(&d, &seg).unwrap();
        let o = crate::regress::ols(&xt, d.y()).unwrap();
        for i in 0..4 {
            assert!((fit.beta[i] - o.beta[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn huge_lambda_empties_active_set() {
        let d = series(100, 50, 2.0, 4);
        let seg = Segmentation::new(100, vec![50]).unwrap();
        let sp = SeloParams::new(1e4, a_scale(&d)).unwrap();
        let fit = daem_fit(&d, &seg, &sp, &DaemConfig::default()).unwrap();
        assert!(fit.active.is_empty());
    }

    #[test]
    fn deterministic() {
        let d = series(120, 60, 1.0, 5);
        let seg = Segmentation::new(120, vec![40, 80]).unwrap();
        let sp = SeloParams::new(2.0, a_scale(&d)).unwrap();
        let cfg = DaemConfig { seed: 17, ..Default::default() };
        let a = daem_fit(&d, &seg, &sp, &cfg).unwrap();
        let b = daem_fit(&d, &seg, &sp, &cfg).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.trace, b.trace);
    }
}
