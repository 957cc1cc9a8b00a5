//! Marginal-likelihood scoring, the (kappa, lambda) grid, exhaustive
//! enumeration and the Lasso baseline.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::active::ActiveSet;
use crate::error::{Error, Result};
use crate::linalg::{submatrix, Chol};
use crate::regress::{Dataset, Segmentation};
use crate::selo::{self, BreakProblem, CandidatePool, DaemConfig, SeloParams};

/// `g = 1/(T^alpha - 1)` with `alpha = 1` for the empty set and
/// `(k + m_eff - 1)/k` otherwise. Returns `(alpha, g)`.
pub fn g_prior(n_obs: usize, k_active: usize, m_effective: usize) -> (f64, f64) {
    let alpha = if k_active == 0 { 1.0 } else { (k_active + m_effective - 1) as f64 / k_active as f64 };
    let g = 1.0 / ((n_obs as f64).powf(alpha) - 1.0);
    (alpha, g)
}

/// Pieces of the log marginal likelihood of one active set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalParts {
    pub log_ml: f64,
    /// Data-dependent part: `(k/2) ln(g/(1+g)) - (n/2) ln[...]`.
    pub core: f64,
    /// `-(n/2) ln pi + ln Gamma(n/2) - (1/2) ln|X1'X1|`.
    pub normalizer: f64,
    pub alpha: f64,
    pub g: f64,
    pub s_base: f64,
    pub s_full: f64,
    pub k_active: usize,
    pub m_effective: usize,
}

impl MarginalParts {
    /// `-((T-K)/2) ln s_full - (alpha k / 2) ln T`, the large-sample form of `core`.
    pub fn bic_form(&self, n_obs: usize, n_cov: usize) -> f64 {
        -0.5 * (n_obs - n_cov) as f64 * self.s_full.ln() - 0.5 * self.alpha * self.k_active as f64 * (n_obs as f64).ln()
    }
}

pub(crate) fn marginal_parts(prob: &BreakProblem, active: &ActiveSet) -> Result<MarginalParts> {
    let (t, k) = (prob.n_obs, prob.n_cov);
    let k_active = active.len();
    if k + k_active >= t {
        return Err(Error::InvalidInput(format!(
            "{} regressors leave no residual degrees of freedom with {t} observations",
            k + k_active
        )));
    }
    let base: Vec<usize> = (0..k).collect();
    let g11 = submatrix(&prob.normal.gram, &base);
    let c11 = Chol::factor(&g11).map_err(|c| Error::Singular { column: c })?;
    let (_, s_base) = prob.normal.subset_ols(&base)?;
    let s_full = if k_active == 0 { s_base } else { prob.normal.subset_ols(&active.columns())?.1 };
    let m_effective = active.n_effective_regimes();
    let (alpha, g) = g_prior(t, k_active, m_effective);
    let n = (t - k) as f64;
    let ln_t = (t as f64).ln();
    // g/(1+g) = T^-alpha
    let shrink = (-alpha * ln_t).exp();
    let core = -0.5 * k_active as f64 * alpha * ln_t - 0.5 * n * (shrink * s_base + (1.0 - shrink) * s_full).ln();
    let normalizer = -0.5 * n * std::f64::consts::PI.ln() + ln_gamma(0.5 * n) - 0.5 * c11.log_det();
    Ok(MarginalParts { log_ml: core + normalizer, core, normalizer, alpha, g, s_base, s_full, k_active, m_effective })
}

/// Log marginal likelihood of the model that lets exactly the entries of
/// `active` change, under the g-prior.
pub fn log_marginal_likelihood(data: &Dataset, seg: &Segmentation, active: &ActiveSet) -> Result<f64> {
    Ok(marginal_parts(&BreakProblem::new(data, seg)?, active)?.log_ml)
}

pub fn marginal_likelihood_parts(data: &Dataset, seg: &Segmentation, active: &ActiveSet) -> Result<MarginalParts> {
    marginal_parts(&BreakProblem::new(data, seg)?, active)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCandidate {
    /// `None` for candidates not produced by the SELO grid.
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub a: Vec<f64>,
    pub active: ActiveSet,
    pub k_active: usize,
    pub m_active: usize,
    pub g: f64,
    pub log_ml: f64,
    pub post_prob: f64,
    /// Number of grid points that produced this active set.
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_lambda: usize,
    /// `lambda_max = lambda_scale * ln T`.
    pub lambda_scale: f64,
    pub kappas: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_lambda: 50, lambda_scale: 2.0, kappas: vec![0.1, 1.0] }
    }
}

impl GridConfig {
    pub fn lambdas(&self, n_obs: usize) -> Vec<f64> {
        let lmax = self.lambda_scale * (n_obs as f64).ln();
        (1..=self.n_lambda).map(|i| i as f64 * lmax / self.n_lambda as f64).collect()
    }
}

/// OLS standard errors of the no-break fit, `sigma^2 = RSS/(T-K)`.
pub fn no_break_std(prob: &BreakProblem) -> Result<Vec<f64>> {
    let k = prob.n_cov;
    let base: Vec<usize> = (0..k).collect();
    let (_, rss) = prob.normal.subset_ols(&base)?;
    let s2 = rss / (prob.n_obs - k) as f64;
    let inv = Chol::factor(&submatrix(&prob.normal.gram, &base)).map_err(|c| Error::Singular { column: c })?.inverse();
    Ok((0..k).map(|i| (s2 * inv[(i, i)]).sqrt().max(1e-150)).collect())
}

/// Sets posterior probabilities proportional to `exp(log_ml)` and sorts by
/// decreasing probability.
pub fn normalize(cands: &mut Vec<ModelCandidate>) {
    let mx = cands.iter().map(|c| c.log_ml).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = cands.iter().map(|c| (c.log_ml - mx).exp()).sum();
    for c in cands.iter_mut() {
        c.post_prob = (c.log_ml - mx).exp() / z;
    }
    cands.sort_by(|a, b| b.post_prob.partial_cmp(&a.post_prob).unwrap().then_with(|| a.active.cmp(&b.active)));
}

struct Scored {
    kappa: Option<f64>,
    lambda: Option<f64>,
    a: Vec<f64>,
    active: ActiveSet,
}

fn collapse(prob: &BreakProblem, items: Vec<Scored>) -> Result<Vec<ModelCandidate>> {
    let mut index: HashMap<ActiveSet, usize> = HashMap::new();
    let mut out: Vec<ModelCandidate> = Vec::new();
    for it in items {
        if let Some(&i) = index.get(&it.active) {
            out[i].multiplicity += 1;
            continue;
        }
        let parts = match marginal_parts(prob, &it.active) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping active set {:?}: {e}", it.active.entries());
                continue;
            }
        };
        index.insert(it.active.clone(), out.len());
        out.push(ModelCandidate {
            kappa: it.kappa,
            lambda: it.lambda,
            a: it.a,
            k_active: parts.k_active,
            m_active: parts.m_effective,
            g: parts.g,
            log_ml: parts.log_ml,
            active: it.active,
            post_prob: 0.0,
            multiplicity: 1,
        });
    }
    if out.is_empty() {
        return Err(Error::Numerical("no candidate model could be scored".into()));
    }
    normalize(&mut out);
    Ok(out)
}

/// Runs the annealed EM over the (kappa, lambda) grid and scores the
/// distinct active sets. One random candidate pool, drawn from
/// `daem_cfg.seed`, initializes every grid point.
pub fn run_grid(data: &Dataset, seg: &Segmentation, cfg: &GridConfig, daem_cfg: &DaemConfig) -> Result<Vec<ModelCandidate>> {
    let prob = BreakProblem::new(data, seg)?;
    run_grid_problem(&prob, cfg, daem_cfg)
}

pub fn run_grid_problem(prob: &BreakProblem, cfg: &GridConfig, daem_cfg: &DaemConfig) -> Result<Vec<ModelCandidate>> {
    let std = no_break_std(prob)?;
    let lambdas = cfg.lambdas(prob.n_obs);
    let (k, m) = (prob.n_cov, prob.n_regimes);
    if m == 1 {
        return collapse(
            prob,
            vec![Scored { kappa: None, lambda: None, a: std.clone(), active: ActiveSet::empty(1, k) }],
        );
    }
    let scales: Vec<Vec<f64>> = cfg.kappas.iter().map(|kp| std.iter().map(|s| kp * s).collect()).collect();
    let n_init = daem_cfg.n_init.unwrap_or_else(|| selo::default_n_init(prob.n_entries()));
    let pool = CandidatePool::draw(prob, n_init, daem_cfg.seed, &scales, selo::zeta(selo::DEFAULT_Y0));
    let jobs: Vec<(usize, f64)> = (0..scales.len()).flat_map(|s| lambdas.iter().map(move |&l| (s, l))).collect();
    let fits: Vec<Option<Scored>> = jobs
        .par_iter()
        .map(|&(s, lambda)| {
            let sp = SeloParams::new(lambda, scales[s].clone()).ok()?;
            let (init, _) = pool.best(s, lambda);
            let run = || -> Result<ActiveSet> {
                let (beta0, _) = selo::ols_on_set(prob, &init)?;
                Ok(selo::daem_from_init(prob, &sp, beta0, daem_cfg)?.active)
            };
            match run() {
                Ok(active) => Some(Scored { kappa: Some(cfg.kappas[s]), lambda: Some(lambda), a: scales[s].clone(), active }),
                Err(e) => {
                    log::warn!("grid point kappa={} lambda={lambda}: {e}", cfg.kappas[s]);
                    None
                }
            }
        })
        .collect();
    collapse(prob, fits.into_iter().flatten().collect())
}

/// Largest number of change entries [`exhaustive_select`] accepts.
pub const EXHAUSTIVE_LIMIT: usize = 10;

/// Scores all `2^{(m-1)K}` active sets.
pub fn exhaustive_select(data: &Dataset, seg: &Segmentation) -> Result<Vec<ModelCandidate>> {
    let prob = BreakProblem::new(data, seg)?;
    exhaustive_problem(&prob)
}

pub fn exhaustive_problem(prob: &BreakProblem) -> Result<Vec<ModelCandidate>> {
    let e = prob.n_entries();
    if e > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "exhaustive search over {e} change entries exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let items = (0u32..(1u32 << e))
        .map(|bits| Scored {
            kappa: None,
            lambda: None,
            a: Vec::new(),
            active: ActiveSet::from_mask(prob.n_regimes, prob.n_cov, (0..e).map(|i| bits >> i & 1 == 1).collect()),
        })
        .collect();
    collapse(prob, items)
}

/// Cyclic coordinate descent for `|y - X b|^2 + lambda sum_{c >= free} |b_c|`
/// on normal equations. Columns below `free` are unpenalized.
pub fn lasso_cd(gram: &nalgebra::DMatrix<f64>, xty: &DVector<f64>, free: usize, lambda: f64, warm: Option<&[f64]>) -> Vec<f64> {
    let p = xty.len();
    let mut b: Vec<f64> = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    // rho = X'y - G b
    let mut rho: Vec<f64> = (0..p).map(|i| xty[i] - (0..p).map(|j| gram[(i, j)] * b[j]).sum::<f64>()).collect();
    let scale = (0..p).map(|i| gram[(i, i)]).fold(0.0, f64::max).max(1e-300);
    for _ in 0..200_000 {
        let mut max_change = 0.0f64;
        for c in 0..p {
            let gcc = gram[(c, c)];
            if gcc <= 0.0 {
                continue;
            }
            let z = rho[c] + gcc * b[c];
            let new = if c < free {
                z / gcc
            } else {
                let h = 0.5 * lambda;
                if z > h {
                    (z - h) / gcc
                } else if z < -h {
                    (z + h) / gcc
                } else {
                    0.0
                }
            };
            let d = new - b[c];
            if d != 0.0 {
                for i in 0..p {
                    rho[i] -= gram[(i, c)] * d;
                }
                b[c] = new;
                max_change = max_change.max(d.abs() * gcc.sqrt());
            }
        }
        if max_change <= 1e-13 * scale.sqrt() {
            break;
        }
    }
    b
}

/// Smallest `lambda` at which every change is zero, `2 max |X_c' e|` with
/// `e` the no-break residual.
pub fn lasso_lambda_max(prob: &BreakProblem) -> Result<f64> {
    let k = prob.n_cov;
    let base: Vec<usize> = (0..k).collect();
    let (b, _) = prob.normal.subset_ols(&base)?;
    let p = prob.normal.xty.len();
    let mut best = 0.0f64;
    for c in k..p {
        let r = prob.normal.xty[c] - (0..k).map(|j| prob.normal.gram[(c, j)] * b[j]).sum::<f64>();
        best = best.max(2.0 * r.abs());
    }
    Ok(best)
}

/// `n` values uniformly spaced on `(0, lambda_max]`.
pub fn lasso_lambda_grid(data: &Dataset, seg: &Segmentation, n: usize) -> Result<Vec<f64>> {
    let prob = BreakProblem::new(data, seg)?;
    let lm = lasso_lambda_max(&prob)?;
    Ok((1..=n).map(|i| i as f64 * lm / n as f64).collect())
}

/// Lasso on the changes in place of the SELO penalty, scored by the same
/// marginal likelihood.
pub fn lasso_baseline(data: &Dataset, seg: &Segmentation, lambdas: &[f64]) -> Result<Vec<ModelCandidate>> {
    let prob = BreakProblem::new(data, seg)?;
    lasso_problem(&prob, lambdas)
}

pub fn lasso_problem(prob: &BreakProblem, lambdas: &[f64]) -> Result<Vec<ModelCandidate>> {
    let k = prob.n_cov;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| lambdas[j].partial_cmp(&lambdas[i]).unwrap());
    let mut warm: Option<Vec<f64>> = None;
    let mut items: Vec<(usize, Scored)> = Vec::new();
    for i in order {
        let b = lasso_cd(&prob.normal.gram, &prob.normal.xty, k, lambdas[i], warm.as_deref());
        let mask = b[k..].iter().map(|v| *v != 0.0).collect();
        items.push((
            i,
            Scored {
                kappa: None,
                lambda: Some(lambdas[i]),
                a: Vec::new(),
                active: ActiveSet::from_mask(prob.n_regimes, k, mask),
            },
        ));
        warm = Some(b);
    }
    items.sort_by_key(|(i, _)| *i);
    collapse(prob, items.into_iter().map(|(_, s)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{build_break_design, ols};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn series(t: usize, k: usize, tau: usize, shift: &[f64], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, k, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let y = (0..t)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                let mut v = e;
                for j in 0..k {
                    let b = 0.5 + if i >= tau { shift[j] } else { 0.0 };
                    v += b * x[(i, j)];
                }
                v
            })
            .collect();
        Dataset::unnamed(y, x).unwrap()
    }

    /// Brute-force integral of likelihood times prior over (b1, d, s2) on a
    /// tiny instance with an intercept and one active change.
    fn quadrature_log_ml(d: &Dataset, tau: usize, g: f64) -> f64 {
        let t = d.n_obs();
        let y: Vec<f64> = d.y().iter().cloned().collect();
        let x2: Vec<f64> = (0..t).map(|i| if i >= tau { 1.0 } else { 0.0 }).collect();
        let mean2 = x2.iter().sum::<f64>() / t as f64;
        let sx: f64 = x2.iter().map(|v| (v - mean2).powi(2)).sum();
        let rss = |b1: f64, dd: f64| -> f64 { (0..t).map(|i| (y[i] - b1 - dd * x2[i]).powi(2)).sum() };
        // prior precision on d is g*sx/s2; mode of the quadratic form
        let (n1, n2) = ((t - tau) as f64, t as f64);
        let sy: f64 = y.iter().sum();
        let sy2: f64 = y.iter().zip(&x2).map(|(a, b)| a * b).sum();
        let m = nalgebra::Matrix2::new(n2, n1, n1, n1 + g * sx);
        let sol = m.try_inverse().unwrap() * nalgebra::Vector2::new(sy, sy2);
        let (b1c, dc) = (sol[0], sol[1]);
        let q0 = rss(b1c, dc) + g * sx * dc * dc;
        let s2_mode = q0 / (t as f64 + 3.0);
        let inv = m.try_inverse().unwrap();
        let lc = s2_mode.ln();
        let outer = crate::quad::integrate(
            |u| {
                let s2 = u.exp();
                let sd1 = (s2 * inv[(0, 0)]).sqrt() * 14.0;
                let sd2 = (s2 * inv[(1, 1)]).sqrt() * 14.0;
                let inner = crate::quad::integrate(
                    |dd| {
                        crate::quad::integrate(
                            |b1| {
                                let ll = -0.5 * t as f64 * (2.0 * std::f64::consts::PI * s2).ln() - rss(b1, dd) / (2.0 * s2);
                                let pv = s2 / (g * sx);
                                let lp = -0.5 * (2.0 * std::f64::consts::PI * pv).ln() - dd * dd / (2.0 * pv);
                                (ll + lp - s2.ln() + 0.5 * (t as f64) * lc).exp()
                            },
                            b1c - sd1,
                            b1c + sd1,
                            0.0,
                            1e-12,
                        )
                    },
                    dc - sd2,
                    dc + sd2,
                    0.0,
                    1e-12,
                );
                // d s2 = s2 du
                inner * s2
            },
            lc - 12.0,
            lc + 12.0,
            0.0,
            1e-12,
        );
        outer.ln() - 0.5 * t as f64 * lc
    }

    #[test]
    fn log_ml_matches_quadrature() {
        let t = 12;
        let x = DMatrix::from_element(t, 1, 1.0);
        let y = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.4, 1.6, 1.1, 1.9, 1.3, 1.5, 2.2];
        let d = Dataset::unnamed(y, x).unwrap();
        let seg = Segmentation::new(t, vec![6]).unwrap();
        let act = ActiveSet::from_entries(2, 1, &[(2, 0)]);
        let parts = marginal_likelihood_parts(&d, &seg, &act).unwrap();
        assert_eq!(parts.alpha, 2.0);
        let oracle = quadrature_log_ml(&d, 6, parts.g);
        assert!((parts.log_ml - oracle).abs() < 1e-6, "{} vs {oracle}", parts.log_ml);
    }

    #[test]
    fn empty_set_uses_alpha_one() {
        let d = series(50, 2, 25, &[0.0, 0.0], 1);
        let seg = Segmentation::new(50, vec![25]).unwrap();
        let p = marginal_likelihood_parts(&d, &seg, &ActiveSet::empty(2, 2)).unwrap();
        assert_eq!(p.alpha, 1.0);
        assert!((p.g - 1.0 / 49.0).abs() < 1e-15);
        assert_eq!(p.s_base, p.s_full);
    }

    #[test]
    fn frisch_waugh_s_full() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for rep in 0..100 {
            let t = rng.random_range(30..=100);
            let k = rng.random_range(1..=4);
            let d = series(t, k, t / 2, &vec![0.3; k], rep);
            let seg = Segmentation::new(t, vec![t / 3, 2 * t / 3]).unwrap();
            let mask: Vec<bool> = (0..2 * k).map(|_| rng.random::<bool>()).collect();
            let act = ActiveSet::from_mask(3, k, mask);
            let p = marginal_likelihood_parts(&d, &seg, &act).unwrap();
            let xt = build_break_design(&d, &seg).unwrap();
            let x1 = xt.columns(0, k).clone_owned();
            let cols = act.columns();
            let x2 = DMatrix::from_fn(t, cols.len() - k, |r, c| xt[(r, cols[k + c])]);
            let resid = |v: &DVector<f64>| -> DVector<f64> {
                let f = ols(&x1, v).unwrap();
                v - &x1 * DVector::from_vec(f.beta)
            };
            let my = resid(d.y());
            let s = if x2.ncols() == 0 {
                my.norm_squared()
            } else {
                let mx2 = DMatrix::from_fn(t, x2.ncols(), |r, c| resid(&x2.column(c).clone_owned())[r]);
                ols(&mx2, &my).unwrap().rss
            };
            assert!((p.s_full - s).abs() <= 1e-8 * s, "rep {rep}");
            assert!(p.s_full <= p.s_base * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bic_gap_shrinks() {
        let mut gaps = Vec::new();
        for &t in &[200usize, 2000, 20000] {
            let d = series(t, 2, t / 2, &[0.0, 0.6], 5);
            let seg = Segmentation::new(t, vec![t / 2]).unwrap();
            let act = ActiveSet::from_entries(2, 2, &[(2, 1)]);
            let p = marginal_likelihood_parts(&d, &seg, &act).unwrap();
            gaps.push((p.core - p.bic_form(t, 2)).abs());
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn scale_coherence() {
        let d = series(80, 2, 40, &[0.0, 1.0], 8);
        let seg = Segmentation::new(80, vec![40]).unwrap();
        let a = exhaustive_select(&d, &seg).unwrap();
        let y2: Vec<f64> = d.y().iter().map(|v| v * 7.5).collect();
        let d2 = Dataset::unnamed(y2, d.x().clone()).unwrap();
        let b = exhaustive_select(&d2, &seg).unwrap();
        assert_eq!(a[0].active, b[0].active);
        for ca in &a {
            let cb = b.iter().find(|c| c.active == ca.active).unwrap();
            assert!((ca.post_prob - cb.post_prob).abs() < 1e-10);
            let shift = -((80 - 2) as f64) * 7.5f64.ln();
            assert!((cb.log_ml - ca.log_ml - shift).abs() < 1e-8);
        }
    }

    #[test]
    fn exhaustive_counts_and_sums() {
        let d = series(40, 1, 20, &[1.0], 2);
        let seg = Segmentation::new(40, vec![20]).unwrap();
        let c = exhaustive_select(&d, &seg).unwrap();
        assert_eq!(c.len(), 2);
        assert!((c.iter().map(|m| m.post_prob).sum::<f64>() - 1.0).abs() < 1e-12);
        let d = series(40, 4, 20, &[0.0; 4], 2);
        let seg = Segmentation::new(40, vec![10, 20, 30]).unwrap();
        assert!(exhaustive_select(&d, &seg).is_err());
    }

    #[test]
    fn grid_winner_in_exhaustive_top() {
        let d = series(200, 2, 100, &[0.0, 2.0], 4);
        let seg = Segmentation::new(200, vec![100]).unwrap();
        let grid = run_grid(&d, &seg, &GridConfig::default(), &DaemConfig::default()).unwrap();
        let ex = exhaustive_select(&d, &seg).unwrap();
        assert!((grid.iter().map(|m| m.post_prob).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(grid[0].active, ex[0].active);
        assert_eq!(grid[0].active.entries(), vec![(2, 1)]);
    }

    #[test]
    fn grid_all_empty_is_single_candidate() {
        let d = series(120, 2, 60, &[0.0, 0.0], 3);
        let seg = Segmentation::new(120, vec![60]).unwrap();
        let grid = run_grid(&d, &seg, &GridConfig::default(), &DaemConfig::default()).unwrap();
        if grid.len() == 1 {
            assert!(grid[0].active.is_empty());
            assert_eq!(grid[0].post_prob, 1.0);
        }
        assert!(grid.iter().any(|c| c.active.is_empty()));
    }

    #[test]
    fn lasso_single_coordinate_closed_form() {
        let d = series(60, 1, 30, &[0.7], 6);
        let seg = Segmentation::new(60, vec![30]).unwrap();
        let prob = BreakProblem::new(&d, &seg).unwrap();
        let y: Vec<f64> = d.y().iter().cloned().collect();
        let ybar = y.iter().sum::<f64>() / 60.0;
        let x2: Vec<f64> = (0..60).map(|i| if i >= 30 { 1.0 } else { 0.0 }).collect();
        let xbar = 0.5;
        let xx: f64 = x2.iter().map(|v| (v - xbar).powi(2)).sum();
        let xy: f64 = x2.iter().zip(&y).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
        for &lam in &[0.0, 1.0, 5.0, 2.0 * xy.abs() + 1.0] {
            let b = lasso_cd(&prob.normal.gram, &prob.normal.xty, 1, lam, None);
            let h = lam / 2.0;
            let expect = if xy > h { (xy - h) / xx } else if xy < -h { (xy + h) / xx } else { 0.0 };
            assert!((b[1] - expect).abs() < 1e-8, "lambda {lam}: {} vs {expect}", b[1]);
        }
    }

    #[test]
    fn lasso_extremes() {
        let d = series(80, 2, 40, &[0.5, 0.5], 7);
        let seg = Segmentation::new(80, vec![40]).unwrap();
        let prob = BreakProblem::new(&d, &seg).unwrap();
        let b0 = lasso_cd(&prob.normal.gram, &prob.normal.xty, 2, 0.0, None);
        assert!(b0[2..].iter().all(|v| *v != 0.0));
        let lm = lasso_lambda_max(&prob).unwrap();
        let bh = lasso_cd(&prob.normal.gram, &prob.normal.xty, 2, lm * 1.0001, None);
        assert!(bh[2..].iter().all(|v| *v == 0.0));
        let grid = lasso_lambda_grid(&d, &seg, 10).unwrap();
        let c = lasso_baseline(&d, &seg, &grid).unwrap();
        assert!(c.iter().all(|m| m.kappa.is_none()));
    }

    #[test]
    fn lasso_path_monotone_on_orthogonal_design() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = 6;
        let gram = DMatrix::from_fn(p, p, |i, j| if i == j { 10.0 } else { 0.0 });
        for _ in 0..20 {
            let xty = DVector::from_fn(p, |_, _| rng.random::<f64>() * 20.0 - 10.0);
            let mut prev = usize::MAX;
            for i in 1..=30 {
                let b = lasso_cd(&gram, &xty, 1, i as f64, None);
                let n = b[1..].iter().filter(|v| **v != 0.0).count();
                assert!(n <= prev);
                prev = n;
            }
        }
    }
}
