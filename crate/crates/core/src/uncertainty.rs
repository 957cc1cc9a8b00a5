//! Posterior of the break dates given a selected model: differential-evolution
//! Metropolis over integer dates, and the multivariate PSRF diagnostic.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as Gaussian};
use serde::{Deserialize, Serialize};

use crate::active::ActiveSet;
use crate::error::{Error, Result};
use crate::linalg::Chol;
use crate::regress::{Dataset, Moments, Segmentation};
use crate::select::marginal_parts;
use crate::selo::BreakProblem;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DreamConfig {
    pub n_iter: usize,
    /// Defaults to twice the number of regimes (at least 3).
    pub n_chains: Option<usize>,
    /// Defaults to `n_iter / 2`.
    pub burn_in: Option<usize>,
    pub delta_max: usize,
    pub jitter_sd: f64,
    /// Defaults to `K + 1`.
    pub min_duration: Option<usize>,
    /// Consecutive all-chain rejections before warning.
    pub stuck_after: usize,
    pub seed: u64,
}

impl Default for DreamConfig {
    fn default() -> Self {
        DreamConfig {
            n_iter: 4000,
            n_chains: None,
            burn_in: None,
            delta_max: 3,
            jitter_sd: 1e-4,
            min_duration: None,
            stuck_after: 500,
            seed: 0,
        }
    }
}

/// Jump scale `2.38 / sqrt(2 delta m)`.
pub fn dream_gamma(delta: usize, m: usize) -> f64 {
    2.38 / ((2 * delta * m) as f64).sqrt()
}

/// Inclusive integer support of each break: from the midpoint with the
/// previous selected date plus `gamma_dur` to the midpoint with the next one
/// minus `gamma_dur`. A window that would be empty gets the largest feasible
/// duration (at least 1) with a warning.
pub fn break_prior_support(seg: &Segmentation, gamma_dur: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = vec![0];
    edges.extend_from_slice(seg.breaks());
    edges.push(seg.n_obs());
    let mut out = Vec::with_capacity(seg.breaks().len());
    for i in 1..edges.len() - 1 {
        let lo_mid = (edges[i - 1] + edges[i]) / 2;
        let hi_mid = (edges[i] + edges[i + 1]) / 2;
        let room = (hi_mid - lo_mid) / 2;
        let mut gd = gamma_dur;
        if gd > room {
            if room < 1 {
                return Err(Error::InvalidSegmentation(format!("break {} has no room for a prior window", edges[i])));
            }
            warn!("break {}: minimum duration reduced from {gamma_dur} to {room}", edges[i]);
            gd = room;
        }
        out.push((lo_mid + gd, hi_mid - gd));
    }
    Ok(out)
}

/// Differential-evolution proposal for chain `j`: its state plus the rounded,
/// scaled difference of two disjoint groups of `delta` other chains, plus
/// Gaussian jitter.
pub fn dream_propose<R: Rng>(
    population: &[Vec<i64>],
    j: usize,
    delta: usize,
    gamma: f64,
    jitter_sd: f64,
    rng: &mut R,
) -> Vec<i64> {
    let r = population.len();
    let d = population[j].len();
    let picks: Vec<usize> = sample(rng, r - 1, 2 * delta).into_iter().map(|i| if i >= j { i + 1 } else { i }).collect();
    let jitter = Gaussian::new(0.0, jitter_sd.max(0.0)).unwrap();
    (0..d)
        .map(|c| {
            let diff: i64 = picks[..delta].iter().map(|&p| population[p][c]).sum::<i64>()
                - picks[delta..].iter().map(|&p| population[p][c]).sum::<i64>();
            population[j][c] + (gamma * diff as f64 + jitter.sample(rng)).round() as i64
        })
        .collect()
}

/// Raw output of the sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DreamRun {
    /// `chains[r][i]` is the state of chain `r` after iteration `i`.
    pub chains: Vec<Vec<Vec<i64>>>,
    pub proposed: usize,
    pub accepted: usize,
    pub stuck: bool,
}

impl DreamRun {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Generic D-DREAM over integer vectors with box support. Chains are updated
/// one after another within an iteration, each proposal reading the current
/// states of the other chains.
pub fn dream_sample<F: FnMut(&[i64]) -> f64>(
    mut log_target: F,
    support: &[(i64, i64)],
    m_regimes: usize,
    n_chains: usize,
    cfg: &DreamConfig,
) -> Result<DreamRun> {
    if n_chains < 3 {
        return Err(Error::InvalidInput("at least 3 chains are needed".into()));
    }
    if support.iter().any(|(a, b)| a > b) {
        return Err(Error::InvalidInput("empty prior support".into()));
    }
    let delta_max = cfg.delta_max.min((n_chains - 1) / 2).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inside = |x: &[i64]| x.iter().zip(support).all(|(v, (a, b))| v >= a && v <= b);
    let mut state: Vec<Vec<i64>> =
        (0..n_chains).map(|_| support.iter().map(|&(a, b)| rng.random_range(a..=b)).collect()).collect();
    let mut lp: Vec<f64> = state.iter().map(|s| log_target(s)).collect();
    let mut chains: Vec<Vec<Vec<i64>>> = vec![Vec::with_capacity(cfg.n_iter); n_chains];
    let (mut proposed, mut accepted, mut idle, mut stuck) = (0, 0, 0usize, false);
    for _ in 0..cfg.n_iter {
        let mut any = false;
        for j in 0..n_chains {
            let delta = rng.random_range(1..=delta_max);
            let prop = dream_propose(&state, j, delta, dream_gamma(delta, m_regimes), cfg.jitter_sd, &mut rng);
            proposed += 1;
            let u: f64 = rng.random();
            if inside(&prop) {
                let lp_new = log_target(&prop);
                if lp_new.is_finite() && (lp_new >= lp[j] || u.ln() < lp_new - lp[j]) {
                    state[j] = prop;
                    lp[j] = lp_new;
                    accepted += 1;
                    any = true;
                }
            }
            chains[j].push(state[j].clone());
        }
        idle = if any { 0 } else { idle + 1 };
        if idle >= cfg.stuck_after && !stuck {
            warn!("every chain rejected {idle} consecutive proposals");
            stuck = true;
        }
    }
    Ok(DreamRun { chains, proposed, accepted, stuck })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Psrf {
    pub value: f64,
    /// Within-chain covariance was singular.
    pub degenerate: bool,
}

/// Multivariate potential scale reduction factor from the largest eigenvalue
/// of `W^-1 B / n`. Each chain is a list of equally long draw vectors.
pub fn psrf(chains: &[Vec<Vec<f64>>]) -> Result<Psrf> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InvalidInput("PSRF needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("PSRF needs equal chain lengths of at least 10".into()));
    }
    let p = chains[0][0].len();
    let means: Vec<Vec<f64>> =
        chains.iter().map(|c| (0..p).map(|i| c.iter().map(|d| d[i]).sum::<f64>() / n as f64).collect()).collect();
    let grand: Vec<f64> = (0..p).map(|i| means.iter().map(|mu| mu[i]).sum::<f64>() / m as f64).collect();
    let mut w = DMatrix::<f64>::zeros(p, p);
    for (c, mu) in chains.iter().zip(&means) {
        for d in c {
            for a in 0..p {
                for b in 0..p {
                    w[(a, b)] += (d[a] - mu[a]) * (d[b] - mu[b]);
                }
            }
        }
    }
    w /= (m * (n - 1)) as f64;
    let mut bn = DMatrix::<f64>::zeros(p, p);
    for mu in &means {
        for a in 0..p {
            for b in 0..p {
                bn[(a, b)] += (mu[a] - grand[a]) * (mu[b] - grand[b]);
            }
        }
    }
    bn /= (m - 1) as f64;
    let scale = w.diagonal().iter().chain(bn.diagonal().iter()).cloned().fold(0.0, f64::max);
    let Ok(ch) = Chol::factor(&w) else {
        let value = if bn.norm() <= 1e-12 * scale.max(1e-300) { 1.0 } else { f64::INFINITY };
        return Ok(Psrf { value, degenerate: true });
    };
    // L^-1 (B/n) L^-T with W = R'R, L = R'
    let mut s = bn.clone();
    for c in 0..p {
        let mut col: Vec<f64> = s.column(c).iter().cloned().collect();
        ch.forward(&mut col);
        s.column_mut(c).copy_from_slice(&col);
    }
    let mut s = s.transpose();
    for c in 0..p {
        let mut col: Vec<f64> = s.column(c).iter().cloned().collect();
        ch.forward(&mut col);
        s.column_mut(c).copy_from_slice(&col);
    }
    let s = (&s + s.transpose()) * 0.5;
    let lambda = SymmetricEigen::new(s).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (nf, mf) = (n as f64, m as f64);
    Ok(Psrf { value: (nf - 1.0) / nf + (mf + 1.0) / mf * lambda, degenerate: false })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakInterval {
    pub selected: usize,
    pub support: (usize, usize),
    pub mean: f64,
    pub mode: usize,
    pub ci90: (usize, usize),
    pub ci95: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakPosterior {
    /// Kept draws pooled over chains, one row per draw.
    pub draws: Vec<Vec<usize>>,
    pub n_chains: usize,
    pub acceptance_rate: f64,
    pub psrf: Psrf,
    pub intervals: Vec<BreakInterval>,
    pub stuck: bool,
}

fn quantile(sorted: &[usize], q: f64) -> usize {
    let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[i - 1]
}

/// Samples break dates from their posterior under the model that lets the
/// entries of `active` change, with breaks confined to windows around `seg`.
pub fn sample_break_posterior(data: &Dataset, active: &ActiveSet, seg: &Segmentation, cfg: &DreamConfig) -> Result<BreakPosterior> {
    let nb = seg.breaks().len();
    if nb == 0 {
        return Err(Error::InvalidInput("no break to sample".into()));
    }
    if active.n_regimes() != seg.n_regimes() || active.n_cov() != data.n_cov() {
        return Err(Error::InvalidInput("active set does not match the segmentation".into()));
    }
    let m = seg.n_regimes();
    let n_chains = cfg.n_chains.unwrap_or(2 * m).max(3);
    let burn = cfg.burn_in.unwrap_or(cfg.n_iter / 2);
    if burn >= cfg.n_iter {
        return Err(Error::InvalidInput("burn-in must be shorter than the run".into()));
    }
    let supp = break_prior_support(seg, cfg.min_duration.unwrap_or(data.n_cov() + 1))?;
    let mom = Moments::new(data);
    let t = data.n_obs();
    let target = |tau: &[i64]| -> f64 {
        let Ok(s) = Segmentation::new(t, tau.iter().map(|&v| v as usize).collect()) else {
            return f64::NEG_INFINITY;
        };
        BreakProblem::from_moments(&mom, &s)
            .and_then(|p| marginal_parts(&p, active))
            .map(|mp| mp.log_ml)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let isupp: Vec<(i64, i64)> = supp.iter().map(|&(a, b)| (a as i64, b as i64)).collect();
    let run = dream_sample(target, &isupp, m, n_chains, cfg)?;

    let kept: Vec<Vec<Vec<f64>>> = run
        .chains
        .iter()
        .map(|c| c[burn..].iter().map(|d| d.iter().map(|&v| v as f64).collect()).collect())
        .collect();
    let psrf_v = if cfg.n_iter - burn >= 10 { psrf(&kept)? } else { Psrf { value: f64::NAN, degenerate: true } };
    let draws: Vec<Vec<usize>> =
        run.chains.iter().flat_map(|c| c[burn..].iter().map(|d| d.iter().map(|&v| v as usize).collect())).collect();
    let intervals = (0..nb)
        .map(|i| {
            let mut v: Vec<usize> = draws.iter().map(|d| d[i]).collect();
            v.sort_unstable();
            let mean = v.iter().sum::<usize>() as f64 / v.len() as f64;
            let mut mode = (0, v[0]);
            let mut k = 0;
            while k < v.len() {
                let e = v[k..].iter().take_while(|&&x| x == v[k]).count();
                if e > mode.0 {
                    mode = (e, v[k]);
                }
                k += e;
            }
            BreakInterval {
                selected: seg.breaks()[i],
                support: supp[i],
                mean,
                mode: mode.1,
                ci90: (quantile(&v, 0.05), quantile(&v, 0.95)),
                ci95: (quantile(&v, 0.025), quantile(&v, 0.975)),
            }
        })
        .collect();
    Ok(BreakPosterior {
        draws,
        n_chains,
        acceptance_rate: run.acceptance_rate(),
        psrf: psrf_v,
        intervals,
        stuck: run.stuck,
    })
}
