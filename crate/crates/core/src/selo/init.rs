//! Random-restart initialization with single-toggle local search.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{selo_shape, BreakProblem, DaemConfig, SeloParams};
use crate::active::ActiveSet;
use crate::error::Result;
use crate::linalg::{submatrix, subvector, Chol, CHOL_TOL};
use crate::regress::{Dataset, Segmentation};

#[derive(Debug, Clone)]
pub struct SwapResult {
    pub active: ActiveSet,
    pub objective: f64,
    /// Full-length least-squares coefficients on `active`.
    pub beta: Vec<f64>,
}

/// Residual sums and penalty shapes of a set and all its single toggles.
/// Slot 0 is the set itself, slot `e + 1` toggles entry `e`.
#[derive(Debug, Clone)]
struct NeighborScores {
    rss: Vec<f64>,
    /// `shape[s][n]`: sum of `selo_shape(|dbeta| / a)` under scale `s`.
    shape: Vec<Vec<f64>>,
}

impl NeighborScores {
    fn best(&self, s: usize, penalty_weight: f64) -> (usize, f64) {
        let sh = &self.shape[s];
        let mut bi = 0;
        let mut bf = self.rss[0] + penalty_weight * sh[0];
        for n in 1..self.rss.len() {
            let f = self.rss[n] + penalty_weight * sh[n];
            if f < bf {
                bf = f;
                bi = n;
            }
        }
        (bi, bf)
    }
}

fn shape_sum(beta: impl Iterator<Item = (usize, f64)>, a: &[f64], k: usize, zeta: f64) -> f64 {
    beta.map(|(e, w)| selo_shape(w.abs() / a[e % k], zeta)).sum()
}

fn neighbors(prob: &BreakProblem, set: &ActiveSet, scales: &[Vec<f64>], zeta: f64) -> NeighborScores {
    let k = prob.n_cov;
    let ent = prob.n_entries();
    let ns = scales.len();
    let mut out = NeighborScores { rss: vec![f64::INFINITY; ent + 1], shape: vec![vec![f64::INFINITY; ent + 1]; ns] };
    let nrm = &prob.normal;
    let cols = set.columns();
    let p = cols.len();
    let g = submatrix(&nrm.gram, &cols);
    let xy = subvector(&nrm.xty, &cols);
    let chol = match Chol::factor(&g) {
        Ok(c) => c,
        Err(_) => return neighbors_direct(prob, set, scales, zeta),
    };
    let ginv = chol.inverse();
    let beta = &ginv * &xy;
    let rss0 = (nrm.yty - beta.dot(&xy)).max(0.0);
    // entry index of position q >= k in `cols`
    let entry_of = |q: usize| cols[q] - k;

    out.rss[0] = rss0;
    for (s, a) in scales.iter().enumerate() {
        out.shape[s][0] = shape_sum((k..p).map(|q| (entry_of(q), beta[q])), a, k, zeta);
    }

    for q in k..p {
        let e = entry_of(q);
        let d = ginv[(q, q)];
        let bq = beta[q];
        out.rss[e + 1] = rss0 + bq * bq / d;
        let f = bq / d;
        for (s, a) in scales.iter().enumerate() {
            out.shape[s][e + 1] = shape_sum(
                (k..p).filter(|&r| r != q).map(|r| (entry_of(r), beta[r] - ginv[(r, q)] * f)),
                a,
                k,
                zeta,
            );
        }
    }

    let inactive: Vec<usize> = (0..ent).filter(|&e| !set.contains_index(e)).collect();
    if !inactive.is_empty() {
        let icols: Vec<usize> = inactive.iter().map(|&e| set.design_column(e)).collect();
        let v = DMatrix::from_fn(p, icols.len(), |i, j| nrm.gram[(cols[i], icols[j])]);
        let u = &ginv * &v;
        for (i, &e) in inactive.iter().enumerate() {
            let c = icols[i];
            let gcc = nrm.gram[(c, c)];
            let vc = v.column(i);
            let uc = u.column(i);
            let s = gcc - vc.dot(&uc);
            if !(s > CHOL_TOL * gcc) {
                continue;
            }
            let r = nrm.xty[c] - vc.dot(&beta);
            let bnew = r / s;
            out.rss[e + 1] = (rss0 - r * r / s).max(0.0);
            for (si, a) in scales.iter().enumerate() {
                out.shape[si][e + 1] = shape_sum((k..p).map(|q| (entry_of(q), beta[q] - uc[q] * bnew)), a, k, zeta)
                    + selo_shape(bnew.abs() / a[e % k], zeta);
            }
        }
    }
    out
}

fn neighbors_direct(prob: &BreakProblem, set: &ActiveSet, scales: &[Vec<f64>], zeta: f64) -> NeighborScores {
    let k = prob.n_cov;
    let ent = prob.n_entries();
    let mut out = NeighborScores {
        rss: vec![f64::INFINITY; ent + 1],
        shape: vec![vec![f64::INFINITY; ent + 1]; scales.len()],
    };
    for n in 0..=ent {
        let mut s = set.clone();
        if n > 0 {
            s.toggle_index(n - 1);
        }
        let cols = s.columns();
        if let Ok((b, rss)) = prob.normal.subset_ols(&cols) {
            out.rss[n] = rss;
            for (si, a) in scales.iter().enumerate() {
                out.shape[si][n] = shape_sum((k..cols.len()).map(|q| (cols[q] - k, b[q])), a, k, zeta);
            }
        }
    }
    out
}

/// Full-length coefficient vector from a least-squares fit on `set`.
pub(crate) fn expand_beta(prob: &BreakProblem, set: &ActiveSet, b: &DVector<f64>) -> Vec<f64> {
    let mut beta = vec![0.0; prob.n_regimes * prob.n_cov];
    for (i, c) in set.columns().into_iter().enumerate() {
        beta[c] = b[i];
    }
    beta
}

pub(crate) fn ols_on_set(prob: &BreakProblem, set: &ActiveSet) -> Result<(Vec<f64>, f64)> {
    let (b, rss) = prob.normal.subset_ols(&set.columns())?;
    Ok((expand_beta(prob, set, &b), rss))
}

/// One greedy pass over the single-toggle neighbors of `active`; returns
/// the best toggle if it strictly improves the objective.
pub fn swap(active: &ActiveSet, data: &Dataset, seg: &Segmentation, sp: &SeloParams) -> Result<SwapResult> {
    let prob = BreakProblem::new(data, seg)?;
    swap_problem(&prob, active, sp)
}

pub(crate) fn swap_problem(prob: &BreakProblem, active: &ActiveSet, sp: &SeloParams) -> Result<SwapResult> {
    let sc = neighbors(prob, active, std::slice::from_ref(&sp.a), sp.zeta());
    let (n, f) = sc.best(0, prob.n_obs as f64 * sp.lambda);
    let mut set = active.clone();
    if n > 0 {
        set.toggle_index(n - 1);
    }
    let (beta, _) = ols_on_set(prob, &set)?;
    Ok(SwapResult { active: set, objective: f, beta })
}

/// `min(2^{E-1}, 3000)` for `E` change entries.
pub fn default_n_init(n_entries: usize) -> usize {
    if n_entries == 0 {
        1
    } else if n_entries - 1 >= 12 {
        3000
    } else {
        (1usize << (n_entries - 1)).min(3000)
    }
}

/// Randomly drawn active sets with their swap neighborhoods scored under
/// several bias-interval vectors at once. The penalty is linear in
/// `lambda`, so one pool serves a whole `lambda` grid.
pub struct CandidatePool {
    sets: Vec<ActiveSet>,
    scores: Vec<NeighborScores>,
    n_obs: usize,
}

impl CandidatePool {
    pub fn draw(prob: &BreakProblem, n_init: usize, seed: u64, scales: &[Vec<f64>], zeta: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ent = prob.n_entries();
        let mut sets = Vec::with_capacity(n_init);
        for _ in 0..n_init.max(1) {
            let p: f64 = rng.random();
            let mask: Vec<bool> = (0..ent).map(|_| rng.random::<f64>() < p).collect();
            sets.push(ActiveSet::from_mask(prob.n_regimes, prob.n_cov, mask));
        }
        use rayon::prelude::*;
        let scores = sets.par_iter().map(|s| neighbors(prob, s, scales, zeta)).collect();
        CandidatePool { sets, scores, n_obs: prob.n_obs }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Best swapped candidate under scale `s` and penalty height `lambda`.
    /// Ties go to the lexicographically smallest set.
    pub fn best(&self, s: usize, lambda: f64) -> (ActiveSet, f64) {
        let w = self.n_obs as f64 * lambda;
        let mut best: Option<(ActiveSet, f64)> = None;
        for (set, sc) in self.sets.iter().zip(&self.scores) {
            let (n, f) = sc.best(s, w);
            let better = match &best {
                None => true,
                Some((bs, bf)) => {
                    f < *bf || (f == *bf && {
                        let mut cand = set.clone();
                        if n > 0 {
                            cand.toggle_index(n - 1);
                        }
                        cand < *bs
                    })
                }
            };
            if better {
                let mut cand = set.clone();
                if n > 0 {
                    cand.toggle_index(n - 1);
                }
                best = Some((cand, f));
            }
        }
        best.expect("pool is never empty")
    }
}

/// Starting coefficients for the annealed EM: the least-squares fit of the
/// best swapped random candidate.
pub fn init_search(data: &Dataset, seg: &Segmentation, sp: &SeloParams, cfg: &DaemConfig) -> Result<Vec<f64>> {
    let prob = BreakProblem::new(data, seg)?;
    Ok(init_problem(&prob, sp, cfg)?.beta)
}

pub(crate) fn init_problem(prob: &BreakProblem, sp: &SeloParams, cfg: &DaemConfig) -> Result<SwapResult> {
    let n_init = cfg.n_init.unwrap_or_else(|| default_n_init(prob.n_entries()));
    let pool = CandidatePool::draw(prob, n_init, cfg.seed, std::slice::from_ref(&sp.a), sp.zeta());
    let (set, objective) = pool.best(0, sp.lambda);
    let (beta, _) = ols_on_set(prob, &set)?;
    Ok(SwapResult { active: set, objective, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::Dataset;
    use rand_distr::{Distribution, StandardNormal};

    fn broken(t: usize, tau: usize, shift: f64, seed: u64) -> (Dataset, Segmentation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, 2, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let y = (0..t)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.0 + 0.5 * x[(i, 1)] + if i >= tau { shift * x[(i, 1)] } else { 0.0 } + 0.5 * e
            })
            .collect();
        (Dataset::unnamed(y, x).unwrap(), Segmentation::new(t, vec![tau]).unwrap())
    }

    fn brute(prob: &BreakProblem, set: &ActiveSet, sp: &SeloParams) -> Vec<f64> {
        (0..=prob.n_entries())
            .map(|n| {
                let mut s = set.clone();
                if n > 0 {
                    s.toggle_index(n - 1);
                }
                match ols_on_set(prob, &s) {
                    Ok((b, _)) => prob.objective(&b, sp),
                    Err(_) => f64::INFINITY,
                }
            })
            .collect()
    }

    #[test]
    fn neighbor_updates_match_direct_fits() {
        let (d, _) = broken(80, 30, 1.0, 3);
        let seg = Segmentation::new(80, vec![30, 55]).unwrap();
        let prob = BreakProblem::new(&d, &seg).unwrap();
        let sp = SeloParams::new(0.4, vec![0.2, 0.3]).unwrap();
        let set = ActiveSet::from_entries(3, 2, &[(2, 1), (3, 0)]);
        let sc = neighbors(&prob, &set, std::slice::from_ref(&sp.a), sp.zeta());
        let direct = brute(&prob, &set, &sp);
        for n in 0..direct.len() {
            let f = sc.rss[n] + 80.0 * sp.lambda * sc.shape[0][n];
            assert!((f - direct[n]).abs() < 1e-8 * direct[n].abs(), "{n}: {f} vs {}", direct[n]);
        }
    }

    #[test]
    fn swap_adds_dominant_break() {
        let (d, seg) = broken(200, 100, 2.0, 5);
        let sp = SeloParams::new(1.0, vec![0.1, 0.1]).unwrap();
        let empty = ActiveSet::empty(2, 2);
        let prob = BreakProblem::new(&d, &seg).unwrap();
        let (b0, _) = ols_on_set(&prob, &empty).unwrap();
        let f0 = prob.objective(&b0, &sp);
        let r = swap(&empty, &d, &seg, &sp).unwrap();
        assert!(r.active.contains(2, 1));
        assert!(r.objective < f0);
    }

    #[test]
    fn swap_keeps_incumbent_when_no_improvement() {
        let (d, seg) = broken(200, 100, 2.0, 6);
        let sp = SeloParams::new(0.1, vec![0.1, 0.1]).unwrap();
        let set = ActiveSet::from_entries(2, 2, &[(2, 1)]);
        let r = swap(&set, &d, &seg, &sp).unwrap();
        assert_eq!(r.active, set);
    }

    #[test]
    fn n_init_bound() {
        assert_eq!(default_n_init(3), 4);
        assert_eq!(default_n_init(1), 1);
        assert_eq!(default_n_init(40), 3000);
    }

    #[test]
    fn init_is_argmin_over_pool() {
        let (d, seg) = broken(120, 60, 1.0, 7);
        let prob = BreakProblem::new(&d, &seg).unwrap();
        let sp = SeloParams::new(0.5, vec![0.1, 0.1]).unwrap();
        let cfg = DaemConfig { n_init: Some(4), ..DaemConfig::default() };
        let r = init_problem(&prob, &sp, &cfg).unwrap();
        let pool = CandidatePool::draw(&prob, 4, cfg.seed, std::slice::from_ref(&sp.a), sp.zeta());
        for s in &pool.sets {
            let sw = swap_problem(&prob, s, &sp).unwrap();
            assert!(r.objective <= sw.objective + 1e-9);
        }
        assert!((prob.objective(&r.beta, &sp) - r.objective).abs() < 1e-7 * r.objective);
    }
}
