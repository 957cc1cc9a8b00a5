//! Break-date detection: likelihood-ratio scan over sliding windows, local
//! refinement, MDL selection across window widths, and a global DP-MDL
//! segmentation.
//!
//! Dates are 1-based positions of the last observation of a regime.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::{Dataset, Segmentation, SegmentLik};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanConfig {
    pub n_windows: usize,
    /// Overrides the default centre width when set.
    pub h_center: Option<usize>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { n_windows: 30, h_center: None }
    }
}

/// Default centre width of the window grid.
pub fn default_h(n_obs: usize) -> usize {
    let l = (n_obs as f64).ln();
    if n_obs < 800 {
        (l * l).max(25.0).round() as usize
    } else {
        (2.0 * l * l).max(50.0).round() as usize
    }
}

impl ScanConfig {
    /// Distinct integer widths spread uniformly over `[h/2, 2h]`, clipped to
    /// `[K+1, (T-1)/2]`.
    pub fn widths(&self, n_obs: usize, n_cov: usize) -> Vec<usize> {
        let hc = self.h_center.unwrap_or_else(|| default_h(n_obs)) as f64;
        let (lo, hi) = (0.5 * hc, 2.0 * hc);
        let (min_h, max_h) = (n_cov + 1, (n_obs.saturating_sub(1)) / 2);
        let m = self.n_windows.max(1);
        let mut out: Vec<usize> = (0..m)
            .map(|i| if m == 1 { hc } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 })
            .map(|v| (v.round() as usize).clamp(min_h, max_h.max(min_h)))
            .filter(|&h| h <= max_h)
            .collect();
        out.dedup();
        out
    }
}

/// Diagnostics of one window width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub h: usize,
    /// `stat[t-1]` is the statistic at date `t`.
    pub stat: Vec<f64>,
    pub candidates: Vec<usize>,
    pub refined: Vec<usize>,
    pub mdl: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub segmentation: Segmentation,
    pub windows: Vec<ScanResult>,
    /// MDL of the no-break model.
    pub mdl_none: f64,
    /// Index into `windows` of the winning width; `None` when no break wins.
    pub chosen: Option<usize>,
    pub mdl: f64,
}

fn lik_range(lik: &SegmentLik, a: usize, b: usize) -> f64 {
    // 1-based inclusive [a, b]
    lik.loglik(a - 1, b)
}

/// Likelihood-ratio scan statistic for width `h`; zero outside `[h, T-h]`.
pub fn lr_scan(data: &Dataset, h: usize) -> Result<Vec<f64>> {
    lr_scan_with(&SegmentLik::new(data), h)
}

pub fn lr_scan_with(lik: &SegmentLik, h: usize) -> Result<Vec<f64>> {
    let t_obs = lik.data().n_obs();
    if h == 0 || 2 * h > t_obs.saturating_sub(1) {
        return Err(Error::InvalidInput(format!("window width {h} does not fit {t_obs} observations")));
    }
    let hf = h as f64;
    let mut s = vec![0.0; t_obs];
    for t in h..=(t_obs - h) {
        let v = (lik_range(lik, t - h + 1, t) + lik_range(lik, t + 1, t + h) - lik_range(lik, t - h + 1, t + h)) / hf;
        s[t - 1] = v.max(0.0);
    }
    Ok(s)
}

/// Dates `j` in `[2h+1, T-h]` whose statistic is the maximum over `[j-h, j+h]`.
/// Among equal maxima inside one window, only the earliest admissible date is kept.
pub fn local_max_candidates(stat: &[f64], h: usize) -> Vec<usize> {
    let t_obs = stat.len();
    let mut out = Vec::new();
    if t_obs < h + 1 {
        return out;
    }
    let first = 2 * h + 1;
    for j in first..=(t_obs - h) {
        let v = stat[j - 1];
        let lo = j.saturating_sub(h).max(1);
        let hi = (j + h).min(t_obs);
        let is_max = (lo..=hi).all(|t| stat[t - 1] <= v);
        let earlier_tie = (lo.max(first)..j).any(|t| stat[t - 1] == v);
        if is_max && !earlier_tie {
            out.push(j);
        }
    }
    out
}

/// Moves each candidate to the best single split of the surrounding
/// `round(1.5h)` window, searching within `h` of the candidate.
pub fn refine_candidates(data: &Dataset, candidates: &[usize], h: usize) -> Vec<usize> {
    refine_with(&SegmentLik::new(data), candidates, h)
}

pub fn refine_with(lik: &SegmentLik, candidates: &[usize], h: usize) -> Vec<usize> {
    let t_obs = lik.data().n_obs();
    let min_len = lik.data().n_cov() + 1;
    let r = (1.5 * h as f64).round() as usize;
    candidates
        .iter()
        .map(|&tau| {
            let lo = tau.saturating_sub(r).max(1);
            let hi = (tau + r).min(t_obs);
            let t_min = tau.saturating_sub(h).max(lo + min_len - 1);
            let t_max = (tau + h).min(hi.saturating_sub(min_len));
            let mut best = (f64::NEG_INFINITY, tau);
            for t in t_min..=t_max {
                let v = lik_range(lik, lo, t) + lik_range(lik, t + 1, hi);
                if v > best.0 {
                    best = (v, t);
                }
            }
            best.1
        })
        .collect()
}

fn ln_plus(x: f64) -> f64 {
    if x >= 1.0 {
        x.ln()
    } else {
        0.0
    }
}

/// Minimum description length of a segmentation.
pub fn mdl(data: &Dataset, seg: &Segmentation) -> Result<f64> {
    mdl_with(&SegmentLik::new(data), seg)
}

pub fn mdl_with(lik: &SegmentLik, seg: &Segmentation) -> Result<f64> {
    let k = lik.data().n_cov();
    let t_obs = lik.data().n_obs();
    if seg.n_obs() != t_obs {
        return Err(Error::InvalidSegmentation("segmentation length differs from data".into()));
    }
    if seg.min_regime_len() < k + 1 {
        return Err(Error::InvalidSegmentation(format!("a regime is shorter than {} observations", k + 1)));
    }
    let m = seg.n_regimes();
    let mut v = ln_plus((m - 1) as f64) + m as f64 * (t_obs as f64).ln();
    for j in 1..=m {
        let (a, b) = seg.regime_rows(j);
        v += 0.5 * (k + 1) as f64 * ((b - a) as f64).ln() - lik.loglik(a, b);
    }
    Ok(v)
}

/// Sorts, deduplicates and drops breaks (left to right) that would leave a
/// regime shorter than `min_len`.
pub fn admissible_breaks(breaks: &[usize], n_obs: usize, min_len: usize) -> Vec<usize> {
    let mut b = breaks.to_vec();
    b.sort_unstable();
    b.dedup();
    let mut out: Vec<usize> = Vec::new();
    let mut prev = 0;
    for &t in &b {
        if t >= prev + min_len && t + min_len <= n_obs {
            out.push(t);
            prev = t;
        }
    }
    out
}

/// Scan, refine and select across all widths by MDL. The no-break model
/// competes as well. Refined sets keep regimes of at least
/// `dp_min_duration(K)` rows: with K near the regime length a segment fits
/// almost perfectly and its likelihood swamps the penalty.
pub fn detect_breaks(data: &Dataset, cfg: &ScanConfig) -> Result<Detection> {
    let (t_obs, k) = (data.n_obs(), data.n_cov());
    if t_obs < 4 * (k + 1) {
        return Err(Error::InvalidInput(format!("{t_obs} observations are too few for {k} covariates")));
    }
    let lik = SegmentLik::new(data);
    let none = Segmentation::none(t_obs);
    let mdl_none = mdl_with(&lik, &none)?;
    let widths = cfg.widths(t_obs, k);
    let windows = widths
        .par_iter()
        .map(|&h| -> Result<ScanResult> {
            let stat = lr_scan_with(&lik, h)?;
            let candidates = local_max_candidates(&stat, h);
            let refined = admissible_breaks(&refine_with(&lik, &candidates, h), t_obs, dp_min_duration(k));
            let mdl = mdl_with(&lik, &Segmentation::new(t_obs, refined.clone())?)?;
            Ok(ScanResult { h, stat, candidates, refined, mdl })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = (mdl_none, None);
    for (i, w) in windows.iter().enumerate() {
        if w.mdl < best.0 {
            best = (w.mdl, Some(i));
        }
    }
    let segmentation = match best.1 {
        Some(i) => Segmentation::new(t_obs, windows[i].refined.clone())?,
        None => none,
    };
    Ok(Detection { segmentation, windows, mdl_none, chosen: best.1, mdl: best.0 })
}

/// DP minimum regime length: `ceil(1.5 (K+1))`.
pub fn dp_min_duration(n_cov: usize) -> usize {
    (3 * (n_cov + 1)).div_ceil(2)
}

/// Globally MDL-optimal segmentation with at most `max_breaks` breaks and
/// regimes of at least `ceil(1.5 (K+1))` observations.
pub fn dp_mdl_segmentation(data: &Dataset, max_breaks: usize) -> Result<Segmentation> {
    Ok(dp_mdl_detail(data, max_breaks, dp_min_duration(data.n_cov()))?.0)
}

/// As [`dp_mdl_segmentation`] with an explicit minimum duration; also returns the MDL.
pub fn dp_mdl_detail(data: &Dataset, max_breaks: usize, min_len: usize) -> Result<(Segmentation, f64)> {
    let (n, k) = (data.n_obs(), data.n_cov());
    let min_len = min_len.max(k + 1);
    if n < min_len {
        return Err(Error::InvalidInput(format!("{n} observations cannot hold a regime of {min_len}")));
    }
    let lik = SegmentLik::new(data);
    let half = 0.5 * (k + 1) as f64;
    // cost[a][b - a - min_len] for rows [a, b)
    let cost: Vec<Vec<f64>> = (0..=(n - min_len))
        .into_par_iter()
        .map(|a| ((a + min_len)..=n).map(|b| half * ((b - a) as f64).ln() - lik.loglik(a, b)).collect())
        .collect();
    let c = |a: usize, b: usize| cost[a][b - a - min_len];
    let max_m = (max_breaks + 1).min(n / min_len);
    let ln_t = (n as f64).ln();

    // f[b] = best cost of splitting rows [0, b) into the current number of regimes
    let mut f: Vec<f64> = (0..=n).map(|b| if b >= min_len { c(0, b) } else { f64::INFINITY }).collect();
    let mut back: Vec<Vec<usize>> = vec![vec![0; n + 1]];
    let mut best = (f[n] + ln_t, 1usize);
    for m in 2..=max_m {
        let mut g = vec![f64::INFINITY; n + 1];
        let mut arg = vec![0usize; n + 1];
        for b in (m * min_len)..=n {
            for a in ((m - 1) * min_len)..=(b - min_len) {
                let v = f[a] + c(a, b);
                if v < g[b] {
                    g[b] = v;
                    arg[b] = a;
                }
            }
        }
        back.push(arg);
        f = g;
        let total = f[n] + ln_plus((m - 1) as f64) + m as f64 * ln_t;
        if total < best.0 {
            best = (total, m);
        }
    }
    let mut breaks = Vec::with_capacity(best.1 - 1);
    let mut b = n;
    for m in (2..=best.1).rev() {
        b = back[m - 1][b];
        breaks.push(b);
    }
    breaks.reverse();
    Ok((Segmentation::new(n, breaks)?, best.0))
}
