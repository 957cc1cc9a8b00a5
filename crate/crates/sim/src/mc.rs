//! Monte Carlo harness: detection followed by model selection on many
//! simulated series, summarised per parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use selseg::detect::{detect_breaks, dp_mdl_segmentation, ScanConfig};
use selseg::select::{lasso_baseline, lasso_lambda_grid, run_grid, GridConfig, ModelCandidate};
use selseg::selo::DaemConfig;
use selseg::{Dataset, Result, Segmentation};

use crate::dgp::{simulate, DgpSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Detector {
    Scan(ScanConfig),
    Dp { max_breaks: usize },
    /// Uses the true break dates.
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    Selo,
    Lasso { n_lambda: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detector: Detector,
    pub selector: Selector,
    pub grid: GridConfig,
    pub daem: DaemConfig,
    /// Posterior probability above which a model counts for the Exact metric.
    pub exact_threshold: f64,
    /// Distance for the Break metric.
    pub break_tolerance: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: Detector::Scan(ScanConfig::default()),
            selector: Selector::Selo,
            grid: GridConfig::default(),
            daem: DaemConfig::default(),
            exact_threshold: 0.10,
            break_tolerance: 50,
        }
    }
}

/// Segmentation and scored candidates (sorted by posterior probability).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub segmentation: Segmentation,
    pub candidates: Vec<ModelCandidate>,
}

pub fn run_pipeline(data: &Dataset, true_breaks: &[usize], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let seg = match &cfg.detector {
        Detector::Scan(sc) => detect_breaks(data, sc)?.segmentation,
        Detector::Dp { max_breaks } => dp_mdl_segmentation(data, *max_breaks)?,
        Detector::Known => Segmentation::new(data.n_obs(), true_breaks.to_vec())?,
    };
    let candidates = match cfg.selector {
        Selector::Selo => run_grid(data, &seg, &cfg.grid, &cfg.daem)?,
        Selector::Lasso { n_lambda } => {
            if seg.n_regimes() == 1 {
                run_grid(data, &seg, &cfg.grid, &cfg.daem)?
            } else {
                lasso_baseline(data, &seg, &lasso_lambda_grid(data, &seg, n_lambda)?)?
            }
        }
    };
    Ok(PipelineOutput { segmentation: seg, candidates })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub breaks: Vec<usize>,
    pub top_counts: Vec<usize>,
    pub top_prob: f64,
    /// `None` when the design has no break.
    pub break_hit: Option<bool>,
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: String,
    pub n_reps: usize,
    pub n_failed: usize,
    pub names: Vec<String>,
    pub true_counts: Vec<usize>,
    /// `freq[k][r-1]`: percentage of replications whose top model gives
    /// parameter `k` exactly `r` regimes.
    pub freq: Vec<Vec<f64>>,
    pub break_rate: Option<f64>,
    pub exact_rate: f64,
    /// Percentage of replications with the right regime count, per parameter.
    pub correct: Vec<f64>,
    pub avg_correct: f64,
    pub replications: Vec<Replication>,
}

impl McReport {
    /// Tab-separated regime-count table.
    pub fn to_tsv(&self) -> String {
        let width = self.freq.iter().map(|r| r.len()).max().unwrap_or(1);
        let mut s = String::from("parameter\ttrue");
        for r in 1..=width {
            s.push_str(&format!("\t{r}"));
        }
        s.push_str("\tcorrect\n");
        for (k, name) in self.names.iter().enumerate() {
            s.push_str(&format!("{name}\t{}", self.true_counts[k]));
            for r in 0..width {
                s.push_str(&format!("\t{:.1}", self.freq[k].get(r).copied().unwrap_or(0.0)));
            }
            s.push_str(&format!("\t{:.1}\n", self.correct[k]));
        }
        s.push_str(&format!(
            "# reps={} failed={} break={} exact={:.1} avg_correct={:.1}\n",
            self.n_reps,
            self.n_failed,
            self.break_rate.map(|v| format!("{v:.1}")).unwrap_or_else(|| "---".into()),
            self.exact_rate,
            self.avg_correct
        ));
        s
    }
}

fn one_rep(spec: &DgpSpec, seed: u64, cfg: &PipelineConfig) -> Result<Replication> {
    let sim = simulate(&spec.with_seed(seed))?;
    let mut cfg = cfg.clone();
    cfg.daem.seed = cfg.daem.seed.wrapping_add(seed);
    let out = run_pipeline(&sim.data, &sim.truth.breaks, &cfg)?;
    let truth = sim.truth.regime_counts();
    let top = &out.candidates[0];
    let break_hit = (!sim.truth.breaks.is_empty()).then(|| {
        sim.truth.breaks.iter().all(|&b| {
            out.segmentation.breaks().iter().any(|&d| (d as i64 - b as i64).unsigned_abs() as usize <= cfg.break_tolerance)
        })
    });
    let exact = out
        .candidates
        .iter()
        .filter(|c| c.post_prob >= cfg.exact_threshold)
        .any(|c| c.active.regime_counts() == truth);
    Ok(Replication {
        seed,
        breaks: out.segmentation.breaks().to_vec(),
        top_counts: top.active.regime_counts(),
        top_prob: top.post_prob,
        break_hit,
        exact,
    })
}

/// Runs `n_reps` replications with seeds `spec.seed + r`.
pub fn run_monte_carlo(spec: &DgpSpec, n_reps: usize, cfg: &PipelineConfig) -> Result<McReport> {
    if n_reps == 0 {
        return Err(selseg::Error::InvalidInput("at least one replication is needed".into()));
    }
    let probe = simulate(spec)?;
    let names = probe.truth.names.clone();
    let true_counts = probe.truth.regime_counts();
    let results: Vec<(u64, Result<Replication>)> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let seed = spec.seed.wrapping_add(r);
            (seed, one_rep(spec, seed, cfg))
        })
        .collect();
    let mut reps = Vec::new();
    let mut n_failed = 0;
    for (seed, r) in results {
        match r {
            Ok(v) => reps.push(v),
            Err(e) => {
                log::warn!("replication with seed {seed} failed: {e}");
                n_failed += 1;
            }
        }
    }
    let k = names.len();
    let n_ok = reps.len().max(1) as f64;
    let width = reps.iter().flat_map(|r| r.top_counts.iter()).copied().max().unwrap_or(1).max(*true_counts.iter().max().unwrap());
    let mut freq = vec![vec![0.0; width]; k];
    for r in &reps {
        for (c, &v) in r.top_counts.iter().enumerate() {
            freq[c][v - 1] += 100.0 / n_ok;
        }
    }
    let correct: Vec<f64> = (0..k).map(|c| freq[c][true_counts[c] - 1]).collect();
    let hits: Vec<bool> = reps.iter().filter_map(|r| r.break_hit).collect();
    let break_rate = (!hits.is_empty()).then(|| 100.0 * hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64);
    let exact_rate = 100.0 * reps.iter().filter(|r| r.exact).count() as f64 / n_ok;
    let avg_correct = correct.iter().sum::<f64>() / k as f64;
    Ok(McReport {
        dgp: spec.name.to_string(),
        n_reps,
        n_failed,
        names,
        true_counts,
        freq,
        break_rate,
        exact_rate,
        correct,
        avg_correct,
        replications: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{DgpName, Variance};

    #[test]
    fn small_report_is_consistent() {
        let mut spec = DgpSpec::new(DgpName::G, Variance::Constant, 11);
        spec.n_obs = Some(1024);
        let cfg = PipelineConfig {
            detector: Detector::Known,
            daem: DaemConfig { n_init: Some(64), ..Default::default() },
            ..Default::default()
        };
        let rep = run_monte_carlo(&spec, 3, &cfg).unwrap();
        assert_eq!(rep.replications.len() + rep.n_failed, 3);
        for row in &rep.freq {
            assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
        assert_eq!(rep.break_rate, Some(100.0));
        assert!(rep.to_tsv().lines().count() == 5);
    }
}
