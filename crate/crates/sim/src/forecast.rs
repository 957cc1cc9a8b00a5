//! Expanding-window one-step-ahead evaluation of the linear, change-point
//! and selective-segmentation forecasts.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use selseg::bayes::{bma_predictive, forecast_row, posterior_params, predictive};
use selseg::detect::{detect_breaks, dp_mdl_segmentation, ScanConfig};
use selseg::select::{run_grid, GridConfig};
use selseg::selo::DaemConfig;
use selseg::{ActiveSet, Dataset, Error, Result, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Linear,
    CpMdl,
    SeloMdl,
    CpScan,
    SeloScan,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Linear, Method::CpMdl, Method::SeloMdl, Method::CpScan, Method::SeloScan];

    fn detector(self) -> Option<Detector> {
        match self {
            Method::Linear => None,
            Method::CpMdl | Method::SeloMdl => Some(Detector::Dp),
            Method::CpScan | Method::SeloScan => Some(Detector::Scan),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Linear => "linear",
            Method::CpMdl => "cp-mdl",
            Method::SeloMdl => "selo-mdl",
            Method::CpScan => "cp-scan",
            Method::SeloScan => "selo-scan",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown forecast method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detector {
    Dp,
    Scan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub scan: ScanConfig,
    pub dp_max_breaks: usize,
    pub grid: GridConfig,
    pub daem: DaemConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig { scan: ScanConfig::default(), dp_max_breaks: 10, grid: GridConfig::default(), daem: DaemConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodForecast {
    pub method: Method,
    pub complete: bool,
    /// First failure, if any.
    pub error: Option<String>,
    pub rmsfe: Option<f64>,
    pub clpd: Option<f64>,
    /// Predictive means, one per evaluation period.
    pub point: Vec<f64>,
    /// Predictive log-densities at the realised values.
    pub log_density: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastReport {
    pub n_obs: usize,
    /// Size of the first training sample.
    pub t_start: usize,
    pub actual: Vec<f64>,
    pub methods: Vec<MethodForecast>,
}

impl ForecastReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,complete,rmsfe,clpd\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.methods {
            s.push_str(&format!("{},{},{},{}\n", m.method, m.complete, opt(m.rmsfe), opt(m.clpd)));
        }
        s
    }

    pub fn get(&self, method: Method) -> Option<&MethodForecast> {
        self.methods.iter().find(|m| m.method == method)
    }
}

pub fn default_t_start(n_obs: usize) -> usize {
    n_obs / 5
}

fn segment(head: &Dataset, det: Detector, cfg: &ForecastConfig) -> Result<Segmentation> {
    let (n, k) = (head.n_obs(), head.n_cov());
    match det {
        Detector::Dp => dp_mdl_segmentation(head, cfg.dp_max_breaks),
        // Too short to scan: no break is admissible anyway.
        Detector::Scan if n < 4 * (k + 1) => Ok(Segmentation::none(n)),
        Detector::Scan => Ok(detect_breaks(head, &cfg.scan)?.segmentation),
    }
}

fn one_step(head: &Dataset, x: &[f64], y: f64, method: Method, seg: Option<&Segmentation>, cfg: &ForecastConfig) -> Result<(f64, f64)> {
    let k = head.n_cov();
    match method {
        Method::Linear => {
            let active = ActiveSet::empty(1, k);
            let pp = posterior_params(head, &Segmentation::none(head.n_obs()), &active)?;
            let d = predictive(&pp, &forecast_row(x, &active))?;
            Ok((d.location, d.log_density(y)))
        }
        Method::CpMdl | Method::CpScan => {
            let seg = seg.expect("segmentation computed for break methods");
            let active = ActiveSet::full(seg.n_regimes(), k);
            let pp = posterior_params(head, seg, &active)?;
            let d = predictive(&pp, &forecast_row(x, &active))?;
            Ok((d.location, d.log_density(y)))
        }
        Method::SeloMdl | Method::SeloScan => {
            let seg = seg.expect("segmentation computed for break methods");
            let cands = run_grid(head, seg, &cfg.grid, &cfg.daem)?;
            let d = bma_predictive(head, seg, &cands, x)?;
            Ok((d.point, d.log_density(y)))
        }
    }
}

/// Runs every method at each origin `t_start..T`: fit on the first `t` rows
/// and predict row `t`. Detection and selection are redone at each origin.
pub fn forecast_eval(data: &Dataset, methods: &[Method], t_start: usize, cfg: &ForecastConfig) -> Result<ForecastReport> {
    let (n, k) = (data.n_obs(), data.n_cov());
    if t_start < k + 2 || t_start >= n {
        return Err(Error::InvalidInput(format!("first training sample must be in [{}, {}), got {t_start}", k + 2, n)));
    }
    if methods.is_empty() {
        return Err(Error::InvalidInput("no forecast method requested".into()));
    }
    let need = |d: Detector| methods.iter().any(|m| m.detector() == Some(d));
    let steps: Vec<Vec<Result<(f64, f64)>>> = (t_start..n)
        .into_par_iter()
        .map(|t| {
            let head = match data.head(t) {
                Ok(h) => h,
                Err(e) => return methods.iter().map(|_| Err(Error::InvalidInput(e.to_string()))).collect(),
            };
            let x: Vec<f64> = data.x().row(t).iter().copied().collect();
            let y = data.y()[t];
            let dp = need(Detector::Dp).then(|| segment(&head, Detector::Dp, cfg));
            let scan = need(Detector::Scan).then(|| segment(&head, Detector::Scan, cfg));
            methods
                .iter()
                .map(|&m| {
                    let seg = match m.detector() {
                        None => None,
                        Some(Detector::Dp) => Some(dp.as_ref().unwrap().as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?),
                        Some(Detector::Scan) => Some(scan.as_ref().unwrap().as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?),
                    };
                    one_step(&head, &x, y, m, seg, cfg)
                })
                .collect()
        })
        .collect();

    let actual: Vec<f64> = data.y().as_slice()[t_start..].to_vec();
    let out = methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let mut point = Vec::with_capacity(steps.len());
            let mut log_density = Vec::with_capacity(steps.len());
            let mut error = None;
            for (s, row) in steps.iter().enumerate() {
                match &row[i] {
                    Ok((p, l)) => {
                        point.push(*p);
                        log_density.push(*l);
                    }
                    Err(e) => {
                        error = Some(format!("origin {}: {e}", t_start + s));
                        break;
                    }
                }
            }
            let complete = error.is_none();
            if let Some(e) = &error {
                log::warn!("{method} incomplete: {e}");
            }
            let rmsfe = complete.then(|| rmsfe(&actual, &point));
            let clpd = complete.then(|| log_density.iter().sum());
            MethodForecast { method, complete, error, rmsfe, clpd, point, log_density }
        })
        .collect();
    Ok(ForecastReport { n_obs: n, t_start, actual, methods: out })
}

pub fn rmsfe(actual: &[f64], point: &[f64]) -> f64 {
    let n = actual.len().max(1) as f64;
    (actual.iter().zip(point).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / n).sqrt()
}
