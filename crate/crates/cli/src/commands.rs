use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use selseg::bayes::posterior_params;
use selseg::detect::{detect_breaks, dp_mdl_detail, dp_min_duration, mdl, ScanConfig};
use selseg::select::{exhaustive_select, lasso_baseline, lasso_lambda_grid, run_grid, GridConfig, ModelCandidate};
use selseg::selo::DaemConfig;
use selseg::uncertainty::{sample_break_posterior, BreakInterval, DreamConfig, Psrf};
use selseg::{Dataset, Segmentation};
use selseg_sim::dgp::{simulate as draw, DgpName, DgpSpec, Variance};
use selseg_sim::forecast::{default_t_start, forecast_eval, ForecastConfig, Method};
use selseg_sim::mc::{run_monte_carlo, Detector, PipelineConfig, Selector};

use crate::data::{build_dataset, read_table, DesignSpec};
use crate::error::{stage, CliError};
use crate::{DataArgs, DesignArgs, DetectArgs, DetectCmd, DetectorKind, FitCmd, ForecastCmd, GridArgs, McCmd, OutArgs, SelectorKind, SimulateCmd};

/// Output destinations are not part of the echoed configuration, so runs
/// differing only in where they write produce identical documents.
const OUTPUT_KEYS: [&str; 7] = ["json", "quiet", "out_dir", "csv", "tsv", "out", "truth"];

fn load(d: &DataArgs) -> Result<Dataset, CliError> {
    let path = d.input.as_deref().ok_or_else(|| CliError::Parse("--input is required".into()))?;
    let table = read_table(path)?;
    build_dataset(
        &table,
        &DesignSpec {
            response: d.response.as_deref(),
            covariates: d.covariates.as_deref(),
            intercept: !d.no_intercept,
            lags: d.lags,
        },
    )
}

fn scan_config(d: &DetectArgs) -> ScanConfig {
    ScanConfig { n_windows: d.windows, h_center: d.h_center }
}

fn grid_config(g: &GridArgs) -> Result<GridConfig, CliError> {
    if g.n_lambda == 0 || g.kappas.is_empty() {
        return Err(CliError::Parse("the penalty grid is empty".into()));
    }
    if g.kappas.iter().any(|k| !(*k > 0.0)) || !(g.lambda_scale > 0.0) {
        return Err(CliError::Parse("kappas and lambda-scale must be positive".into()));
    }
    Ok(GridConfig { n_lambda: g.n_lambda, lambda_scale: g.lambda_scale, kappas: g.kappas.clone() })
}

fn daem_config(g: &GridArgs, seed: u64) -> DaemConfig {
    DaemConfig { n_init: g.n_init, seed, ..DaemConfig::default() }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Prints the human report and writes the JSON document to `--json` and
/// `--out-dir`.
fn finish<C: Serialize, R: Serialize>(out: &OutArgs, command: &str, seed: Option<u64>, config: &C, result: &R, human: &str) -> Result<(), CliError> {
    let mut cfg = serde_json::to_value(config).map_err(|e| CliError::Parse(e.to_string()))?;
    if let Value::Object(m) = &mut cfg {
        m.retain(|k, _| !OUTPUT_KEYS.contains(&k.as_str()));
    }
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": cfg,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Parse(e.to_string()))? + "\n";
    if !out.quiet {
        print!("{human}");
    }
    if let Some(dir) = &out.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join(format!("{command}.json")), &text)?;
        write_file(&dir.join(format!("{command}.txt")), human)?;
    }
    match &out.json {
        Some(p) if p.as_os_str() == "-" => {
            print!("{text}");
            Ok(())
        }
        Some(p) => write_file(p, &text),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct WindowSummary {
    h: usize,
    candidates: Vec<usize>,
    refined: Vec<usize>,
    mdl: f64,
}

#[derive(Serialize)]
struct DetectionSummary {
    detector: DetectorKind,
    breaks: Vec<usize>,
    /// 1-based inclusive row ranges.
    regimes: Vec<(usize, usize)>,
    mdl: f64,
    mdl_none: f64,
    chosen_h: Option<usize>,
    windows: Vec<WindowSummary>,
}

fn regimes(seg: &Segmentation) -> Vec<(usize, usize)> {
    (1..=seg.n_regimes())
        .map(|j| {
            let (a, b) = seg.regime_rows(j);
            (a + 1, b)
        })
        .collect()
}

fn run_detection(data: &Dataset, d: &DetectArgs) -> Result<(Segmentation, DetectionSummary), CliError> {
    match d.detector {
        DetectorKind::Scan => {
            let det = detect_breaks(data, &scan_config(d)).map_err(stage("detect"))?;
            let summary = DetectionSummary {
                detector: d.detector,
                breaks: det.segmentation.breaks().to_vec(),
                regimes: regimes(&det.segmentation),
                mdl: det.mdl,
                mdl_none: det.mdl_none,
                chosen_h: det.chosen.map(|i| det.windows[i].h),
                windows: det
                    .windows
                    .iter()
                    .map(|w| WindowSummary { h: w.h, candidates: w.candidates.clone(), refined: w.refined.clone(), mdl: w.mdl })
                    .collect(),
            };
            Ok((det.segmentation, summary))
        }
        DetectorKind::Dp => {
            let (seg, m) = dp_mdl_detail(data, d.max_breaks, dp_min_duration(data.n_cov())).map_err(stage("detect"))?;
            let mdl_none = mdl(data, &Segmentation::none(data.n_obs())).map_err(stage("detect"))?;
            let summary = DetectionSummary {
                detector: d.detector,
                breaks: seg.breaks().to_vec(),
                regimes: regimes(&seg),
                mdl: m,
                mdl_none,
                chosen_h: None,
                windows: Vec::new(),
            };
            Ok((seg, summary))
        }
    }
}

fn fmt_detection(s: &DetectionSummary) -> String {
    let mut o = String::new();
    if s.breaks.is_empty() {
        writeln!(o, "breaks: none").unwrap();
    } else {
        let b: Vec<String> = s.breaks.iter().map(usize::to_string).collect();
        writeln!(o, "breaks: {}", b.join(", ")).unwrap();
    }
    let r: Vec<String> = s.regimes.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    writeln!(o, "regimes: {}", r.join(", ")).unwrap();
    writeln!(o, "MDL: {:.3} (no break: {:.3})", s.mdl, s.mdl_none).unwrap();
    if !s.windows.is_empty() {
        writeln!(o).unwrap();
        writeln!(o, "{:>2} {:>5}  {:>12}  {:<24} {}", "", "h", "MDL", "refined", "candidates").unwrap();
        for w in &s.windows {
            let mark = if Some(w.h) == s.chosen_h { "*" } else { "" };
            writeln!(o, "{:>2} {:>5}  {:>12.3}  {:<24} {:?}", mark, w.h, w.mdl, format!("{:?}", w.refined), w.candidates).unwrap();
        }
    }
    o
}

pub fn detect(c: DetectCmd) -> Result<(), CliError> {
    let data = load(&c.data)?;
    let (_, summary) = run_detection(&data, &c.detect)?;
    let human = fmt_detection(&summary);
    let result = json!({ "n_obs": data.n_obs(), "names": data.names(), "detection": summary });
    finish(&c.out, "detect", None, &c, &result, &human)
}

fn select(data: &Dataset, seg: &Segmentation, g: &GridArgs, seed: u64) -> Result<Vec<ModelCandidate>, CliError> {
    let grid = grid_config(g)?;
    let daem = daem_config(g, seed);
    let kind = if g.exhaustive { SelectorKind::Exhaustive } else { g.selector };
    match kind {
        SelectorKind::Selo => run_grid(data, seg, &grid, &daem),
        // Nothing to penalize without a break.
        SelectorKind::Lasso if seg.n_regimes() == 1 => run_grid(data, seg, &grid, &daem),
        SelectorKind::Lasso => lasso_lambda_grid(data, seg, g.n_lambda).and_then(|l| lasso_baseline(data, seg, &l)),
        SelectorKind::Exhaustive => exhaustive_select(data, seg),
    }
    .map_err(stage("select"))
}

#[derive(Serialize)]
struct Change {
    regime: usize,
    name: String,
}

#[derive(Serialize)]
struct ModelRow {
    rank: usize,
    post_prob: f64,
    log_ml: f64,
    kappa: Option<f64>,
    lambda: Option<f64>,
    multiplicity: usize,
    regime_counts: Vec<usize>,
    changes: Vec<Change>,
}

fn model_rows(cands: &[ModelCandidate], names: &[String]) -> Vec<ModelRow> {
    cands
        .iter()
        .enumerate()
        .map(|(i, c)| ModelRow {
            rank: i + 1,
            post_prob: c.post_prob,
            log_ml: c.log_ml,
            kappa: c.kappa,
            lambda: c.lambda,
            multiplicity: c.multiplicity,
            regime_counts: c.active.regime_counts(),
            changes: c.active.entries().into_iter().map(|(j, k)| Change { regime: j, name: names[k].clone() }).collect(),
        })
        .collect()
}

/// Coefficients per regime; `None` marks a coefficient carried over
/// unchanged from the previous regime.
#[derive(Serialize)]
struct RegimeCoefs {
    regime: usize,
    rows: (usize, usize),
    coef: Vec<Option<f64>>,
    sd: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct BreakSummary {
    n_chains: usize,
    n_draws: usize,
    acceptance_rate: f64,
    psrf: Psrf,
    stuck: bool,
    intervals: Vec<BreakInterval>,
}

#[derive(Serialize)]
struct FitResult {
    n_obs: usize,
    names: Vec<String>,
    detection: DetectionSummary,
    sigma2: Option<f64>,
    coefficients: Vec<RegimeCoefs>,
    models: Vec<ModelRow>,
    break_posterior: Option<BreakSummary>,
    /// Why break sampling did not run, when requested.
    mcmc_skipped: Option<String>,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |x| format!("{x:.4}"))
}

fn fmt_fit(r: &FitResult) -> String {
    let mut o = fmt_detection(&r.detection);
    writeln!(o).unwrap();
    writeln!(o, "top models").unwrap();
    writeln!(o, "{:>4} {:>8} {:>12} {:>6} {:>8}  changes", "rank", "prob", "log ML", "kappa", "lambda").unwrap();
    for m in r.models.iter().take(10) {
        let ch: Vec<String> = m.changes.iter().map(|c| format!("{}@{}", c.name, c.regime)).collect();
        let ch = if ch.is_empty() { "(none)".to_string() } else { ch.join(" ") };
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        writeln!(o, "{:>4} {:>8.4} {:>12.3} {:>6} {:>8}  {}", m.rank, m.post_prob, m.log_ml, opt(m.kappa), opt(m.lambda), ch).unwrap();
    }
    writeln!(o).unwrap();
    let w = r.names.iter().map(String::len).max().unwrap_or(0).max(10);
    let mut head = format!("{:<12}", "regime");
    for n in &r.names {
        head.push_str(&format!(" {n:>w$}"));
    }
    writeln!(o, "{head}").unwrap();
    for reg in &r.coefficients {
        let mut line = format!("{:<12}", format!("{}-{}", reg.rows.0, reg.rows.1));
        for v in &reg.coef {
            line.push_str(&format!(" {:>w$}", fmt_cell(*v)));
        }
        writeln!(o, "{line}").unwrap();
        let mut line = format!("{:<12}", "");
        for (v, c) in reg.sd.iter().zip(&reg.coef) {
            let cell = match (v, c) {
                (Some(s), Some(_)) => format!("({s:.4})"),
                _ => String::new(),
            };
            line.push_str(&format!(" {cell:>w$}"));
        }
        writeln!(o, "{line}").unwrap();
    }
    if let Some(s2) = r.sigma2 {
        writeln!(o, "sigma2: {s2:.4}").unwrap();
    }
    if let Some(b) = &r.break_posterior {
        writeln!(o).unwrap();
        writeln!(
            o,
            "break posterior: {} chains, {} draws, acceptance {:.3}, PSRF {:.4}{}",
            b.n_chains,
            b.n_draws,
            b.acceptance_rate,
            b.psrf.value,
            if b.psrf.degenerate { " (degenerate)" } else { "" }
        ).unwrap();
        writeln!(o, "{:>8} {:>6} {:>9} {:>13} {:>13}", "selected", "mode", "mean", "90%", "95%").unwrap();
        for i in &b.intervals {
            writeln!(
            o,
                "{:>8} {:>6} {:>9.2} {:>13} {:>13}",
                i.selected,
                i.mode,
                i.mean,
                format!("[{}, {}]", i.ci90.0, i.ci90.1),
                format!("[{}, {}]", i.ci95.0, i.ci95.1)
            ).unwrap();
        }
        if b.stuck {
            writeln!(o, "warning: the sampler stalled; intervals may be too narrow").unwrap();
        }
    }
    if let Some(m) = &r.mcmc_skipped {
        writeln!(o, "break sampling skipped: {m}").unwrap();
    }
    o
}

pub fn fit(c: FitCmd) -> Result<(), CliError> {
    let data = load(&c.data)?;
    let (seg, detection) = run_detection(&data, &c.detect)?;
    let cands = select(&data, &seg, &c.grid, c.seed)?;
    let top = &cands[0];
    let pp = posterior_params(&data, &seg, &top.active).map_err(stage("posterior"))?;
    let coefs = pp.regime_coefficients();
    let sds = pp.regime_coefficient_sd();
    let k = data.n_cov();
    let spans = regimes(&seg);
    let coefficients = (0..seg.n_regimes())
        .map(|j| {
            let shown = |c: usize| j == 0 || top.active.contains(j + 1, c);
            RegimeCoefs {
                regime: j + 1,
                rows: spans[j],
                coef: (0..k).map(|c| shown(c).then(|| coefs[j][c])).collect(),
                sd: (0..k).map(|c| if shown(c) { sds.as_ref().map(|s| s[j][c]) } else { None }).collect(),
            }
        })
        .collect();

    let (mut break_posterior, mut mcmc_skipped) = (None, None);
    if c.mcmc {
        if seg.breaks().is_empty() {
            mcmc_skipped = Some("no break detected".into());
        } else if top.active.is_empty() {
            mcmc_skipped = Some("the selected model has no changing coefficient".into());
        } else {
            let cfg = DreamConfig { n_iter: c.mcmc_iter, n_chains: c.mcmc_chains, seed: c.seed, ..DreamConfig::default() };
            let bp = sample_break_posterior(&data, &top.active, &seg, &cfg).map_err(stage("mcmc"))?;
            if bp.stuck {
                log::warn!("break sampler stalled");
            }
            break_posterior = Some(BreakSummary {
                n_chains: bp.n_chains,
                n_draws: bp.draws.len(),
                acceptance_rate: bp.acceptance_rate,
                psrf: bp.psrf,
                stuck: bp.stuck,
                intervals: bp.intervals,
            });
        }
    }

    let result = FitResult {
        n_obs: data.n_obs(),
        names: data.names().to_vec(),
        detection,
        sigma2: pp.mean_sigma2(),
        coefficients,
        models: model_rows(&cands, data.names()),
        break_posterior,
        mcmc_skipped,
    };
    finish(&c.out, "fit", Some(c.seed), &c, &result, &fmt_fit(&result))
}

pub fn forecast(c: ForecastCmd) -> Result<(), CliError> {
    let data = load(&c.data)?;
    let methods = c
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| CliError::Parse(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let t_start = c.t_start.unwrap_or_else(|| default_t_start(data.n_obs()));
    let cfg = ForecastConfig {
        scan: scan_config(&c.detect),
        dp_max_breaks: c.detect.max_breaks,
        grid: grid_config(&c.grid)?,
        daem: daem_config(&c.grid, c.seed),
    };
    let report = forecast_eval(&data, &methods, t_start, &cfg).map_err(stage("forecast"))?;
    let mut o = String::new();
    writeln!(o, "{} one-step forecasts from t = {}", data.n_obs() - t_start, t_start + 1).unwrap();
    writeln!(o, "{:<10} {:>9} {:>12} {:>12}", "method", "complete", "RMSFE", "CLPD").unwrap();
    for m in &report.methods {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        writeln!(o, "{:<10} {:>9} {:>12} {:>12}", m.method.to_string(), m.complete, opt(m.rmsfe), opt(m.clpd)).unwrap();
        if let Some(e) = &m.error {
            writeln!(o, "           {e}").unwrap();
        }
    }
    if let Some(p) = &c.csv {
        write_file(p, &report.to_csv())?;
    }
    finish(&c.out, "forecast", Some(c.seed), &c, &report, &o)
}

fn dgp_spec(d: &DesignArgs) -> Result<DgpSpec, CliError> {
    let name: DgpName = d.dgp.parse().map_err(|e: selseg::Error| CliError::Parse(e.to_string()))?;
    let variance = if d.garch { Variance::Garch } else { Variance::Constant };
    let mut spec = DgpSpec::new(name, variance, d.seed);
    spec.n_obs = d.n_obs;
    if let Some(e) = &d.empirical {
        spec.empirical = e.clone();
    }
    Ok(spec)
}

/// CSV with the response first, then every covariate except the intercept.
fn to_csv(data: &Dataset) -> String {
    let keep: Vec<usize> = (0..data.n_cov()).filter(|&c| data.names()[c] != "Intercept").collect();
    let mut s = String::from("y");
    for &c in &keep {
        s.push(',');
        s.push_str(&data.names()[c]);
    }
    s.push('\n');
    for i in 0..data.n_obs() {
        s.push_str(&data.y()[i].to_string());
        for &c in &keep {
            s.push(',');
            s.push_str(&data.x()[(i, c)].to_string());
        }
        s.push('\n');
    }
    s
}

pub fn simulate(c: SimulateCmd) -> Result<(), CliError> {
    let spec = dgp_spec(&c.design)?;
    let sim = draw(&spec).map_err(stage("simulate"))?;
    let csv = to_csv(&sim.data);
    match &c.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &c.truth {
        let text = serde_json::to_string_pretty(&json!({ "dgp": spec.name.to_string(), "seed": spec.seed, "truth": sim.truth }))
            .map_err(|e| CliError::Parse(e.to_string()))?;
        write_file(p, &(text + "\n"))?;
    }
    Ok(())
}

pub fn mc(c: McCmd) -> Result<(), CliError> {
    let spec = dgp_spec(&c.design)?;
    if c.reps == 0 {
        return Err(CliError::Parse("--reps must be positive".into()));
    }
    let detector = if c.known_breaks {
        Detector::Known
    } else {
        match c.detect.detector {
            DetectorKind::Scan => Detector::Scan(scan_config(&c.detect)),
            DetectorKind::Dp => Detector::Dp { max_breaks: c.detect.max_breaks },
        }
    };
    let selector = match if c.grid.exhaustive { SelectorKind::Exhaustive } else { c.grid.selector } {
        SelectorKind::Selo => Selector::Selo,
        SelectorKind::Lasso => Selector::Lasso { n_lambda: c.grid.n_lambda },
        SelectorKind::Exhaustive => return Err(CliError::Parse("mc supports the selo and lasso selectors".into())),
    };
    let cfg = PipelineConfig {
        detector,
        selector,
        grid: grid_config(&c.grid)?,
        daem: daem_config(&c.grid, 0),
        exact_threshold: c.exact_threshold,
        break_tolerance: c.break_tolerance,
    };
    let report = run_monte_carlo(&spec, c.reps, &cfg).map_err(stage("mc"))?;
    let tsv = report.to_tsv();
    if let Some(p) = &c.tsv {
        write_file(p, &tsv)?;
    }
    finish(&c.out, "mc", Some(c.design.seed), &c, &report, &tsv)
}
