use proptest::prelude::*;

use selseg_sim::dgp::{simulate, DgpName, DgpSpec, Variance};
use selseg_sim::forecast::{forecast_eval, ForecastConfig, Method};
use selseg_sim::mc::{run_monte_carlo, Detector, McReport, PipelineConfig};

fn small_a(seed: u64) -> DgpSpec {
    let mut spec = DgpSpec::new(DgpName::A, Variance::Constant, seed);
    spec.n_obs = Some(200);
    spec
}

#[test]
fn mc_report_round_trips_through_json() {
    let report = run_monte_carlo(&small_a(3), 4, &PipelineConfig::default()).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: McReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_tsv(), report.to_tsv());
    assert_eq!(back.replications.len(), 4);
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

#[test]
fn mc_is_deterministic() {
    let spec = small_a(9);
    let a = run_monte_carlo(&spec, 3, &PipelineConfig::default()).unwrap();
    let b = run_monte_carlo(&spec, 3, &PipelineConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn frequencies_are_percentages(seed in 0u64..1000, reps in 1usize..5) {
        let cfg = PipelineConfig { detector: Detector::Known, ..PipelineConfig::default() };
        let spec = DgpSpec::new(DgpName::Empirical(4), Variance::Constant, seed);
        let r = run_monte_carlo(&spec, reps, &cfg).unwrap();
        for (k, row) in r.freq.iter().enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&r.correct[k]));
        }
        prop_assert!((0.0..=100.0).contains(&r.exact_rate));
        prop_assert_eq!(r.n_reps, reps);
    }
}

/// Partial breaks: with most coefficients stable, pooling them across the
/// break should forecast at least as well as re-estimating everything.
#[test]
fn selective_forecasts_beat_full_change_on_partial_breaks() {
    let cfg = ForecastConfig::default();
    let methods = [Method::CpMdl, Method::SeloMdl];
    let mut wins = 0;
    let n = 20;
    for seed in 0..n {
        let sim = simulate(&DgpSpec::new(DgpName::Empirical(6), Variance::Constant, 500 + seed)).unwrap();
        let r = forecast_eval(&sim.data, &methods, 200, &cfg).unwrap();
        let (cp, selo) = (r.get(Method::CpMdl).unwrap(), r.get(Method::SeloMdl).unwrap());
        if selo.rmsfe.unwrap() <= cp.rmsfe.unwrap() {
            wins += 1;
        }
    }
    assert!(wins * 2 > n, "selo-mdl won {wins} of {n}");
}
