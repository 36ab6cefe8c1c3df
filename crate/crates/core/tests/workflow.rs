use localrhat::chains::{generate_iid, generate_mvn, bivariate_correlation, load_chains, Layout};
use localrhat::counterexamples::{gpd_moments, solve_counterexample};
use localrhat::diagnostics::{diagnose, rhat_infinity, DiagnoseConfig, Grid, Verdict};
use localrhat::multivariate::{two_step_diagnosis, MvConfig};
use localrhat::population::{population_r_infinity, Method, PopulationModel};
use localrhat::statdist::DistributionSpec;
use localrhat::thresholds::{cached_threshold, mc_null_quantile, ThresholdSpec};
use tempfile::TempDir;

fn example1_specs() -> Vec<DistributionSpec> {
    let mut specs = vec![DistributionSpec::uniform(-0.75, 0.75); 3];
    specs.push(DistributionSpec::uniform(-1.0, 1.0));
    specs
}

#[test]
fn file_to_verdict() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("draws.csv");
    let cs = generate_iid(&example1_specs(), 2000, 11).unwrap();
    cs.save(&path, Layout::Wide).unwrap();
    let loaded = load_chains(&path, Layout::Wide).unwrap();
    assert_eq!(loaded.as_flat(), cs.as_flat());

    let config = DiagnoseConfig { mc_reps: 500, ..Default::default() };
    let report = diagnose(&loaded, &config).unwrap();
    assert_eq!(report.verdict, Verdict::NotConverged);
    assert!(report.p_value.unwrap() < 0.01);
    // location and scale agree closely enough that split-R̂ misses it
    assert!(report.split_rhat < 1.01);
}

#[test]
fn sample_supremum_tracks_population_value() {
    let model = PopulationModel::new(example1_specs()).unwrap();
    let pop = population_r_infinity(&model, Method::Auto).unwrap();
    let cs = generate_iid(&model.chains, 50_000, 12).unwrap();
    let sample = rhat_infinity(&cs, &Grid::AllPoints).unwrap();
    assert!((sample.value - pop.value).abs() < 0.01, "{} vs {}", sample.value, pop.value);
}

#[test]
fn cached_table_matches_fresh_simulation() {
    let cached = cached_threshold(4, 0.05, 400.0).unwrap();
    let fresh = mc_null_quantile(&ThresholdSpec { reps: 2000, seed: 77, ..ThresholdSpec::new(4, 0.05) }).unwrap();
    assert!((cached - fresh).abs() < 0.005, "{cached} vs {fresh}");
}

#[test]
fn two_step_flags_dependence_only() {
    let cs = generate_mvn(&[bivariate_correlation(0.0), bivariate_correlation(0.9)], 200, 13).unwrap();
    let config = MvConfig { reps: 500, ..Default::default() };
    let report = two_step_diagnosis(&cs, &config).unwrap();
    assert_eq!(report.margin_verdict, Verdict::Converged);
    assert_eq!(report.copula_verdict, Verdict::NotConverged);
    assert_eq!(report.verdict, Verdict::NotConverged);
}

#[test]
fn counterexample_pair_has_matching_moments() {
    let pair = solve_counterexample(0.5, -0.5, 2.0, 1.0).unwrap();
    let a = gpd_moments_of(&pair.spec1);
    let b = gpd_moments_of(&pair.spec2);
    assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10);
}

fn gpd_moments_of(spec: &DistributionSpec) -> (f64, f64) {
    let v = serde_json::to_value(spec).unwrap();
    let p = &v["params"];
    gpd_moments(p["mu"].as_f64().unwrap(), p["sigma"].as_f64().unwrap(), p["xi"].as_f64().unwrap()).unwrap()
}
