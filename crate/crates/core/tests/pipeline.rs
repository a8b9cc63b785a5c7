use satmimo::channel::ArrayConfig;
use satmimo::equinet::{manifest_path, CenDims, DecDims, Dims, EquiWeights};
use satmimo::eval::{
    export_results, export_scenario, generate_scenario, import_scenario, run_scheme, run_sweep, ScenarioConfig, Scheme,
    SchemeContext, SweepConfig,
};
use satmimo::wmmse::sum_rate;
use satmimo::{Error, Execution};

fn config() -> ScenarioConfig {
    ScenarioConfig { num_sats: 2, num_uts: 4, array: ArrayConfig::new(2, 2, 2, 1), ..Default::default() }
}

#[test]
fn reimported_scenario_reproduces_rates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scn.toml");
    let scn = generate_scenario(&config(), 11).unwrap();
    export_scenario(&scn, &path).unwrap();
    let back = import_scenario(&path).unwrap();
    let ctx = SchemeContext::default();
    for scheme in [Scheme::CenOptWm, Scheme::SepOptWm, Scheme::SepMmse, Scheme::SepMrt] {
        let a = sum_rate(&scn, &run_scheme(&scn, scheme, &ctx).unwrap(), 100, 3, Execution::Sequential);
        let b = sum_rate(&back, &run_scheme(&back, scheme, &ctx).unwrap(), 100, 3, Execution::Sequential);
        assert_eq!(a, b, "{scheme}");
    }
}

#[test]
fn missing_scenario_names_the_path() {
    let err = import_scenario(std::path::Path::new("/nonexistent/scn.toml")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/scn.toml"));
}

#[test]
fn weight_files_round_trip_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for (name, dims) in [
        ("cen.eqwt", Dims::Centralized(CenDims::for_arrays(4, 2))),
        ("dec.eqwt", Dims::Decentralized(DecDims::for_arrays(4, 2))),
    ] {
        let path = dir.path().join(name);
        let w = EquiWeights::random(dims, 5).unwrap();
        w.save_with_manifest(&path).unwrap();
        assert_eq!(EquiWeights::load(&path).unwrap(), w);
        let manifest = std::fs::read_to_string(manifest_path(&path)).unwrap();
        assert_eq!(manifest, w.manifest());
    }
}

#[test]
fn learned_schemes_run_through_sweep() {
    let scn = generate_scenario(&config(), 1).unwrap();
    let ctx = SchemeContext {
        cen_weights: Some(EquiWeights::random(Dims::Centralized(CenDims::for_arrays(scn.m(), scn.n())), 1).unwrap()),
        dec_weights: Some(EquiWeights::random(Dims::Decentralized(DecDims::for_arrays(scn.m(), scn.n())), 2).unwrap()),
        ..Default::default()
    };
    let cfg = SweepConfig {
        scenario: config(),
        power_grid_dbw: vec![0.0],
        sats_grid: vec![1, 2],
        uts_grid: vec![3],
        n_drops: 2,
        n_mc: 10,
        schemes: vec![Scheme::CenTfcWm, Scheme::DecTfcWm],
        ..Default::default()
    };
    let reports = run_sweep(&cfg, &ctx, Execution::Parallel).unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        assert_eq!(r.failures(), 0, "{:?}", r.records);
        assert_eq!(r.violations(), 0);
    }
    let dir = tempfile::tempdir().unwrap();
    export_results(&reports, &dir.path().join("r.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert!(text.lines().nth(1).unwrap().starts_with("cen-tfc-wm,0,"));
}

#[test]
fn single_drop_sweep_is_reproducible() {
    let cfg = SweepConfig {
        scenario: config(),
        power_grid_dbw: vec![5.0],
        sats_grid: vec![2],
        uts_grid: vec![4],
        n_drops: 1,
        n_mc: 50,
        seed: 99,
        ..Default::default()
    };
    let a = run_sweep(&cfg, &SchemeContext::default(), Execution::Parallel).unwrap();
    let b = run_sweep(&cfg, &SchemeContext::default(), Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
