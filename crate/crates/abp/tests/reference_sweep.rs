use abp::reference::{cached_reference, model_hash, ReferenceCache};
use abp::sweep::{parallel_map, run_sweep, summary_csv, CellResult, SweepConfig, CSV_HEADER};
use abp_core::model::generate_grid;
use abp_core::Method;

#[test]
fn model_hash_tracks_content() {
    let a = generate_grid(2, 3, 4, 1.0, 5).unwrap();
    let b = generate_grid(2, 3, 4, 1.0, 5).unwrap();
    let c = generate_grid(2, 3, 4, 1.0, 6).unwrap();
    assert_eq!(model_hash(&a), model_hash(&b));
    assert_ne!(model_hash(&a), model_hash(&c));
    assert_eq!(model_hash(&a).len(), 64);
}

#[test]
fn references_are_cached_by_hash_and_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("refs.json");
    let g = generate_grid(3, 3, 4, 1.0, 2).unwrap();
    let first = cached_reference(&g, 1e-10, Some(&path)).unwrap();
    let cache = ReferenceCache::load(&path).unwrap();
    assert_eq!(cache.entries.len(), 1);
    assert_eq!(cache.get(&model_hash(&g), 1e-10).unwrap(), first.as_slice());
    assert!(cache.get(&model_hash(&g), 1e-8).is_none());
    assert_eq!(cached_reference(&g, 1e-10, Some(&path)).unwrap(), first);
    cached_reference(&g, 1e-8, Some(&path)).unwrap();
    assert_eq!(ReferenceCache::load(&path).unwrap().entries.len(), 2);
}

#[test]
fn strongly_coupled_references_report_failure() {
    let g = generate_grid(4, 4, 6, 5.0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("refs.json");
    // Either converges or reports; an error must not leave a cache entry.
    if cached_reference(&g, 1e-14, Some(&path)).is_err() {
        assert!(ReferenceCache::load(&path).unwrap().entries.is_empty());
    }
}

#[test]
fn parallel_map_preserves_index_order() {
    for workers in [1, 2, 5] {
        assert_eq!(parallel_map(17, workers, |i| i * i), (0..17).map(|i| i * i).collect::<Vec<_>>());
    }
    assert!(parallel_map(0, 3, |i| i).is_empty());
}

#[test]
fn summary_has_cells_then_means() {
    let cell = |method, seed, t: Option<f64>, u| CellResult {
        method,
        domain_size: 10,
        seed,
        time_to_threshold_ms: t,
        factor_updates: u,
        converged: t.is_some(),
    };
    let csv = summary_csv(&[
        cell(Method::Fixed, 0, Some(2.0), 10),
        cell(Method::Fixed, 1, Some(4.0), 30),
        cell(Method::Fixed, 2, None, 50),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines[1], "fixed,10,0,2,10,true");
    assert_eq!(lines[3], "fixed,10,2,,50,false");
    assert_eq!(lines[4], format!("fixed,10,mean,3,30,{}", 2.0 / 3.0));
}

#[test]
fn sweeps_reach_the_threshold_and_are_sorted() {
    let config: SweepConfig = serde_json::from_str(
        r#"{"rows": 3, "cols": 3, "domain_sizes": [4, 6], "seeds": [1, 0], "methods": ["dynamic", "dense-random"]}"#,
    )
    .unwrap();
    let results = run_sweep(&config).unwrap();
    assert_eq!(results.len(), 8);
    assert!(results.windows(2).all(|w| (w[0].method, w[0].domain_size, w[0].seed) < (w[1].method, w[1].domain_size, w[1].seed)));
    assert!(results.iter().all(|r| r.converged));
    assert!(serde_json::from_str::<SweepConfig>(r#"{"domain_sizes": [4], "seeds": [0], "typo": 1}"#).is_err());
}
