use meshgnn::gnn::{init_params, GnnConfig, GnnParams};
use meshgnn::graph::FeatureStats;
use meshgnn::persist::{load_model, load_model_expecting, model_from_json, model_to_json, save_model, PersistError};

fn cfg(d: usize, seed: u64) -> GnnConfig {
    GnnConfig { n_layers: 3, embed_dim: d, mlp_hidden: 7, seed, ..Default::default() }
}

fn bits(p: &GnnParams) -> Vec<u64> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

fn stats() -> FeatureStats {
    FeatureStats {
        node_mean: vec![0.3, 2.5, 1.0 / 3.0],
        node_std: vec![0.1, 0.0, 7.25],
        edge_mean: vec![5.123456789012345, 0.9, 12.0],
        edge_std: vec![2.0, 1e-300, 3.5],
    }
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let mut p = init_params(&cfg(8, seed)).unwrap();
        // Awkward values: negative zero, subnormal, extremes.
        p.scorer.b2.data[0] = -0.0;
        p.regressor.b2.data = vec![5e-324, -1.7976931348623157e308];
        p.layers[0].attn.data[0] = 0.1 + 0.2;
        let path = dir.path().join(format!("m{seed}.json"));
        save_model(&path, &p, Some(&stats())).unwrap();
        let snap = load_model(&path).unwrap();
        assert_eq!(snap.params.config, p.config);
        assert_eq!(bits(&snap.params), bits(&p));
        assert_eq!(snap.stats, Some(stats()));
    }
}

#[test]
fn snapshot_without_stats_round_trips() {
    let p = init_params(&cfg(4, 1)).unwrap();
    let snap = model_from_json(&model_to_json(&p, None).unwrap()).unwrap();
    assert_eq!(snap.params, p);
    assert_eq!(snap.stats, None);
}

#[test]
fn truncated_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&path, &init_params(&cfg(4, 2)).unwrap(), None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    for cut in [text.len() - 1, text.len() / 2, 10] {
        std::fs::write(&path, &text[..cut]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, PersistError::Truncated), "cut {cut}: {err}");
        assert_eq!(err.to_string(), "truncated snapshot");
    }
}

#[test]
fn version_mismatch_is_reported() {
    let text = model_to_json(&init_params(&cfg(4, 3)).unwrap(), None).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["version"] = serde_json::json!(2);
    let err = model_from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, PersistError::VersionMismatch { found: 2, expected: 1 }), "{err}");
    assert!(err.to_string().starts_with("version mismatch"));
}

#[test]
fn architecture_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.json");
    save_model(&path, &init_params(&cfg(8, 4)).unwrap(), None).unwrap();
    let err = load_model_expecting(&path, &cfg(32, 4)).unwrap_err();
    assert!(matches!(err, PersistError::ShapeMismatch(_)), "{err}");
    assert!(err.to_string().starts_with("shape mismatch"));
    assert!(load_model_expecting(&path, &cfg(8, 99)).is_ok());
}

#[test]
fn inconsistent_tensors_are_reported() {
    let text = model_to_json(&init_params(&cfg(4, 5)).unwrap(), None).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();

    let mut bad_shape = v.clone();
    bad_shape["tensors"][0]["shape"] = serde_json::json!([4, 4]);
    assert!(matches!(model_from_json(&bad_shape.to_string()), Err(PersistError::ShapeMismatch(_))));

    let mut short = v.clone();
    short["tensors"][2]["data"].as_array_mut().unwrap().pop();
    assert!(matches!(model_from_json(&short.to_string()), Err(PersistError::ShapeMismatch(_))));

    let mut missing = v.clone();
    missing["tensors"].as_array_mut().unwrap().pop();
    assert!(matches!(model_from_json(&missing.to_string()), Err(PersistError::ShapeMismatch(_))));

    let mut renamed = v;
    renamed["tensors"][1]["name"] = serde_json::json!("layer0.w_other");
    assert!(matches!(model_from_json(&renamed.to_string()), Err(PersistError::ShapeMismatch(_))));
}

#[test]
fn foreign_and_missing_files_are_reported() {
    assert!(matches!(model_from_json("{}"), Err(PersistError::NotASnapshot(_))));
    assert!(matches!(model_from_json("[1, 2, 3]"), Err(PersistError::NotASnapshot(_))));
    assert!(matches!(model_from_json("not json"), Err(PersistError::Malformed(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_model(&dir.path().join("absent.json")), Err(PersistError::Io(_))));
}
