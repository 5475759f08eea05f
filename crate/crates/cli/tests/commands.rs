use std::fs;
use std::path::Path;

use cdcca::model::ModelFile;
use cdcca_cli::{
    cmd_eval, cmd_index, cmd_retrieve, cmd_synth, cmd_train, EvalArgs, HyperArgs, IndexArgs, RetrieveArgs,
    RetrievalResult, RunConfig, SynthArgs, TrainArgs, HISTORY_FILE, MANIFEST_FILE, MODEL_FILE, RUN_CONFIG_FILE,
};

fn synth_args(out: &Path) -> SynthArgs {
    SynthArgs {
        out: out.to_path_buf(),
        config: None,
        seed: Some(3),
        n_venues: Some(60),
        n_categories: Some(4),
        photos_per_venue: Some(4),
        dim_x: Some(16),
        dim_y: Some(12),
        latent_dim: None,
        noise: None,
        category_signal: None,
        venue_signal: None,
    }
}

fn train_args(data: &Path, method: &str, out: &Path) -> TrainArgs {
    TrainArgs {
        data: data.join(MANIFEST_FILE),
        method: method.into(),
        hyper: HyperArgs {
            k: Some(4),
            output_dim: Some(4),
            hidden_units: Some(16),
            batch_size: Some(30),
            epochs: Some(2),
            ..Default::default()
        },
        out: out.to_path_buf(),
    }
}

fn eval_args(data: &Path, out: &Path) -> EvalArgs {
    EvalArgs {
        data: data.join(MANIFEST_FILE),
        model: None,
        method: None,
        hyper: HyperArgs { k: Some(4), ..Default::default() },
        geo_radius: None,
        geo_noise: 0.0,
        rho_weighted: false,
        folds: 1,
        out: out.to_path_buf(),
    }
}

fn run_config(dir: &Path) -> RunConfig {
    serde_json::from_slice(&fs::read(dir.join(RUN_CONFIG_FILE)).unwrap()).unwrap()
}

#[test]
fn synth_writes_loadable_dataset_and_rejects_empty() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&synth_args(dir.path())).unwrap();
    let data = cdcca::dataio::load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!((data.venues.len(), data.dim_x, data.dim_y), (60, 16, 12));
    assert_eq!(run_config(dir.path()).synth.unwrap().n_venues, 60);

    let bad = SynthArgs { n_venues: Some(0), ..synth_args(&dir.path().join("bad")) };
    assert!(cmd_synth(&bad).is_err());
}

#[test]
fn train_records_effective_beta_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&synth_args(&data)).unwrap();

    let out = dir.path().join("ccca");
    cmd_train(&train_args(&data, "c-cca", &out)).unwrap();
    assert_eq!(run_config(&out).train.unwrap().beta, 0.3);
    assert!(!out.join(HISTORY_FILE).exists());
    assert_eq!(ModelFile::read(&out.join(MODEL_FILE)).unwrap().method, "c-cca");

    let out = dir.path().join("dcca");
    cmd_train(&train_args(&data, "dcca", &out)).unwrap();
    assert_eq!(run_config(&out).train.unwrap().beta, 1.0);
    let history = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert!(history.starts_with("iteration,objective\n1,"));

    let unknown = train_args(&data, "lda", &dir.path().join("x"));
    assert!(cmd_train(&unknown).is_err());
}

#[test]
fn index_and_retrieve_with_geo_filter() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&synth_args(&data)).unwrap();
    let out = dir.path().join("m");
    cmd_train(&train_args(&data, "cca", &out)).unwrap();
    let index = out.join("index.json");
    cmd_index(&IndexArgs {
        model: out.join(MODEL_FILE),
        data: data.join(MANIFEST_FILE),
        rho_weighted: false,
        out: index.clone(),
    })
    .unwrap();

    let dataset = cdcca::dataio::load_dataset(&data.join(MANIFEST_FILE)).unwrap();
    let venue = &dataset.venues[7];
    let photos = dir.path().join("query.csv");
    fs::write(
        &photos,
        format!(
            "{}\n{}\n",
            (0..16).map(|i| format!("f{i}")).collect::<Vec<_>>().join(","),
            venue.photo_features[1].iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        ),
    )
    .unwrap();
    let result_file = out.join("retrieved.json");
    let retrieve = |radius: Option<f64>| {
        cmd_retrieve(&RetrieveArgs {
            model: out.join(MODEL_FILE),
            index: index.clone(),
            photos: photos.clone(),
            lat: Some(venue.latitude),
            lon: Some(venue.longitude),
            geo_radius: radius,
            top: 5,
            out: result_file.clone(),
        })
        .unwrap();
        let r: Vec<RetrievalResult> = serde_json::from_slice(&fs::read(&result_file).unwrap()).unwrap();
        r.into_iter().next().unwrap()
    };
    let all = retrieve(None);
    assert_eq!((all.candidates, all.venues.len()), (60, 5));
    assert!(all.venues.windows(2).all(|w| w[0].score >= w[1].score));
    let near = retrieve(Some(0.5));
    assert!(near.candidates < 60);
    assert!(near.venues.iter().any(|v| v.venue_id == venue.venue_id));
}

#[test]
fn separable_data_gives_near_perfect_mrr() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&SynthArgs { noise: Some(0.0), latent_dim: Some(4), ..synth_args(&data) }).unwrap();
    let out = dir.path().join("eval");
    let outcome = cmd_eval(&EvalArgs { method: Some("cca".into()), ..eval_args(&data, &out) }).unwrap();
    assert!(outcome.mean.mrr1 >= 0.9, "{}", outcome.mean.mrr1);
    assert!(out.join("report.json").exists() && out.join("report_rp.csv").exists());
}

#[test]
fn folds_report_their_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&synth_args(&data)).unwrap();
    let out = dir.path().join("eval");
    let outcome = cmd_eval(&EvalArgs { method: Some("c-cca".into()), folds: 5, ..eval_args(&data, &out) }).unwrap();
    assert_eq!(outcome.folds.len(), 5);
    let mean = outcome.folds.iter().map(|r| r.map).sum::<f64>() / 5.0;
    assert!((outcome.mean.map - mean).abs() < 1e-12);
    assert!(out.join("fold4.json").exists());
    assert_eq!(run_config(&out).folds, Some(5));

    let fixed = dir.path().join("model");
    cmd_train(&train_args(&data, "cca", &fixed)).unwrap();
    let args = EvalArgs { model: Some(fixed.join(MODEL_FILE)), folds: 2, ..eval_args(&data, &out) };
    assert!(cmd_eval(&args).is_err());
}
