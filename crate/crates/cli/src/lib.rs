//! Subcommands of the `cdcca` binary: synthetic data generation, training,
//! index building, ad-hoc retrieval and evaluation.
//!
//! Every command writes `run_config.json` next to its outputs with the fully
//! resolved settings of the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cdcca::config::TrainConfig;
use cdcca::dataio::{build_pairs, load_dataset, read_features, synth_generate, write_dataset, SplitSpec, SynthConfig};
use cdcca::error::{Error, Result};
use cdcca::linalg::Vector;
use cdcca::methods::{effective_config, MethodRegistry};
use cdcca::model::{CorrelationModel, ModelFile};
use cdcca::retrieval::{
    build_index, evaluate, rank_venues, EvalOptions, EvalReport, GeoFilter, IndexEntry, QueryTruth,
    RecallPrecisionCurve, RecallPrecisionPoint, VenueIndex,
};

pub const MODEL_FILE: &str = "model.cdcca";
pub const HISTORY_FILE: &str = "history.csv";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "cdcca", version, about = "Cross-modal CCA family for venue discovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic venue dataset
    Synth(SynthArgs),
    /// Train a model on the training split of a dataset
    Train(TrainArgs),
    /// Project every venue's text feature into the canonical space
    Index(IndexArgs),
    /// Rank venues for photo features in a feature file
    Retrieve(RetrieveArgs),
    /// Evaluate a model, or train and evaluate over several folds
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory; the manifest is written as manifest.json inside it
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_venues: Option<usize>,
    #[arg(long)]
    pub n_categories: Option<u32>,
    #[arg(long)]
    pub photos_per_venue: Option<usize>,
    #[arg(long)]
    pub dim_x: Option<usize>,
    #[arg(long)]
    pub dim_y: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub category_signal: Option<f64>,
    #[arg(long)]
    pub venue_signal: Option<f64>,
}

/// Hyperparameters shared by `train` and `eval`.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// JSON file with training settings; flags override it
    #[arg(long = "train-config")]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds training and the train/test split
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian kernel bandwidth for both views (median heuristic if unset)
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Fraction of a training venue's user photos that join training
    #[arg(long)]
    pub extra_photo_ratio: Option<f64>,
    #[arg(long)]
    pub train_venue_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    pub data: PathBuf,
    /// One of cca, c-cca, kcca, c-kcca, dcca, c-dcca
    #[arg(long)]
    pub method: String,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory for the model, history and run config
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Scale canonical components by their correlations before scoring
    #[arg(long)]
    pub rho_weighted: bool,
    /// Index file to write (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Feature file with one photo per row
    #[arg(long)]
    pub photos: PathBuf,
    #[arg(long, requires = "lon")]
    pub lat: Option<f64>,
    #[arg(long, requires = "lat")]
    pub lon: Option<f64>,
    /// Only rank venues within this distance of --lat/--lon
    #[arg(long, requires = "lat")]
    pub geo_radius: Option<f64>,
    /// Number of venues listed per photo
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Result file to write (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate this model on the test split; otherwise train --method per fold
    #[arg(long, conflicts_with = "method")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Coarse-location filter radius in km
    #[arg(long)]
    pub geo_radius: Option<f64>,
    /// Gaussian noise on the query position in km (0 uses the exact venue position)
    #[arg(long, default_value_t = 0.0)]
    pub geo_noise: f64,
    #[arg(long)]
    pub rho_weighted: bool,
    /// Independent random splits; each fold shifts the seed by its index
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub method: Option<String>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub train: Option<TrainConfig>,
    pub split: Option<SplitSpec>,
    pub eval: Option<EvalOptions>,
    pub synth: Option<SynthConfig>,
    pub folds: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    fn new(command: &str, out: &Path) -> Self {
        Self {
            command: command.into(),
            method: None,
            data: None,
            model: None,
            train: None,
            split: None,
            eval: None,
            synth: None,
            folds: None,
            out: out.to_path_buf(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RUN_CONFIG_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

pub fn resolve_synth(args: &SynthArgs) -> Result<SynthConfig> {
    let mut c: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => {$(if let Some(v) = args.$arg { c.$field = v; })*};
    }
    set!(seed <- seed, n_venues <- n_venues, n_categories <- n_categories,
        photos_per_venue <- photos_per_venue, d_x <- dim_x, d_y <- dim_y, latent_dim <- latent_dim, noise <- noise,
        category_signal <- category_signal, venue_signal <- venue_signal);
    c.validate()?;
    Ok(c)
}

pub fn resolve_train(h: &HyperArgs) -> Result<(TrainConfig, SplitSpec)> {
    let mut c: TrainConfig = match &h.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => {$(if let Some(v) = h.$arg { c.$field = v; })*};
    }
    set!(beta <- beta, r <- r, k <- k, learning_rate <- lr, batch_size <- batch_size,
        epochs <- epochs, seed <- seed, hidden_units <- hidden_units,
        output_dim <- output_dim, dropout <- dropout);
    if let Some(s) = h.sigma {
        c.sigma_x = Some(s);
        c.sigma_y = Some(s);
    }
    c.validate()?;
    let mut split = SplitSpec { seed: c.seed, ..Default::default() };
    if let Some(v) = h.extra_photo_ratio {
        split.extra_photo_ratio = v;
    }
    if let Some(v) = h.train_venue_fraction {
        split.train_venue_fraction = v;
    }
    split.validate()?;
    Ok((c, split))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = resolve_synth(args)?;
    let data = synth_generate(&config)?;
    write_dataset(&data, &args.out.join(MANIFEST_FILE))?;
    let mut run = RunConfig::new("synth", &args.out);
    run.synth = Some(config);
    run.write(&args.out)?;
    println!(
        "wrote {} venues, {} photos, {} categories (x: {}-d, y: {}-d) to {}",
        data.venues.len(),
        data.n_photos(),
        data.n_categories,
        data.dim_x,
        data.dim_y,
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("iteration,objective\n");
    for (i, v) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, v));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let registry = MethodRegistry::default();
    let method = registry.get(&args.method)?;
    let (config, split) = resolve_train(&args.hyper)?;
    let config = effective_config(&config, method.uses_categories());
    let data = load_dataset(&args.data)?;
    let (train, test) = build_pairs(&data, &split)?;
    info!("{} training pairs, {} test queries", train.len(), test.len());
    let model = method.fit(&train, &config)?;

    fs::create_dir_all(&args.out)?;
    model.to_model_file()?.write(&args.out.join(MODEL_FILE))?;
    if let Some(h) = model.history() {
        write_history(&args.out.join(HISTORY_FILE), h)?;
    }
    let mut run = RunConfig::new("train", &args.out);
    run.method = Some(args.method.clone());
    run.data = Some(args.data.clone());
    run.train = Some(config);
    run.split = Some(split);
    run.write(&args.out)?;
    let rho: Vec<String> = model.correlations().iter().map(|r| format!("{r:.4}")).collect();
    println!("{}: {} training pairs; canonical correlations [{}]", args.method, train.len(), rho.join(", "));
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Box<dyn CorrelationModel>> {
    MethodRegistry::default().load(&ModelFile::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexFileEntry {
    pub venue_id: String,
    pub category: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub vector: Vec<f64>,
}

/// On-disk form of a [`VenueIndex`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexFile {
    pub method: String,
    pub weights: Option<Vec<f64>>,
    pub venues: Vec<IndexFileEntry>,
}

impl IndexFile {
    pub fn from_index(method: &str, index: &VenueIndex) -> Self {
        Self {
            method: method.into(),
            weights: index.weights().map(|w| w.iter().copied().collect()),
            venues: index
                .entries()
                .iter()
                .map(|e| IndexFileEntry {
                    venue_id: e.venue_id.clone(),
                    category: e.category,
                    latitude: e.latitude,
                    longitude: e.longitude,
                    vector: e.vector.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn to_index(&self) -> Result<VenueIndex> {
        let entries = self
            .venues
            .iter()
            .map(|e| IndexEntry {
                venue_id: e.venue_id.clone(),
                category: e.category,
                latitude: e.latitude,
                longitude: e.longitude,
                vector: Vector::from_vec(e.vector.clone()),
            })
            .collect();
        VenueIndex::from_parts(entries, self.weights.clone().map(Vector::from_vec))
    }
}

pub fn cmd_index(args: &IndexArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.data)?;
    let index = build_index(model.as_ref(), &data.venues, args.rho_weighted)?;
    let file = IndexFile::from_index(model.method(), &index);
    let dir = parent_dir(&args.out);
    fs::create_dir_all(dir)?;
    fs::write(&args.out, serde_json::to_string(&file)? + "\n")?;
    let mut run = RunConfig::new("index", &args.out);
    run.method = Some(model.method().into());
    run.data = Some(args.data.clone());
    run.model = Some(args.model.clone());
    run.write(dir)?;
    println!("indexed {} venues in {} dimensions", index.len(), index.dim());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedVenue {
    pub rank: usize,
    pub venue_id: String,
    pub category: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub photo: usize,
    pub candidates: usize,
    pub venues: Vec<RetrievedVenue>,
}

pub fn cmd_retrieve(args: &RetrieveArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let file: IndexFile = read_json(&args.index)?;
    if file.method != model.method() {
        return Err(Error::Config(format!("index built with {}, model is {}", file.method, model.method())));
    }
    let index = file.to_index()?;
    let geo = match (args.lat, args.lon, args.geo_radius) {
        (Some(latitude), Some(longitude), Some(radius_km)) => Some(GeoFilter { latitude, longitude, radius_km }),
        _ => None,
    };
    let photos = read_features(&args.photos)?;
    let mut results = Vec::with_capacity(photos.rows.len());
    for (i, row) in photos.rows.iter().enumerate() {
        let truth = QueryTruth { query_id: format!("photo{i}"), venue_id: String::new(), category: 0 };
        let list = rank_venues(&Vector::from_vec(row.clone()), model.as_ref(), &index, geo.as_ref(), truth)?;
        results.push(RetrievalResult {
            photo: i,
            candidates: list.ranked.len(),
            venues: list
                .ranked
                .iter()
                .take(args.top)
                .enumerate()
                .map(|(r, v)| RetrievedVenue {
                    rank: r + 1,
                    venue_id: v.venue_id.clone(),
                    category: v.category,
                    score: v.score,
                })
                .collect(),
        });
    }
    let dir = parent_dir(&args.out);
    fs::create_dir_all(dir)?;
    fs::write(&args.out, serde_json::to_string_pretty(&results)? + "\n")?;
    for r in &results {
        let top: Vec<&str> = r.venues.iter().map(|v| v.venue_id.as_str()).collect();
        println!("photo {}: {}", r.photo, top.join(" "));
    }
    Ok(())
}

/// Mean of per-fold reports. Per-category MAP averages over the folds in
/// which the category was evaluated.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or(Error::UndefinedMetric("mean of zero folds"))?;
    let m = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / m;
    let mut per_category: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (&c, &v) in &r.per_category_map {
            per_category.entry(c).or_default().push(v);
        }
    }
    let points = first
        .recall_precision
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let at = |r: &EvalReport| r.recall_precision.points.get(i).copied();
            if reports.iter().any(|r| at(r).map(|q| q.cutoff) != Some(p.cutoff)) {
                return Err(Error::Config("folds use different recall-precision cutoffs".into()));
            }
            Ok(RecallPrecisionPoint {
                cutoff: p.cutoff,
                recall: reports.iter().map(|r| at(r).unwrap().recall).sum::<f64>() / m,
                precision: reports.iter().map(|r| at(r).unwrap().precision).sum::<f64>() / m,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        method: first.method.clone(),
        n_queries: reports.iter().map(|r| r.n_queries).sum(),
        n_venues: first.n_venues,
        mrr1: mean(&|r| r.mrr1),
        map: mean(&|r| r.map),
        map_skipped: reports.iter().map(|r| r.map_skipped).sum(),
        per_category_map: per_category
            .into_iter()
            .map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
        recall_precision: RecallPrecisionCurve {
            points,
            clamped: reports.iter().any(|r| r.recall_precision.clamped),
        },
        empty_lists: reports.iter().map(|r| r.empty_lists).sum(),
        true_venue_filtered: reports.iter().map(|r| r.true_venue_filtered).sum(),
    })
}

/// Outcome of `eval`: the per-fold reports and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub mean: EvalReport,
    pub folds: Vec<EvalReport>,
}

pub fn run_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    if args.folds == 0 {
        return Err(Error::Config("folds must be at least 1".into()));
    }
    let (config, split) = resolve_train(&args.hyper)?;
    let data = load_dataset(&args.data)?;
    let options = EvalOptions {
        geo_radius_km: args.geo_radius,
        geo_noise_km: args.geo_noise,
        seed: config.seed,
        rho_weighted: args.rho_weighted,
        cutoffs: None,
    };
    let folds: Vec<EvalReport> = match (&args.model, &args.method) {
        (Some(path), _) => {
            if args.folds != 1 {
                return Err(Error::Config("--folds needs --method; a fixed model is evaluated once".into()));
            }
            let model = load_model(path)?;
            let (_, test) = build_pairs(&data, &split)?;
            vec![evaluate(model.as_ref(), &data.venues, &test, &options)?]
        }
        (None, Some(name)) => {
            let registry = MethodRegistry::default();
            let method = registry.get(name)?;
            (0..args.folds as u64)
                .into_par_iter()
                .map(|f| {
                    let seed = config.seed.wrapping_add(f);
                    let fold_config = TrainConfig { seed, ..config.clone() };
                    let fold_split = SplitSpec { seed, ..split };
                    let (train, test) = build_pairs(&data, &fold_split)?;
                    let model = method.fit(&train, &fold_config)?;
                    evaluate(model.as_ref(), &data.venues, &test, &EvalOptions { seed, ..options.clone() })
                })
                .collect::<Result<Vec<_>>>()?
        }
        (None, None) => return Err(Error::Config("eval needs --model or --method".into())),
    };
    Ok(EvalOutcome { mean: mean_report(&folds)?, folds })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let outcome = run_eval(args)?;
    outcome.mean.write(&args.out, "report")?;
    if outcome.folds.len() > 1 {
        for (i, r) in outcome.folds.iter().enumerate() {
            r.write(&args.out, &format!("fold{i}"))?;
        }
    }
    let (config, split) = resolve_train(&args.hyper)?;
    let mut run = RunConfig::new("eval", &args.out);
    run.method = Some(outcome.mean.method.clone());
    run.data = Some(args.data.clone());
    run.model = args.model.clone();
    run.train = args.method.as_ref().map(|name| {
        let uses = MethodRegistry::default().get(name).map(|m| m.uses_categories()).unwrap_or(true);
        effective_config(&config, uses)
    });
    run.split = Some(split);
    run.eval = Some(EvalOptions {
        geo_radius_km: args.geo_radius,
        geo_noise_km: args.geo_noise,
        seed: config.seed,
        rho_weighted: args.rho_weighted,
        cutoffs: None,
    });
    run.folds = Some(args.folds);
    run.write(&args.out)?;
    let m = &outcome.mean;
    println!(
        "{}: MRR1 {:.4}  MAP {:.4}  ({} queries, {} venues, {} fold(s))",
        m.method,
        m.mrr1,
        m.map,
        m.n_queries,
        m.n_venues,
        outcome.folds.len()
    );
    Ok(outcome)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Index(a) => cmd_index(&a),
        Command::Retrieve(a) => cmd_retrieve(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
    }
}
