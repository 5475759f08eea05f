//! Runtime-selectable correlation methods.
//!
//! Every method is a [`CorrelationMethod`] registered under its name in a
//! [`MethodRegistry`]. The plain variants always solve with pairwise
//! cross-covariance (`beta = 1`, categories ignored); the `c-` variants use
//! the configured `beta` and the training categories.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::json;

use crate::cca::{self, GroupIndex, LinearCcaModel};
use crate::config::TrainConfig;
use crate::dataio::PairedDataset;
use crate::dcca::{self, DeepCcaModel};
use crate::error::{Error, Result};
use crate::kcca::{self, KccaOptions, Kernel, KernelCcaModel, KernelCentering};
use crate::linalg::Matrix;
use crate::model::{push_linear, read_linear, CorrelationModel, ModelFile, Side};
use crate::neural::{Layer, LayerSpec, MlpNetwork, Standardizer};

/// A named training strategy.
pub trait CorrelationMethod: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether training reads the category labels.
    fn uses_categories(&self) -> bool;

    fn fit(&self, train: &PairedDataset, config: &TrainConfig) -> Result<Box<dyn CorrelationModel>>;

    /// Rebuilds a model written by [`CorrelationModel::to_model_file`].
    fn load(&self, file: &ModelFile) -> Result<Box<dyn CorrelationModel>>;
}

/// The configuration a method actually trains with.
pub fn effective_config(config: &TrainConfig, uses_categories: bool) -> TrainConfig {
    let mut config = config.clone();
    if !uses_categories {
        config.beta = 1.0;
    }
    config
}

fn check_input(train: &PairedDataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(())
}

fn groups_for(train: &PairedDataset, uses_categories: bool) -> Option<GroupIndex> {
    uses_categories.then(|| GroupIndex::from_categories(&train.categories))
}

fn check_method(file: &ModelFile, name: &str) -> Result<()> {
    if file.method != name {
        return Err(Error::format("model file", format!("written by {:?}, not {name:?}", file.method)));
    }
    Ok(())
}

fn check_side_dim(expected: usize, z: &Matrix, side: Side) -> Result<()> {
    if z.nrows() != expected {
        return Err(Error::dims(format!("{side} feature dimension"), expected, z.nrows()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub method: &'static str,
    pub cca: LinearCcaModel,
}

impl CorrelationModel for LinearModel {
    fn method(&self) -> &str {
        self.method
    }

    fn project(&self, z: &Matrix, side: Side) -> Result<Matrix> {
        cca::cca_transform(&self.cca, z, side)
    }

    fn head(&self) -> &LinearCcaModel {
        &self.cca
    }

    fn input_dim(&self, side: Side) -> usize {
        self.cca.dim(side)
    }

    fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(self.method, json!({"r": self.cca.r, "beta": self.cca.beta}));
        push_linear(&mut file, "", &self.cca);
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub method: &'static str,
    pub kcca: KernelCcaModel,
}

impl CorrelationModel for KernelModel {
    fn method(&self) -> &str {
        self.method
    }

    fn project(&self, z: &Matrix, side: Side) -> Result<Matrix> {
        kcca::kcca_project(&self.kcca, z, side)
    }

    fn head(&self) -> &LinearCcaModel {
        &self.kcca.head
    }

    fn input_dim(&self, side: Side) -> usize {
        match side {
            Side::Image => self.kcca.x_train.nrows(),
            Side::Text => self.kcca.y_train.nrows(),
        }
    }

    fn to_model_file(&self) -> Result<ModelFile> {
        let m = &self.kcca;
        let mut file = ModelFile::new(
            self.method,
            json!({
                "r": m.head.r,
                "beta": m.head.beta,
                "kernel_x": m.kernel_x,
                "kernel_y": m.kernel_y,
                "total_mean_x": m.centering_x.total_mean,
                "total_mean_y": m.centering_y.total_mean,
            }),
        );
        file.push("x_train", m.x_train.clone());
        file.push("y_train", m.y_train.clone());
        file.push_vector("row_means_x", &m.centering_x.row_means);
        file.push_vector("row_means_y", &m.centering_y.row_means);
        push_linear(&mut file, "head_", &m.head);
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepModel {
    pub method: &'static str,
    pub dcca: DeepCcaModel,
}

fn push_network(file: &mut ModelFile, prefix: &str, net: &MlpNetwork) {
    file.push_vector(format!("{prefix}std_mean"), &net.standardizer.mean);
    file.push_vector(format!("{prefix}std_var"), &net.standardizer.var);
    for (i, layer) in net.layers.iter().enumerate() {
        file.push(format!("{prefix}w{i}"), layer.weight.clone());
        file.push_vector(format!("{prefix}b{i}"), &layer.bias);
    }
}

fn read_network(file: &ModelFile, prefix: &str, specs: &[LayerSpec]) -> Result<MlpNetwork> {
    let standardizer = Standardizer {
        mean: file.vector(&format!("{prefix}std_mean"))?,
        var: file.vector(&format!("{prefix}std_var"))?,
    };
    if standardizer.mean.len() != standardizer.var.len() {
        return Err(Error::format("model file", "standardizer shapes differ"));
    }
    let mut fan_in = standardizer.dim();
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let weight = file.block(&format!("{prefix}w{i}"))?.clone();
        let bias = file.vector(&format!("{prefix}b{i}"))?;
        if weight.shape() != (spec.units, fan_in) || bias.len() != spec.units {
            return Err(Error::format("model file", format!("layer {prefix}{i} has unexpected shape")));
        }
        fan_in = spec.units;
        layers.push(Layer {
            weight,
            bias,
            activation: spec.activation,
            dropout: spec.dropout,
        });
    }
    Ok(MlpNetwork { standardizer, layers })
}

impl CorrelationModel for DeepModel {
    fn method(&self) -> &str {
        self.method
    }

    fn project(&self, z: &Matrix, side: Side) -> Result<Matrix> {
        check_side_dim(self.input_dim(side), z, side)?;
        dcca::dcca_project(&self.dcca, z, side)
    }

    fn head(&self) -> &LinearCcaModel {
        &self.dcca.head
    }

    fn input_dim(&self, side: Side) -> usize {
        self.dcca.net(side).input_dim()
    }

    fn history(&self) -> Option<&[f64]> {
        Some(&self.dcca.history)
    }

    fn to_model_file(&self) -> Result<ModelFile> {
        let m = &self.dcca;
        let specs = |net: &MlpNetwork| net.layers.iter().map(Layer::spec).collect::<Vec<_>>();
        let mut file = ModelFile::new(
            self.method,
            json!({
                "config": m.config,
                "layers_x": specs(&m.net_x),
                "layers_y": specs(&m.net_y),
            }),
        );
        push_network(&mut file, "x_", &m.net_x);
        push_network(&mut file, "y_", &m.net_y);
        push_linear(&mut file, "head_", &m.head);
        file.push_vector("history", &m.history.clone().into());
        file.push_vector("epoch_objectives", &m.epoch_objectives.clone().into());
        Ok(file)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearMethod {
    pub categories: bool,
}

impl LinearMethod {
    fn label(&self) -> &'static str {
        if self.categories { "c-cca" } else { "cca" }
    }
}

impl CorrelationMethod for LinearMethod {
    fn name(&self) -> &'static str {
        self.label()
    }

    fn uses_categories(&self) -> bool {
        self.categories
    }

    fn fit(&self, train: &PairedDataset, config: &TrainConfig) -> Result<Box<dyn CorrelationModel>> {
        check_input(train, config)?;
        let config = effective_config(config, self.categories);
        let groups = groups_for(train, self.categories);
        let cca = cca::fit_cca(&train.x, &train.y, &config.cca_options(), groups.as_ref())?;
        Ok(Box::new(LinearModel { method: self.label(), cca }))
    }

    fn load(&self, file: &ModelFile) -> Result<Box<dyn CorrelationModel>> {
        check_method(file, self.label())?;
        let cca = read_linear(file, "", file.header_field("r")?, file.header_field("beta")?)?;
        Ok(Box::new(LinearModel { method: self.label(), cca }))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KernelMethod {
    pub categories: bool,
}

impl KernelMethod {
    fn label(&self) -> &'static str {
        if self.categories { "c-kcca" } else { "kcca" }
    }
}

impl CorrelationMethod for KernelMethod {
    fn name(&self) -> &'static str {
        self.label()
    }

    fn uses_categories(&self) -> bool {
        self.categories
    }

    fn fit(&self, train: &PairedDataset, config: &TrainConfig) -> Result<Box<dyn CorrelationModel>> {
        check_input(train, config)?;
        let config = effective_config(config, self.categories);
        let groups = groups_for(train, self.categories);
        let opts = KccaOptions::gaussian(config.cca_options(), &train.x, &train.y, config.sigma_x, config.sigma_y);
        let kcca = kcca::fit_kcca(&train.x, &train.y, &opts, groups.as_ref())?;
        Ok(Box::new(KernelModel { method: self.label(), kcca }))
    }

    fn load(&self, file: &ModelFile) -> Result<Box<dyn CorrelationModel>> {
        check_method(file, self.label())?;
        let head = read_linear(file, "head_", file.header_field("r")?, file.header_field("beta")?)?;
        let x_train = file.block("x_train")?.clone();
        let y_train = file.block("y_train")?.clone();
        let centering_x = KernelCentering {
            row_means: file.vector("row_means_x")?,
            total_mean: file.header_field("total_mean_x")?,
        };
        let centering_y = KernelCentering {
            row_means: file.vector("row_means_y")?,
            total_mean: file.header_field("total_mean_y")?,
        };
        let n = x_train.ncols();
        if y_train.ncols() != n
            || centering_x.row_means.len() != n
            || centering_y.row_means.len() != n
            || head.dim(Side::Image) != n
            || head.dim(Side::Text) != n
        {
            return Err(Error::format("model file", "inconsistent kernel model shapes"));
        }
        let kernel_x: Kernel = file.header_field("kernel_x")?;
        let kernel_y: Kernel = file.header_field("kernel_y")?;
        let kcca = KernelCcaModel {
            x_train,
            y_train,
            kernel_x,
            kernel_y,
            centering_x,
            centering_y,
            head,
        };
        Ok(Box::new(KernelModel { method: self.label(), kcca }))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DeepMethod {
    pub categories: bool,
}

impl DeepMethod {
    fn label(&self) -> &'static str {
        if self.categories { "c-dcca" } else { "dcca" }
    }
}

impl CorrelationMethod for DeepMethod {
    fn name(&self) -> &'static str {
        self.label()
    }

    fn uses_categories(&self) -> bool {
        self.categories
    }

    fn fit(&self, train: &PairedDataset, config: &TrainConfig) -> Result<Box<dyn CorrelationModel>> {
        check_input(train, config)?;
        let config = effective_config(config, self.categories);
        let dcca = dcca::train_dcca(train, &config)?;
        Ok(Box::new(DeepModel { method: self.label(), dcca }))
    }

    fn load(&self, file: &ModelFile) -> Result<Box<dyn CorrelationModel>> {
        check_method(file, self.label())?;
        let config: TrainConfig = file.header_field("config")?;
        let layers_x: Vec<LayerSpec> = file.header_field("layers_x")?;
        let layers_y: Vec<LayerSpec> = file.header_field("layers_y")?;
        let net_x = read_network(file, "x_", &layers_x)?;
        let net_y = read_network(file, "y_", &layers_y)?;
        let head = read_linear(file, "head_", config.r, config.beta)?;
        if head.dim(Side::Image) != net_x.output_dim() || head.dim(Side::Text) != net_y.output_dim() {
            return Err(Error::format("model file", "head does not match network outputs"));
        }
        let dcca = DeepCcaModel {
            net_x,
            net_y,
            head,
            config,
            history: file.vector("history")?.iter().copied().collect(),
            epoch_objectives: file.vector("epoch_objectives")?.iter().copied().collect(),
        };
        Ok(Box::new(DeepModel { method: self.label(), dcca }))
    }
}

/// Methods keyed by name.
pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Box<dyn CorrelationMethod>>,
}

impl fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.methods.keys()).finish()
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        for categories in [false, true] {
            registry.register(Box::new(LinearMethod { categories }));
            registry.register(Box::new(KernelMethod { categories }));
            registry.register(Box::new(DeepMethod { categories }));
        }
        registry
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self { methods: BTreeMap::new() }
    }

    /// Adds a method, replacing any previous one with the same name.
    pub fn register(&mut self, method: Box<dyn CorrelationMethod>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn CorrelationMethod> {
        self.methods
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.methods.keys().copied()
    }

    pub fn fit(&self, name: &str, train: &PairedDataset, config: &TrainConfig) -> Result<Box<dyn CorrelationModel>> {
        self.get(name)?.fit(train, config)
    }

    /// Loads a model file with the method recorded in it.
    pub fn load(&self, file: &ModelFile) -> Result<Box<dyn CorrelationModel>> {
        self.get(&file.method)?.load(file)
    }
}
