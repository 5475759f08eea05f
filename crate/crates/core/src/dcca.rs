//! Deep CCA with the category-combined cross-covariance.
//!
//! The objective is the sum of the top-`k` singular values of
//! `T = Cxx^{-1/2} Cxy Cyy^{-1/2}` computed on sub-network outputs, which is
//! the optimum of `tr(Wxᵀ Cxy Wy)` under the whitening constraints. Because
//! `Cxy = H̄x M H̄yᵀ` for a fixed symmetric sample-weight matrix `M`, the
//! gradient keeps the familiar deep-CCA form with `M` in place of
//! `I/(n-1)`:
//!
//! ```text
//! ∂f/∂H̄x = 2/(n-1) ∇xx H̄x + ∇xy H̄y M
//! ∇xy    = Cxx^{-1/2} U Vᵀ Cyy^{-1/2}
//! ∇xx    = -½ Cxx^{-1/2} U D Uᵀ Cxx^{-1/2}
//! ```
//!
//! and the gradient with respect to the raw outputs is that matrix with its
//! row means removed (the adjoint of centering).

use log::warn;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cca::{self, CcaOptions, GroupIndex, LinearCcaModel};
use crate::config::TrainConfig;
use crate::dataio::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::Side;
use crate::neural::{Adam, AdamConfig, MlpNetwork, Mode, Standardizer};

/// Singular values closer than this make the top-`k` sum non-differentiable.
pub const DEGENERACY_GAP: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
    /// Top-`k` singular values of `T`.
    pub singular_values: Vec<f64>,
    /// `σ_k` and `σ_{k+1}` coincide; the gradient is a subgradient.
    pub degenerate: bool,
}

/// Sum of the top-`opts.k` canonical correlations of two `k' × n` output
/// batches, and its gradient with respect to both batches.
pub fn cca_objective(hx: &Matrix, hy: &Matrix, groups: Option<&GroupIndex>, opts: &CcaOptions) -> Result<Objective> {
    let n = hx.ncols();
    if hy.ncols() != n {
        return Err(Error::dims("objective sample count", n, hy.ncols()));
    }
    let width = hx.nrows().max(hy.nrows());
    if n <= width {
        return Err(Error::Argument(format!("objective needs more than {width} samples, got {n}")));
    }
    let k = opts.k;
    if k == 0 || k > hx.nrows().min(hy.nrows()) {
        return Err(Error::Argument(format!("k = {k} exceeds output width")));
    }
    let (xc, _) = linalg::center(hx);
    let (yc, _) = linalg::center(hy);
    let cxx = linalg::regularized_covariance(&xc, opts.r)?;
    let cyy = linalg::regularized_covariance(&yc, opts.r)?;
    let weights = cca::batch_weights(n, groups, opts.beta, opts.weighting)?;
    let xm = weights.apply(&xc);
    let ym = weights.apply(&yc);
    let cxy = &xc * ym.transpose();

    let solve = cca::solve_whitened(&cxx, &cyy, &cxy, k, opts.r)?;
    let (a, b) = (&solve.cxx_isqrt, &solve.cyy_isqrt);
    let (u, s, v) = (&solve.svd.u, &solve.svd.s, &solve.svd.v);
    let value = s.sum();

    let degenerate = k < hx.nrows().min(hy.nrows()) && {
        let full = linalg::svd_topk(&(a * &cxy * b), k + 1)?;
        (full.s[k - 1] - full.s[k]).abs() < DEGENERACY_GAP
    };
    if degenerate {
        warn!("singular values {k} and {} coincide; returning a subgradient", k + 1);
    }

    let d = Matrix::from_diagonal(s);
    let au = a * u;
    let bv = b * v;
    let nabla_xy = &au * bv.transpose();
    let nabla_xx = &au * &d * au.transpose() * -0.5;
    let nabla_yy = &bv * &d * bv.transpose() * -0.5;
    let scale = 2.0 / (n as f64 - 1.0);
    let gx = &nabla_xx * &xc * scale + &nabla_xy * &ym;
    let gy = &nabla_yy * &yc * scale + nabla_xy.transpose() * &xm;

    Ok(Objective {
        value,
        grad_x: linalg::center(&gx).0,
        grad_y: linalg::center(&gy).0,
        singular_values: s.iter().copied().collect(),
        degenerate,
    })
}

/// Splits `0..n` into shuffled batches of at least `batch_size` samples
/// (a short tail is folded into the previous batch). With `stratify`, samples
/// are dealt in same-category pairs so every represented category has at
/// least two members in its batch wherever the category has two samples.
pub fn make_batches(categories: &[u32], batch_size: usize, stratify: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = categories.len();
    let mut chunks: Vec<Vec<usize>> = if stratify {
        let groups = GroupIndex::from_categories(categories);
        let mut chunks = Vec::new();
        for (_, members) in groups.iter() {
            let mut members = members.to_vec();
            members.shuffle(rng);
            let mut pairs: Vec<Vec<usize>> = members.chunks(2).map(<[usize]>::to_vec).collect();
            if pairs.len() >= 2 && pairs.last().is_some_and(|p| p.len() == 1) {
                let odd = pairs.pop().unwrap();
                pairs.last_mut().unwrap().extend(odd);
            }
            chunks.extend(pairs);
        }
        chunks
    } else {
        (0..n).map(|i| vec![i]).collect()
    };
    chunks.shuffle(rng);

    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::with_capacity(batch_size + 2);
    for chunk in chunks {
        current.extend(chunk);
        if current.len() >= batch_size {
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        match batches.last_mut() {
            Some(last) if current.len() < batch_size.div_ceil(2) => last.extend(current),
            _ => batches.push(current),
        }
    }
    batches
}

/// Two trained sub-networks and the linear CCA head fitted on their
/// full-training-set outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepCcaModel {
    pub net_x: MlpNetwork,
    pub net_y: MlpNetwork,
    pub head: LinearCcaModel,
    pub config: TrainConfig,
    /// Objective of every mini-batch iteration.
    pub history: Vec<f64>,
    /// Mean objective of every completed epoch.
    pub epoch_objectives: Vec<f64>,
}

impl DeepCcaModel {
    pub fn net(&self, side: Side) -> &MlpNetwork {
        match side {
            Side::Image => &self.net_x,
            Side::Text => &self.net_y,
        }
    }
}

fn batch_objective(hx: &Matrix, hy: &Matrix, categories: &[u32], opts: &CcaOptions) -> Result<Objective> {
    let groups = GroupIndex::from_categories(categories);
    match cca_objective(hx, hy, Some(&groups), opts) {
        Err(Error::NoCrossPairs) => {
            warn!("batch has no same-category pairs; using pairwise covariance");
            cca_objective(hx, hy, None, opts)
        }
        other => other,
    }
}

/// Alternating training: per batch, forward both sub-networks, solve CCA on
/// their outputs, back-propagate the objective gradient and take an Adam
/// step; then fit the linear head on eval-mode outputs of the full set.
pub fn train_dcca(train: &PairedDataset, config: &TrainConfig) -> Result<DeepCcaModel> {
    config.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.batch_size > n {
        return Err(Error::Config(format!("batch_size {} exceeds {n} training pairs", config.batch_size)));
    }
    if config.batch_size <= config.output_dim {
        return Err(Error::Config(format!(
            "batch_size {} must exceed output_dim {}",
            config.batch_size, config.output_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net_x = MlpNetwork::two_hidden(
        Standardizer::fit(&train.x)?,
        config.hidden_units,
        config.output_dim,
        config.dropout,
        rng.next_u64(),
    )?;
    let mut net_y = MlpNetwork::two_hidden(
        Standardizer::fit(&train.y)?,
        config.hidden_units,
        config.output_dim,
        config.dropout,
        rng.next_u64(),
    )?;
    let sizes: Vec<usize> = net_x
        .params_mut()
        .iter()
        .chain(net_y.params_mut().iter())
        .map(|p| p.len())
        .collect();
    let mut adam = Adam::new(AdamConfig::from(config), &sizes);
    let opts = config.cca_options();
    let stratify = config.beta < 1.0;

    let mut history = Vec::new();
    let mut epoch_objectives: Vec<f64> = Vec::new();
    let mut stalled = 0usize;
    for epoch in 0..config.epochs {
        let batches = make_batches(&train.categories, config.batch_size, stratify, &mut rng);
        let mut sum = 0.0;
        for idx in &batches {
            let bx = train.x.select_columns(idx);
            let by = train.y.select_columns(idx);
            let cats: Vec<u32> = idx.iter().map(|&i| train.categories[i]).collect();
            let cache_x = net_x.forward(&bx, Mode::Train, rng.next_u64())?;
            let cache_y = net_y.forward(&by, Mode::Train, rng.next_u64())?;
            let obj = batch_objective(cache_x.output(), cache_y.output(), &cats, &opts)?;
            if !obj.value.is_finite() {
                return Err(Error::Argument(format!("objective diverged at epoch {epoch}")));
            }
            history.push(obj.value);
            sum += obj.value;

            // ascend the objective
            let gx = net_x.backward(&cache_x, &(-obj.grad_x))?;
            let gy = net_y.backward(&cache_y, &(-obj.grad_y))?;
            let grads: Vec<&[f64]> = gx.slices().into_iter().chain(gy.slices()).collect();
            let params: Vec<&mut [f64]> = net_x.params_mut().into_iter().chain(net_y.params_mut()).collect();
            adam.step(params, &grads)?;
        }
        let mean = sum / batches.len() as f64;
        if let Some(&prev) = epoch_objectives.last() {
            if mean - prev < config.tol {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        epoch_objectives.push(mean);
        if stalled >= config.patience {
            break;
        }
    }

    let out_x = net_x.forward(&train.x, Mode::Eval, 0)?.into_output();
    let out_y = net_y.forward(&train.y, Mode::Eval, 0)?.into_output();
    let groups = GroupIndex::from_categories(&train.categories);
    let head = match cca::fit_cca(&out_x, &out_y, &opts, Some(&groups)) {
        Err(Error::NoCrossPairs) => {
            warn!("training set has no same-category pairs; fitting a pairwise head");
            cca::fit_cca(&out_x, &out_y, &opts, None)?
        }
        other => other?,
    };
    Ok(DeepCcaModel {
        net_x,
        net_y,
        head,
        config: config.clone(),
        history,
        epoch_objectives,
    })
}

/// Eval-mode forward through the side's network, then the head projection.
pub fn dcca_project(model: &DeepCcaModel, z: &Matrix, side: Side) -> Result<Matrix> {
    let out = model.net(side).forward(z, Mode::Eval, 0)?.into_output();
    cca::cca_transform(&model.head, &out, side)
}
