//! Gaussian-kernel CCA solved in dual form.
//!
//! Each sample is represented by its row of the doubly centered training
//! kernel; linear CCA on those `n`-dimensional representations (ridge `r` on
//! both kernel covariances) yields the dual weights. New samples are mapped
//! through their kernel vector against the retained training set with the
//! same centering.

use serde::{Deserialize, Serialize};

use crate::cca::{self, CcaOptions, GroupIndex, LinearCcaModel};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::Side;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Kernel {
    Gaussian { sigma: f64 },
    /// Plain inner product. Reduces kernel CCA to linear CCA; meant for
    /// cross-checking the solver.
    Linear,
}

impl Kernel {
    pub fn matrix(&self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        match *self {
            Kernel::Gaussian { sigma } => gaussian_kernel(a, b, sigma),
            Kernel::Linear => {
                if a.nrows() != b.nrows() {
                    return Err(Error::dims("kernel inputs", a.nrows(), b.nrows()));
                }
                Ok(a.transpose() * b)
            }
        }
    }
}

/// `K_ij = exp(-‖a_i - b_j‖² / (2σ²))` for columns `a_i` of `a`, `b_j` of `b`.
pub fn gaussian_kernel(a: &Matrix, b: &Matrix, sigma: f64) -> Result<Matrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!("sigma must be > 0, got {sigma}")));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::dims("kernel inputs", a.nrows(), b.nrows()));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(Matrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        let d2 = a.column(i).iter().zip(b.column(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        (-d2 / denom).exp()
    }))
}

/// Median of all pairwise Euclidean distances between columns.
pub fn median_pairwise_distance(z: &Matrix) -> f64 {
    let n = z.ncols();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((z.column(i) - z.column(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    }
}

/// Statistics that center a test kernel column exactly like the training kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCentering {
    /// Mean of each training-kernel row.
    pub row_means: Vector,
    pub total_mean: f64,
}

impl KernelCentering {
    pub fn fit(k: &Matrix) -> Self {
        let n = k.nrows() as f64;
        let row_means = Vector::from_iterator(k.nrows(), k.row_iter().map(|r| r.sum() / n));
        let total_mean = row_means.sum() / n;
        Self {
            row_means,
            total_mean,
        }
    }

    /// Centers `n × m` kernel columns (training points × new points).
    pub fn apply(&self, k: &Matrix) -> Matrix {
        let mut out = k.clone();
        for mut col in out.column_iter_mut() {
            let col_mean = col.mean();
            for (i, x) in col.iter_mut().enumerate() {
                *x += self.total_mean - col_mean - self.row_means[i];
            }
        }
        out
    }
}

/// Fitted kernel CCA. `head.wx` / `head.wy` are the dual weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCcaModel {
    pub x_train: Matrix,
    pub y_train: Matrix,
    pub kernel_x: Kernel,
    pub kernel_y: Kernel,
    pub centering_x: KernelCentering,
    pub centering_y: KernelCentering,
    pub head: LinearCcaModel,
}

impl KernelCcaModel {
    pub fn alpha_x(&self) -> &Matrix {
        &self.head.wx
    }

    pub fn alpha_y(&self) -> &Matrix {
        &self.head.wy
    }

    pub fn rho(&self) -> &Vector {
        &self.head.rho
    }

    fn side(&self, side: Side) -> (&Matrix, &Kernel, &KernelCentering) {
        match side {
            Side::Image => (&self.x_train, &self.kernel_x, &self.centering_x),
            Side::Text => (&self.y_train, &self.kernel_y, &self.centering_y),
        }
    }

    /// Centered kernel representation of new samples (`n × m`).
    pub fn represent(&self, z: &Matrix, side: Side) -> Result<Matrix> {
        let (train, kernel, centering) = self.side(side);
        if z.nrows() != train.nrows() {
            return Err(Error::dims(format!("{side} features for kernel projection"), train.nrows(), z.nrows()));
        }
        Ok(centering.apply(&kernel.matrix(train, z)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KccaOptions {
    pub cca: CcaOptions,
    pub kernel_x: Kernel,
    pub kernel_y: Kernel,
}

impl KccaOptions {
    /// Gaussian kernels with explicit bandwidths, or the median heuristic per side.
    pub fn gaussian(cca: CcaOptions, x: &Matrix, y: &Matrix, sigma_x: Option<f64>, sigma_y: Option<f64>) -> Self {
        Self {
            cca,
            kernel_x: Kernel::Gaussian {
                sigma: sigma_x.unwrap_or_else(|| median_pairwise_distance(x)),
            },
            kernel_y: Kernel::Gaussian {
                sigma: sigma_y.unwrap_or_else(|| median_pairwise_distance(y)),
            },
        }
    }
}

pub fn fit_kcca(x: &Matrix, y: &Matrix, opts: &KccaOptions, groups: Option<&GroupIndex>) -> Result<KernelCcaModel> {
    let n = x.ncols();
    if y.ncols() != n {
        return Err(Error::dims("paired sample count", n, y.ncols()));
    }
    if n < opts.cca.k + 1 {
        return Err(Error::Argument(format!("need at least k + 1 = {} samples, got {n}", opts.cca.k + 1)));
    }
    let kx = opts.kernel_x.matrix(x, x)?;
    let ky = opts.kernel_y.matrix(y, y)?;
    let centering_x = KernelCentering::fit(&kx);
    let centering_y = KernelCentering::fit(&ky);
    let rep_x = centering_x.apply(&kx);
    let rep_y = centering_y.apply(&ky);
    let head = cca::fit_cca(&rep_x, &rep_y, &opts.cca, groups).map_err(|e| match e {
        Error::NotPositiveDefinite { eigenvalue, .. } => Error::IllConditionedKernel { eigenvalue },
        other => other,
    })?;
    Ok(KernelCcaModel {
        x_train: x.clone(),
        y_train: y.clone(),
        kernel_x: opts.kernel_x,
        kernel_y: opts.kernel_y,
        centering_x,
        centering_y,
        head,
    })
}

pub fn kcca_project(model: &KernelCcaModel, z: &Matrix, side: Side) -> Result<Matrix> {
    let rep = model.represent(z, side)?;
    cca::cca_transform(&model.head, &rep, side)
}
