//! Linear CCA and the category-weighted cross-covariance shared by every
//! category variant.
//!
//! The cross-covariance is built as `Hx M Hyᵀ` for a symmetric sample-weight
//! matrix `M` with block structure per category: a diagonal coefficient for
//! same-venue pairs and one off-diagonal coefficient for ordered pairs of
//! different samples in the same category. [`CrossWeights`] stores that
//! structure without materializing `M`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, TruncatedSvd, Vector};
use crate::model::Side;

/// Category id → sample indices. The lists partition `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    groups: BTreeMap<u32, Vec<usize>>,
    n: usize,
}

impl GroupIndex {
    pub fn from_categories(categories: &[u32]) -> Self {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &c) in categories.iter().enumerate() {
            groups.entry(c).or_default().push(i);
        }
        Self {
            groups,
            n: categories.len(),
        }
    }

    /// Builds an index from explicit lists, checking that they partition `0..n`.
    pub fn new(groups: BTreeMap<u32, Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (g, members) in &groups {
            if members.is_empty() {
                return Err(Error::Argument(format!("group {g} is empty")));
            }
            for &i in members {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Argument(format!(
                        "group {g}: index {i} out of range or repeated"
                    )));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("sample {i} belongs to no group")));
        }
        Ok(Self { groups, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[usize])> {
        self.groups.iter().map(|(&g, m)| (g, m.as_slice()))
    }

    /// True when at least one group holds two or more samples.
    pub fn has_cross_pairs(&self) -> bool {
        self.groups.values().any(|m| m.len() >= 2)
    }

    /// Same groups after reordering samples: new sample `i` is old sample `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let groups = self
            .groups
            .iter()
            .map(|(&g, m)| {
                let mut idx: Vec<usize> = m.iter().map(|&i| inverse[i]).collect();
                idx.sort_unstable();
                (g, idx)
            })
            .collect();
        Self { groups, n: self.n }
    }
}

/// How groups are averaged in the combined cross-covariance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupWeighting {
    /// Same-venue terms weighted by `n_g / n`, cross-venue terms by
    /// `n_g (n_g - 1) / Σ n_h (n_h - 1)`; `beta = 1` reproduces plain CCA.
    #[default]
    SizeWeighted,
    /// Every group (every group with a cross pair, for the second term)
    /// weighs the same.
    Equal,
}

/// Block coefficients of the symmetric sample-weight matrix `M`.
#[derive(Debug, Clone)]
pub struct CrossWeights {
    /// `M_ii` for every sample.
    diag: Vec<f64>,
    /// `(members, M_ij)` for `i != j` inside one group.
    blocks: Vec<(Vec<usize>, f64)>,
}

impl CrossWeights {
    /// `M = scale / n · I`.
    pub fn pairwise(n: usize, scale: f64) -> Self {
        Self {
            diag: vec![scale / n as f64; n],
            blocks: Vec::new(),
        }
    }

    /// The β-combination of same-venue and same-category/different-venue terms.
    /// `beta == 1` takes the [`pairwise`](Self::pairwise) path exactly.
    pub fn combined(
        groups: &GroupIndex,
        beta: f64,
        weighting: GroupWeighting,
        scale: f64,
    ) -> Result<Self> {
        check_beta(beta)?;
        let n = groups.len();
        if n == 0 {
            return Err(Error::DegenerateBatch(0));
        }
        if beta == 1.0 {
            return Ok(Self::pairwise(n, scale));
        }
        if !groups.has_cross_pairs() {
            return Err(Error::NoCrossPairs);
        }
        let n_groups = groups.n_groups() as f64;
        let pair_total: f64 = groups
            .iter()
            .map(|(_, m)| (m.len() * (m.len() - 1)) as f64)
            .sum();
        let n_pair_groups = groups.iter().filter(|(_, m)| m.len() >= 2).count() as f64;

        let mut diag = vec![0.0; n];
        let mut blocks = Vec::new();
        for (_, members) in groups.iter() {
            let ng = members.len() as f64;
            let (w1, w2) = match weighting {
                GroupWeighting::SizeWeighted => (ng / n as f64, ng * (ng - 1.0) / pair_total),
                GroupWeighting::Equal => (
                    1.0 / n_groups,
                    if members.len() >= 2 { 1.0 / n_pair_groups } else { 0.0 },
                ),
            };
            let d = scale * beta * w1 / ng;
            for &i in members {
                diag[i] = d;
            }
            if members.len() >= 2 {
                let off = scale * (1.0 - beta) * w2 / (ng * (ng - 1.0));
                blocks.push((members.to_vec(), off));
            }
        }
        Ok(Self { diag, blocks })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `H M` for a `d × n` matrix `H`.
    pub fn apply(&self, h: &Matrix) -> Matrix {
        debug_assert_eq!(h.ncols(), self.diag.len());
        let mut out = h.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.diag[j];
        }
        for (members, off) in &self.blocks {
            let mut sum = Vector::zeros(h.nrows());
            for &j in members {
                sum += h.column(j);
            }
            for &i in members {
                let mut col = out.column_mut(i);
                col += (&sum - h.column(i)) * *off;
            }
        }
        out
    }

    /// `Hx M Hyᵀ`.
    pub fn cross(&self, hx: &Matrix, hy: &Matrix) -> Matrix {
        hx * self.apply(hy).transpose()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Argument(format!("beta must be in [0, 1], got {beta}")))
    }
}

/// `β Σ_g w_g C¹(g) + (1-β) Σ_g w'_g C²(g)` on globally centered features,
/// where `C¹(g)` averages same-sample products and `C²(g)` averages ordered
/// different-sample products inside group `g`. At `β = 1` this is
/// `(1/n) Φx Φyᵀ`.
pub fn combined_cross_covariance(
    phi_x: &Matrix,
    phi_y: &Matrix,
    groups: &GroupIndex,
    beta: f64,
    weighting: GroupWeighting,
) -> Result<Matrix> {
    let n = phi_x.ncols();
    if phi_y.ncols() != n {
        return Err(Error::dims("cross-covariance sample count", n, phi_y.ncols()));
    }
    if groups.len() != n {
        return Err(Error::dims("group index size", n, groups.len()));
    }
    Ok(CrossWeights::combined(groups, beta, weighting, 1.0)?.cross(phi_x, phi_y))
}

/// Hyperparameters of a linear CCA solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaOptions {
    pub k: usize,
    pub r: f64,
    pub beta: f64,
    pub weighting: GroupWeighting,
}

impl Default for CcaOptions {
    fn default() -> Self {
        Self {
            k: 10,
            r: 1e-4,
            beta: 1.0,
            weighting: GroupWeighting::SizeWeighted,
        }
    }
}

/// Fitted linear CCA: centering means, canonical weights and correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCcaModel {
    pub mean_x: Vector,
    pub mean_y: Vector,
    /// `d_x × k`
    pub wx: Matrix,
    /// `d_y × k`
    pub wy: Matrix,
    /// Canonical correlations, non-increasing.
    pub rho: Vector,
    pub r: f64,
    pub beta: f64,
}

impl LinearCcaModel {
    pub fn k(&self) -> usize {
        self.rho.len()
    }

    pub fn dim(&self, side: Side) -> usize {
        match side {
            Side::Image => self.mean_x.len(),
            Side::Text => self.mean_y.len(),
        }
    }
}

/// Everything the solver derives from a set of covariances. Shared with the
/// deep objective, which needs the whitening matrices and singular vectors.
#[derive(Debug, Clone)]
pub(crate) struct WhitenedSolve {
    pub cxx_isqrt: Matrix,
    pub cyy_isqrt: Matrix,
    pub svd: TruncatedSvd,
}

pub(crate) fn solve_whitened(cxx: &Matrix, cyy: &Matrix, cxy: &Matrix, k: usize, r: f64) -> Result<WhitenedSolve> {
    let hint = if r == 0.0 { "; use r > 0" } else { "" };
    let isqrt = |c: &Matrix| {
        linalg::inv_sqrt_sym(c).map_err(|e| match e {
            Error::NotPositiveDefinite { eigenvalue, .. } => {
                Error::NotPositiveDefinite { eigenvalue, hint }
            }
            other => other,
        })
    };
    let cxx_isqrt = isqrt(cxx)?;
    let cyy_isqrt = isqrt(cyy)?;
    let t = &cxx_isqrt * cxy * &cyy_isqrt;
    let svd = linalg::svd_topk(&t, k)?;
    Ok(WhitenedSolve {
        cxx_isqrt,
        cyy_isqrt,
        svd,
    })
}

/// Sample-weight structure for a batch of `n` centered samples: unbiased
/// scaling so that `beta = 1` matches [`linalg::regularized_covariance`].
pub(crate) fn batch_weights(
    n: usize,
    groups: Option<&GroupIndex>,
    beta: f64,
    weighting: GroupWeighting,
) -> Result<CrossWeights> {
    check_beta(beta)?;
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let scale = n as f64 / (n as f64 - 1.0);
    match groups {
        Some(g) if beta < 1.0 => {
            if g.len() != n {
                return Err(Error::dims("group index size", n, g.len()));
            }
            CrossWeights::combined(g, beta, weighting, scale)
        }
        _ => Ok(CrossWeights::pairwise(n, scale)),
    }
}

/// Linear CCA on `d_x × n` and `d_y × n` views. With `groups` and `beta < 1`
/// the cross-covariance is the category-combined one.
pub fn fit_cca(
    x: &Matrix,
    y: &Matrix,
    opts: &CcaOptions,
    groups: Option<&GroupIndex>,
) -> Result<LinearCcaModel> {
    let n = x.ncols();
    if y.ncols() != n {
        return Err(Error::dims("paired sample count", n, y.ncols()));
    }
    let k = opts.k;
    if k == 0 || k > x.nrows().min(y.nrows()) {
        return Err(Error::Argument(format!(
            "k = {k} must be in 1..={}",
            x.nrows().min(y.nrows())
        )));
    }
    if n <= k {
        return Err(Error::Argument(format!("need more than k = {k} samples, got {n}")));
    }
    linalg::ensure_finite(x, "image features")?;
    linalg::ensure_finite(y, "text features")?;

    let (xc, mean_x) = linalg::center(x);
    let (yc, mean_y) = linalg::center(y);
    let cxx = linalg::regularized_covariance(&xc, opts.r)?;
    let cyy = linalg::regularized_covariance(&yc, opts.r)?;
    let weights = batch_weights(n, groups, opts.beta, opts.weighting)?;
    let cxy = weights.cross(&xc, &yc);
    let solve = solve_whitened(&cxx, &cyy, &cxy, k, opts.r)?;

    let wx = &solve.cxx_isqrt * &solve.svd.u;
    let wy = &solve.cyy_isqrt * &solve.svd.v;
    Ok(LinearCcaModel {
        mean_x,
        mean_y,
        wx,
        wy,
        rho: solve.svd.s,
        r: opts.r,
        beta: opts.beta,
    })
}

/// `Wᵀ (z - mean)` for the chosen side; `z` is `d × m`.
pub fn cca_transform(model: &LinearCcaModel, z: &Matrix, side: Side) -> Result<Matrix> {
    let (mean, w) = match side {
        Side::Image => (&model.mean_x, &model.wx),
        Side::Text => (&model.mean_y, &model.wy),
    };
    if z.nrows() != mean.len() {
        return Err(Error::dims(
            format!("{side} features for CCA projection"),
            mean.len(),
            z.nrows(),
        ));
    }
    Ok(w.transpose() * linalg::subtract_mean(z, mean))
}
