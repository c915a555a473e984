//! Low-rank plus sparse decomposition by the inexact augmented Lagrange
//! multiplier method, and its use as an image denoiser.
//!
//! Each outer iteration solves the two proximal subproblems once: singular
//! value thresholding for the low-rank term, elementwise shrinkage for the
//! sparse term, then a multiplier update and a geometric increase of the
//! penalty scalar.

use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::matrix::{self, DenseMatrix};

/// Parameters for [`rpca_decompose`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RpcaConfig {
    /// Sparsity tradeoff. `None` uses `1 / sqrt(max(rows, cols))`.
    pub lambda: Option<f64>,
    /// Initial penalty scalar. `None` uses `1.25 / sigma_1(x)`.
    pub mu0: Option<f64>,
    /// Penalty growth factor per iteration.
    pub rho: f64,
    /// Penalty ceiling.
    pub mu_cap: f64,
    /// Relative feasibility tolerance `||x - low_rank - sparse||_F / ||x||_F`.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        RpcaConfig {
            lambda: None,
            mu0: None,
            rho: 1.5,
            mu_cap: 1e5,
            tol: 1e-7,
            max_iter: 500,
        }
    }
}

impl RpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(lambda) = self.lambda {
            if !lambda.is_finite() || lambda <= 0.0 {
                return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
            }
        }
        if let Some(mu0) = self.mu0 {
            if !mu0.is_finite() || mu0 <= 0.0 {
                return Err(Error::InvalidConfig(format!("mu0 must be positive, got {mu0}")));
            }
            if mu0 > self.mu_cap {
                return Err(Error::InvalidConfig(format!(
                    "mu0 {mu0} exceeds mu_cap {}",
                    self.mu_cap
                )));
            }
        }
        if !self.rho.is_finite() || self.rho <= 1.0 {
            return Err(Error::InvalidConfig(format!("rho must exceed 1, got {}", self.rho)));
        }
        if !self.mu_cap.is_finite() || self.mu_cap <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mu_cap must be positive, got {}",
                self.mu_cap
            )));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of [`rpca_decompose`]: `x ~ low_rank + sparse`.
#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    /// Outer iterations performed.
    pub iterations: usize,
    pub converged: bool,
    /// Relative feasibility residual at exit.
    pub residual: f64,
}

/// One outer iteration, reported to the observer of
/// [`rpca_decompose_with`] before the multiplier and penalty updates.
#[derive(Debug)]
pub struct RpcaStep<'a> {
    /// Iteration index, starting at 0.
    pub iteration: usize,
    /// Penalty scalar used by this iteration's subproblems.
    pub mu: f64,
    /// Effective sparsity tradeoff.
    pub lambda: f64,
    /// Input to the singular value thresholding subproblem.
    pub svt_input: &'a DenseMatrix,
    /// Low-rank iterate produced from `svt_input` at threshold `1/mu`.
    pub low_rank: &'a DenseMatrix,
    /// Input to the shrinkage subproblem.
    pub shrink_input: &'a DenseMatrix,
    /// Sparse iterate produced from `shrink_input` at threshold `lambda/mu`.
    pub sparse: &'a DenseMatrix,
    /// Relative feasibility residual after this iteration.
    pub residual: f64,
}

/// The standard tradeoff rule `1 / sqrt(max(rows, cols))`.
pub fn default_lambda(rows: usize, cols: usize) -> Result<f64> {
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(1.0 / (rows.max(cols) as f64).sqrt())
}

/// Splits `x` into a low-rank and a sparse component.
pub fn rpca_decompose(x: &DenseMatrix, config: &RpcaConfig) -> Result<RpcaResult> {
    rpca_decompose_with(x, config, |_| {})
}

/// [`rpca_decompose`] with a per-iteration observer, for diagnostics and
/// for checking the loop's invariants from the outside.
pub fn rpca_decompose_with<F>(x: &DenseMatrix, config: &RpcaConfig, mut observer: F) -> Result<RpcaResult>
where
    F: FnMut(&RpcaStep<'_>),
{
    config.validate()?;
    matrix::ensure_finite(x)?;
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }

    let x_norm = x.norm();
    if x_norm == 0.0 {
        // Residual is relative to ||x||_F, so the zero matrix short-circuits.
        return Ok(RpcaResult {
            low_rank: DenseMatrix::zeros(x.nrows(), x.ncols()),
            sparse: DenseMatrix::zeros(x.nrows(), x.ncols()),
            iterations: 0,
            converged: true,
            residual: 0.0,
        });
    }

    let lambda = match config.lambda {
        Some(l) => l,
        None => default_lambda(x.nrows(), x.ncols())?,
    };
    let mut mu = match config.mu0 {
        Some(m) => m,
        None => {
            let sigma1 = matrix::svd(x)?.s[0];
            1.25 / sigma1
        }
    };
    mu = mu.min(config.mu_cap);

    let mut low_rank = DenseMatrix::zeros(x.nrows(), x.ncols());
    let mut sparse = DenseMatrix::zeros(x.nrows(), x.ncols());
    let mut multiplier = DenseMatrix::zeros(x.nrows(), x.ncols());
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;

    for iteration in 0..config.max_iter {
        let scaled_multiplier = &multiplier / mu;
        let svt_input = x - &sparse + &scaled_multiplier;
        low_rank = matrix::svt(&svt_input, 1.0 / mu)?;
        let shrink_input = x - &low_rank + &scaled_multiplier;
        sparse = matrix::soft_threshold_matrix(&shrink_input, lambda / mu)?;

        let infeasibility = x - &low_rank - &sparse;
        residual = infeasibility.norm() / x_norm;
        iterations = iteration + 1;

        observer(&RpcaStep {
            iteration,
            mu,
            lambda,
            svt_input: &svt_input,
            low_rank: &low_rank,
            shrink_input: &shrink_input,
            sparse: &sparse,
            residual,
        });

        multiplier += mu * &infeasibility;
        mu = (config.rho * mu).min(config.mu_cap);

        if residual <= config.tol {
            converged = true;
            break;
        }
    }

    Ok(RpcaResult {
        low_rank,
        sparse,
        iterations,
        converged,
        residual,
    })
}

/// A denoised image: the low-rank component clamped back to pixel range,
/// plus the raw sparse term.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub clean: GrayImage,
    pub noise: DenseMatrix,
}

/// Runs the decomposition on a single image's pixel grid.
pub fn denoise_image(img: &GrayImage, config: &RpcaConfig) -> Result<Denoised> {
    if img.width() != img.height() {
        return Err(Error::NonSquareImage {
            width: img.width(),
            height: img.height(),
        });
    }
    let result = rpca_decompose(&img.to_matrix(), config)?;
    let clean = GrayImage::from_matrix_clamped(&result.low_rank).with_label_of(img);
    Ok(Denoised {
        clean,
        noise: result.sparse,
    })
}

/// Runs one decomposition over a batch of same-sized images, stacked as the
/// columns of a pixels-by-images matrix (the batch alternative to per-image
/// denoising). Returns the clamped clean images in input order.
pub fn denoise_stack(images: &[GrayImage], config: &RpcaConfig) -> Result<Vec<GrayImage>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width(), first.height());
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::DimensionMismatch {
                expected: format!("{w}x{h} images throughout the stack"),
                actual: format!("{}x{}", img.width(), img.height()),
            });
        }
    }
    let mut stacked = DenseMatrix::zeros(w * h, images.len());
    for (j, img) in images.iter().enumerate() {
        for (i, &p) in img.pixels().iter().enumerate() {
            stacked[(i, j)] = p;
        }
    }
    let result = rpca_decompose(&stacked, config)?;
    Ok(images
        .iter()
        .enumerate()
        .map(|(j, img)| {
            let pixels: Vec<f64> = result
                .low_rank
                .column(j)
                .iter()
                .map(|&v| v.clamp(0.0, 1.0))
                .collect();
            GrayImage::new(w, h, pixels)
                .expect("clamped pixels are in range")
                .with_label_of(img)
        })
        .collect())
}
