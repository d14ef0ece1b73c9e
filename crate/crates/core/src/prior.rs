//! Gaussian prior over raw parameter vectors: fitted from a preset dataset
//! with scaled-identity shrinkage, evaluated through a cached Cholesky
//! factorisation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::effects::{ParamVector, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::LAYOUT_VERSION;

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct PresetDataset {
    pub presets: Vec<ParamVector>,
    pub layout_version: String,
    pub source: String,
}

impl PresetDataset {
    pub fn new(presets: Vec<ParamVector>, source: String) -> Result<Self> {
        if presets.len() < 2 {
            return Err(Error::EmptyCollection("need at least two presets"));
        }
        Ok(Self {
            presets,
            layout_version: LAYOUT_VERSION.to_string(),
            source,
        })
    }
}

pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    pub shrinkage: f64,
}

impl GaussianPrior {
    /// Validate symmetry and positive definiteness, then cache the factor.
    pub fn from_parts(mean: Vec<f64>, cov: DMatrix<f64>, shrinkage: f64) -> Result<Self> {
        if mean.len() != PARAM_COUNT || cov.nrows() != PARAM_COUNT || cov.ncols() != PARAM_COUNT {
            return Err(Error::ParamCount {
                expected: PARAM_COUNT,
                got: mean.len(),
            });
        }
        for i in 0..PARAM_COUNT {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 {
                    return Err(Error::NonFinite("asymmetric covariance"));
                }
            }
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::SingularCovariance)?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            chol,
            shrinkage,
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != PARAM_COUNT {
            return Err(Error::ParamCount {
                expected: PARAM_COUNT,
                got: theta.len(),
            });
        }
        let d = DVector::from_row_slice(theta) - &self.mean;
        let solved = self.chol.solve(&d);
        let quad = d.dot(&solved);
        Ok(-0.5 * (PARAM_COUNT as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det() + quad))
    }

    /// Gradient of [`log_density`]: exactly zero at the mean.
    pub fn grad_log_density(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != PARAM_COUNT {
            return Err(Error::ParamCount {
                expected: PARAM_COUNT,
                got: theta.len(),
            });
        }
        let d = DVector::from_row_slice(theta) - &self.mean;
        let solved = self.chol.solve(&d);
        Ok(solved.iter().map(|v| -v).collect())
    }

    /// Draw `n` vectors, reproducible per seed.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<ParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = self.chol.l_dirty();
        (0..n)
            .map(|_| {
                let eps = DVector::from_fn(PARAM_COUNT, |_, _| -> f64 {
                    StandardNormal.sample(&mut rng)
                });
                // l_dirty's upper triangle is unspecified; use the lower part.
                let mut out = self.mean.clone();
                for i in 0..PARAM_COUNT {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += l[(i, j)] * eps[j];
                    }
                    out[i] += acc;
                }
                ParamVector::new(out.as_slice().to_vec()).expect("sampled vector is finite")
            })
            .collect()
    }
}

/// Sample mean, unbiased sample covariance, then shrinkage towards a scaled
/// identity: `(1 - lambda) S + lambda (tr S / M) I`. When the dataset is
/// perfectly degenerate (zero trace), the ridge scale falls back to 1 so a
/// positive shrinkage still yields a usable prior.
pub fn fit_gaussian(data: &PresetDataset, shrinkage: f64) -> Result<GaussianPrior> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage {shrinkage} outside [0, 1]"
        )));
    }
    if data.presets.len() < 2 {
        return Err(Error::EmptyCollection("need at least two presets"));
    }
    if data.layout_version != LAYOUT_VERSION {
        return Err(Error::LayoutVersion {
            expected: LAYOUT_VERSION.to_string(),
            got: data.layout_version.clone(),
        });
    }
    let n = data.presets.len();
    let mut mean = vec![0.0; PARAM_COUNT];
    for p in &data.presets {
        for (m, v) in mean.iter_mut().zip(p.raw()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut s = DMatrix::zeros(PARAM_COUNT, PARAM_COUNT);
    for p in &data.presets {
        let d = DVector::from_fn(PARAM_COUNT, |i, _| p.raw()[i] - mean[i]);
        s.syger(1.0 / (n as f64 - 1.0), &d, &d, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..PARAM_COUNT {
        for j in 0..i {
            s[(j, i)] = s[(i, j)];
        }
    }

    let trace = s.trace();
    let scale = if trace > 0.0 { trace / PARAM_COUNT as f64 } else { 1.0 };
    let mut cov = s * (1.0 - shrinkage);
    for i in 0..PARAM_COUNT {
        cov[(i, i)] += shrinkage * scale;
    }
    GaussianPrior::from_parts(mean, cov, shrinkage)
}
