//! Temporal statistics pooling: per feature row, [mean, std, skewness,
//! kurtosis] over frames, population conventions, concatenated stat-major
//! (all means, then all stds, ...).

use crate::error::{Error, Result};

/// Feature matrix as rows over time: `rows[feature][frame]`.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub rows: Vec<Vec<f64>>,
}

/// Below this a row counts as constant and its shape statistics are 0.
pub const STD_FLOOR: f64 = 1e-8;

struct RowStats {
    mean: f64,
    std: f64,
    m3: f64,
    m4: f64,
}

fn row_stats(row: &[f64]) -> RowStats {
    let t = row.len() as f64;
    let mean = row.iter().sum::<f64>() / t;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in row {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    RowStats {
        mean,
        std: (m2 / t).sqrt(),
        m3: m3 / t,
        m4: m4 / t,
    }
}

pub fn stats_pool(features: &FrameFeatures) -> Result<Vec<f64>> {
    let dim = features.rows.len();
    if dim == 0 {
        return Err(Error::EmptyCollection("feature rows"));
    }
    let frames = features.rows[0].len();
    if frames < 2 {
        return Err(Error::InputTooShort {
            needed: 2,
            got: frames,
        });
    }
    let mut out = vec![0.0; 4 * dim];
    for (i, row) in features.rows.iter().enumerate() {
        let s = row_stats(row);
        out[i] = s.mean;
        out[dim + i] = s.std;
        if s.std < STD_FLOOR {
            out[2 * dim + i] = 0.0;
            out[3 * dim + i] = 0.0;
        } else {
            out[2 * dim + i] = s.m3 / (s.std * s.std * s.std);
            out[3 * dim + i] = s.m4 / (s.std * s.std * s.std * s.std);
        }
    }
    Ok(out)
}

/// d(pooled)/d(features), contracting against `grad_pooled`.
pub fn stats_pool_backward(features: &FrameFeatures, grad_pooled: &[f64]) -> FrameFeatures {
    let dim = features.rows.len();
    let mut rows = Vec::with_capacity(dim);
    for (i, row) in features.rows.iter().enumerate() {
        let t = row.len() as f64;
        let s = row_stats(row);
        let (g_mean, g_std) = (grad_pooled[i], grad_pooled[dim + i]);
        let (g_skew, g_kurt) = (grad_pooled[2 * dim + i], grad_pooled[3 * dim + i]);
        let mut g_row = vec![0.0; row.len()];
        let degenerate = s.std < STD_FLOOR;
        for (k, &x) in row.iter().enumerate() {
            let d = x - s.mean;
            let mut g = g_mean / t;
            if !degenerate {
                let d_std = d / (t * s.std);
                let d_m3 = 3.0 / t * (d * d - s.std * s.std);
                let d_m4 = 4.0 / t * (d * d * d - s.m3);
                let s3 = s.std * s.std * s.std;
                let s4 = s3 * s.std;
                g += g_std * d_std;
                g += g_skew * (d_m3 / s3 - 3.0 * s.m3 / s4 * d_std);
                g += g_kurt * (d_m4 / s4 - 4.0 * s.m4 / (s4 * s.std) * d_std);
            }
            g_row[k] = g;
        }
        rows.push(g_row);
    }
    FrameFeatures { rows }
}

/// L2-normalise, failing on near-zero vectors.
pub fn normalise(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateEmbedding("zero pooled feature vector"));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// Pull a cotangent on the unit vector back to the raw vector.
pub fn normalise_backward(z: &[f64], norm: f64, grad_z: &[f64]) -> Vec<f64> {
    let dot: f64 = grad_z.iter().zip(z).map(|(g, zi)| g * zi).sum();
    grad_z
        .iter()
        .zip(z)
        .map(|(g, zi)| (g - dot * zi) / norm)
        .collect()
}
