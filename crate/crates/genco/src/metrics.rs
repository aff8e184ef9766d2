//! Over-fitting diagnostics: discriminator score histograms over [−4, 4],
//! train-vs-holdout score gaps, and a proxy Fréchet distance between
//! Gaussians fitted to fixed features of real and generated samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::NetworkParams;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("proxy distance input contains a non-finite value")]
    NonFinite,
    #[error("need at least one sample per side, got {a} and {b}")]
    EmptySide { a: usize, b: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, MetricsError>;

pub const HIST_BINS: usize = 64;
pub const HIST_LO: f64 = -4.0;
pub const HIST_HI: f64 = 4.0;

/// Counts for one scored population.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCounts {
    pub bins: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub non_finite: u64,
}

impl PopulationCounts {
    fn tally(scores: &[f64]) -> PopulationCounts {
        let mut counts = PopulationCounts {
            bins: vec![0; HIST_BINS],
            underflow: 0,
            overflow: 0,
            non_finite: 0,
        };
        let width = (HIST_HI - HIST_LO) / HIST_BINS as f64;
        for &s in scores {
            if !s.is_finite() {
                counts.non_finite += 1;
            } else if s < HIST_LO {
                counts.underflow += 1;
            } else if s >= HIST_HI {
                counts.overflow += 1;
            } else {
                counts.bins[((s - HIST_LO) / width) as usize] += 1;
            }
        }
        counts
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.underflow + self.overflow + self.non_finite
    }
}

/// Score histograms for the three standard populations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub real: PopulationCounts,
    pub fake: PopulationCounts,
    pub holdout: PopulationCounts,
}

pub fn score_histogram(real: &[f64], fake: &[f64], holdout: &[f64]) -> ScoreHistogram {
    ScoreHistogram {
        real: PopulationCounts::tally(real),
        fake: PopulationCounts::tally(fake),
        holdout: PopulationCounts::tally(holdout),
    }
}

/// Scalar over-fitting diagnostics from mean discriminator scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitGap {
    /// mean score on training reals − mean score on held-out reals
    pub train_holdout: f64,
    /// mean score on training reals − mean score on a fresh fake batch
    pub train_fake: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in values {
        acc += v;
    }
    acc / values.len() as f64
}

/// Runs the discriminator over the three views and differences the means.
pub fn overfit_gap(
    d: &NetworkParams,
    train: &Tensor,
    holdout: &Tensor,
    fake: &Tensor,
) -> Result<OverfitGap> {
    let score = |x: &Tensor| -> Result<f64> { Ok(mean(&d.forward(x)?.data())) };
    let train_mean = score(train)?;
    Ok(OverfitGap {
        train_holdout: train_mean - score(holdout)?,
        train_fake: train_mean - score(fake)?,
    })
}

/// Feature map used before fitting the Gaussians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureSpec {
    /// Raw sample values (2-D point data).
    IdentityPixels,
    /// Fixed seeded projection onto `dim` orthonormal directions (images).
    RandomProjection { dim: usize, seed: u64 },
}

impl FeatureSpec {
    /// Maps [n, in_dim] rows to [n, out_dim] feature rows.
    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self {
            FeatureSpec::IdentityPixels => rows.to_vec(),
            FeatureSpec::RandomProjection { dim, seed } => {
                let in_dim = rows.first().map(|r| r.len()).unwrap_or(0);
                let out_dim = (*dim).min(in_dim);
                let basis = orthonormal_basis(in_dim, out_dim, *seed);
                rows.iter()
                    .map(|r| {
                        basis
                            .iter()
                            .map(|b| r.iter().zip(b).map(|(x, y)| x * y).sum())
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Gram-Schmidt over seeded Gaussian directions.
fn orthonormal_basis(in_dim: usize, out_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    while basis.len() < out_dim {
        let mut v: Vec<f64> = (0..in_dim).map(|_| normal.sample(&mut rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

/// Fréchet distance between Gaussians fitted to features of two sample
/// sets: ‖μa−μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½). Falls back to diagonal
/// covariances when either side has fewer than dim+1 samples.
pub fn proxy_fid(
    samples_a: &[Vec<f64>],
    samples_b: &[Vec<f64>],
    features: FeatureSpec,
) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(MetricsError::EmptySide {
            a: samples_a.len(),
            b: samples_b.len(),
        });
    }
    let fa = features.apply(samples_a);
    let fb = features.apply(samples_b);
    if fa.iter().chain(&fb).flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let dim = fa[0].len();
    let mu_a = column_means(&fa, dim);
    let mu_b = column_means(&fb, dim);
    let mean_term: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let diagonal_only = fa.len() < dim + 1 || fb.len() < dim + 1;
    let cov_term = if diagonal_only {
        let va = diagonal_variances(&fa, &mu_a);
        let vb = diagonal_variances(&fb, &mu_b);
        va.iter()
            .zip(&vb)
            .map(|(&x, &y)| x + y - 2.0 * (x.max(0.0) * y.max(0.0)).sqrt())
            .sum()
    } else {
        let ca = covariance(&fa, &mu_a);
        let cb = covariance(&fb, &mu_b);
        let tr_a: f64 = (0..dim).map(|i| ca[i * dim + i]).sum();
        let tr_b: f64 = (0..dim).map(|i| cb[i * dim + i]).sum();
        // tr((Σa Σb)^½) = tr((B Σa B)^½) with B = Σb^½, kept symmetric
        let b_sqrt = sqrt_psd(&cb, dim);
        let inner = sandwich(&b_sqrt, &ca, dim);
        let tr_mix: f64 = eigenvalues_psd(&inner, dim)
            .into_iter()
            .map(|l| l.max(0.0).sqrt())
            .sum();
        tr_a + tr_b - 2.0 * tr_mix
    };
    Ok((mean_term + cov_term).max(0.0))
}

fn column_means(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut mu = vec![0.0; dim];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= rows.len() as f64;
    }
    mu
}

fn diagonal_variances(rows: &[Vec<f64>], mu: &[f64]) -> Vec<f64> {
    let n = rows.len();
    let mut var = vec![0.0; mu.len()];
    if n < 2 {
        return var;
    }
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(mu) {
            *v += (x - m) * (x - m);
        }
    }
    for v in &mut var {
        *v /= (n - 1) as f64;
    }
    var
}

/// Sample covariance with Bessel's correction, row-major dim×dim.
fn covariance(rows: &[Vec<f64>], mu: &[f64]) -> Vec<f64> {
    let dim = mu.len();
    let n = rows.len();
    let mut cov = vec![0.0; dim * dim];
    for r in rows {
        for i in 0..dim {
            let di = r[i] - mu[i];
            for j in 0..dim {
                cov[i * dim + j] += di * (r[j] - mu[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    cov
}

/// B · A · B for symmetric B.
fn sandwich(b: &[f64], a: &[f64], n: usize) -> Vec<f64> {
    let ab = mat_mul(a, b, n);
    mat_mul(b, &ab, n)
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns, flattened row-major).
fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // M ← M·J then M ← Jᵀ·M ; V ← V·J
                for k in 0..n {
                    let (mp, mq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mp - s * mq;
                    m[k * n + q] = s * mp + c * mq;
                }
                for k in 0..n {
                    let (mp, mq) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mp - s * mq;
                    m[q * n + k] = s * mp + c * mq;
                }
                for k in 0..n {
                    let (vp, vq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vp - s * vq;
                    v[k * n + q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

fn eigenvalues_psd(a: &[f64], n: usize) -> Vec<f64> {
    jacobi_eigen(a, n).0
}

/// Symmetric PSD square root via eigendecomposition, eigenvalues clamped
/// at zero before the root.
fn sqrt_psd(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, v) = jacobi_eigen(a, n);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // V · diag(roots) · Vᵀ
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += v[i * n + k] * roots[k] * v[j * n + k];
            }
            out[i * n + j] = acc;
        }
    }
    out
}
