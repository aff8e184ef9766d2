//! Synthetic limited-data datasets: a 2-D Gaussian mixture on a circle and
//! procedural tiny grayscale images, plus subsampling for data-fraction
//! regimes and the dataset file format.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::io;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("subsample fraction {0} must lie in (0, 1]")]
    BadFraction(f64),
    #[error("subsample of {n} samples at fraction {fraction} would be empty")]
    EmptySubsample { n: usize, fraction: f64 },
    #[error("tiny image size {0} is not supported (use 8 or 16)")]
    BadImageSize(usize),
    #[error("dataset file {path}: {reason}")]
    BadFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, DataError>;

pub const MIXTURE_RADIUS: f64 = 2.0;
pub const MIXTURE_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Points2d,
    TinyImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFamily {
    Gratings,
    Blobs,
    Mixed,
}

impl std::str::FromStr for PatternFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gratings" => Ok(PatternFamily::Gratings),
            "blobs" => Ok(PatternFamily::Blobs),
            "mixed" => Ok(PatternFamily::Mixed),
            other => Err(format!("unknown pattern family `{other}`")),
        }
    }
}

/// How a dataset was produced; echoed into its file header.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub params: serde_json::Value,
}

/// Fixed-shape samples split into disjoint training and holdout sets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// Per-sample shape: `[2]` for points, `[h, w, c]` for images.
    pub sample_shape: Vec<usize>,
    pub train: Vec<Vec<f64>>,
    pub holdout: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn sample_dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Dims used by the frequency-rejection operator. Point samples are
    /// treated as 1×2 single-channel images.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        match self.kind {
            DatasetKind::Points2d => (1, 2, 1),
            DatasetKind::TinyImage => (
                self.sample_shape[0],
                self.sample_shape[1],
                self.sample_shape[2],
            ),
        }
    }

    /// Batch of training samples drawn uniformly with replacement.
    pub fn draw_batch<R: Rng>(&self, batch: usize, rng: &mut R) -> Tensor {
        let dim = self.sample_dim();
        let mut data = Vec::with_capacity(batch * dim);
        for _ in 0..batch {
            let idx = rng.gen_range(0..self.train.len());
            data.extend_from_slice(&self.train[idx]);
        }
        Tensor::from_vec(vec![batch, dim], data).unwrap()
    }

    /// All samples of one split as a [n, dim] tensor.
    pub fn split_tensor(&self, holdout: bool) -> Tensor {
        let rows = if holdout { &self.holdout } else { &self.train };
        let dim = self.sample_dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::from_vec(vec![rows.len(), dim], data).unwrap()
    }
}

/// Gaussian mixture with modes spread on a circle of radius 2, isotropic
/// std 0.05, round-robin mode assignment.
pub fn make_mixture2d(
    n_modes: usize,
    n_train: usize,
    n_holdout: usize,
    seed: u64,
) -> Dataset {
    assert!(n_modes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, MIXTURE_STD).unwrap();
    let centers: Vec<(f64, f64)> = (0..n_modes)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / n_modes as f64;
            (MIXTURE_RADIUS * angle.cos(), MIXTURE_RADIUS * angle.sin())
        })
        .collect();
    let draw = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| {
                let (cx, cy) = centers[i % n_modes];
                vec![cx + noise.sample(rng), cy + noise.sample(rng)]
            })
            .collect()
    };
    let train = draw(n_train, &mut rng);
    let holdout = draw(n_holdout, &mut rng);
    Dataset {
        kind: DatasetKind::Points2d,
        sample_shape: vec![2],
        train,
        holdout,
        provenance: Provenance {
            generator: "mixture2d".into(),
            seed,
            params: json!({"n_modes": n_modes, "n_train": n_train, "n_holdout": n_holdout}),
        },
    }
}

/// One oriented sinusoidal grating with integer frequency vector (fu, fv),
/// values in [−amp, amp].
pub fn grating_image(size: usize, fu: usize, fv: usize, phase: f64, amp: f64) -> Vec<f64> {
    let mut img = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let ang = std::f64::consts::TAU * (fu as f64 * y as f64 + fv as f64 * x as f64)
                / size as f64
                + phase;
            img.push(amp * ang.sin());
        }
    }
    img
}

fn blob_image(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n_blobs = rng.gen_range(1..=3);
    let mut img = vec![-0.2; size * size];
    for _ in 0..n_blobs {
        let cy = rng.gen_range(0.0..size as f64);
        let cx = rng.gen_range(0.0..size as f64);
        let sigma = rng.gen_range(size as f64 / 8.0..size as f64 / 4.0);
        let amp = rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img[y * size + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(-1.0, 1.0);
    }
    img
}

fn grating_sample(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let max_f = (size / 2).max(1);
    let mut fu = rng.gen_range(0..=max_f);
    let mut fv = rng.gen_range(0..=max_f);
    if fu == 0 && fv == 0 {
        fv = 1;
    }
    if fu == size / 2 && fv == size / 2 {
        fu = size / 2 - 1; // keep off the self-conjugate corner
    }
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = rng.gen_range(0.5..1.0);
    grating_image(size, fu, fv, phase, amp)
}

/// Procedural grayscale patterns in [−1, 1].
pub fn make_tinyimages(
    family: PatternFamily,
    size: usize,
    n_train: usize,
    n_holdout: usize,
    seed: u64,
) -> Result<Dataset> {
    if size != 8 && size != 16 {
        return Err(DataError::BadImageSize(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| match family {
                PatternFamily::Gratings => grating_sample(size, rng),
                PatternFamily::Blobs => blob_image(size, rng),
                PatternFamily::Mixed => {
                    if i % 2 == 0 {
                        grating_sample(size, rng)
                    } else {
                        blob_image(size, rng)
                    }
                }
            })
            .collect()
    };
    let train = draw(n_train, &mut rng);
    let holdout = draw(n_holdout, &mut rng);
    Ok(Dataset {
        kind: DatasetKind::TinyImage,
        sample_shape: vec![size, size, 1],
        train,
        holdout,
        provenance: Provenance {
            generator: "tinyimages".into(),
            seed,
            params: json!({
                "family": family, "size": size,
                "n_train": n_train, "n_holdout": n_holdout
            }),
        },
    })
}

/// Uniform without-replacement draw of round(fraction·n) training samples;
/// the holdout stays untouched.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let n = dataset.train.len();
    let keep = (fraction * n as f64).round() as usize;
    if keep == 0 {
        return Err(DataError::EmptySubsample { n, fraction });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    indices.sort_unstable();
    let mut out = dataset.clone();
    out.train = indices.iter().map(|&i| dataset.train[i].clone()).collect();
    out.provenance = Provenance {
        generator: format!("subsample({})", dataset.provenance.generator),
        seed: dataset.provenance.seed,
        params: json!({
            "base": dataset.provenance.params,
            "fraction": fraction,
            "subsample_seed": seed
        }),
    };
    Ok(out)
}

// ── file format: JSON header line + f64 LE payload ─────────────────────

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    let header = json!({
        "format": "genco-dataset",
        "version": 1,
        "kind": dataset.kind,
        "sample_shape": dataset.sample_shape,
        "n_train": dataset.train.len(),
        "n_holdout": dataset.holdout.len(),
        "provenance": dataset.provenance,
    });
    let mut payload = Vec::new();
    for s in dataset.train.iter().chain(&dataset.holdout) {
        payload.extend_from_slice(s);
    }
    io::write_blob(path, &header, &payload)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bad = |reason: &str| DataError::BadFile {
        path: path.display().to_string(),
        reason: reason.into(),
    };
    let (header, payload) = io::read_blob(path)?;
    if header["format"] != "genco-dataset" {
        return Err(bad("not a genco dataset file"));
    }
    let kind: DatasetKind =
        serde_json::from_value(header["kind"].clone()).map_err(|_| bad("bad kind"))?;
    let sample_shape: Vec<usize> =
        serde_json::from_value(header["sample_shape"].clone()).map_err(|_| bad("bad shape"))?;
    let n_train = header["n_train"].as_u64().ok_or_else(|| bad("bad n_train"))? as usize;
    let n_holdout = header["n_holdout"].as_u64().ok_or_else(|| bad("bad n_holdout"))? as usize;
    let provenance: Provenance = serde_json::from_value(header["provenance"].clone())
        .map_err(|_| bad("bad provenance"))?;
    let dim: usize = sample_shape.iter().product();
    if payload.len() != (n_train + n_holdout) * dim {
        return Err(bad("payload length does not match counts"));
    }
    let rows: Vec<Vec<f64>> = payload.chunks_exact(dim).map(|c| c.to_vec()).collect();
    Ok(Dataset {
        kind,
        sample_shape,
        train: rows[..n_train].to_vec(),
        holdout: rows[n_train..].to_vec(),
        provenance,
    })
}
