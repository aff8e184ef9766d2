//! The alternating co-training loop: one discriminator phase, one generator
//! phase, Adam updates, generator EMA, deterministic RNG streams, periodic
//! evaluation, and bit-exact checkpointing.
//!
//! The discriminator phase minimizes L_D1 + (L_D2 + λ·L_wd) + L_D3 over the
//! enabled branches; the base discriminator's adversarial term enters the
//! joint objective once and its weights are shared by both compositions.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::{self, Dataset, DatasetKind, PatternFamily};
use crate::io;
use crate::losses::{self, GenLossMode, LossError};
use crate::metrics::{self, FeatureSpec, OverfitGap, ScoreHistogram};
use crate::nets::{Activation, EmaShadow, MlpSpec, NetworkParams};
use crate::spectral::{
    build_filter_bank, reject_and_reconstruct, sample_rejection_mask, FilterBank, Image,
    RejectionMask, SpectralError,
};
use crate::tensor::{Tensor, TensorError};

/// Seed of the fixed random projection used as proxy-FID features on images.
const FEATURE_SEED: u64 = 314159;
const FEATURE_DIM: usize = 32;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}; last good checkpoint: {}",
            last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    NonFiniteLoss {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("non-finite gradient in parameter `{param}` at step {step}")]
    NonFiniteGrad { param: String, step: u64 },
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Data(#[from] data::DataError),
}

type Result<T> = std::result::Result<T, TrainerError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainerError + '_ {
    move |source| TrainerError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ── configuration ───────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Mixture2d {
        modes: usize,
        train: usize,
        holdout: usize,
    },
    TinyImages {
        family: PatternFamily,
        size: usize,
        train: usize,
        holdout: usize,
    },
    File {
        path: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenLossModeConfig {
    NonSaturating,
    Saturating,
}

impl From<GenLossModeConfig> for GenLossMode {
    fn from(m: GenLossModeConfig) -> GenLossMode {
        match m {
            GenLossModeConfig::NonSaturating => GenLossMode::NonSaturating,
            GenLossModeConfig::Saturating => GenLossMode::Saturating,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub latent_dim: usize,
    /// Fraction of frequency bands rejected by R.
    pub p: f64,
    pub n_bands: usize,
    /// Weight of the discrepancy term.
    pub lambda: f64,
    pub ema_decay: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Discriminators in the weight-discrepancy group (≥ 2 enables pairs).
    pub k_discriminators: usize,
    pub g_loss_mode: GenLossModeConfig,
    pub eval_every: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    pub weco_on: bool,
    pub daco_on: bool,
    /// Replaces the frequency branch by mixing rejected copies into the
    /// base discriminator's batch.
    pub r_as_augmentation_only: bool,
    /// Minimize |cosine| (default) rather than signed cosine in the
    /// discrepancy; the signed variant drives weights anti-parallel instead
    /// of decorrelating them.
    pub wd_abs: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Generator samples drawn per evaluation.
    pub eval_samples: usize,
    pub data_fraction: f64,
    pub dataset: DatasetConfig,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch_size: 16,
            latent_dim: 8,
            p: 0.2,
            n_bands: 64,
            lambda: 1.0,
            ema_decay: 0.999,
            lr_g: 2e-3,
            lr_d: 2e-3,
            k_discriminators: 2,
            g_loss_mode: GenLossModeConfig::NonSaturating,
            eval_every: 50,
            checkpoint_every: 0,
            weco_on: true,
            daco_on: true,
            r_as_augmentation_only: false,
            wd_abs: true,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            eval_samples: 256,
            data_fraction: 1.0,
            dataset: DatasetConfig::Mixture2d {
                modes: 8,
                train: 32,
                holdout: 256,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TrainerError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.p) {
            return fail(format!("p must lie in [0, 1], got {}", self.p));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.latent_dim == 0 || self.n_bands == 0 || self.eval_every == 0 {
            return fail("latent_dim, n_bands and eval_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return fail(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if self.k_discriminators < 2 {
            return fail(format!(
                "k_discriminators must be >= 2, got {}",
                self.k_discriminators
            ));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return fail(format!(
                "data_fraction must lie in (0, 1], got {}",
                self.data_fraction
            ));
        }
        if self.r_as_augmentation_only && self.daco_on {
            return fail("r_as_augmentation_only replaces the frequency branch; set daco_on=false".into());
        }
        Ok(())
    }

    fn feature_spec(&self, kind: DatasetKind) -> FeatureSpec {
        match kind {
            DatasetKind::Points2d => FeatureSpec::IdentityPixels,
            DatasetKind::TinyImage => FeatureSpec::RandomProjection {
                dim: FEATURE_DIM,
                seed: FEATURE_SEED,
            },
        }
    }
}

/// Builds (and optionally subsamples) the dataset named by the config.
pub fn build_dataset(config: &TrainConfig) -> Result<Dataset> {
    let ds = match &config.dataset {
        DatasetConfig::Mixture2d {
            modes,
            train,
            holdout,
        } => data::make_mixture2d(*modes, *train, *holdout, config.seed),
        DatasetConfig::TinyImages {
            family,
            size,
            train,
            holdout,
        } => data::make_tinyimages(*family, *size, *train, *holdout, config.seed)?,
        DatasetConfig::File { path } => data::load(Path::new(path))?,
    };
    if config.data_fraction < 1.0 {
        Ok(data::subsample(&ds, config.data_fraction, config.seed)?)
    } else {
        Ok(ds)
    }
}

// ── optimizer ───────────────────────────────────────────────────────────

/// Adam moments for one network, updated against the shared step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.entries.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.entries.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    /// One Adam update from the gradients currently stored on `params`.
    /// Missing gradients read as zero; a non-finite gradient aborts with the
    /// parameter named.
    pub fn apply(&mut self, params: &NetworkParams, at_step: u64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (idx, (name, tensor)) in params.entries.iter().enumerate() {
            let grad = tensor.grad_or_zeros();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainerError::NonFiniteGrad {
                    param: name.clone(),
                    step: at_step,
                });
            }
            let mut values = tensor.data();
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.set_data(values);
        }
        Ok(())
    }
}

// ── rng streams ─────────────────────────────────────────────────────────

/// Independent deterministic streams of one experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    pub data: ChaCha8Rng,
    pub latent: ChaCha8Rng,
    pub mask: ChaCha8Rng,
    pub init: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> RngStreams {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        RngStreams {
            data: stream(1),
            latent: stream(2),
            mask: stream(3),
            init: stream(4),
            eval: stream(5),
        }
    }
}

// ── train state ─────────────────────────────────────────────────────────

/// Everything one experiment mutates while training.
pub struct TrainState {
    pub config: TrainConfig,
    pub dataset: Dataset,
    pub generator: NetworkParams,
    /// Weight-discrepancy group; index 0 is the base discriminator and is
    /// always present.
    pub weco_ds: Vec<NetworkParams>,
    /// The frequency-branch discriminator, when enabled.
    pub daco_d: Option<NetworkParams>,
    pub g_adam: AdamState,
    pub weco_adams: Vec<AdamState>,
    pub daco_adam: Option<AdamState>,
    pub ema: EmaShadow,
    pub step: u64,
    pub rngs: RngStreams,
    pub bank: FilterBank,
}

/// Metric labels of the discriminators: the weight-discrepancy group is
/// d1, d2, d4, d5, …; d3 names the frequency-branch discriminator.
pub fn weco_label(index: usize) -> String {
    if index < 2 {
        format!("d{}", index + 1)
    } else {
        format!("d{}", index + 2)
    }
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<TrainState> {
        config.validate()?;
        let dataset = build_dataset(&config)?;
        Self::with_dataset(config, dataset)
    }

    /// Initializes networks from the init stream in a fixed order:
    /// generator, then the weight-discrepancy group, then the frequency
    /// discriminator.
    pub fn with_dataset(config: TrainConfig, dataset: Dataset) -> Result<TrainState> {
        config.validate()?;
        let mut rngs = RngStreams::new(config.seed);
        let sample_dim = dataset.sample_dim();
        let head = match dataset.kind {
            DatasetKind::Points2d => Activation::Linear,
            DatasetKind::TinyImage => Activation::Tanh,
        };
        let generator = NetworkParams::init(
            MlpSpec::generator(config.latent_dim, sample_dim, head),
            &mut rngs.init,
        );
        let n_weco = if config.weco_on {
            config.k_discriminators
        } else {
            1
        };
        let weco_ds: Vec<NetworkParams> = (0..n_weco)
            .map(|_| NetworkParams::init(MlpSpec::discriminator(sample_dim), &mut rngs.init))
            .collect();
        let daco_d = config
            .daco_on
            .then(|| NetworkParams::init(MlpSpec::discriminator(sample_dim), &mut rngs.init));

        let g_adam = AdamState::new(
            &generator,
            config.lr_g,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        let weco_adams = weco_ds
            .iter()
            .map(|d| {
                AdamState::new(d, config.lr_d, config.adam_beta1, config.adam_beta2, config.adam_eps)
            })
            .collect();
        let daco_adam = daco_d.as_ref().map(|d| {
            AdamState::new(d, config.lr_d, config.adam_beta1, config.adam_beta2, config.adam_eps)
        });
        let ema = EmaShadow::new(&generator, config.ema_decay);
        let (h, w, _) = dataset.image_dims();
        let bank = build_filter_bank(h, w, config.n_bands);
        Ok(TrainState {
            config,
            dataset,
            generator,
            weco_ds,
            daco_d,
            g_adam,
            weco_adams,
            daco_adam,
            ema,
            step: 0,
            rngs,
            bank,
        })
    }

    pub fn base_d(&self) -> &NetworkParams {
        &self.weco_ds[0]
    }

    fn g_mode(&self) -> GenLossMode {
        self.config.g_loss_mode.into()
    }
}

// ── batching helpers ────────────────────────────────────────────────────

fn sample_latents<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    Tensor::from_vec(vec![n, dim], (0..n * dim).map(|_| normal.sample(rng)).collect()).unwrap()
}

fn sample_masks<R: Rng>(count: usize, n_bands: usize, p: f64, rng: &mut R) -> Vec<RejectionMask> {
    (0..count)
        .map(|_| sample_rejection_mask(n_bands, p, rng))
        .collect()
}

/// Applies R row-wise to raw batch data with one fresh mask per row.
fn reject_rows(
    rows: &[f64],
    dims: (usize, usize, usize),
    bank: &FilterBank,
    masks: &[RejectionMask],
) -> Vec<f64> {
    let (h, w, c) = dims;
    let dim = h * w * c;
    let mut out = Vec::with_capacity(rows.len());
    for (row, mask) in rows.chunks(dim).zip(masks) {
        let img = Image::new(h, w, c, row.to_vec()).expect("batch row dims");
        let rejected = reject_and_reconstruct(&img, bank, mask).expect("operator dims");
        out.extend(rejected.data);
    }
    out
}

/// In-graph version: R is linear and self-adjoint, so the node's backward
/// rule applies the same per-row operator to the gradient.
fn reject_rows_tensor(
    x: &Tensor,
    dims: (usize, usize, usize),
    bank: &FilterBank,
    masks: Vec<RejectionMask>,
) -> Result<Tensor> {
    let bank = bank.clone();
    let map = std::rc::Rc::new(move |data: &[f64]| reject_rows(data, dims, &bank, &masks));
    Ok(x.self_adjoint_map(map)?)
}

fn global_grad_norm(params: &NetworkParams) -> f64 {
    let mut acc = 0.0;
    for (_, t) in &params.entries {
        for g in t.grad_or_zeros() {
            acc += g * g;
        }
    }
    acc.sqrt()
}

// ── per-step records ────────────────────────────────────────────────────

/// Scalar losses and gradient norms of one training step. Absent branches
/// are NaN.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_d1: f64,
    pub loss_d2: f64,
    pub loss_d3: f64,
    pub loss_wd: f64,
    pub loss_weco: f64,
    pub loss_daco: f64,
    pub loss_g_total: f64,
    pub grad_norm_g: f64,
    pub grad_norm_d1: f64,
    pub grad_norm_d2: f64,
    pub grad_norm_d3: f64,
}

impl StepMetrics {
    fn nan(step: u64) -> StepMetrics {
        StepMetrics {
            step,
            loss_d1: f64::NAN,
            loss_d2: f64::NAN,
            loss_d3: f64::NAN,
            loss_wd: f64::NAN,
            loss_weco: f64::NAN,
            loss_daco: f64::NAN,
            loss_g_total: f64::NAN,
            grad_norm_g: f64::NAN,
            grad_norm_d1: f64::NAN,
            grad_norm_d2: f64::NAN,
            grad_norm_d3: f64::NAN,
        }
    }
}

/// One evaluation row: the latest step losses plus score statistics,
/// histogram, over-fit gap and proxy distance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub losses: StepMetrics,
    pub score_real: f64,
    pub score_fake: f64,
    pub score_holdout: f64,
    pub proxy_fid: f64,
    pub gap: OverfitGap,
    pub histogram: ScoreHistogram,
}

// ── the training step ───────────────────────────────────────────────────

/// One discriminator phase followed by one generator phase; returns the
/// step's scalar metrics. The step counter advances by one.
pub fn train_step(state: &mut TrainState) -> Result<StepMetrics> {
    let step = state.step + 1;
    let mut rec = StepMetrics::nan(step);
    let batch = state.config.batch_size;
    let dims = state.dataset.image_dims();
    let mode = state.g_mode();

    // ---- discriminator phase ----
    let real = state.dataset.draw_batch(batch, &mut state.rngs.data);
    let z = sample_latents(batch, state.config.latent_dim, &mut state.rngs.latent);
    let fake = state.generator.forward(&z)?.detach();

    for d in &state.weco_ds {
        d.zero_grad();
    }
    if let Some(d) = &state.daco_d {
        d.zero_grad();
    }

    // base discriminator inputs, widened with rejected copies in the
    // augmentation-only ablation
    let (base_real, base_fake) = if state.config.r_as_augmentation_only {
        let masks_r = sample_masks(batch, state.config.n_bands, state.config.p, &mut state.rngs.mask);
        let masks_f = sample_masks(batch, state.config.n_bands, state.config.p, &mut state.rngs.mask);
        let mut real_wide = real.data();
        real_wide.extend(reject_rows(&real.data(), dims, &state.bank, &masks_r));
        let mut fake_wide = fake.data();
        fake_wide.extend(reject_rows(&fake.data(), dims, &state.bank, &masks_f));
        let dim = state.dataset.sample_dim();
        (
            Tensor::from_vec(vec![2 * batch, dim], real_wide).unwrap(),
            Tensor::from_vec(vec![2 * batch, dim], fake_wide).unwrap(),
        )
    } else {
        (real.clone(), fake.clone())
    };

    let mut d_total: Tensor;
    if state.config.weco_on && state.weco_ds.len() == 2 {
        let d1 = &state.weco_ds[0];
        let d2 = &state.weco_ds[1];
        let (l_d1, l_d2, l_wd, l_weco) = losses::weco_loss(
            &d1.forward(&base_real)?,
            &d1.forward(&base_fake)?,
            &d2.forward(&base_real)?,
            &d2.forward(&base_fake)?,
            &d1.flatten()?,
            &d2.flatten()?,
            state.config.lambda,
            state.config.wd_abs,
        )?;
        rec.loss_d1 = l_d1.item();
        rec.loss_d2 = l_d2.item();
        rec.loss_wd = l_wd.item();
        rec.loss_weco = l_weco.item();
        d_total = l_weco;
        if state.daco_d.is_some() {
            rec.loss_daco = rec.loss_d1; // + l_d3 below
        }
    } else if state.config.weco_on {
        // k > 2: adversarial terms plus the pairwise discrepancy
        let mut advs = Vec::new();
        for d in &state.weco_ds {
            advs.push(losses::adv_d_loss(&d.forward(&base_real)?, &d.forward(&base_fake)?)?);
        }
        let flats: Vec<Tensor> = state
            .weco_ds
            .iter()
            .map(|d| d.flatten())
            .collect::<std::result::Result<_, _>>()?;
        let pair = losses::pairwise_discrepancy(&flats, 1.0, state.config.wd_abs)?;
        rec.loss_d1 = advs[0].item();
        rec.loss_d2 = advs[1].item();
        rec.loss_wd = pair.item();
        let mut total = advs[0].clone();
        for adv in &advs[1..] {
            total = total.add(adv)?;
        }
        total = total.add(&pair.scale(state.config.lambda))?;
        rec.loss_weco = total.item();
        d_total = total;
    } else {
        let d1 = &state.weco_ds[0];
        let l_d1 = losses::adv_d_loss(&d1.forward(&base_real)?, &d1.forward(&base_fake)?)?;
        rec.loss_d1 = l_d1.item();
        d_total = l_d1;
    }

    if let Some(d3) = &state.daco_d {
        let masks_r = sample_masks(batch, state.config.n_bands, state.config.p, &mut state.rngs.mask);
        let masks_f = sample_masks(batch, state.config.n_bands, state.config.p, &mut state.rngs.mask);
        let dim = state.dataset.sample_dim();
        let real_rej = Tensor::from_vec(
            vec![batch, dim],
            reject_rows(&real.data(), dims, &state.bank, &masks_r),
        )
        .unwrap();
        let fake_rej = Tensor::from_vec(
            vec![batch, dim],
            reject_rows(&fake.data(), dims, &state.bank, &masks_f),
        )
        .unwrap();
        let l_d3 = losses::adv_d_loss(&d3.forward(&real_rej)?, &d3.forward(&fake_rej)?)?;
        rec.loss_d3 = l_d3.item();
        rec.loss_daco = rec.loss_d1 + rec.loss_d3;
        d_total = d_total.add(&l_d3)?;
    }

    if !d_total.item().is_finite() {
        return Err(TrainerError::NonFiniteLoss {
            step,
            last_checkpoint: None,
        });
    }
    d_total.backward()?;

    rec.grad_norm_d1 = global_grad_norm(&state.weco_ds[0]);
    if state.weco_ds.len() > 1 {
        rec.grad_norm_d2 = global_grad_norm(&state.weco_ds[1]);
    }
    if let Some(d3) = &state.daco_d {
        rec.grad_norm_d3 = global_grad_norm(d3);
    }
    for (d, adam) in state.weco_ds.iter().zip(&mut state.weco_adams) {
        adam.apply(d, step)?;
    }
    if let (Some(d3), Some(adam)) = (&state.daco_d, &mut state.daco_adam) {
        adam.apply(d3, step)?;
    }

    // ---- generator phase ----
    state.generator.zero_grad();
    let z2 = sample_latents(batch, state.config.latent_dim, &mut state.rngs.latent);
    let fake_g = state.generator.forward(&z2)?;

    let g_total = if state.config.r_as_augmentation_only {
        // mirror the widened batch: average the raw and rejected views
        let masks =
            sample_masks(batch, state.config.n_bands, state.config.p, &mut state.rngs.mask);
        let rejected = reject_rows_tensor(&fake_g, dims, &state.bank, masks)?;
        let raw = losses::adv_g_loss(&state.weco_ds[0].forward(&fake_g)?, mode)?;
        let rej = losses::adv_g_loss(&state.weco_ds[0].forward(&rejected)?, mode)?;
        let mut total = raw.add(&rej)?.scale(0.5);
        for d in &state.weco_ds[1..] {
            total = total.add(&losses::adv_g_loss(&d.forward(&fake_g)?, mode)?)?;
        }
        total
    } else {
        let d1_logits = state.weco_ds[0].forward(&fake_g)?;
        let mut total = losses::adv_g_loss(&d1_logits, mode)?;
        for d in &state.weco_ds[1..] {
            total = total.add(&losses::adv_g_loss(&d.forward(&fake_g)?, mode)?)?;
        }
        if let Some(d3) = &state.daco_d {
            let masks =
                sample_masks(batch, state.config.n_bands, state.config.p, &mut state.rngs.mask);
            let rejected = reject_rows_tensor(&fake_g, dims, &state.bank, masks)?;
            total = total.add(&losses::adv_g_loss(&d3.forward(&rejected)?, mode)?)?;
        }
        total
    };

    rec.loss_g_total = g_total.item();
    if !rec.loss_g_total.is_finite() {
        return Err(TrainerError::NonFiniteLoss {
            step,
            last_checkpoint: None,
        });
    }
    g_total.backward()?;
    rec.grad_norm_g = global_grad_norm(&state.generator);
    state.g_adam.apply(&state.generator, step)?;
    state.ema.update(&state.generator);

    state.step = step;
    Ok(rec)
}

// ── evaluation ──────────────────────────────────────────────────────────

/// Draws EMA-generator samples and scores every population with the base
/// discriminator. Consumes only the eval RNG stream.
pub fn evaluate(state: &mut TrainState, last: Option<StepMetrics>) -> Result<MetricsRecord> {
    let ema_g = state.ema.materialize(&state.generator.spec);
    let z = sample_latents(
        state.config.eval_samples,
        state.config.latent_dim,
        &mut state.rngs.eval,
    );
    let fake = ema_g.forward(&z)?;
    let d1 = state.base_d();

    let train = state.dataset.split_tensor(false);
    let holdout = state.dataset.split_tensor(true);
    let real_scores = d1.forward(&train)?.data();
    let holdout_scores = d1.forward(&holdout)?.data();
    let fake_scores = d1.forward(&fake)?.data();

    let gap = OverfitGap {
        train_holdout: metrics::mean(&real_scores) - metrics::mean(&holdout_scores),
        train_fake: metrics::mean(&real_scores) - metrics::mean(&fake_scores),
    };
    let histogram = metrics::score_histogram(&real_scores, &fake_scores, &holdout_scores);

    let dim = state.dataset.sample_dim();
    let fake_rows: Vec<Vec<f64>> = fake.data().chunks(dim).map(|c| c.to_vec()).collect();
    let feature_spec = state.config.feature_spec(state.dataset.kind);
    let proxy = match metrics::proxy_fid(&fake_rows, &state.dataset.holdout, feature_spec) {
        Ok(v) => v,
        Err(metrics::MetricsError::NonFinite) => f64::NAN,
        Err(e) => return Err(TrainerError::InvalidConfig(e.to_string())),
    };

    Ok(MetricsRecord {
        step: state.step,
        losses: last.unwrap_or_else(|| StepMetrics::nan(state.step)),
        score_real: metrics::mean(&real_scores),
        score_fake: metrics::mean(&fake_scores),
        score_holdout: metrics::mean(&holdout_scores),
        proxy_fid: proxy,
        gap,
        histogram,
    })
}

// ── checkpointing ───────────────────────────────────────────────────────

fn net_entry_meta(params: &NetworkParams) -> serde_json::Value {
    json!({
        "spec": params.spec,
        "params": params.entries.iter()
            .map(|(n, t)| json!({"name": n, "shape": t.shape()}))
            .collect::<Vec<_>>(),
    })
}

fn push_params(payload: &mut Vec<f64>, params: &NetworkParams) {
    for (_, t) in &params.entries {
        payload.extend(t.data());
    }
}

fn push_adam(payload: &mut Vec<f64>, adam: &AdamState) {
    for buf in adam.m.iter().chain(&adam.v) {
        payload.extend_from_slice(buf);
    }
}

/// Serializes the full training state: config, RNG streams, step counter,
/// every network, Adam moments and the EMA shadow. Little-endian f64
/// payload after a JSON header line; the round trip is bit-exact.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let adam_meta = |a: &AdamState| {
        json!({"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step})
    };
    let header = json!({
        "format": "genco-checkpoint",
        "version": 1,
        "step": state.step,
        "config": state.config,
        "rngs": state.rngs,
        "generator": net_entry_meta(&state.generator),
        "weco_ds": state.weco_ds.iter().map(net_entry_meta).collect::<Vec<_>>(),
        "daco_d": state.daco_d.as_ref().map(net_entry_meta),
        "g_adam": adam_meta(&state.g_adam),
        "weco_adams": state.weco_adams.iter().map(adam_meta).collect::<Vec<_>>(),
        "daco_adam": state.daco_adam.as_ref().map(adam_meta),
        "ema_decay": state.ema.decay,
    });
    let mut payload = Vec::new();
    push_params(&mut payload, &state.generator);
    for d in &state.weco_ds {
        push_params(&mut payload, d);
    }
    if let Some(d) = &state.daco_d {
        push_params(&mut payload, d);
    }
    push_adam(&mut payload, &state.g_adam);
    for a in &state.weco_adams {
        push_adam(&mut payload, a);
    }
    if let Some(a) = &state.daco_adam {
        push_adam(&mut payload, a);
    }
    for (_, _, vals) in &state.ema.entries {
        payload.extend_from_slice(vals);
    }
    io::write_blob(path, &header, &payload).map_err(io_err(path))
}

struct PayloadReader {
    data: Vec<f64>,
    pos: usize,
}

impl PayloadReader {
    fn take(&mut self, n: usize) -> Option<Vec<f64>> {
        if self.pos + n > self.data.len() {
            return None;
        }
        let out = self.data[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Some(out)
    }
}

fn read_net(
    meta: &serde_json::Value,
    reader: &mut PayloadReader,
) -> Option<NetworkParams> {
    let spec: MlpSpec = serde_json::from_value(meta.get("spec")?.clone()).ok()?;
    let mut entries = Vec::new();
    for p in meta.get("params")?.as_array()? {
        let name = p.get("name")?.as_str()?.to_string();
        let shape: Vec<usize> = serde_json::from_value(p.get("shape")?.clone()).ok()?;
        let len: usize = shape.iter().product();
        let values = reader.take(len)?;
        entries.push((name, Tensor::from_vec(shape, values).ok()?));
    }
    Some(NetworkParams { spec, entries })
}

fn read_adam(
    meta: &serde_json::Value,
    net: &NetworkParams,
    reader: &mut PayloadReader,
) -> Option<AdamState> {
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (_, t) in &net.entries {
        m.push(reader.take(t.len())?);
    }
    for (_, t) in &net.entries {
        v.push(reader.take(t.len())?);
    }
    Some(AdamState {
        lr: meta.get("lr")?.as_f64()?,
        beta1: meta.get("beta1")?.as_f64()?,
        beta2: meta.get("beta2")?.as_f64()?,
        eps: meta.get("eps")?.as_f64()?,
        step: meta.get("step")?.as_u64()?,
        m,
        v,
    })
}

/// Restores a checkpoint written by [`save_checkpoint`]. The dataset is
/// rebuilt from the embedded config, which is deterministic.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bad = |reason: &str| TrainerError::BadCheckpoint {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let (header, payload) = io::read_blob(path).map_err(io_err(path))?;
    if header["format"] != "genco-checkpoint" {
        return Err(bad("not a checkpoint file"));
    }
    let config: TrainConfig =
        serde_json::from_value(header["config"].clone()).map_err(|_| bad("bad config"))?;
    let rngs: RngStreams =
        serde_json::from_value(header["rngs"].clone()).map_err(|_| bad("bad rng state"))?;
    let step = header["step"].as_u64().ok_or_else(|| bad("bad step"))?;
    let dataset = build_dataset(&config)?;

    let mut reader = PayloadReader { data: payload, pos: 0 };
    let generator =
        read_net(&header["generator"], &mut reader).ok_or_else(|| bad("bad generator block"))?;
    let weco_meta = header["weco_ds"].as_array().ok_or_else(|| bad("bad weco block"))?;
    let weco_ds: Vec<NetworkParams> = weco_meta
        .iter()
        .map(|m| read_net(m, &mut reader))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("bad weco params"))?;
    let daco_d = if header["daco_d"].is_null() {
        None
    } else {
        Some(read_net(&header["daco_d"], &mut reader).ok_or_else(|| bad("bad daco params"))?)
    };
    let g_adam =
        read_adam(&header["g_adam"], &generator, &mut reader).ok_or_else(|| bad("bad g adam"))?;
    let weco_adam_meta =
        header["weco_adams"].as_array().ok_or_else(|| bad("bad weco adams"))?;
    let weco_adams: Vec<AdamState> = weco_adam_meta
        .iter()
        .zip(&weco_ds)
        .map(|(m, d)| read_adam(m, d, &mut reader))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("bad weco adam payload"))?;
    let daco_adam = match &daco_d {
        Some(d) => {
            Some(read_adam(&header["daco_adam"], d, &mut reader).ok_or_else(|| bad("bad daco adam"))?)
        }
        None => None,
    };
    let ema_decay = header["ema_decay"].as_f64().ok_or_else(|| bad("bad ema decay"))?;
    let mut ema_entries = Vec::new();
    for (name, t) in &generator.entries {
        let vals = reader.take(t.len()).ok_or_else(|| bad("bad ema payload"))?;
        ema_entries.push((name.clone(), t.shape(), vals));
    }
    if reader.pos != reader.data.len() {
        return Err(bad("trailing payload bytes"));
    }
    let (h, w, _) = dataset.image_dims();
    let bank = build_filter_bank(h, w, config.n_bands);
    Ok(TrainState {
        bank,
        ema: EmaShadow {
            decay: ema_decay,
            entries: ema_entries,
        },
        config,
        dataset,
        generator,
        weco_ds,
        daco_d,
        g_adam,
        weco_adams,
        daco_adam,
        step,
        rngs,
    })
}

// ── experiment runner ───────────────────────────────────────────────────

/// Paths and final metrics of one finished run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub histograms_csv: PathBuf,
    pub summary_json: PathBuf,
    pub checkpoint: PathBuf,
    pub final_proxy_fid: f64,
    pub final_gap: OverfitGap,
}

pub const METRICS_HEADER: &str = "step,loss_d1,loss_d2,loss_d3,loss_wd,loss_g_total,\
score_real,score_fake,score_holdout,grad_norm_g,grad_norm_d1,grad_norm_d2,grad_norm_d3,proxy_fid";

fn metrics_csv_row(r: &MetricsRecord) -> String {
    let l = &r.losses;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        l.loss_d1,
        l.loss_d2,
        l.loss_d3,
        l.loss_wd,
        l.loss_g_total,
        r.score_real,
        r.score_fake,
        r.score_holdout,
        l.grad_norm_g,
        l.grad_norm_d1,
        l.grad_norm_d2,
        l.grad_norm_d3,
        r.proxy_fid
    )
}

fn histogram_csv_rows(r: &MetricsRecord) -> String {
    let mut out = String::new();
    for (name, pop) in [
        ("real", &r.histogram.real),
        ("fake", &r.histogram.fake),
        ("holdout", &r.histogram.holdout),
    ] {
        out.push_str(&format!("{},{},{}", r.step, name, pop.underflow));
        for b in &pop.bins {
            out.push_str(&format!(",{b}"));
        }
        out.push_str(&format!(",{},{}\n", pop.overflow, pop.non_finite));
    }
    out
}

/// Runs `config.steps` training steps, evaluating on the configured cadence
/// (plus step 0 and the final step), then writes the metrics CSV, the
/// histogram CSV, a summary JSON and the final checkpoint atomically.
pub fn run_experiment(config: TrainConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut state = TrainState::new(config.clone())?;

    let mut records = vec![evaluate(&mut state, None)?];
    let mut last_checkpoint: Option<PathBuf> = None;

    for step in 1..=config.steps {
        let rec = train_step(&mut state).map_err(|e| match e {
            TrainerError::NonFiniteLoss { step, .. } => TrainerError::NonFiniteLoss {
                step,
                last_checkpoint: last_checkpoint.clone(),
            },
            other => other,
        })?;
        if step % config.eval_every == 0 || step == config.steps {
            records.push(evaluate(&mut state, Some(rec))?);
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            let path = out_dir.join(format!("checkpoint_step{step}.bin"));
            save_checkpoint(&state, &path)?;
            last_checkpoint = Some(path);
        }
    }

    let checkpoint = out_dir.join("checkpoint.bin");
    save_checkpoint(&state, &checkpoint)?;

    let metrics_csv = out_dir.join("metrics.csv");
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for r in &records {
        csv.push_str(&metrics_csv_row(r));
        csv.push('\n');
    }
    io::atomic_write(&metrics_csv, csv.as_bytes()).map_err(io_err(&metrics_csv))?;

    let histograms_csv = out_dir.join("histograms.csv");
    let mut hist = String::from("step,population,underflow");
    for b in 0..metrics::HIST_BINS {
        hist.push_str(&format!(",b{b}"));
    }
    hist.push_str(",overflow,non_finite\n");
    for r in &records {
        hist.push_str(&histogram_csv_rows(r));
    }
    io::atomic_write(&histograms_csv, hist.as_bytes()).map_err(io_err(&histograms_csv))?;

    let last = records.last().unwrap();
    let summary_json = out_dir.join("summary.json");
    let summary = json!({
        "config": state.config,
        "final": {
            "step": last.step,
            "proxy_fid": last.proxy_fid,
            "score_real": last.score_real,
            "score_fake": last.score_fake,
            "score_holdout": last.score_holdout,
            "gap_train_holdout": last.gap.train_holdout,
            "gap_train_fake": last.gap.train_fake,
            "losses": last.losses,
        },
        "wall_time_secs": started.elapsed().as_secs_f64(),
        "artifacts": {
            "metrics_csv": metrics_csv,
            "histograms_csv": histograms_csv,
            "checkpoint": checkpoint,
        },
    });
    io::atomic_write(
        &summary_json,
        serde_json::to_string_pretty(&summary).unwrap().as_bytes(),
    )
    .map_err(io_err(&summary_json))?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        metrics_csv,
        histograms_csv,
        summary_json,
        checkpoint,
        final_proxy_fid: last.proxy_fid,
        final_gap: last.gap,
    })
}
