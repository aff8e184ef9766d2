//! The co-training loss stack: adversarial discriminator/generator losses,
//! the weight-discrepancy (cosine) term, their compositions, the generator
//! total, and the pairwise extension to k discriminators.
//!
//! Everything here is minimized. The adversarial parts are the negated
//! classic objective expressed in logit space through softplus, which is
//! algebraically identical but stable for large scores. Adding +cosine to a
//! discriminator loss and minimizing drives the two weight vectors apart.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("weight vector has zero norm; discrepancy is undefined")]
    DegenerateWeights,
    #[error("pairwise discrepancy needs at least 2 weight vectors, got {0}")]
    TooFewDiscriminators(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, LossError>;

/// Generator loss flavor. Non-saturating is the training default; the
/// saturating form is the textbook objective kept for reference checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenLossMode {
    NonSaturating,
    Saturating,
}

/// Per-step scalar losses as graph nodes. Entries for disabled branches are
/// absent. `l_d2` already contains its discrepancy term, so the composition
/// identities are exact sums: l_weco = l_d1 + l_d2, l_daco = l_d1 + l_d3.
pub struct LossBundle {
    pub l_d1: Tensor,
    pub l_d2: Option<Tensor>,
    pub l_d3: Option<Tensor>,
    pub l_wd: Option<Tensor>,
    pub l_weco: Option<Tensor>,
    pub l_daco: Option<Tensor>,
    pub l_g_total: Option<Tensor>,
}

/// What the discriminator step minimizes:
/// mean softplus(−s_real) + mean softplus(s_fake).
pub fn adv_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let real_term = real_logits.neg().softplus().mean();
    let fake_term = fake_logits.softplus().mean();
    Ok(real_term.add(&fake_term)?)
}

/// What the generator step minimizes.
pub fn adv_g_loss(fake_logits: &Tensor, mode: GenLossMode) -> Result<Tensor> {
    Ok(match mode {
        GenLossMode::NonSaturating => fake_logits.neg().softplus().mean(),
        // mean log(1 − σ(s)) = −mean softplus(s)
        GenLossMode::Saturating => fake_logits.softplus().mean().neg(),
    })
}

/// Cosine similarity of two flat weight vectors, differentiable w.r.t. both.
pub fn weight_discrepancy(w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
    let n1 = w1.l2_norm();
    let n2 = w2.l2_norm();
    if n1.item() == 0.0 || n2.item() == 0.0 {
        return Err(LossError::DegenerateWeights);
    }
    let dot = w1.dot(w2)?;
    Ok(dot.mul(&n1.mul(&n2)?.recip()?)?)
}

/// |cosine|; slope −1 under the rectifier mirrors the negative half.
fn abs_tensor(x: &Tensor) -> Tensor {
    x.leaky_relu(-1.0)
}

/// Weight-discrepancy co-training over one shared real/fake batch.
/// The discrepancy attaches to the second discriminator's loss only: the
/// first discriminator's weights enter the cosine as a detached anchor and
/// receive no discrepancy gradient.
/// Returns (L_D1, L_D2, L_wd, L_WeCo).
#[allow(clippy::too_many_arguments)]
pub fn weco_loss(
    d1_real: &Tensor,
    d1_fake: &Tensor,
    d2_real: &Tensor,
    d2_fake: &Tensor,
    w1: &Tensor,
    w2: &Tensor,
    lambda: f64,
    abs_cosine: bool,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let l_d1 = adv_d_loss(d1_real, d1_fake)?;
    let cos = weight_discrepancy(&w1.detach(), w2)?;
    let l_wd = if abs_cosine { abs_tensor(&cos) } else { cos };
    let l_d2 = adv_d_loss(d2_real, d2_fake)?.add(&l_wd.scale(lambda))?;
    let l_weco = l_d1.add(&l_d2)?;
    Ok((l_d1, l_d2, l_wd, l_weco))
}

/// Data-discrepancy co-training: the first discriminator sees raw views,
/// the second sees frequency-rejected views. Returns (L_D1, L_D3, L_DaCo).
pub fn daco_loss(
    d1_real: &Tensor,
    d1_fake: &Tensor,
    d3_real_rejected: &Tensor,
    d3_fake_rejected: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let l_d1 = adv_d_loss(d1_real, d1_fake)?;
    let l_d3 = adv_d_loss(d3_real_rejected, d3_fake_rejected)?;
    let l_daco = l_d1.add(&l_d3)?;
    Ok((l_d1, l_d3, l_daco))
}

/// Generator total: one adversarial term per available discriminator path.
/// The rejected path's logits must come from a graph that routes gradients
/// back through the rejection operator.
pub fn generator_total_loss(
    d1_fake: &Tensor,
    d2_fake: Option<&Tensor>,
    d3_fake_rejected: Option<&Tensor>,
    mode: GenLossMode,
) -> Result<Tensor> {
    let mut total = adv_g_loss(d1_fake, mode)?;
    if let Some(logits) = d2_fake {
        total = total.add(&adv_g_loss(logits, mode)?)?;
    }
    if let Some(logits) = d3_fake_rejected {
        total = total.add(&adv_g_loss(logits, mode)?)?;
    }
    Ok(total)
}

/// λ·Σ_{i<j} cosine(w_i, w_j) over k ≥ 2 flat weight vectors. Each pair's
/// term belongs to the higher-indexed discriminator, mirroring the two-
/// discriminator convention: the lower-indexed weights act as a detached
/// anchor, so only w_j is pushed.
pub fn pairwise_discrepancy(weights: &[Tensor], lambda: f64, abs_cosine: bool) -> Result<Tensor> {
    if weights.len() < 2 {
        return Err(LossError::TooFewDiscriminators(weights.len()));
    }
    let mut total: Option<Tensor> = None;
    for i in 0..weights.len() {
        for j in i + 1..weights.len() {
            let cos = weight_discrepancy(&weights[i].detach(), &weights[j])?;
            let term = if abs_cosine { abs_tensor(&cos) } else { cos };
            total = Some(match total {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
    }
    Ok(total.unwrap().scale(lambda))
}
