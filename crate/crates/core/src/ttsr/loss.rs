//! Reconstruction, perceptual and Wasserstein adversarial losses, and their
//! staged combination.

use semsr_tensorad::nn::{self, gradient_penalty};
use semsr_tensorad::{Bound, Element, Graph, Tensor, Var};

use super::config::LossWeights;
use super::model::{lte_forward, perceptual_forward};
use crate::error::{param, shape, Result};

/// Training stage: reconstruction only, then the full composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Reconstruction,
    Full,
}

/// Scalar loss values of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
}

/// Mean absolute difference over every element.
pub fn loss_rec<T: Element>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    Ok(nn::l1_mean(g, sr, hr)?)
}

/// Perceptual loss from precomputed features: the frozen-extractor term plus
/// one term per texture level. Each term is a mean squared difference, so it
/// is normalized by its own element count.
pub fn loss_per_features<T: Element>(
    g: &mut Graph<T>,
    phi_sr: Var,
    phi_hr: Var,
    lte_sr: &[Var],
    t: &[Var],
) -> Result<Var> {
    if lte_sr.len() != 3 || t.len() != 3 {
        return Err(param(format!(
            "perceptual loss needs 3 texture levels, got {} and {}",
            lte_sr.len(),
            t.len()
        )));
    }
    let mut total = nn::mse(g, phi_sr, phi_hr)?;
    for (&a, &b) in lte_sr.iter().zip(t) {
        if g.shape(a) != g.shape(b) {
            return Err(shape(format!(
                "texture level {:?} vs {:?}",
                g.shape(a),
                g.shape(b)
            )));
        }
        let term = nn::mse(g, a, b)?;
        total = g.add(total, term)?;
    }
    Ok(total)
}

/// Perceptual loss of `sr` against `hr` and the transferred textures `t`
/// (finest first). `lte` binds the texture extractor, `per` the frozen
/// perceptual extractor.
pub fn loss_per<T: Element>(
    g: &mut Graph<T>,
    lte: &Bound,
    per: &Bound,
    sr: Var,
    hr: Var,
    t: &[Var],
) -> Result<Var> {
    if t.len() != 3 {
        return Err(param(format!(
            "perceptual loss needs 3 texture levels, got {}",
            t.len()
        )));
    }
    let phi_sr = perceptual_forward(g, per, sr)?;
    let phi_hr = perceptual_forward(g, per, hr)?;
    let phi_hr = g.detach(phi_hr);
    let lte_sr = lte_forward(g, lte, sr)?;
    loss_per_features(g, phi_sr, phi_hr, &lte_sr, t)
}

/// Blends real and generated batches per sample, `x̂ = ε·real + (1−ε)·fake`.
/// The result carries no gradient.
pub fn interpolate(real: &Tensor<f64>, fake: &Tensor<f64>, eps: &[f64]) -> Result<Tensor<f64>> {
    if real.shape() != fake.shape() || real.shape().first() != Some(&eps.len()) {
        return Err(shape(format!(
            "interpolating {:?} and {:?} with {} weights",
            real.shape(),
            fake.shape(),
            eps.len()
        )));
    }
    let per = real.numel() / eps.len();
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let e = eps[i / per];
            e * r + (1.0 - e) * f
        })
        .collect();
    Ok(Tensor::new(real.shape(), data)?)
}

/// Critic loss `mean D(fake) − mean D(real) + λ·penalty`, with the penalty
/// evaluated at `xhat`.
pub fn loss_adv_critic<F>(
    g: &mut Graph<f64>,
    critic: F,
    fake: Var,
    real: Var,
    xhat: Var,
    lambda: f64,
) -> Result<Var>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if g.shape(fake) != g.shape(real) || g.shape(xhat) != g.shape(real) {
        return Err(shape(format!(
            "critic batches {:?}, {:?}, {:?}",
            g.shape(fake),
            g.shape(real),
            g.shape(xhat)
        )));
    }
    let d_fake = critic(g, fake)?;
    let d_fake = nn::mean(g, d_fake);
    let d_real = critic(g, real)?;
    let d_real = nn::mean(g, d_real);
    let w = g.sub(d_fake, d_real)?;
    let gp = gradient_penalty(g, xhat, |g, x| critic(g, x).map_err(tensor_error))?;
    let gp = g.scale(gp, lambda);
    Ok(g.add(w, gp)?)
}

fn tensor_error(e: crate::Error) -> semsr_tensorad::TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => semsr_tensorad::TensorError::Invalid(other.to_string()),
    }
}

/// Generator term `−mean D(fake)`.
pub fn loss_adv_generator<F>(g: &mut Graph<f64>, critic: F, fake: Var) -> Result<Var>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let d = critic(g, fake)?;
    let m = nn::mean(g, d);
    Ok(g.scale(m, -1.0))
}

/// Weighted sum of the parts active in `stage`.
pub fn loss_total(parts: LossParts, w: &LossWeights, stage: Stage) -> f64 {
    match stage {
        Stage::Reconstruction => w.rec * parts.rec,
        Stage::Full => w.rec * parts.rec + w.per * parts.per + w.adv * parts.adv,
    }
}

/// [`loss_total`] on the tape. `per` and `adv` are ignored in the first
/// stage and may be `None` there.
pub fn loss_total_var(
    g: &mut Graph<f64>,
    rec: Var,
    per: Option<Var>,
    adv: Option<Var>,
    w: &LossWeights,
    stage: Stage,
) -> Result<Var> {
    let total = g.scale(rec, w.rec);
    if stage == Stage::Reconstruction {
        return Ok(total);
    }
    let (per, adv) = match (per, adv) {
        (Some(p), Some(a)) => (p, a),
        _ => {
            return Err(param(
                "the full stage needs perceptual and adversarial terms",
            ))
        }
    };
    let p = g.scale(per, w.per);
    let a = g.scale(adv, w.adv);
    let s = g.add(total, p)?;
    Ok(g.add(s, a)?)
}
