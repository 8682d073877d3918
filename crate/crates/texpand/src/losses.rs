//! Training loss terms: adversarial, L1 and Gram-matrix style loss.
//!
//! The generator objective is adv + lambda1 * l1 + lambda2 * style with
//! defaults lambda1 = 100, lambda2 = 1; each term can be switched off
//! independently for ablations. Gram matrices are normalized by H*W so the
//! style term is comparable across resolutions.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vgg::{FeatureExtractor, TAP_CHANNELS};

/// Probabilities are clamped to [EPS, 1 - EPS] before taking logs.
pub const EPS: f64 = 1e-7;

fn default_lambda1() -> f64 {
    100.0
}
fn default_lambda2() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_true")]
    pub enable_adv: bool,
    #[serde(default = "default_true")]
    pub enable_l1: bool,
    #[serde(default = "default_true")]
    pub enable_style: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 1.0,
            enable_adv: true,
            enable_l1: true,
            enable_style: true,
        }
    }
}

/// The five extractor taps and their fixed weights 1000 / C_i^2.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleLayerSet {
    pub weights: Vec<f64>,
}

impl Default for StyleLayerSet {
    fn default() -> Self {
        Self {
            weights: TAP_CHANNELS
                .iter()
                .map(|&c| 1000.0 / (c * c) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub adv_g: f64,
    pub adv_d: f64,
    pub l1: f64,
    pub style: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.adv_g, self.adv_d, self.l1, self.style, self.total_g]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Recompute the flag-masked total from the components.
    pub fn expected_total(&self, w: &LossWeights) -> f64 {
        let mut t = 0.0;
        if w.enable_adv {
            t += self.adv_g;
        }
        if w.enable_l1 {
            t += w.lambda1 * self.l1;
        }
        if w.enable_style {
            t += w.lambda2 * self.style;
        }
        t
    }
}

/// Gram matrix of a (C, H, W) feature map: G[i][j] = sum_p F_i F_j / (H * W).
pub fn gram_matrix(features: &Tensor) -> Result<Tensor> {
    let (c, h, w) = features.dims3()?;
    if h * w == 0 {
        return Err(Error::DimensionMismatch(
            "gram_matrix needs a non-empty feature map".to_string(),
        ));
    }
    let flat = features.reshape((c, h * w))?;
    Ok((flat.matmul(&flat.t()?)? / (h * w) as f64)?)
}

/// Weighted sum over taps of the mean squared Gram-matrix difference.
/// Inputs are canonical-range (N, 3, H, W) tensors; gradients flow into
/// `fake` but not `real`.
pub fn style_loss(
    fake: &Tensor,
    real: &Tensor,
    extractor: &FeatureExtractor,
    layers: &StyleLayerSet,
) -> Result<Tensor> {
    if fake.dims() != real.dims() {
        return Err(Error::DimensionMismatch(format!(
            "style_loss inputs {:?} vs {:?}",
            fake.dims(),
            real.dims()
        )));
    }
    let fake_taps = extractor.features(fake)?;
    let real_taps = extractor.features(&real.detach())?;
    let mut total: Option<Tensor> = None;
    for ((f, r), &weight) in fake_taps.iter().zip(&real_taps).zip(&layers.weights) {
        let gf = gram_matrix(&f.squeeze(0)?)?;
        let gr = gram_matrix(&r.squeeze(0)?)?.detach();
        let term = ((gf - gr)?.sqr()?.mean_all()? * weight)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::msg("style layer set is empty"))
}

/// Mean absolute difference over all channels and pixels.
pub fn l1_loss(fake: &Tensor, real: &Tensor) -> Result<Tensor> {
    if fake.dims() != real.dims() {
        return Err(Error::DimensionMismatch(format!(
            "l1_loss inputs {:?} vs {:?}",
            fake.dims(),
            real.dims()
        )));
    }
    Ok((fake - real)?.abs()?.mean_all()?)
}

fn clamp_probs(grid: &Tensor) -> Result<Tensor> {
    Ok(grid.clamp(EPS, 1.0 - EPS)?)
}

/// -mean log p: the real-labelled BCE half.
pub fn bce_toward_one(grid: &Tensor) -> Result<Tensor> {
    Ok(clamp_probs(grid)?.log()?.mean_all()?.neg()?)
}

/// -mean log (1 - p): the fake-labelled BCE half.
pub fn bce_toward_zero(grid: &Tensor) -> Result<Tensor> {
    let p = clamp_probs(grid)?;
    Ok((p.ones_like()? - p)?.log()?.mean_all()?.neg()?)
}

/// (loss_D, loss_G) from the two probability grids. loss_G uses the
/// non-saturating form -log D(fake).
pub fn adversarial_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let loss_d = (bce_toward_one(d_real)? + bce_toward_zero(d_fake)?)?;
    let loss_g = bce_toward_one(d_fake)?;
    Ok((loss_d, loss_g))
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
