//! Generative losses, the uncertainty-weighted combination and the reward.
//!
//! Content and style losses measure the produced image against frozen
//! backbone features; the contrastive loss acts on style-space statistics
//! from the policy network. Targets (reference features, style statistics,
//! contrastive positives' sources) are detached so only the produced side
//! moves. The reward is the negative style loss evaluated off the tape.

use crate::backbone::{FeatureBackbone, CONTENT_TAP};
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Element, TensorBase};

/// Epsilon guarding the contrastive denominators.
pub const CONTRASTIVE_EPS: f64 = 1e-8;

/// Mean squared difference over every feature element, reference detached.
fn normalized_feature_mse<E: Element>(
    produced: &TensorBase<E>,
    reference: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    Ok(produced.sub(&reference.detach())?.square().mean_all())
}

/// Perceptual content loss at the configured backbone tap: the normalized
/// squared feature distance between the produced image and the reference
/// (usually the previous moving image). Batched inputs average over the
/// batch. The reference side never receives gradients.
pub fn content_loss<E: Element>(
    backbone: &FeatureBackbone<E>,
    produced: &TensorBase<E>,
    reference: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    if produced.shape() != reference.shape() {
        return Err(Error::shape("content_loss", produced.shape(), reference.shape()));
    }
    let prod_tap = backbone.extract(produced)?.swap_remove(CONTENT_TAP);
    let ref_tap = no_grad(|| backbone.extract(reference))?.swap_remove(CONTENT_TAP);
    normalized_feature_mse(&prod_tap, &ref_tap)
}

/// Detached per-tap channel statistics of style images, precomputed once so
/// repeated style losses against the same targets skip the backbone pass.
#[derive(Clone)]
pub struct StyleTargets<E: Element = f32> {
    stats: Vec<(TensorBase<E>, TensorBase<E>)>,
}

impl<E: Element> StyleTargets<E> {
    /// Rows for each sample out of unique-style targets.
    pub fn select(&self, index: &[usize]) -> Result<Self> {
        let stats = self
            .stats
            .iter()
            .map(|(m, s)| Ok((m.index_select0(index)?, s.index_select0(index)?)))
            .collect::<Result<_>>()?;
        Ok(StyleTargets { stats })
    }

    /// Stacks single-row targets into one batch, tap by tap.
    fn concat_rows(parts: &[StyleTargets<E>]) -> Result<Self> {
        let taps = parts[0].stats.len();
        let mut stats = Vec::with_capacity(taps);
        for t in 0..taps {
            let means: Vec<_> = parts.iter().map(|p| p.stats[t].0.clone()).collect();
            let stds: Vec<_> = parts.iter().map(|p| p.stats[t].1.clone()).collect();
            stats.push((
                TensorBase::concat(0, &means)?,
                TensorBase::concat(0, &stds)?,
            ));
        }
        Ok(StyleTargets { stats })
    }
}

/// Memoizes [`style_targets`] rows by image content. The backbone is frozen,
/// so the statistics for a given style image never change within a run; a
/// training loop cycling through a modest style set recomputes nothing.
pub struct StyleTargetCache<E: Element = f32> {
    rows: Vec<(TensorBase<E>, StyleTargets<E>)>,
}

impl<E: Element> StyleTargetCache<E> {
    const CAPACITY: usize = 32;

    pub fn new() -> Self {
        StyleTargetCache { rows: Vec::new() }
    }

    /// Per-row targets for a `[N,3,H,W]` batch, computing only rows whose
    /// image bytes are not cached yet. Identical to [`style_targets`] on the
    /// same batch: channel statistics are sample-local.
    pub fn targets(
        &mut self,
        backbone: &FeatureBackbone<E>,
        styles: &TensorBase<E>,
    ) -> Result<StyleTargets<E>> {
        let n = styles.shape()[0];
        if n == 0 {
            return Err(Error::bad_shape("style_targets", styles.shape(), "empty batch"));
        }
        if n == 1 {
            return self.row(backbone, styles);
        }
        let parts = (0..n)
            .map(|i| self.row(backbone, &styles.index_select0(&[i])?))
            .collect::<Result<Vec<_>>>()?;
        StyleTargets::concat_rows(&parts)
    }

    fn row(
        &mut self,
        backbone: &FeatureBackbone<E>,
        style: &TensorBase<E>,
    ) -> Result<StyleTargets<E>> {
        let hit = self
            .rows
            .iter()
            .find(|(k, _)| k.shape() == style.shape() && *k.data() == *style.data());
        if let Some((_, t)) = hit {
            return Ok(t.clone());
        }
        let t = style_targets(backbone, style)?;
        if self.rows.len() == Self::CAPACITY {
            self.rows.remove(0);
        }
        self.rows.push((style.detach(), t.clone()));
        Ok(t)
    }
}

impl<E: Element> Default for StyleTargetCache<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Computes the detached (mean, std) statistics of every backbone tap.
pub fn style_targets<E: Element>(
    backbone: &FeatureBackbone<E>,
    styles: &TensorBase<E>,
) -> Result<StyleTargets<E>> {
    let stats = no_grad(|| {
        backbone
            .extract(styles)?
            .iter()
            .map(|tap| tap.channel_stats())
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(StyleTargets { stats })
}

/// Style loss against precomputed targets whose rows align with the batch:
/// the squared distances of per-channel means and stds, summed over taps and
/// channels, averaged over the batch.
pub fn style_loss_from_targets<E: Element>(
    backbone: &FeatureBackbone<E>,
    produced: &TensorBase<E>,
    targets: &StyleTargets<E>,
) -> Result<TensorBase<E>> {
    let n = produced.shape()[0];
    let taps = backbone.extract(produced)?;
    if taps.len() != targets.stats.len() {
        return Err(Error::bad_shape(
            "style_loss",
            produced.shape(),
            "target tap count mismatch",
        ));
    }
    let mut total = TensorBase::zeros(&[n]);
    for (tap, (t_mean, t_std)) in taps.iter().zip(&targets.stats) {
        let (mean, std) = tap.channel_stats()?;
        let dm = mean.sub(&t_mean.detach())?.square().reduce_sum(&[1], false)?;
        let ds = std.sub(&t_std.detach())?.square().reduce_sum(&[1], false)?;
        total = total.add(&dm)?.add(&ds)?;
    }
    Ok(total.mean_all())
}

/// Style loss between a produced batch and a style batch of the same size.
/// Spatial sizes may differ; the statistics are size-independent.
pub fn style_loss<E: Element>(
    backbone: &FeatureBackbone<E>,
    produced: &TensorBase<E>,
    style: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    if produced.shape()[0] != style.shape()[0] {
        return Err(Error::shape("style_loss", produced.shape(), style.shape()));
    }
    let targets = style_targets(backbone, style)?;
    style_loss_from_targets(backbone, produced, &targets)
}

/// The environment reward: exactly the negative style loss, computed with
/// gradient recording off.
pub fn reward<E: Element>(
    backbone: &FeatureBackbone<E>,
    produced: &TensorBase<E>,
    style: &TensorBase<E>,
) -> Result<E> {
    let loss = no_grad(|| style_loss(backbone, produced, style))?;
    Ok(-loss.item())
}

/// Hierarchical contrastive loss over style-space features. Each slice entry
/// is one feature level shaped [N, D]; row i of `moving_feats` is the anchor
/// whose positive is row i of `style_feats` and whose negatives are every
/// other row. Levels are summed.
pub fn contrastive_loss<E: Element>(
    moving_feats: &[TensorBase<E>],
    style_feats: &[TensorBase<E>],
) -> Result<TensorBase<E>> {
    if moving_feats.len() != style_feats.len() || moving_feats.is_empty() {
        return Err(Error::Domain {
            op: "contrastive_loss",
            detail: "need matching non-empty feature level lists".into(),
        });
    }
    let n = moving_feats[0].shape()[0];
    if n < 2 {
        return Err(Error::Domain {
            op: "contrastive_loss",
            detail: "contrastive loss requires batch >= 2".into(),
        });
    }
    let mut diag = vec![E::zero(); n * n];
    let mut off = vec![E::one(); n * n];
    for i in 0..n {
        diag[i * n + i] = E::one();
        off[i * n + i] = E::zero();
    }
    let diag = TensorBase::from_vec(&[n, n], diag)?;
    let off = TensorBase::from_vec(&[n, n], off)?;

    let mut total = TensorBase::zeros(&[1]);
    for (m, s) in moving_feats.iter().zip(style_feats) {
        if m.shape() != s.shape() || m.shape().len() != 2 || m.shape()[0] != n {
            return Err(Error::shape("contrastive_loss", m.shape(), s.shape()));
        }
        let d = m.shape()[1];
        let pair = m
            .reshape(&[n, 1, d])?
            .sub(&s.reshape(&[1, n, d])?)?
            .square()
            .reduce_sum(&[2], false)?;
        let num = pair.mul(&diag)?.reduce_sum(&[1], false)?;
        let den = pair.mul(&off)?.reduce_sum(&[1], false)?;
        let ratio = num.div(&den.add_scalar(E::from_f64(CONTRASTIVE_EPS)))?;
        total = total.add(&ratio.reduce_sum(&[0], false)?)?;
    }
    Ok(total)
}

/// Learnable log-variances s_i = log σ_i² for the three generative losses.
pub struct UncertaintyWeights<E: Element = f32> {
    pub s1: TensorBase<E>,
    pub s2: TensorBase<E>,
    pub s3: TensorBase<E>,
}

impl<E: Element> UncertaintyWeights<E> {
    pub fn new() -> Self {
        UncertaintyWeights {
            s1: TensorBase::leaf_grad(&[1], vec![E::zero()]),
            s2: TensorBase::leaf_grad(&[1], vec![E::zero()]),
            s3: TensorBase::leaf_grad(&[1], vec![E::zero()]),
        }
    }

    pub fn params(&self) -> Vec<TensorBase<E>> {
        vec![self.s1.clone(), self.s2.clone(), self.s3.clone()]
    }

    /// Current effective weights (λ_c, λ_s, λ_ct) = exp(−s_i).
    pub fn lambdas(&self) -> (E, E, E) {
        (
            (-self.s1.item()).exp(),
            (-self.s2.item()).exp(),
            (-self.s3.item()).exp(),
        )
    }
}

impl<E: Element> Default for UncertaintyWeights<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// One evaluated generative objective with its components still on the tape.
#[derive(Debug)]
pub struct LossBreakdown<E: Element = f32> {
    pub content: TensorBase<E>,
    pub style: TensorBase<E>,
    pub contrastive: TensorBase<E>,
    pub weighted_total: TensorBase<E>,
    pub weights_snapshot: (E, E, E),
}

fn check_finite<E: Element>(name: &'static str, value: &TensorBase<E>) -> Result<()> {
    let v = value.item().into_f64();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("{name} loss is not finite ({v})")));
    }
    Ok(())
}

/// Combines the three losses with homoscedastic-uncertainty weighting:
/// L = e^{−s1}·L_CO + e^{−s2}·L_ST + e^{−s3}·L_CT + ½(s1+s2+s3).
/// Gradients flow into the s_i and through the component losses.
pub fn final_loss<E: Element>(
    weights: &UncertaintyWeights<E>,
    content: &TensorBase<E>,
    style: &TensorBase<E>,
    contrastive: &TensorBase<E>,
) -> Result<LossBreakdown<E>> {
    check_finite("content", content)?;
    check_finite("style", style)?;
    check_finite("contrastive", contrastive)?;
    let half = E::from_f64(0.5);
    let weighted = weights
        .s1
        .neg()
        .exp()
        .mul(content)?
        .add(&weights.s2.neg().exp().mul(style)?)?
        .add(&weights.s3.neg().exp().mul(contrastive)?)?;
    let regularizer = weights
        .s1
        .add(&weights.s2)?
        .add(&weights.s3)?
        .mul_scalar(half);
    let weighted_total = weighted.add(&regularizer)?;
    Ok(LossBreakdown {
        content: content.clone(),
        style: style.clone(),
        contrastive: contrastive.clone(),
        weighted_total,
        weights_snapshot: weights.lambdas(),
    })
}

pub(crate) fn gradcheck_cases() -> Vec<crate::gradcheck::NamedComposite> {
    use crate::gradcheck::{check_gradients, NamedComposite};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_leaf(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> TensorBase<f64> {
        let data = (0..shape.iter().product())
            .map(|_| rng.gen_range(lo..hi))
            .collect();
        TensorBase::leaf_grad(shape, data)
    }

    vec![
        NamedComposite {
            name: "content_style_losses",
            build: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b1ec);
                let backbone = FeatureBackbone::<f64>::seeded(seed);
                let produced = rand_leaf(&mut rng, &[1, 3, 8, 8], 0.05, 0.95);
                let reference = rand_leaf(&mut rng, &[1, 3, 8, 8], 0.05, 0.95);
                let style = rand_leaf(&mut rng, &[1, 3, 8, 8], 0.05, 0.95);
                check_gradients(
                    &[produced],
                    &move |xs| {
                        let c = content_loss(&backbone, &xs[0], &reference)?;
                        let s = style_loss(&backbone, &xs[0], &style)?;
                        c.add(&s)
                    },
                    32,
                )
            }),
        },
        NamedComposite {
            name: "contrastive_loss",
            build: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
                let m1 = rand_leaf(&mut rng, &[3, 4], -1.0, 1.0);
                let s1 = rand_leaf(&mut rng, &[3, 4], -1.0, 1.0);
                let m2 = rand_leaf(&mut rng, &[3, 6], -1.0, 1.0);
                let s2 = rand_leaf(&mut rng, &[3, 6], -1.0, 1.0);
                check_gradients(
                    &[m1, s1, m2, s2],
                    &move |xs| {
                        contrastive_loss(
                            &[xs[0].clone(), xs[2].clone()],
                            &[xs[1].clone(), xs[3].clone()],
                        )
                    },
                    32,
                )
            }),
        },
        NamedComposite {
            name: "uncertainty_weighting",
            build: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3a11);
                let s1 = rand_leaf(&mut rng, &[1], -1.0, 1.0);
                let s2 = rand_leaf(&mut rng, &[1], -1.0, 1.0);
                let s3 = rand_leaf(&mut rng, &[1], -1.0, 1.0);
                let lc = rand_leaf(&mut rng, &[1], 0.1, 2.0);
                let ls = rand_leaf(&mut rng, &[1], 0.1, 2.0);
                let lt = rand_leaf(&mut rng, &[1], 0.1, 2.0);
                check_gradients(
                    &[s1, s2, s3, lc, ls, lt],
                    &move |xs| {
                        let w = UncertaintyWeights {
                            s1: xs[0].clone(),
                            s2: xs[1].clone(),
                            s3: xs[2].clone(),
                        };
                        Ok(final_loss(&w, &xs[3], &xs[4], &xs[5])?.weighted_total)
                    },
                    6,
                )
            }),
        },
    ]
}
