//! The learned networks: actor (unified policy), builder and critic.
//!
//! One encoder serves both images in a state. The moving image takes the
//! general path (two stride-2 stages plus residual blocks); the style image
//! additionally passes through two style-space convs whose per-channel
//! statistics become the style signals that condition the action heads and
//! the builder's decoder stages.
//!
//! Every forward here is written against batched [N,...] tensors; the
//! single-[`State`] entry points wrap them with N = 1. Batched style inputs
//! are deduplicated by the caller: `style_index` maps each sample to a row
//! of the unique style batch, so shared style images are encoded once and
//! gradients still accumulate through the shared subgraph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::tensor::{Element, TensorBase};

/// Action channels produced by the policy.
pub const ACTION_CHANNELS: usize = 16;
/// Encoder downsampling factor; action maps live at (H/4, W/4).
pub const ACTION_DOWNSCALE: usize = 4;
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Epsilon inside the tanh change-of-variables log term.
pub const SQUASH_EPS: f64 = 1e-6;

const SHALLOW_CHANNELS: usize = 32;
const DEEP_CHANNELS: usize = 64;

/// One observation: the pair of moving and style image, both [1,3,H,W] with
/// pixels in [0,1]. At t = 0 the moving image is the content image itself.
#[derive(Clone, Debug)]
pub struct State<E: Element = f32> {
    pub moving: TensorBase<E>,
    pub style: TensorBase<E>,
}

impl<E: Element> State<E> {
    pub fn new(moving: TensorBase<E>, style: TensorBase<E>) -> Result<Self> {
        if moving.shape() != style.shape() {
            return Err(Error::shape("state", moving.shape(), style.shape()));
        }
        if moving.shape().len() != 4 || moving.shape()[0] != 1 || moving.shape()[1] != 3 {
            return Err(Error::bad_shape(
                "state",
                moving.shape(),
                "images must be [1,3,H,W]",
            ));
        }
        Ok(State { moving, style })
    }

    pub fn height(&self) -> usize {
        self.moving.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.moving.shape()[3]
    }
}

/// Per-channel statistics of the two style spaces; means shift and stds
/// scale wherever they are injected. Batched [N,C] rows.
#[derive(Clone)]
pub struct StyleSignals<E: Element = f32> {
    pub shallow_mean: TensorBase<E>,
    pub shallow_std: TensorBase<E>,
    pub deep_mean: TensorBase<E>,
    pub deep_std: TensorBase<E>,
}

impl<E: Element> StyleSignals<E> {
    /// Rows for each sample out of a unique-style signal batch.
    pub fn select(&self, index: &[usize]) -> Result<Self> {
        Ok(StyleSignals {
            shallow_mean: self.shallow_mean.index_select0(index)?,
            shallow_std: self.shallow_std.index_select0(index)?,
            deep_mean: self.deep_mean.index_select0(index)?,
            deep_std: self.deep_std.index_select0(index)?,
        })
    }

    pub fn detach(&self) -> Self {
        StyleSignals {
            shallow_mean: self.shallow_mean.detach(),
            shallow_std: self.shallow_std.detach(),
            deep_mean: self.deep_mean.detach(),
            deep_std: self.deep_std.detach(),
        }
    }

    /// One (mean‖std) row matrix per depth, shallow first.
    pub fn level_features(&self) -> Result<Vec<TensorBase<E>>> {
        Ok(vec![
            TensorBase::concat(1, &[self.shallow_mean.clone(), self.shallow_std.clone()])?,
            TensorBase::concat(1, &[self.deep_mean.clone(), self.deep_std.clone()])?,
        ])
    }
}

/// Everything the policy sample exposes. `log_prob` is [N] (shape [1] for a
/// single state) and equals the squashed-Gaussian log density of `action`.
pub struct PolicyOutput<E: Element = f32> {
    pub mean: TensorBase<E>,
    pub log_std: TensorBase<E>,
    pub action: TensorBase<E>,
    pub log_prob: TensorBase<E>,
    pub signals: StyleSignals<E>,
}

/// Per-channel affine conditioning: x ⊙ std + mean, broadcast over space.
fn modulate<E: Element>(
    x: &TensorBase<E>,
    mean: &TensorBase<E>,
    std: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let n = x.shape()[0];
    let c = x.shape()[1];
    if mean.shape() != [n, c] || std.shape() != [n, c] {
        return Err(Error::shape("modulate", x.shape(), mean.shape()));
    }
    let scale = std.reshape(&[n, c, 1, 1])?;
    let shift = mean.reshape(&[n, c, 1, 1])?;
    x.mul(&scale)?.add(&shift)
}

pub struct Conv<E: Element = f32> {
    pub weight: TensorBase<E>,
    pub bias: TensorBase<E>,
    stride: usize,
    padding: usize,
}

impl<E: Element> Conv<E> {
    fn init(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let data: Vec<E> = (0..out_ch * in_ch * k * k)
            .map(|_| E::from_f64(rng.sample::<f64, _>(StandardNormal) * std))
            .collect();
        Conv {
            weight: TensorBase::leaf_grad(&[out_ch, in_ch, k, k], data),
            bias: TensorBase::leaf_grad(&[out_ch], vec![E::zero(); out_ch]),
            stride,
            padding,
        }
    }

    fn forward(&self, x: &TensorBase<E>) -> Result<TensorBase<E>> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }

    fn params(&self) -> Vec<TensorBase<E>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn named(&self, prefix: &str) -> Vec<(String, TensorBase<E>)> {
        vec![
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }

    /// Copy with identical values but no gradient participation.
    fn frozen_copy(&self) -> Self {
        Conv {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

struct ResBlock<E: Element = f32> {
    c1: Conv<E>,
    c2: Conv<E>,
}

impl<E: Element> ResBlock<E> {
    fn init(rng: &mut ChaCha8Rng, ch: usize) -> Self {
        ResBlock {
            c1: Conv::init(rng, ch, ch, 3, 1, 1),
            c2: Conv::init(rng, ch, ch, 3, 1, 1),
        }
    }

    fn forward(&self, x: &TensorBase<E>) -> Result<TensorBase<E>> {
        let inner = self.c2.forward(&self.c1.forward(x)?.relu())?;
        Ok(x.add(&inner)?.relu())
    }

    fn params(&self) -> Vec<TensorBase<E>> {
        [self.c1.params(), self.c2.params()].concat()
    }
}

/// The unified policy P_κ: shared encoder, style spaces and action heads.
pub struct Actor<E: Element = f32> {
    e1: Conv<E>,
    e2: Conv<E>,
    style_shallow: Conv<E>,
    e3: Conv<E>,
    res1: ResBlock<E>,
    res2: ResBlock<E>,
    style_deep: Conv<E>,
    head_mean: Conv<E>,
    head_log_std: Conv<E>,
}

impl<E: Element> Actor<E> {
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        Actor {
            e1: Conv::init(rng, 3, 16, 9, 1, 4),
            e2: Conv::init(rng, 16, 32, 3, 2, 1),
            style_shallow: Conv::init(rng, 32, SHALLOW_CHANNELS, 3, 1, 1),
            e3: Conv::init(rng, 32, 64, 3, 2, 1),
            res1: ResBlock::init(rng, 64),
            res2: ResBlock::init(rng, 64),
            style_deep: Conv::init(rng, 64, DEEP_CHANNELS, 3, 1, 1),
            head_mean: Conv::init(rng, 64, ACTION_CHANNELS, 3, 1, 1),
            head_log_std: Conv::init(rng, 64, ACTION_CHANNELS, 3, 1, 1),
        }
    }

    fn check_spatial(&self, images: &TensorBase<E>) -> Result<()> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::bad_shape("actor", s, "expected [N,3,H,W]"));
        }
        if s[2] % ACTION_DOWNSCALE != 0 || s[3] % ACTION_DOWNSCALE != 0 {
            return Err(Error::bad_shape(
                "actor",
                s,
                format!("spatial sides must be divisible by {ACTION_DOWNSCALE}"),
            ));
        }
        Ok(())
    }

    /// Early shared trunk: full-resolution features then one halving.
    fn encode_front(&self, images: &TensorBase<E>) -> Result<TensorBase<E>> {
        self.e2.forward(&self.e1.forward(images)?.relu()).map(|t| t.relu())
    }

    /// Late shared trunk: second halving plus the residual stack.
    fn encode_back(&self, x: &TensorBase<E>) -> Result<TensorBase<E>> {
        let x = self.e3.forward(x)?.relu();
        self.res2.forward(&self.res1.forward(&x)?)
    }

    /// General-feature path for moving images: [N,64,H/4,W/4].
    pub fn encode_content(&self, movings: &TensorBase<E>) -> Result<TensorBase<E>> {
        self.check_spatial(movings)?;
        self.encode_back(&self.encode_front(movings)?)
    }

    /// Style path: same shared trunk with the two style-space convs spliced
    /// in, reduced to per-channel statistics at both depths.
    pub fn encode_style(&self, styles: &TensorBase<E>) -> Result<StyleSignals<E>> {
        self.check_spatial(styles)?;
        let shallow = self.style_shallow.forward(&self.encode_front(styles)?)?.relu();
        let (shallow_mean, shallow_std) = shallow.channel_stats()?;
        let deep = self.style_deep.forward(&self.encode_back(&shallow)?)?.relu();
        let (deep_mean, deep_std) = deep.channel_stats()?;
        Ok(StyleSignals {
            shallow_mean,
            shallow_std,
            deep_mean,
            deep_std,
        })
    }

    /// Batched policy sample. `styles` holds unique style images and
    /// `style_index[i]` picks the row conditioning sample i. Returns the
    /// policy output together with the content features for reuse by the
    /// builder on the same tape.
    pub fn forward_batch(
        &self,
        movings: &TensorBase<E>,
        styles: &TensorBase<E>,
        style_index: &[usize],
        noise: &TensorBase<E>,
    ) -> Result<(PolicyOutput<E>, TensorBase<E>)> {
        let n = movings.shape()[0];
        if style_index.len() != n {
            return Err(Error::bad_shape(
                "actor",
                movings.shape(),
                format!("style_index covers {} samples", style_index.len()),
            ));
        }
        let feats = self.encode_content(movings)?;
        let unique_signals = self.encode_style(styles)?;
        let signals = unique_signals.select(style_index)?;

        let conditioned = modulate(&feats, &signals.deep_mean, &signals.deep_std)?;
        let mean = self.head_mean.forward(&conditioned)?;
        let log_std = self
            .head_log_std
            .forward(&conditioned)?
            .clamp(E::from_f64(LOG_STD_MIN), E::from_f64(LOG_STD_MAX));
        if noise.shape() != mean.shape() {
            return Err(Error::shape("actor", mean.shape(), noise.shape()));
        }

        let pre = mean.add(&log_std.exp().mul(noise)?)?;
        let action = pre.tanh();

        // Diagonal-Gaussian density at the reparameterised sample. The
        // quadratic term reduces to the noise itself, which also kills its
        // (analytically zero) gradient path; the tanh correction keeps full
        // dependence on the parameters through `pre`.
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let gauss = log_std
            .neg()
            .add_scalar(E::from_f64(-half_ln_2pi))
            .add(&noise.square().mul_scalar(E::from_f64(-0.5)).detach())?;
        let correction = action
            .square()
            .neg()
            .add_scalar(E::from_f64(1.0 + SQUASH_EPS))
            .log()?;
        let log_prob = gauss.sub(&correction)?.reduce_sum(&[1, 2, 3], false)?;

        Ok((
            PolicyOutput {
                mean,
                log_std,
                action,
                log_prob,
                signals,
            },
            feats,
        ))
    }

    /// Single-state policy sample; draws the noise from `rng` unless given.
    pub fn forward(
        &self,
        state: &State<E>,
        noise: Option<&TensorBase<E>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<PolicyOutput<E>> {
        let (out, _) = self.forward_traced(state, noise, rng)?;
        Ok(out)
    }

    /// Like [`Actor::forward`] but also exposes the content features so the
    /// builder can decode without re-running the encoder.
    pub fn forward_traced(
        &self,
        state: &State<E>,
        noise: Option<&TensorBase<E>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PolicyOutput<E>, TensorBase<E>)> {
        self.check_spatial(&state.moving)?;
        let h = state.height() / ACTION_DOWNSCALE;
        let w = state.width() / ACTION_DOWNSCALE;
        let noise = match noise {
            Some(n) => n.clone(),
            None => sample_noise(&[1, ACTION_CHANNELS, h, w], rng),
        };
        self.forward_batch(&state.moving, &state.style, &[0], &noise)
    }

    pub fn params(&self) -> Vec<TensorBase<E>> {
        [
            self.e1.params(),
            self.e2.params(),
            self.style_shallow.params(),
            self.e3.params(),
            self.res1.params(),
            self.res2.params(),
            self.style_deep.params(),
            self.head_mean.params(),
            self.head_log_std.params(),
        ]
        .concat()
    }

    /// Bias of the log-std head; lowering it narrows the policy around its
    /// mean, which is how callers obtain near-deterministic behaviour.
    pub fn head_log_std_bias(&self) -> &TensorBase<E> {
        &self.head_log_std.bias
    }

    /// Parameters with stable names for checkpoint serialization; the order
    /// matches [`Actor::params`].
    pub fn named_params(&self) -> Vec<(String, TensorBase<E>)> {
        [
            self.e1.named("e1"),
            self.e2.named("e2"),
            self.style_shallow.named("style_shallow"),
            self.e3.named("e3"),
            self.res1.c1.named("res1.c1"),
            self.res1.c2.named("res1.c2"),
            self.res2.c1.named("res2.c1"),
            self.res2.c2.named("res2.c2"),
            self.style_deep.named("style_deep"),
            self.head_mean.named("head_mean"),
            self.head_log_std.named("head_log_std"),
        ]
        .concat()
    }
}

/// Standard-normal noise tensor for the reparameterised sample.
pub fn sample_noise<E: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> TensorBase<E> {
    let data: Vec<E> = (0..shape.iter().product())
        .map(|_| E::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    TensorBase::from_vec(shape, data).expect("shape matches draw count")
}

/// The builder B_τ: decodes content features plus the action map back to an
/// image, with style signals modulating both decoder depths.
pub struct Builder<E: Element = f32> {
    d1: Conv<E>,
    d2: Conv<E>,
    d3: Conv<E>,
    out: Conv<E>,
}

impl<E: Element> Builder<E> {
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        Builder {
            d1: Conv::init(rng, 64 + ACTION_CHANNELS, 64, 3, 1, 1),
            d2: Conv::init(rng, 64, 32, 3, 1, 1),
            d3: Conv::init(rng, 32, 16, 3, 1, 1),
            out: Conv::init(rng, 16, 3, 9, 1, 4),
        }
    }

    /// Decodes batched content features [N,64,h,w] and actions [N,A,h,w]
    /// into images [N,3,4h,4w] in [0,1].
    pub fn decode(
        &self,
        feats: &TensorBase<E>,
        action: &TensorBase<E>,
        signals: &StyleSignals<E>,
    ) -> Result<TensorBase<E>> {
        if feats.shape()[0] != action.shape()[0]
            || feats.shape()[2..] != action.shape()[2..]
            || action.shape()[1] != ACTION_CHANNELS
        {
            return Err(Error::shape("builder", feats.shape(), action.shape()));
        }
        let x = TensorBase::concat(1, &[feats.clone(), action.clone()])?;
        let x = self.d1.forward(&x)?;
        let x = modulate(&x, &signals.deep_mean, &signals.deep_std)?.relu();
        let x = x.upsample_nearest(2)?;
        let x = self.d2.forward(&x)?;
        let x = modulate(&x, &signals.shallow_mean, &signals.shallow_std)?.relu();
        let x = x.upsample_nearest(2)?;
        let x = self.d3.forward(&x)?.relu();
        Ok(self.out.forward(&x)?.sigmoid())
    }

    pub fn params(&self) -> Vec<TensorBase<E>> {
        [
            self.d1.params(),
            self.d2.params(),
            self.d3.params(),
            self.out.params(),
        ]
        .concat()
    }

    /// Parameters with stable names for checkpoint serialization.
    pub fn named_params(&self) -> Vec<(String, TensorBase<E>)> {
        [
            self.d1.named("d1"),
            self.d2.named("d2"),
            self.d3.named("d3"),
            self.out.named("out"),
        ]
        .concat()
    }
}

/// Full builder step from a raw state: re-encodes the content features with
/// the actor's (shared) encoder, then decodes.
pub fn builder_forward<E: Element>(
    actor: &Actor<E>,
    builder: &Builder<E>,
    state: &State<E>,
    action: &TensorBase<E>,
    signals: &StyleSignals<E>,
) -> Result<TensorBase<E>> {
    let feats = actor.encode_content(&state.moving)?;
    builder.decode(&feats, action, signals)
}

/// The critic Q_δ: a small conv trunk over pooled state images and the
/// action map, pooled globally into one value per sample.
pub struct Critic<E: Element = f32> {
    c1: Conv<E>,
    c2: Conv<E>,
    head: Conv<E>,
}

impl<E: Element> Critic<E> {
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        Critic {
            c1: Conv::init(rng, 3 + 3 + ACTION_CHANNELS, 32, 3, 2, 1),
            c2: Conv::init(rng, 32, 64, 3, 2, 1),
            head: Conv::init(rng, 64, 1, 1, 1, 0),
        }
    }

    /// Batched Q-values [N] for (movings, styles, actions); style rows must
    /// already be aligned with samples (no dedup indirection here).
    pub fn forward(
        &self,
        movings: &TensorBase<E>,
        styles: &TensorBase<E>,
        actions: &TensorBase<E>,
    ) -> Result<TensorBase<E>> {
        let n = actions.shape()[0];
        let expect_h = movings.shape()[2] / ACTION_DOWNSCALE;
        let expect_w = movings.shape()[3] / ACTION_DOWNSCALE;
        if actions.shape() != [n, ACTION_CHANNELS, expect_h, expect_w] {
            return Err(Error::bad_shape(
                "critic",
                actions.shape(),
                format!("expected [{n},{ACTION_CHANNELS},{expect_h},{expect_w}]"),
            ));
        }
        let m = movings.avg_pool(ACTION_DOWNSCALE)?;
        let s = styles.avg_pool(ACTION_DOWNSCALE)?;
        let x = TensorBase::concat(1, &[m, s, actions.clone()])?;
        let x = self.c1.forward(&x)?.relu();
        let x = self.c2.forward(&x)?.relu();
        let pooled = x.reduce_mean(&[2, 3], true)?;
        self.head.forward(&pooled)?.reshape(&[n])
    }

    pub fn params(&self) -> Vec<TensorBase<E>> {
        [self.c1.params(), self.c2.params(), self.head.params()].concat()
    }

    /// Parameters with stable names for checkpoint serialization.
    pub fn named_params(&self) -> Vec<(String, TensorBase<E>)> {
        [
            self.c1.named("c1"),
            self.c2.named("c2"),
            self.head.named("head"),
        ]
        .concat()
    }

    /// Structural twin with detached parameters, used for the EMA target.
    pub fn frozen_copy(&self) -> Self {
        Critic {
            c1: self.c1.frozen_copy(),
            c2: self.c2.frozen_copy(),
            head: self.head.frozen_copy(),
        }
    }
}

/// Single-state critic evaluation, shape [1].
pub fn critic_forward<E: Element>(
    critic: &Critic<E>,
    state: &State<E>,
    action: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    critic.forward(&state.moving, &state.style, action)
}

/// Moves every target parameter toward the live critic:
/// δ̄ ← ω·δ + (1−ω)·δ̄, elementwise.
pub fn ema_update<E: Element>(critic: &Critic<E>, target: &Critic<E>, omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Config(format!("omega {omega} outside [0,1]")));
    }
    let w = E::from_f64(omega);
    let one_minus = E::from_f64(1.0 - omega);
    for (live, tgt) in critic.params().iter().zip(target.params()) {
        let src = live.to_vec();
        tgt.update_data(|d| {
            for (t, s) in d.iter_mut().zip(&src) {
                *t = w * *s + one_minus * *t;
            }
        });
    }
    Ok(())
}

/// Total scalar count and storage footprint at 32-bit width.
pub fn count_params<E: Element>(params: &[TensorBase<E>]) -> (usize, usize) {
    let count: usize = params.iter().map(|p| p.len()).sum();
    (count, count * 4)
}

/// All learnable state for one agent, plus the frozen EMA target.
pub struct AgentParams<E: Element = f32> {
    pub actor: Actor<E>,
    pub builder: Builder<E>,
    /// One critic by default; two when the twin-critic flag is set.
    pub critics: Vec<Critic<E>>,
    pub targets: Vec<Critic<E>>,
    pub log_alpha: TensorBase<E>,
}

impl<E: Element> AgentParams<E> {
    pub fn init(seeds: &SeedTree, twin_critic: bool) -> Self {
        let actor = Actor::init(&mut seeds.stream("init.actor"));
        let builder = Builder::init(&mut seeds.stream("init.builder"));
        let mut critics = vec![Critic::init(&mut seeds.stream("init.critic1"))];
        if twin_critic {
            critics.push(Critic::init(&mut seeds.stream("init.critic2")));
        }
        let targets = critics.iter().map(|c| c.frozen_copy()).collect();
        AgentParams {
            actor,
            builder,
            critics,
            targets,
            log_alpha: TensorBase::leaf_grad(&[1], vec![E::zero()]),
        }
    }

    pub fn alpha(&self) -> E {
        self.log_alpha.data()[0].exp()
    }

    /// Every learnable and target array with a stable checkpoint name.
    pub fn named_params(&self) -> Vec<(String, TensorBase<E>)> {
        let mut out = Vec::new();
        let scope = |list: Vec<(String, TensorBase<E>)>, scope: &str| {
            list.into_iter()
                .map(move |(name, p)| (format!("{scope}.{name}"), p))
                .collect::<Vec<_>>()
        };
        out.extend(scope(self.actor.named_params(), "actor"));
        out.extend(scope(self.builder.named_params(), "builder"));
        for (i, critic) in self.critics.iter().enumerate() {
            out.extend(scope(critic.named_params(), &format!("critic{}", i + 1)));
        }
        for (i, target) in self.targets.iter().enumerate() {
            out.extend(scope(target.named_params(), &format!("target{}", i + 1)));
        }
        out.push(("log_alpha".to_string(), self.log_alpha.clone()));
        out
    }
}

pub(crate) fn gradcheck_cases() -> Vec<crate::gradcheck::NamedComposite> {
    use crate::gradcheck::{check_gradients, NamedComposite};
    use rand::SeedableRng;

    fn rand_image(rng: &mut ChaCha8Rng, side: usize) -> TensorBase<f64> {
        let data = (0..3 * side * side).map(|_| rng.gen_range(0.05..0.95)).collect();
        TensorBase::leaf_grad(&[1, 3, side, side], data)
    }

    vec![
        NamedComposite {
            name: "actor_policy_path",
            build: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let actor = Actor::<f64>::init(&mut rng);
                let moving = rand_image(&mut rng, 8);
                let style = rand_image(&mut rng, 8);
                let noise = sample_noise::<f64>(&[1, ACTION_CHANNELS, 2, 2], &mut rng);
                let inputs = vec![
                    moving,
                    style,
                    actor.e1.weight.clone(),
                    actor.head_log_std.weight.clone(),
                    actor.style_deep.weight.clone(),
                ];
                check_gradients(
                    &inputs,
                    &move |xs| {
                        let (out, _) =
                            actor.forward_batch(&xs[0], &xs[1], &[0], &noise)?;
                        out.log_prob.sum_all().add(&out.action.mean_all())
                    },
                    24,
                )
            }),
        },
        NamedComposite {
            name: "builder_decode_path",
            build: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1d);
                let actor = Actor::<f64>::init(&mut rng);
                let builder = Builder::<f64>::init(&mut rng);
                let moving = rand_image(&mut rng, 8);
                let style = rand_image(&mut rng, 8);
                let action_data = (0..ACTION_CHANNELS * 4)
                    .map(|_| rng.gen_range(-0.9..0.9))
                    .collect();
                let action = TensorBase::leaf_grad(&[1, ACTION_CHANNELS, 2, 2], action_data);
                let inputs = vec![
                    action,
                    moving,
                    style,
                    builder.d1.weight.clone(),
                    builder.out.bias.clone(),
                ];
                check_gradients(
                    &inputs,
                    &move |xs| {
                        let signals = actor.encode_style(&xs[2])?;
                        let feats = actor.encode_content(&xs[1])?;
                        Ok(builder.decode(&feats, &xs[0], &signals)?.mean_all())
                    },
                    24,
                )
            }),
        },
        NamedComposite {
            name: "critic_q_path",
            build: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc41);
                let critic = Critic::<f64>::init(&mut rng);
                let moving = rand_image(&mut rng, 8);
                let style = rand_image(&mut rng, 8);
                let action_data = (0..ACTION_CHANNELS * 4)
                    .map(|_| rng.gen_range(-0.9..0.9))
                    .collect();
                let action = TensorBase::leaf_grad(&[1, ACTION_CHANNELS, 2, 2], action_data);
                let inputs = vec![action, moving, critic.c1.weight.clone(), critic.head.weight.clone()];
                check_gradients(
                    &inputs,
                    &move |xs| critic.forward(&xs[1], &style, &xs[0])?.reshape(&[1]),
                    24,
                )
            }),
        },
    ]
}
