//! Environment stepping, the replay pool and the control-learning updates.
//!
//! Stylization is cast as a sequential decision: the state pairs the current
//! moving image with the style image, the policy emits a low-resolution
//! action map, the builder renders the next moving image, and the reward is
//! the negative style loss of that render. Critic, actor and temperature
//! updates follow the soft actor-critic recipe with an EMA target critic.

use std::collections::VecDeque;

use rand::seq::index::sample as index_sample;
use rand_chacha::ChaCha8Rng;

use crate::backbone::FeatureBackbone;
use crate::error::{Error, Result};
use crate::nets::{sample_noise, AgentParams, State, ACTION_CHANNELS, ACTION_DOWNSCALE};
use crate::objectives;
use crate::optim::Adam;
use crate::tensor::{no_grad, Element, TensorBase};

/// Target entropy defaults to −(action elements)·this factor.
pub const TARGET_ENTROPY_FACTOR: f64 = 0.5;

pub fn default_target_entropy(action_elems: usize) -> f64 {
    -(action_elems as f64) * TARGET_ENTROPY_FACTOR
}

/// One environment interaction. The style image is identical on both sides
/// of a transition; episodes never switch style mid-flight.
#[derive(Clone, Debug)]
pub struct Transition<E: Element = f32> {
    pub state: State<E>,
    pub action: TensorBase<E>,
    pub reward: E,
    pub next_state: State<E>,
    pub done: bool,
}

/// Bounded FIFO of past transitions with uniform sampling.
pub struct ReplayPool<E: Element = f32> {
    capacity: usize,
    records: VecDeque<Transition<E>>,
}

impl<E: Element> ReplayPool<E> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay pool needs positive capacity");
        ReplayPool {
            capacity,
            records: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, t: Transition<E>) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<E>> {
        self.records.iter()
    }

    /// Uniform sample of `n` distinct records.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&Transition<E>>> {
        if self.records.len() < n {
            return Err(Error::Domain {
                op: "pool_sample",
                detail: format!(
                    "pool holds {} of {} requested transitions; warm-up incomplete",
                    self.records.len(),
                    n
                ),
            });
        }
        Ok(index_sample(rng, self.records.len(), n)
            .iter()
            .map(|i| &self.records[i])
            .collect())
    }
}

/// One stylization episode: fixed content and style, a bounded horizon and
/// the chain of moving images produced so far (index 0 is the content).
pub struct Episode<E: Element = f32> {
    pub content: TensorBase<E>,
    pub style: TensorBase<E>,
    pub horizon: usize,
    pub trajectory: Vec<TensorBase<E>>,
}

impl<E: Element> Episode<E> {
    pub fn start(content: TensorBase<E>, style: TensorBase<E>, horizon: usize) -> Self {
        let trajectory = vec![content.clone()];
        Episode {
            content,
            style,
            horizon,
            trajectory,
        }
    }

    /// Steps taken so far.
    pub fn age(&self) -> usize {
        self.trajectory.len() - 1
    }

    pub fn finished(&self) -> bool {
        self.age() >= self.horizon
    }

    /// Appends the next moving image produced by the environment.
    pub fn advance(&mut self, moving: TensorBase<E>) {
        self.trajectory.push(moving);
    }

    pub fn current_state(&self) -> Result<State<E>> {
        State::new(
            self.trajectory.last().expect("trajectory never empty").clone(),
            self.style.clone(),
        )
    }
}

/// Concatenates [1,...] tensors along the batch axis.
pub(crate) fn stack<'a, E: Element>(
    parts: impl Iterator<Item = &'a TensorBase<E>>,
) -> Result<TensorBase<E>> {
    let parts: Vec<_> = parts.cloned().collect();
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().unwrap());
    }
    TensorBase::concat(0, &parts)
}

/// Splits a batch of style tensors into unique rows plus per-sample indices,
/// also returning the fully aligned batch. Uniqueness is by image content
/// (shared storage short-circuits the comparison), so transitions that
/// sampled the same style image batch onto one row even across episodes.
pub(crate) fn dedup_styles<'a, E: Element>(
    styles: impl Iterator<Item = &'a TensorBase<E>>,
) -> Result<(TensorBase<E>, Vec<usize>, TensorBase<E>)> {
    let styles: Vec<_> = styles.collect();
    let mut unique: Vec<&TensorBase<E>> = Vec::new();
    let mut index = Vec::with_capacity(styles.len());
    for s in &styles {
        let found = unique.iter().position(|u| {
            u.id() == s.id() || (u.shape() == s.shape() && *u.data() == *s.data())
        });
        match found {
            Some(pos) => index.push(pos),
            None => {
                index.push(unique.len());
                unique.push(s);
            }
        }
    }
    let uniq = stack(unique.into_iter())?;
    let full = stack(styles.into_iter())?;
    Ok((uniq, index, full))
}

/// Samples an action, renders the next moving image and scores it. All off
/// the tape: environment interaction never builds gradient state.
pub fn env_step<E: Element>(
    params: &AgentParams<E>,
    backbone: &FeatureBackbone<E>,
    state: &State<E>,
    rng: &mut ChaCha8Rng,
) -> Result<(TensorBase<E>, E, State<E>)> {
    let targets = objectives::style_targets(backbone, &state.style)?;
    env_step_with_targets(params, backbone, state, &targets, rng)
}

/// [`env_step`] with the style statistics already in hand, so a caller
/// cycling through a fixed style set skips the style-side backbone pass.
pub(crate) fn env_step_with_targets<E: Element>(
    params: &AgentParams<E>,
    backbone: &FeatureBackbone<E>,
    state: &State<E>,
    targets: &objectives::StyleTargets<E>,
    rng: &mut ChaCha8Rng,
) -> Result<(TensorBase<E>, E, State<E>)> {
    no_grad(|| {
        let (out, feats) = params.actor.forward_traced(state, None, rng)?;
        let next_moving = params.builder.decode(&feats, &out.action, &out.signals)?;
        let loss = objectives::style_loss_from_targets(backbone, &next_moving, targets)?;
        let reward = -loss.item();
        let next_state = State::new(next_moving, state.style.clone())?;
        Ok((out.action, reward, next_state))
    })
}

/// The soft Bellman target for one transition: r + γ·(Q̄(y',x') − α·log π),
/// with no bootstrap past a terminal step.
pub fn bellman_target<E: Element>(
    reward: E,
    gamma: f64,
    q_next: E,
    log_prob_next: E,
    alpha: E,
    done: bool,
) -> E {
    if done {
        return reward;
    }
    reward + E::from_f64(gamma) * (q_next - alpha * log_prob_next)
}

/// One gradient step on the critic(s) against detached soft Bellman targets
/// built from freshly sampled next actions. Returns the mean residual loss
/// ½·(Q − target)².
pub fn critic_update<E: Element>(
    params: &AgentParams<E>,
    opt: &mut Adam<E>,
    batch: &[&Transition<E>],
    gamma: f64,
    alpha: E,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain {
            op: "critic_update",
            detail: "empty batch".into(),
        });
    }
    let b = batch.len();
    let targets: Vec<E> = no_grad(|| -> Result<Vec<E>> {
        let next_movings = stack(batch.iter().map(|t| &t.next_state.moving))?;
        let (uniq, idx, full) = dedup_styles(batch.iter().map(|t| &t.next_state.style))?;
        let h = next_movings.shape()[2] / ACTION_DOWNSCALE;
        let w = next_movings.shape()[3] / ACTION_DOWNSCALE;
        let noise = sample_noise(&[b, ACTION_CHANNELS, h, w], rng);
        let (out, _) = params.actor.forward_batch(&next_movings, &uniq, &idx, &noise)?;
        let mut q_min = params.targets[0].forward(&next_movings, &full, &out.action)?.to_vec();
        for tgt in &params.targets[1..] {
            let q = tgt.forward(&next_movings, &full, &out.action)?.to_vec();
            for (m, v) in q_min.iter_mut().zip(q) {
                if v < *m {
                    *m = v;
                }
            }
        }
        let lps = out.log_prob.to_vec();
        Ok(batch
            .iter()
            .zip(q_min.iter().zip(lps))
            .map(|(t, (&q, lp))| bellman_target(t.reward, gamma, q, lp, alpha, t.done))
            .collect())
    })?;

    let movings = stack(batch.iter().map(|t| &t.state.moving))?;
    let styles = stack(batch.iter().map(|t| &t.state.style))?;
    let actions = stack(batch.iter().map(|t| &t.action))?;
    let target = TensorBase::from_vec(&[b], targets)?;

    let mut total = TensorBase::zeros(&[1]);
    for critic in &params.critics {
        let q = critic.forward(&movings, &styles, &actions)?;
        let loss = q.sub(&target)?.square().mean_all().mul_scalar(E::from_f64(0.5));
        total = total.add(&loss)?;
    }
    let j_q = total.item().into_f64() / params.critics.len() as f64;
    total.backward()?;
    opt.step();
    opt.zero_grad();
    Ok(j_q)
}

/// Result of one policy improvement step, carrying the detached log-density
/// values so the temperature update can reuse the same samples.
pub struct ActorRound<E: Element = f32> {
    pub j_p: f64,
    pub log_probs: Vec<E>,
}

/// One gradient step on the actor: minimize E[α·log π(x|y) − Q(y, x)] with
/// reparameterized samples. The critic supplies gradients but is not
/// stepped; its accumulated gradients are cleared before returning.
pub fn actor_update<E: Element>(
    params: &AgentParams<E>,
    opt: &mut Adam<E>,
    states: &[&State<E>],
    alpha: E,
    rng: &mut ChaCha8Rng,
) -> Result<ActorRound<E>> {
    if states.is_empty() {
        return Err(Error::Domain {
            op: "actor_update",
            detail: "empty batch".into(),
        });
    }
    let b = states.len();
    let movings = stack(states.iter().map(|s| &s.moving))?;
    let (uniq, idx, full) = dedup_styles(states.iter().map(|s| &s.style))?;
    let h = movings.shape()[2] / ACTION_DOWNSCALE;
    let w = movings.shape()[3] / ACTION_DOWNSCALE;
    let noise = sample_noise(&[b, ACTION_CHANNELS, h, w], rng);
    let (out, _) = params.actor.forward_batch(&movings, &uniq, &idx, &noise)?;

    let mut q = params.critics[0].forward(&movings, &full, &out.action)?;
    for critic in &params.critics[1..] {
        let other = critic.forward(&movings, &full, &out.action)?;
        // min(a,b) = a − relu(a−b), keeping the tape intact.
        q = q.sub(&q.sub(&other)?.relu())?;
    }

    let objective = out.log_prob.mul_scalar(alpha).sub(&q)?.mean_all();
    let j_p = objective.item().into_f64();
    let log_probs = out.log_prob.to_vec();
    objective.backward()?;
    opt.step();
    opt.zero_grad();
    for critic in &params.critics {
        for p in critic.params() {
            p.zero_grad();
        }
    }
    Ok(ActorRound { j_p, log_probs })
}

/// One gradient step on log α toward matching the target entropy, reusing
/// log-density values sampled by the actor round. Returns the new α.
pub fn alpha_update<E: Element>(
    params: &AgentParams<E>,
    opt: &mut Adam<E>,
    log_probs: &[E],
    target_entropy: f64,
) -> Result<E> {
    if log_probs.is_empty() {
        return Err(Error::Domain {
            op: "alpha_update",
            detail: "empty batch".into(),
        });
    }
    let mean_lp = log_probs.iter().map(|lp| lp.into_f64()).sum::<f64>() / log_probs.len() as f64;
    let drive = E::from_f64(-(mean_lp + target_entropy));
    let objective = params.log_alpha.exp().mul_scalar(drive);
    objective.backward()?;
    opt.step();
    opt.zero_grad();
    Ok(params.alpha())
}
