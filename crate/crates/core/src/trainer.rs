//! The joint training loop: environment interaction feeding a replay pool,
//! one control round and one generative round per warm step, run logs,
//! checkpoints and deterministic resume.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::FeatureBackbone;
use crate::config::TrainConfig;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::imageio;
use crate::nets::{ema_update, AgentParams, State, ACTION_CHANNELS, ACTION_DOWNSCALE};
use crate::objectives::{self, LossBreakdown, UncertaintyWeights};
use crate::optim::Adam;
use crate::rl::{self, Episode, ReplayPool, Transition};
use crate::rng::SeedTree;
use crate::tensor::{no_grad, Tensor};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TIMING_LOG_FILE: &str = "train_timing.csv";
pub const EPISODE_LOG_FILE: &str = "episodes.csv";
pub const FINAL_CHECKPOINT_FILE: &str = "final.ckpt";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.cfg";

/// One learning round's scalars. Wall time goes to the timing file, never
/// the main log, so identical runs produce identical main logs.
#[derive(Debug, Clone)]
pub struct UpdateRecord {
    pub env_step: usize,
    pub critic_loss: f64,
    pub policy_objective: f64,
    pub content_loss: f64,
    pub style_loss: f64,
    pub contrastive_loss: f64,
    pub final_loss: f64,
    pub alpha: f64,
    pub lambda_content: f64,
    pub lambda_style: f64,
    pub lambda_contrastive: f64,
    pub reward: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub index: usize,
    pub steps: usize,
    pub reward_sum: f64,
}

#[derive(Debug, Default)]
pub struct TrainLog {
    pub updates: Vec<UpdateRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainLog {
    /// The main per-update log. Deterministic for a given run.
    pub fn updates_csv(&self) -> String {
        let mut out = String::from(
            "step,critic_loss,policy_objective,content_loss,style_loss,contrastive_loss,\
             final_loss,alpha,lambda_content,lambda_style,lambda_contrastive,reward\n",
        );
        for r in &self.updates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.env_step,
                r.critic_loss,
                r.policy_objective,
                r.content_loss,
                r.style_loss,
                r.contrastive_loss,
                r.final_loss,
                r.alpha,
                r.lambda_content,
                r.lambda_style,
                r.lambda_contrastive,
                r.reward
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("step,wall_ms\n");
        for r in &self.updates {
            let _ = writeln!(out, "{},{}", r.env_step, r.wall_ms);
        }
        out
    }

    pub fn episodes_csv(&self) -> String {
        let mut out = String::from("episode,steps,reward_sum\n");
        for r in &self.episodes {
            let _ = writeln!(out, "{},{},{}", r.index, r.steps, r.reward_sum);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(TRAIN_LOG_FILE), self.updates_csv())?;
        std::fs::write(dir.join(TIMING_LOG_FILE), self.timing_csv())?;
        std::fs::write(dir.join(EPISODE_LOG_FILE), self.episodes_csv())?;
        Ok(())
    }
}

/// Loads every readable image in `dir` at the training size, warning about
/// files that fail to decode.
fn load_image_dir(dir: &Path, size: usize) -> Result<Vec<Tensor>> {
    let mut images = Vec::new();
    for path in imageio::list_image_files(dir)? {
        match imageio::load_training_image(&path, size) {
            Ok(img) => images.push(img),
            Err(e) => log::warn!("skipping '{}': {e}", path.display()),
        }
    }
    Ok(images)
}

const RNG_STREAMS: [&str; 5] = ["data", "explore", "replay", "critic", "actor"];

/// Every random stream the loop consumes, restorable by word position.
struct Streams {
    data: ChaCha8Rng,
    explore: ChaCha8Rng,
    replay: ChaCha8Rng,
    critic: ChaCha8Rng,
    actor: ChaCha8Rng,
}

impl Streams {
    fn new(seeds: &SeedTree) -> Self {
        let tree = seeds.child("train");
        Streams {
            data: tree.stream("data"),
            explore: tree.stream("explore"),
            replay: tree.stream("replay"),
            critic: tree.stream("critic"),
            actor: tree.stream("actor"),
        }
    }

    fn slots(&mut self) -> [(&'static str, &mut ChaCha8Rng); 5] {
        [
            ("data", &mut self.data),
            ("explore", &mut self.explore),
            ("replay", &mut self.replay),
            ("critic", &mut self.critic),
            ("actor", &mut self.actor),
        ]
    }

    fn save(&mut self, container: &mut Container) {
        for (name, rng) in self.slots() {
            let bytes = rng.get_word_pos().to_le_bytes();
            let data: Vec<f32> = bytes.iter().map(|&b| b as f32).collect();
            container.insert_raw(&format!("rng.{name}"), vec![data.len()], data);
        }
    }

    fn load(&mut self, container: &Container) -> Result<()> {
        for (name, rng) in self.slots() {
            let (_, data) = container.raw(&format!("rng.{name}"))?;
            if data.len() != 16 {
                return Err(Error::Checkpoint(format!(
                    "rng state 'rng.{name}' has {} entries, expected 16",
                    data.len()
                )));
            }
            let mut bytes = [0u8; 16];
            for (b, v) in bytes.iter_mut().zip(data) {
                *b = *v as u8;
            }
            rng.set_word_pos(u128::from_le_bytes(bytes));
        }
        debug_assert_eq!(RNG_STREAMS.len(), 5);
        Ok(())
    }
}

/// Everything restored by [`load_checkpoint`].
pub struct LoadedCheckpoint {
    pub params: AgentParams,
    pub weights: UncertaintyWeights,
    pub backbone: FeatureBackbone,
}

fn copy_into(container: &Container, name: &str, tensor: &Tensor) -> Result<()> {
    let (shape, data) = container
        .raw(name)
        .map_err(|_| Error::Checkpoint(format!("missing array '{name}'")))?;
    if shape != tensor.shape() {
        return Err(Error::Checkpoint(format!(
            "array '{name}': stored shape {:?} does not match model shape {:?}",
            shape,
            tensor.shape()
        )));
    }
    tensor.update_data(|d| d.copy_from_slice(data));
    Ok(())
}

fn insert_model(container: &mut Container, params: &AgentParams, weights: &UncertaintyWeights) {
    for (name, tensor) in params.named_params() {
        container.insert(&name, &tensor);
    }
    container.insert("uncertainty.s1", &weights.s1);
    container.insert("uncertainty.s2", &weights.s2);
    container.insert("uncertainty.s3", &weights.s3);
}

fn restore_model(
    container: &Container,
    params: &AgentParams,
    weights: &UncertaintyWeights,
) -> Result<()> {
    for (name, tensor) in params.named_params() {
        copy_into(container, &name, &tensor)?;
    }
    copy_into(container, "uncertainty.s1", &weights.s1)?;
    copy_into(container, "uncertainty.s2", &weights.s2)?;
    copy_into(container, "uncertainty.s3", &weights.s3)?;
    Ok(())
}

/// Restores agent parameters, uncertainty weights and the feature backbone
/// from a checkpoint written by [`TrainSession::save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let container = Container::load(path)?;
    let twin = container.contains("critic1.c1.weight");
    let params = AgentParams::init(&SeedTree::new(0), twin);
    let weights = UncertaintyWeights::new();
    restore_model(&container, &params, &weights)?;
    let backbone = FeatureBackbone::from_container(&container)?;
    Ok(LoadedCheckpoint {
        params,
        weights,
        backbone,
    })
}

/// Runs the deterministic stylization chain: starting from the content
/// image, each step samples the mode action (zero noise) and decodes the
/// next moving image. Returns all `steps` images in order.
pub fn generate_sequence(
    params: &AgentParams,
    content: &Tensor,
    style: &Tensor,
    steps: usize,
) -> Result<Vec<Tensor>> {
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    for (role, img) in [("content", content), ("style", style)] {
        let shape = img.shape();
        if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
            return Err(Error::bad_shape(
                "generate_sequence",
                shape,
                format!("{role} image must be [1,3,H,W]"),
            ));
        }
        if shape[2] == 0 || shape[2] % ACTION_DOWNSCALE != 0 || shape[3] % ACTION_DOWNSCALE != 0 {
            return Err(Error::bad_shape(
                "generate_sequence",
                shape,
                format!("{role} sides must be positive multiples of {ACTION_DOWNSCALE}"),
            ));
        }
    }
    no_grad(|| {
        let noise = Tensor::zeros(&[
            1,
            ACTION_CHANNELS,
            content.shape()[2] / ACTION_DOWNSCALE,
            content.shape()[3] / ACTION_DOWNSCALE,
        ]);
        let mut moving = content.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (policy, feats) = params.actor.forward_batch(&moving, style, &[0], &noise)?;
            moving = params.builder.decode(&feats, &policy.action, &policy.signals)?;
            out.push(moving.clone());
        }
        Ok(out)
    })
}

/// Final state of a finished run.
pub struct TrainOutcome {
    pub params: AgentParams,
    pub weights: UncertaintyWeights,
    pub log: TrainLog,
}

/// Full mutable training state. Drive it step by step or via [`run`], and
/// snapshot or restore it at episode boundaries.
///
/// [`run`]: TrainSession::run
pub struct TrainSession {
    config: TrainConfig,
    backbone: FeatureBackbone,
    params: AgentParams,
    weights: UncertaintyWeights,
    pool: ReplayPool,
    critic_opt: Adam,
    actor_opt: Adam,
    alpha_opt: Adam,
    generative_opt: Adam,
    streams: Streams,
    style_cache: objectives::StyleTargetCache,
    content_set: Vec<Tensor>,
    style_set: Vec<Tensor>,
    episode: Option<Episode>,
    episode_reward: f64,
    env_steps: usize,
    episodes_done: usize,
    control_rounds: usize,
    generative_rounds: usize,
    target_entropy: f64,
    log: TrainLog,
}

impl TrainSession {
    /// Loads the datasets named by the configuration and initializes all
    /// parameters and optimizer state from the configured seed.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let content_set = load_image_dir(&config.content_dir, config.image_size)?;
        let style_set = load_image_dir(&config.style_dir, config.image_size)?;
        Self::from_datasets(config, content_set, style_set)
    }

    /// Builds a session around in-memory datasets.
    pub fn from_datasets(
        config: &TrainConfig,
        content_set: Vec<Tensor>,
        style_set: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        if content_set.is_empty() {
            return Err(Error::Data(format!(
                "no usable content images in '{}'",
                config.content_dir.display()
            )));
        }
        if style_set.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 style images for in-batch negatives, found {} in '{}'",
                style_set.len(),
                config.style_dir.display()
            )));
        }
        let expected = [1, 3, config.image_size, config.image_size];
        for img in content_set.iter().chain(&style_set) {
            if img.shape() != expected {
                return Err(Error::bad_shape(
                    "train",
                    img.shape(),
                    format!("dataset images must be {expected:?}"),
                ));
            }
        }

        let seeds = SeedTree::new(config.seed);
        let params = AgentParams::init(&seeds, config.twin_critic);
        let weights = UncertaintyWeights::new();
        let lr = config.learning_rate as f64;
        let critic_opt = Adam::new(
            params.critics.iter().flat_map(|c| c.params()).collect(),
            lr,
        );
        let actor_opt = Adam::new(params.actor.params(), lr);
        let alpha_opt = Adam::new(vec![params.log_alpha.clone()], lr);
        let generative_opt = Adam::new(
            [
                params.actor.params(),
                params.builder.params(),
                weights.params(),
            ]
            .concat(),
            lr,
        );
        let grid = config.image_size / ACTION_DOWNSCALE;
        let target_entropy = rl::default_target_entropy(ACTION_CHANNELS * grid * grid);

        Ok(TrainSession {
            backbone: FeatureBackbone::seeded(config.seed),
            params,
            weights,
            pool: ReplayPool::new(config.pool_capacity),
            critic_opt,
            actor_opt,
            alpha_opt,
            generative_opt,
            streams: Streams::new(&seeds),
            style_cache: objectives::StyleTargetCache::new(),
            content_set,
            style_set,
            episode: None,
            episode_reward: 0.0,
            env_steps: 0,
            episodes_done: 0,
            control_rounds: 0,
            generative_rounds: 0,
            target_entropy,
            log: TrainLog::default(),
            config: config.clone(),
        })
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn weights(&self) -> &UncertaintyWeights {
        &self.weights
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn rounds(&self) -> (usize, usize) {
        (self.control_rounds, self.generative_rounds)
    }

    /// Optimizer step counts hitting the actor: one from the control round
    /// and one from the generative round per warm env step.
    pub fn actor_update_counts(&self) -> (u64, u64) {
        (self.actor_opt.updates(), self.generative_opt.updates())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            params: self.params,
            weights: self.weights,
            log: self.log,
        }
    }

    fn at_episode_boundary(&self) -> bool {
        self.episode.as_ref().map_or(true, |e| e.finished())
    }

    /// One environment interaction: starts a fresh episode when needed, acts,
    /// scores, stores the transition. Returns the step's reward.
    fn env_interaction(&mut self) -> Result<f64> {
        if self.at_episode_boundary() {
            // Fresh storage per episode keeps transitions from holding the
            // dataset tensors alive; batch grouping is by image content, so
            // the copies still collapse onto one row.
            let content = self.content_set[self.streams.data.gen_range(0..self.content_set.len())]
                .detach();
            let style =
                self.style_set[self.streams.data.gen_range(0..self.style_set.len())].detach();
            self.episode = Some(Episode::start(content, style, self.config.horizon));
            self.episode_reward = 0.0;
        }
        let state = self
            .episode
            .as_ref()
            .expect("episode just ensured")
            .current_state()?;
        let targets = self.style_cache.targets(&self.backbone, &state.style)?;
        let (action, reward, next_state) = rl::env_step_with_targets(
            &self.params,
            &self.backbone,
            &state,
            &targets,
            &mut self.streams.explore,
        )?;
        let reward = f64::from(reward);
        if !reward.is_finite() {
            return Err(Error::Numeric(format!(
                "environment reward is not finite at step {}",
                self.env_steps + 1
            )));
        }

        let episode = self.episode.as_mut().expect("episode just ensured");
        let done = episode.age() + 1 >= episode.horizon;
        self.pool.push(Transition {
            state,
            action,
            reward: reward as f32,
            next_state: next_state.clone(),
            done,
        });
        episode.advance(next_state.moving);
        self.env_steps += 1;
        self.episode_reward += reward;
        if done {
            self.episodes_done += 1;
            self.log.episodes.push(EpisodeRecord {
                index: self.episodes_done,
                steps: episode.age(),
                reward_sum: self.episode_reward,
            });
        }
        Ok(reward)
    }

    /// Re-generates the batch's next moving images with gradients, feeding
    /// the stored actions to the builder, and steps the shared optimizer
    /// over the actor, builder and uncertainty weights.
    fn generative_round(&mut self, batch: &[Transition]) -> Result<LossBreakdown> {
        let movings = rl::stack(batch.iter().map(|t| &t.state.moving))?;
        let (unique_styles, style_index, _) =
            rl::dedup_styles(batch.iter().map(|t| &t.state.style))?;
        let actions = rl::stack(batch.iter().map(|t| &t.action))?;

        let feats = self.params.actor.encode_content(&movings)?;
        let signals = self
            .params
            .actor
            .encode_style(&unique_styles)?
            .select(&style_index)?;
        let produced = self.params.builder.decode(&feats, &actions, &signals)?;

        let content = objectives::content_loss(&self.backbone, &produced, &movings)?;
        let targets = self
            .style_cache
            .targets(&self.backbone, &unique_styles)?
            .select(&style_index)?;
        let style = objectives::style_loss_from_targets(&self.backbone, &produced, &targets)?;
        let anchor_feats = self.params.actor.encode_style(&produced)?.level_features()?;
        let style_feats = signals.level_features()?;
        let contrastive = objectives::contrastive_loss(&anchor_feats, &style_feats)?;

        let breakdown = objectives::final_loss(&self.weights, &content, &style, &contrastive)?;
        breakdown.weighted_total.backward()?;
        self.generative_opt.step();
        self.generative_opt.zero_grad();
        Ok(breakdown)
    }

    /// One full loop iteration: `env_batch` environment interactions, then
    /// (once the pool is warm) one control round and one generative round.
    /// Returns whether the learning rounds ran.
    pub fn step(&mut self) -> Result<bool> {
        let mut reward = 0.0;
        for _ in 0..self.config.env_batch {
            reward = self.env_interaction()?;
        }
        if self.pool.len() < self.config.warmup_steps {
            return Ok(false);
        }

        let start = Instant::now();
        let batch: Vec<Transition> = self
            .pool
            .sample(self.config.replay_batch, &mut self.streams.replay)?
            .into_iter()
            .cloned()
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let alpha = self.params.alpha();

        let critic_loss = rl::critic_update(
            &self.params,
            &mut self.critic_opt,
            &refs,
            f64::from(self.config.gamma),
            alpha,
            &mut self.streams.critic,
        )?;
        let states: Vec<&State> = batch.iter().map(|t| &t.state).collect();
        let round = rl::actor_update(
            &self.params,
            &mut self.actor_opt,
            &states,
            alpha,
            &mut self.streams.actor,
        )?;
        let new_alpha = rl::alpha_update(
            &self.params,
            &mut self.alpha_opt,
            &round.log_probs,
            self.target_entropy,
        )?;
        for (critic, target) in self.params.critics.iter().zip(&self.params.targets) {
            ema_update(critic, target, f64::from(self.config.omega))?;
        }
        self.control_rounds += 1;

        let breakdown = self.generative_round(&batch)?;
        self.generative_rounds += 1;

        if !critic_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "critic residual is not finite at step {}",
                self.env_steps
            )));
        }
        if !round.j_p.is_finite() {
            return Err(Error::Numeric(format!(
                "policy objective is not finite at step {}",
                self.env_steps
            )));
        }

        let snapshot = breakdown.weights_snapshot;
        self.log.updates.push(UpdateRecord {
            env_step: self.env_steps,
            critic_loss,
            policy_objective: round.j_p,
            content_loss: f64::from(breakdown.content.item()),
            style_loss: f64::from(breakdown.style.item()),
            contrastive_loss: f64::from(breakdown.contrastive.item()),
            final_loss: f64::from(breakdown.weighted_total.item()),
            alpha: f64::from(new_alpha),
            lambda_content: f64::from(snapshot.0),
            lambda_style: f64::from(snapshot.1),
            lambda_contrastive: f64::from(snapshot.2),
            reward,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(true)
    }

    /// Runs until `total_env_steps`, writing checkpoints and logs into
    /// `out_dir` when given. On a numeric abort the last scheduled
    /// checkpoint stays on disk and the partial logs are flushed.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(RESOLVED_CONFIG_FILE), self.config.snapshot())?;
        }
        let interval = self.config.checkpoint_interval;
        let mut next_checkpoint = interval * (self.env_steps / interval + 1);
        while self.env_steps < self.config.total_env_steps {
            if let Err(e) = self.step() {
                if let Some(dir) = out_dir {
                    let _ = self.log.write(dir);
                }
                return Err(e);
            }
            if self.env_steps >= next_checkpoint && self.at_episode_boundary() {
                if let Some(last) = self.log.updates.last() {
                    log::info!(
                        "step {}/{}: reward {:.4} style {:.4} content {:.4} alpha {:.4}",
                        self.env_steps,
                        self.config.total_env_steps,
                        last.reward,
                        last.style_loss,
                        last.content_loss,
                        last.alpha
                    );
                }
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("step_{:06}.ckpt", self.env_steps));
                    self.save_checkpoint(&path)?;
                    log::info!("wrote checkpoint '{}'", path.display());
                }
                while next_checkpoint <= self.env_steps {
                    next_checkpoint += interval;
                }
            }
        }
        assert_eq!(
            self.control_rounds, self.generative_rounds,
            "control and generative rounds must alternate one-to-one"
        );
        if let Some(dir) = out_dir {
            self.save_checkpoint(&dir.join(FINAL_CHECKPOINT_FILE))?;
            self.log.write(dir)?;
        }
        Ok(())
    }

    /// Writes an inference checkpoint: agent parameters, uncertainty
    /// weights and the feature backbone.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut container = Container::new();
        insert_model(&mut container, &self.params, &self.weights);
        self.backbone.save(&mut container);
        container.save(path)
    }

    /// Writes the complete mutable state so the run can continue elsewhere:
    /// the inference checkpoint plus optimizer moments, random-stream
    /// positions, counters and the replay pool. Only valid at episode
    /// boundaries, where no partial trajectory needs saving.
    pub fn save_resume(&mut self, path: &Path) -> Result<()> {
        if !self.at_episode_boundary() {
            return Err(Error::Checkpoint(
                "resume snapshots are only taken at episode boundaries".into(),
            ));
        }
        let mut container = Container::new();
        insert_model(&mut container, &self.params, &self.weights);
        self.backbone.save(&mut container);
        self.critic_opt.save(&mut container, "opt.critic");
        self.actor_opt.save(&mut container, "opt.actor");
        self.alpha_opt.save(&mut container, "opt.alpha");
        self.generative_opt.save(&mut container, "opt.generative");
        self.streams.save(&mut container);
        container.insert_raw(
            "counters",
            vec![4],
            vec![
                self.env_steps as f32,
                self.episodes_done as f32,
                self.control_rounds as f32,
                self.generative_rounds as f32,
            ],
        );
        self.save_pool(&mut container);
        container.save(path)
    }

    /// Restores state written by [`TrainSession::save_resume`] into a
    /// freshly built session with the same configuration.
    pub fn restore(&mut self, path: &Path) -> Result<()> {
        let container = Container::load(path)?;
        restore_model(&container, &self.params, &self.weights)?;
        self.backbone = FeatureBackbone::from_container(&container)?;
        self.critic_opt.load(&container, "opt.critic")?;
        self.actor_opt.load(&container, "opt.actor")?;
        self.alpha_opt.load(&container, "opt.alpha")?;
        self.generative_opt.load(&container, "opt.generative")?;
        self.streams.load(&container)?;
        let (_, counters) = container.raw("counters")?;
        if counters.len() != 4 {
            return Err(Error::Checkpoint("counters entry is malformed".into()));
        }
        self.env_steps = counters[0] as usize;
        self.episodes_done = counters[1] as usize;
        self.control_rounds = counters[2] as usize;
        self.generative_rounds = counters[3] as usize;
        self.pool = Self::load_pool(&container, self.config.pool_capacity)?;
        self.episode = None;
        self.episode_reward = 0.0;
        self.log = TrainLog::default();
        Ok(())
    }

    /// Serializes the pool with storage-level dedup: tensors shared between
    /// transitions (chained moving images, per-episode styles) are written
    /// once and re-linked on load.
    fn save_pool(&self, container: &mut Container) {
        let mut keys: HashMap<u64, usize> = HashMap::new();
        let mut meta = Vec::with_capacity(self.pool.len() * 6);
        let mut arrays: Vec<Tensor> = Vec::new();
        let mut key_of = |t: &Tensor, arrays: &mut Vec<Tensor>| -> usize {
            *keys.entry(t.id()).or_insert_with(|| {
                arrays.push(t.clone());
                arrays.len() - 1
            })
        };
        for t in self.pool.iter() {
            let row = [
                key_of(&t.state.moving, &mut arrays) as f32,
                key_of(&t.state.style, &mut arrays) as f32,
                key_of(&t.action, &mut arrays) as f32,
                key_of(&t.next_state.moving, &mut arrays) as f32,
                t.reward,
                if t.done { 1.0 } else { 0.0 },
            ];
            meta.extend_from_slice(&row);
        }
        for (k, arr) in arrays.iter().enumerate() {
            container.insert(&format!("pool.arr.{k:06}"), arr);
        }
        container.insert_raw("pool.meta", vec![self.pool.len(), 6], meta);
    }

    fn load_pool(container: &Container, capacity: usize) -> Result<ReplayPool> {
        let mut pool = ReplayPool::new(capacity);
        let (shape, meta) = container.raw("pool.meta")?;
        let rows = shape[0];
        let mut arrays = Vec::new();
        loop {
            let name = format!("pool.arr.{:06}", arrays.len());
            if !container.contains(&name) {
                break;
            }
            arrays.push(container.tensor::<f32>(&name)?);
        }
        let fetch = |v: f32| -> Result<&Tensor> {
            arrays
                .get(v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("pool references missing array {v}")))
        };
        for row in meta.chunks_exact(6).take(rows) {
            let style = fetch(row[1])?;
            pool.push(Transition {
                state: State::new(fetch(row[0])?.clone(), style.clone())?,
                action: fetch(row[2])?.clone(),
                reward: row[4],
                next_state: State::new(fetch(row[3])?.clone(), style.clone())?,
                done: row[5] != 0.0,
            });
        }
        Ok(pool)
    }
}

/// Convenience wrapper: build a session from the configuration, run it to
/// completion and hand back the trained parameters and logs.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut session = TrainSession::new(config)?;
    session.run(out_dir)?;
    Ok(session.into_outcome())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn tiny_config(total: usize) -> TrainConfig {
        let mut config = TrainConfig::default();
        config.image_size = 8;
        config.total_env_steps = total;
        config.horizon = 2;
        config.replay_batch = 2;
        config.warmup_steps = 4;
        config.pool_capacity = 64;
        config.checkpoint_interval = 100;
        config.seed = 42;
        config
    }

    fn tiny_sets(seed: u64) -> (Vec<Tensor>, Vec<Tensor>) {
        let corpus = fixtures::fixture_corpus(seed);
        let shrink = |img: &Tensor| img.avg_pool(8).unwrap().detach();
        (
            corpus.content.iter().take(2).map(shrink).collect(),
            corpus.styles.iter().take(2).map(shrink).collect(),
        )
    }

    fn tiny_session(total: usize) -> TrainSession {
        let (content, styles) = tiny_sets(1);
        TrainSession::from_datasets(&tiny_config(total), content, styles).unwrap()
    }

    #[test]
    fn zero_steps_returns_initialized_state() {
        let mut session = tiny_session(0);
        session.run(None).unwrap();
        assert_eq!(session.env_steps(), 0);
        assert!(session.log().updates.is_empty());
        assert!(session.log().episodes.is_empty());
    }

    #[test]
    fn warmup_gates_learning_rounds() {
        let mut session = tiny_session(6);
        session.run(None).unwrap();
        assert_eq!(session.env_steps(), 6);
        assert_eq!(session.episodes_done(), 3);
        assert_eq!(session.rounds(), (3, 3));
        let steps: Vec<usize> = session.log().updates.iter().map(|r| r.env_step).collect();
        assert_eq!(steps, vec![4, 5, 6]);
        let (control_updates, generative_updates) = session.actor_update_counts();
        assert_eq!(control_updates, 3);
        assert_eq!(generative_updates, 3);
    }

    #[test]
    fn dataset_contract_errors() {
        let (content, styles) = tiny_sets(1);
        let err = TrainSession::from_datasets(&tiny_config(1), Vec::new(), styles.clone())
            .err()
            .expect("empty content set must fail");
        assert!(matches!(err, Error::Data(_)), "{err}");
        let err = TrainSession::from_datasets(&tiny_config(1), content, vec![styles[0].clone()])
            .err()
            .expect("single style must fail");
        assert!(err.to_string().contains("style"), "{err}");
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let run = || {
            let (content, styles) = tiny_sets(3);
            let mut session =
                TrainSession::from_datasets(&tiny_config(8), content, styles).unwrap();
            session.run(None).unwrap();
            (
                session.log().updates_csv(),
                session.log().episodes_csv(),
            )
        };
        let (a_updates, a_episodes) = run();
        let (b_updates, b_episodes) = run();
        assert_eq!(a_updates, b_updates);
        assert_eq!(a_episodes, b_episodes);
        assert!(a_updates.lines().count() > 1);
    }

    #[test]
    fn logged_lambdas_match_entry_weights() {
        let mut session = tiny_session(6);
        while session.env_steps() < 6 {
            let before = session.weights().lambdas();
            let updated = session.step().unwrap();
            if updated {
                let record = session.log().updates.last().unwrap();
                assert_eq!(record.lambda_content, f64::from(before.0));
                assert_eq!(record.lambda_style, f64::from(before.1));
                assert_eq!(record.lambda_contrastive, f64::from(before.2));
            }
        }
    }

    #[test]
    fn run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let (content, styles) = tiny_sets(5);
        let mut config = tiny_config(6);
        config.checkpoint_interval = 2;
        let mut session = TrainSession::from_datasets(&config, content, styles).unwrap();
        session.run(Some(dir.path())).unwrap();
        for name in [
            FINAL_CHECKPOINT_FILE,
            TRAIN_LOG_FILE,
            TIMING_LOG_FILE,
            EPISODE_LOG_FILE,
            RESOLVED_CONFIG_FILE,
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        assert!(dir.path().join("step_000002.ckpt").exists());
        let text = std::fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
        assert!(text.starts_with("step,critic_loss"));
        assert_eq!(text.lines().count(), 1 + session.log().updates.len());
    }

    #[test]
    fn checkpoint_roundtrips_every_array() {
        let dir = tempfile::tempdir().unwrap();
        let mut session = tiny_session(5);
        session.run(None).unwrap();
        let path = dir.path().join("model.ckpt");
        session.save_checkpoint(&path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for ((name, a), (_, b)) in session
            .params()
            .named_params()
            .into_iter()
            .zip(loaded.params.named_params())
        {
            assert_eq!(a.to_vec(), b.to_vec(), "array {name} drifted");
        }
        assert_eq!(
            session.weights().s1.to_vec(),
            loaded.weights.s1.to_vec()
        );
    }

    #[test]
    fn checkpoint_mismatch_names_first_offender() {
        let dir = tempfile::tempdir().unwrap();
        let session = tiny_session(1);
        let path = dir.path().join("model.ckpt");
        session.save_checkpoint(&path).unwrap();

        let mut container = Container::load(&path).unwrap();
        container.remove("actor.e1.weight");
        let broken = dir.path().join("missing.ckpt");
        container.save(&broken).unwrap();
        let err = load_checkpoint(&broken).err().expect("missing array must fail");
        assert!(err.to_string().contains("actor.e1.weight"), "{err}");

        let mut container = Container::load(&path).unwrap();
        container.insert_raw("actor.e1.weight", vec![2, 2], vec![0.0; 4]);
        let reshaped = dir.path().join("reshaped.ckpt");
        container.save(&reshaped).unwrap();
        let err = load_checkpoint(&reshaped).err().expect("bad shape must fail");
        assert!(err.to_string().contains("actor.e1.weight"), "{err}");
    }

    #[test]
    fn resume_reproduces_the_unbroken_run() {
        let total = 12;
        let (content, styles) = tiny_sets(7);
        let config = tiny_config(total);

        let mut unbroken =
            TrainSession::from_datasets(&config, content.clone(), styles.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let snapshot = dir.path().join("resume.ckpt");
        let mut saved_at = 0;
        while unbroken.env_steps() < total {
            unbroken.step().unwrap();
            if unbroken.env_steps() == 6 {
                unbroken.save_resume(&snapshot).unwrap();
                saved_at = unbroken.log().updates.len();
            }
        }

        let mut resumed = TrainSession::from_datasets(&config, content, styles).unwrap();
        resumed.restore(&snapshot).unwrap();
        assert_eq!(resumed.env_steps(), 6);
        while resumed.env_steps() < total {
            resumed.step().unwrap();
        }

        let row = |r: &UpdateRecord| {
            format!(
                "{} {} {} {} {} {} {} {} {} {} {} {}",
                r.env_step,
                r.critic_loss,
                r.policy_objective,
                r.content_loss,
                r.style_loss,
                r.contrastive_loss,
                r.final_loss,
                r.alpha,
                r.lambda_content,
                r.lambda_style,
                r.lambda_contrastive,
                r.reward
            )
        };
        let tail: Vec<String> = unbroken.log().updates[saved_at..].iter().map(row).collect();
        let resumed_rows: Vec<String> = resumed.log().updates.iter().map(row).collect();
        assert_eq!(tail, resumed_rows);
        assert_eq!(
            unbroken.log().episodes_csv().lines().skip(4).collect::<Vec<_>>(),
            resumed.log().episodes_csv().lines().skip(1).collect::<Vec<_>>()
        );
    }

    #[test]
    fn resume_snapshot_rejected_mid_episode() {
        let mut session = tiny_session(12);
        session.step().unwrap();
        assert!(!session.at_episode_boundary());
        let dir = tempfile::tempdir().unwrap();
        let err = session.save_resume(&dir.path().join("x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("episode boundaries"), "{err}");
    }

    #[test]
    fn sequence_generation_contract() {
        let session = tiny_session(1);
        let (content, styles) = tiny_sets(9);
        let seq = generate_sequence(session.params(), &content[0], &styles[0], 3).unwrap();
        assert_eq!(seq.len(), 3);
        for img in &seq {
            assert_eq!(img.shape(), content[0].shape());
            assert!(img.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let again = generate_sequence(session.params(), &content[0], &styles[0], 3).unwrap();
        for (a, b) in seq.iter().zip(&again) {
            assert_eq!(a.to_vec(), b.to_vec());
        }

        let err = generate_sequence(session.params(), &content[0], &styles[0], 0).unwrap_err();
        assert!(err.to_string().contains("steps must be >= 1"), "{err}");
        let odd = Tensor::zeros(&[1, 3, 10, 10]);
        assert!(generate_sequence(session.params(), &odd, &styles[0], 1).is_err());
    }
}
