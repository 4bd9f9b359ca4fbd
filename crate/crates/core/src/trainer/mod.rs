//! Direct policy optimization: alternate a sampling phase that explores with
//! the current policy and a learning phase that minimizes the expected
//! horizon cost over replayed states and random horizons.

mod adam;
mod buffer;

pub use adam::{Adam, AdamConfig};
pub use buffer::ReplayBuffer;

use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::autodiff::{checkpoint, ParamSet, Tape};
use crate::env::{Env, EnvState};
use crate::error::{Error, Result};
use crate::models::rollout_batch;
use crate::policy::{load_policy, save_policy, Policy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Horizons are drawn from `U{n_min, ..., n_max}`; `n_min = n_max` trains a fixed-horizon policy.
    pub n_min: usize,
    pub n_max: usize,
    /// Episode length `M` of one sampling phase.
    pub episode_len: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Run a sampling phase before every `sample_every`-th learning phase.
    pub sample_every: usize,
    /// Also store the reset state of each episode.
    pub store_initial_state: bool,
    /// Write a resumable snapshot every this many iterations (0: never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 20,
            episode_len: 50,
            batch_size: 64,
            iterations: 2000,
            buffer_capacity: 20_000,
            seed: 0,
            adam: AdamConfig::default(),
            sample_every: 1,
            store_initial_state: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 || self.episode_len == 0 || self.batch_size == 0 || self.sample_every == 0 {
            return Err(Error::Config("n_max, episode_len, batch_size and sample_every must be >= 1".into()));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::Config(format!("need 1 <= n_min <= n_max, got {}..{}", self.n_min, self.n_max)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config("buffer_capacity must be at least batch_size".into()));
        }
        Ok(())
    }
}

/// `N ~ U{n_min, ..., n_max}`.
pub fn sample_horizon<R: Rng>(rng: &mut R, n_min: usize, n_max: usize) -> usize {
    rng.gen_range(n_min..=n_max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub horizon: usize,
    pub pushed: usize,
    pub resets: usize,
    /// First row of the policy output applied at each step.
    pub applied: Vec<Vec<f64>>,
}

/// One episode of `M` steps applying only the first planned input.
pub fn sample_phase<R: Rng>(
    policy: &dyn Policy<f64>,
    env: &Env,
    config: &TrainConfig,
    buffer: &mut ReplayBuffer,
    rng: &mut R,
) -> Result<SampleOutcome> {
    let horizon = sample_horizon(rng, config.n_min, config.n_max);
    let mut state = env.reset(rng)?;
    let mut out = SampleOutcome {
        horizon,
        pushed: 0,
        resets: 0,
        applied: Vec::with_capacity(config.episode_len),
    };
    if config.store_initial_state {
        buffer.push(state.clone());
        out.pushed += 1;
    }
    for _ in 0..config.episode_len {
        let refs = env.reference(&state, horizon)?;
        let step = policy
            .forward(&state.x, &refs)
            .and_then(|u| {
                let u0 = u.row(0).to_vec();
                env.step(&state, &u0).map(|next| (u0, next))
            });
        match step {
            Ok((u0, next)) => {
                out.applied.push(u0);
                buffer.push(next.clone());
                out.pushed += 1;
                state = next;
            }
            Err(e) => {
                warn!("sampling diverged ({e}); resetting");
                out.resets += 1;
                state = env.reset(rng)?;
            }
        }
    }
    Ok(out)
}

/// `J = mean_b V(x_b, X^R_b, N)` and its parameter gradient.
pub fn batch_loss(
    policy: &dyn Policy<f64>,
    params: &ParamSet<f64>,
    env: &Env,
    states: &[EnvState],
    horizon: usize,
) -> Result<(f64, ParamSet<f64>, Vec<f64>)> {
    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let refs = states
        .iter()
        .map(|s| env.reference(s, horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let controls = policy.forward_with(&mut tape, &bound, &xs, &refs)?;
    let out = rollout_batch(&mut tape, env.dynamics(), env.cost(), &xs, &refs, &controls)?;
    let j = tape.mean(&out.costs)?;
    let grads = tape.backward(&j)?;
    Ok((j.item()?, bound.gradients(&grads), out.costs.into_data()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnOutcome {
    pub loss: f64,
    pub horizon: usize,
    pub applied: bool,
}

/// One minibatch, one horizon, one Adam step.
pub fn learn_phase<R: Rng>(
    policy: &mut dyn Policy<f64>,
    env: &Env,
    config: &TrainConfig,
    buffer: &ReplayBuffer,
    adam: &mut Adam,
    rng: &mut R,
) -> Result<LearnOutcome> {
    let states = buffer.sample(rng, config.batch_size)?;
    let horizon = sample_horizon(rng, config.n_min, config.n_max);
    match batch_loss(policy, policy.params(), env, &states, horizon) {
        Ok((loss, grads, _)) if loss.is_finite() && grads.iter().all(|(_, g)| g.data().iter().all(|v| v.is_finite())) => {
            adam.update(policy.params_mut(), &grads)?;
            Ok(LearnOutcome {
                loss,
                horizon,
                applied: true,
            })
        }
        Ok((loss, _, _)) => {
            warn!("non-finite loss or gradient ({loss}); step skipped");
            Ok(LearnOutcome {
                loss,
                horizon,
                applied: false,
            })
        }
        Err(Error::NonFinite { op }) => {
            warn!("non-finite value in {op}; step skipped");
            Ok(LearnOutcome {
                loss: f64::NAN,
                horizon,
                applied: false,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub buffer_size: usize,
    pub horizon: usize,
    pub wall_time: f64,
}

/// Lock-step trainer owning every piece of mutable training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub env: Env,
    pub policy: Box<dyn Policy<f64>>,
    pub buffer: ReplayBuffer,
    pub adam: Adam,
    pub iteration: usize,
    rng: ChaCha8Rng,
    started: Instant,
}

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    iteration: usize,
    adam_step: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: u128,
}

impl Trainer {
    pub fn new(config: TrainConfig, env: Env, policy: Box<dyn Policy<f64>>) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.adam, policy.params())?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            adam,
            config,
            env,
            policy,
            iteration: 0,
            started: Instant::now(),
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Sampling phases until the buffer can fill one minibatch.
    pub fn warm_up(&mut self) -> Result<()> {
        while self.buffer.len() < self.config.batch_size {
            sample_phase(self.policy.as_ref(), &self.env, &self.config, &mut self.buffer, &mut self.rng)?;
        }
        Ok(())
    }

    /// One training iteration: an optional sampling phase, then one learning phase.
    pub fn step(&mut self) -> Result<LogRow> {
        self.warm_up()?;
        if self.iteration % self.config.sample_every == 0 {
            let s = sample_phase(self.policy.as_ref(), &self.env, &self.config, &mut self.buffer, &mut self.rng)?;
            debug!("sampled {} states at N={}", s.pushed, s.horizon);
        }
        let l = learn_phase(
            self.policy.as_mut(),
            &self.env,
            &self.config,
            &self.buffer,
            &mut self.adam,
            &mut self.rng,
        )?;
        self.iteration += 1;
        Ok(LogRow {
            iteration: self.iteration,
            loss: l.loss,
            buffer_size: self.buffer.len(),
            horizon: l.horizon,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Runs until `config.iterations`, writing the CSV log (and periodic
    /// snapshots) under `out` when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<LogRow>> {
        let mut writer = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("train_log.csv");
                let append = self.iteration > 0 && path.exists();
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(append)
                    .write(true)
                    .truncate(!append)
                    .open(path)?;
                Some(csv::WriterBuilder::new().has_headers(!append).from_writer(file))
            }
            None => None,
        };
        let mut rows = Vec::with_capacity(self.config.iterations.saturating_sub(self.iteration));
        while self.iteration < self.config.iterations {
            let row = self.step()?;
            if let Some(w) = writer.as_mut() {
                w.serialize(&row)?;
            }
            rows.push(row);
            if let (Some(dir), k) = (out, self.config.checkpoint_every) {
                if k > 0 && self.iteration % k == 0 {
                    if let Some(w) = writer.as_mut() {
                        w.flush()?;
                    }
                    self.save_snapshot(&dir.join("snapshot"))?;
                }
            }
        }
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
        Ok(rows)
    }

    /// Policy, optimizer moments, buffer and RNG position, enough to resume.
    pub fn save_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = TrainerMeta {
            iteration: self.iteration,
            adam_step: self.adam.step,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
        };
        let mut extra = Map::new();
        extra.insert("iteration".into(), json!(self.iteration));
        save_policy(&dir.join("policy.ckpt"), self.policy.as_ref(), &extra)?;
        checkpoint::save(&dir.join("optimizer.ckpt"), &self.adam.to_param_set(), &Map::new())?;
        fs::write(dir.join("buffer.json"), serde_json::to_vec(&self.buffer)?)?;
        fs::write(dir.join("trainer.json"), serde_json::to_vec_pretty(&meta)?)?;
        fs::write(dir.join("train_config.json"), serde_json::to_vec_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn resume(dir: &Path, env: Env) -> Result<Self> {
        let config: TrainConfig = serde_json::from_slice(&fs::read(dir.join("train_config.json"))?)?;
        let meta: TrainerMeta = serde_json::from_slice(&fs::read(dir.join("trainer.json"))?)?;
        let (policy, _) = load_policy::<f64>(&dir.join("policy.ckpt"))?;
        let (moments, _) = checkpoint::load::<f64>(&dir.join("optimizer.ckpt"))?;
        let adam = Adam::from_param_set(config.adam, meta.adam_step, &moments, policy.params())?;
        let buffer: ReplayBuffer = serde_json::from_slice(&fs::read(dir.join("buffer.json"))?)?;
        let mut rng = ChaCha8Rng::from_seed(meta.rng_seed);
        rng.set_stream(meta.rng_stream);
        rng.set_word_pos(meta.rng_word_pos);
        Ok(Self {
            config,
            env,
            policy,
            buffer,
            adam,
            iteration: meta.iteration,
            rng,
            started: Instant::now(),
        })
    }
}

/// Convenience wrapper: build a trainer, run it, return the trained policy and log.
/// Writes `rows` as a training log CSV.
pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn train(
    config: TrainConfig,
    env: Env,
    policy: Box<dyn Policy<f64>>,
    out: Option<&Path>,
) -> Result<(Box<dyn Policy<f64>>, Vec<LogRow>)> {
    let mut t = Trainer::new(config, env, policy)?;
    let log = t.run(out)?;
    if let Some(dir) = out {
        let mut extra = Map::new();
        extra.insert("iteration".into(), Value::from(t.iteration));
        save_policy(&dir.join("policy.ckpt"), t.policy.as_ref(), &extra)?;
    }
    Ok((t.policy, log))
}

/// Sampling on a separate thread. The sampler reads parameter snapshots
/// published by the learner at iteration boundaries; the buffer is shared
/// under a mutex. Not bitwise reproducible.
pub fn train_concurrent(
    config: TrainConfig,
    env: Env,
    mut policy: Box<dyn Policy<f64>>,
    build_sampler: impl FnOnce() -> Result<Box<dyn Policy<f64>>>,
) -> Result<(Box<dyn Policy<f64>>, Vec<LogRow>)> {
    config.validate()?;
    let env = Arc::new(env);
    let buffer = Arc::new(Mutex::new(ReplayBuffer::new(config.buffer_capacity)?));
    let published = Arc::new(RwLock::new(policy.params().clone()));
    let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let mut sampler = build_sampler()?;
    let started = Instant::now();
    let mut adam = Adam::new(config.adam, policy.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(config.iterations);

    std::thread::scope(|scope| -> Result<()> {
        let producer = {
            let (env, buffer, published, done, config) =
                (env.clone(), buffer.clone(), published.clone(), done.clone(), config.clone());
            scope.spawn(move || -> Result<()> {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
                while !done.load(std::sync::atomic::Ordering::Relaxed) {
                    *sampler.params_mut() = published.read().expect("params lock").clone();
                    let mut local = ReplayBuffer::new(config.episode_len + 1)?;
                    sample_phase(sampler.as_ref(), &env, &config, &mut local, &mut rng)?;
                    let mut shared = buffer.lock().expect("buffer lock");
                    for s in local.items() {
                        shared.push(s.clone());
                    }
                }
                Ok(())
            })
        };
        let result = (|| -> Result<()> {
            while log.len() < config.iterations {
                let snapshot = {
                    let b = buffer.lock().expect("buffer lock");
                    if b.len() < config.batch_size {
                        None
                    } else {
                        Some(b.sample(&mut rng, config.batch_size)?)
                    }
                };
                let Some(states) = snapshot else {
                    std::thread::yield_now();
                    continue;
                };
                let horizon = sample_horizon(&mut rng, config.n_min, config.n_max);
                let (loss, grads, _) = batch_loss(policy.as_ref(), policy.params(), &env, &states, horizon)?;
                if loss.is_finite() {
                    adam.update(policy.params_mut(), &grads)?;
                    *published.write().expect("params lock") = policy.params().clone();
                }
                let size = buffer.lock().expect("buffer lock").len();
                log.push(LogRow {
                    iteration: log.len() + 1,
                    loss,
                    buffer_size: size,
                    horizon,
                    wall_time: started.elapsed().as_secs_f64(),
                });
            }
            Ok(())
        })();
        done.store(true, std::sync::atomic::Ordering::Relaxed);
        let produced = producer.join().map_err(|_| Error::Divergence("sampler thread panicked".into()))?;
        result?;
        produced
    })?;
    Ok((policy, log))
}
