//! Proximal policy optimization: rollouts, GAE, the clipped surrogate with
//! entropy bonus and value loss, and the per-episode update loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::neural::{save_checkpoint, Adam, AdamConfig, PolicyValueNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub total_episodes: usize,
    /// Episodes per update.
    pub update_frequency: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            gamma: 0.97,
            gae_lambda: 0.95,
            clip_eps: 0.15,
            batch_size: 64,
            n_epochs: 5,
            entropy_coef: 0.1,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            total_episodes: 100,
            update_frequency: 1,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validated(self) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.n_epochs == 0 || self.update_frequency == 0 {
            return bad("batch_size, n_epochs and update_frequency must be at least 1");
        }
        if [self.entropy_coef, self.value_coef, self.max_grad_norm]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("entropy_coef, value_coef and max_grad_norm must be finite and >= 0");
        }
        Ok(self)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            max_grad_norm: self.max_grad_norm,
            ..AdamConfig::default()
        }
    }
}

/// One environment step as seen by the behaviour policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
    pub log_prob: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Value estimate of the state after the last sample, used when the
    /// trajectory was cut before a terminal state.
    pub bootstrap_value: f64,
}

/// Advantages and returns by generalized advantage estimation. A `done`
/// flag at step t stops both the bootstrap and the accumulation across
/// the boundary.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::NoData("empty trajectory".into()));
    }
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "{n} rewards, {} values, {} done flags",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], 1.0)
        } else {
            (bootstrap_value, 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

pub fn trajectory_gae(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let r: Vec<f64> = traj.samples.iter().map(|s| s.reward).collect();
    let v: Vec<f64> = traj.samples.iter().map(|s| s.value).collect();
    let d: Vec<bool> = traj.samples.iter().map(|s| s.done).collect();
    compute_gae(&r, &v, &d, traj.bootstrap_value, gamma, lambda)
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the log-probability
/// of the taken action.
fn surrogate_grad(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    let inside = ratio > 1.0 - eps && ratio < 1.0 + eps;
    if unclipped <= clipped || inside {
        unclipped
    } else {
        0.0
    }
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn value_loss(predictions: &[f64], returns: &[f64]) -> Result<f64> {
    if predictions.len() != returns.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} returns",
            predictions.len(),
            returns.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::NoData("value loss of an empty batch".into()));
    }
    let sum: f64 = predictions.iter().zip(returns).map(|(v, r)| (v - r).powi(2)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Shifts and scales to mean 0, standard deviation 1 (population std).
/// Batches of one, or with zero spread, are only centred.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-12 {
        return adv.iter().map(|a| a - mean).collect();
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// Probability ratios of the taken actions under `net` against the
/// behaviour log-probabilities.
pub fn probability_ratios(net: &PolicyValueNet, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let act = net.forward(&s.obs, Some(&s.mask))?;
            Ok((act.probs[s.action].ln() - s.log_prob).exp())
        })
        .collect()
}

/// Mean clipped surrogate of a batch under `net`.
pub fn surrogate_objective(net: &PolicyValueNet, samples: &[Sample], adv: &[f64], eps: f64) -> Result<f64> {
    let ratios = probability_ratios(net, samples)?;
    Ok(ratios
        .iter()
        .zip(adv)
        .map(|(&r, &a)| clipped_surrogate(r, a, eps))
        .sum::<f64>()
        / samples.len() as f64)
}

/// Draws an index from a probability vector with one uniform variate.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Runs one episode with the current policy.
pub fn collect_episode<E: Environment>(
    env: &mut E,
    net: &PolicyValueNet,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    env.reset(seed);
    let mut samples = Vec::new();
    while !env.is_done() {
        let obs = env.observation();
        let mask = env.action_mask();
        let act = net.forward(&obs, Some(&mask))?;
        let action = sample_action(&act.probs, rng);
        let log_prob = act.probs[action].ln();
        let t = env.step(action)?;
        samples.push(Sample {
            obs,
            mask,
            action,
            reward: t.reward,
            log_prob,
            value: act.value,
            done: t.done,
        });
    }
    Ok(Trajectory {
        samples,
        bootstrap_value: 0.0,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

/// Loss terms and output gradients of one minibatch, accumulated into
/// `grads`. Returns (policy loss, value loss, mean entropy).
fn minibatch_gradients(
    net: &PolicyValueNet,
    batch: &[&Sample],
    adv: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    grads: &mut [f64],
) -> Result<(f64, f64, f64)> {
    let n = batch.len() as f64;
    let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
    let mut dlogits = vec![0.0; net.config().actions()];
    for ((s, &a), &ret) in batch.iter().zip(adv).zip(returns) {
        let act = net.forward(&s.obs, Some(&s.mask))?;
        let ratio = (act.probs[s.action].ln() - s.log_prob).exp();
        let h = entropy(&act.probs);
        pl -= clipped_surrogate(ratio, a, cfg.clip_eps) / n;
        vl += (act.value - ret).powi(2) / n;
        ent += h / n;

        let g = surrogate_grad(ratio, a, cfg.clip_eps);
        for (j, (d, &p)) in dlogits.iter_mut().zip(&act.probs).enumerate() {
            let onehot = if j == s.action { 1.0 } else { 0.0 };
            let mut v = -g / n * (onehot - p);
            if p > 0.0 {
                v += cfg.entropy_coef / n * p * (p.ln() + h);
            }
            *d = v;
        }
        let dvalue = 2.0 * cfg.value_coef * (act.value - ret) / n;
        net.accumulate_gradients(&act, &dlogits, dvalue, grads);
    }
    Ok((pl, vl, ent))
}

/// Shuffled minibatch epochs over one batch of samples.
pub fn ppo_update(
    net: &mut PolicyValueNet,
    adam: &mut Adam,
    samples: &[Sample],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.n_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let raw: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let adv = if cfg.normalize_advantages {
                normalize_advantages(&raw)
            } else {
                raw
            };
            let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let mut grads = net.zero_grads();
            let (pl, vl, ent) = minibatch_gradients(net, &batch, &adv, &ret, cfg, &mut grads)?;
            let total = pl + cfg.value_coef * vl - cfg.entropy_coef * ent;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss (policy {pl}, value {vl}, entropy {ent})"
                )));
            }
            net.apply_gradients(adam, &mut grads)?;
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.entropy += ent;
            stats.minibatches += 1;
        }
    }
    if stats.minibatches > 0 {
        let k = stats.minibatches as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub reward: f64,
    pub aqi_improvement_pct: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "episode,reward,aqi_improvement_pct,policy_loss,value_loss,entropy";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.episodes {
            let aqi = e.aqi_improvement_pct.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.episode, e.reward, aqi, e.policy_loss, e.value_loss, e.entropy
            );
        }
        out
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward).collect()
    }
}

/// Extra behaviour around [`train`].
pub struct TrainHooks<'a> {
    /// Where to write the last good network if training diverges.
    pub snapshot_dir: Option<PathBuf>,
    /// Called after every episode's update.
    pub on_episode: Box<dyn FnMut(&EpisodeLog, &PolicyValueNet) -> Result<()> + 'a>,
}

impl Default for TrainHooks<'_> {
    fn default() -> Self {
        Self {
            snapshot_dir: None,
            on_episode: Box::new(|_, _| Ok(())),
        }
    }
}

/// Seed of episode `i` of a run seeded with `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

pub fn train<E: Environment>(env: &mut E, net: &mut PolicyValueNet, cfg: &PpoConfig, seed: u64) -> Result<TrainLog> {
    train_with(env, net, cfg, seed, TrainHooks::default())
}

/// Trains `net` for `cfg.total_episodes` episodes, updating after every
/// `cfg.update_frequency` episodes. Deterministic given `seed`.
pub fn train_with<E: Environment>(
    env: &mut E,
    net: &mut PolicyValueNet,
    cfg: &PpoConfig,
    seed: u64,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainLog> {
    let cfg = cfg.validated()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(cfg.adam(), net.param_count());
    let mut log = TrainLog::default();
    let mut pending: Vec<Sample> = Vec::new();
    let mut pending_adv: Vec<f64> = Vec::new();
    let mut pending_ret: Vec<f64> = Vec::new();

    for episode in 0..cfg.total_episodes {
        let diverged = |reason: String, last_good: &PolicyValueNet| -> Error {
            let snapshot = hooks
                .snapshot_dir
                .as_deref()
                .and_then(|dir| write_snapshot(dir, episode, last_good).ok());
            Error::Diverged {
                episode,
                reason,
                snapshot,
            }
        };

        let traj = collect_episode(env, net, episode_seed(seed, episode), &mut rng).map_err(|e| match e {
            Error::NonFinite(what) => diverged(format!("non-finite {what} during rollout"), net),
            other => other,
        })?;
        let reward: f64 = traj.samples.iter().map(|s| s.reward).sum();
        if !traj.samples.is_empty() {
            let (adv, ret) = trajectory_gae(&traj, cfg.gamma, cfg.gae_lambda)?;
            pending.extend(traj.samples);
            pending_adv.extend(adv);
            pending_ret.extend(ret);
        }

        let mut stats = UpdateStats::default();
        if (episode + 1) % cfg.update_frequency == 0 && !pending.is_empty() {
            let before = net.clone();
            stats = ppo_update(net, &mut adam, &pending, &pending_adv, &pending_ret, &cfg, &mut rng).map_err(
                |e| match e {
                    Error::NonFinite(what) => diverged(format!("non-finite {what}"), &before),
                    other => other,
                },
            )?;
            pending.clear();
            pending_adv.clear();
            pending_ret.clear();
        }
        let entry = EpisodeLog {
            episode,
            reward,
            aqi_improvement_pct: env.aqi_improvement_pct(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        };
        (hooks.on_episode)(&entry, net)?;
        log.episodes.push(entry);
    }
    Ok(log)
}

fn write_snapshot(dir: &Path, episode: usize, net: &PolicyValueNet) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("diverged_episode_{episode}.agnn"));
    save_checkpoint(net, &path)?;
    Ok(path)
}

/// Argmax rollout of one episode; returns the actions taken.
pub fn greedy_decode<E: Environment>(env: &mut E, net: &PolicyValueNet, seed: u64) -> Result<Vec<usize>> {
    env.reset(seed);
    let mut actions = Vec::new();
    while !env.is_done() {
        let mask = env.action_mask();
        let act = net.forward(&env.observation(), Some(&mask))?;
        let a = crate::neural::argmax(&act.probs);
        env.step(a)?;
        actions.push(a);
    }
    Ok(actions)
}
