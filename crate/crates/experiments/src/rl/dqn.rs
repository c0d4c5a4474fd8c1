//! Deep Q-learning with a target network and uniform replay.

use elephant_core::diagnostics::{gradient_covariance, KernelMatrix};
use elephant_core::loss::LossSample;
use elephant_core::{build_mlp, Network, Optimizer, RngState};

use crate::classify::argmax;
use crate::config::{DqnConfig, EnvKind, ExperimentConfig};
use crate::error::Result;
use crate::rl::env::{make_env, Env};
use crate::rl::replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Environment steps taken when the episode ended.
    pub step: u64,
    pub episode: usize,
    pub ret: f64,
    pub epsilon: f64,
    /// Mean TD loss over the episode's updates; NaN before learning starts.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSnapshot {
    pub step: u64,
    pub matrix: KernelMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnReport {
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<(u64, EvalResult)>,
    pub covariance: Vec<CovarianceSnapshot>,
    /// Mean return of the last 10% of training episodes.
    pub final_return: f64,
    /// Greedy return at the end of training.
    pub greedy_return: Option<f64>,
    pub steps: u64,
    pub aborted: Option<String>,
}

pub struct DqnRun {
    pub report: DqnReport,
    pub net: Network,
}

/// Linear decay from the start to the end value over the configured
/// fraction of the budget, flat afterwards.
pub fn epsilon_at(cfg: &DqnConfig, step: u64) -> f64 {
    let span = cfg.epsilon_fraction * cfg.total_steps() as f64;
    if span <= 0.0 {
        return cfg.epsilon_end;
    }
    let t = step as f64 / span;
    if t >= 1.0 {
        return cfg.epsilon_end;
    }
    cfg.epsilon_start + t * (cfg.epsilon_end - cfg.epsilon_start)
}

pub fn greedy_action(net: &Network, obs: &[f64]) -> Result<usize> {
    Ok(argmax(&net.predict(obs)?))
}

/// Greedy rollouts in `env`.
pub fn evaluate_policy_in(net: &Network, env: &mut dyn Env, episodes: usize, rng: &mut RngState) -> Result<EvalResult> {
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes.max(1) {
        let mut obs = env.reset(rng);
        let mut ret = 0.0;
        loop {
            let out = env.step(greedy_action(net, &obs)?)?;
            ret += out.reward;
            if out.done() {
                break;
            }
            obs = out.obs;
        }
        returns.push(ret);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(EvalResult { mean, returns })
}

pub fn evaluate_policy(net: &Network, kind: EnvKind, episodes: usize, rng: &mut RngState) -> Result<EvalResult> {
    evaluate_policy_in(net, make_env(kind).as_mut(), episodes, rng)
}

/// `r + γ·max_a Q_target(s', a)`, without bootstrapping on terminal transitions.
pub fn td_targets(target: &Network, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    let rows = batch.len();
    let xn: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
    let qn = target.predict_batch(&xn, rows)?;
    let k = target.output_dim();
    Ok(batch
        .iter()
        .zip(qn.chunks_exact(k))
        .map(|(t, q)| {
            if t.done {
                t.reward
            } else {
                t.reward + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect())
}

/// Cosine similarities between per-sample TD-loss gradients of up to `k`
/// distinct stored transitions.
pub fn covariance_snapshot(
    net: &Network,
    target: &Network,
    buffer: &ReplayBuffer,
    k: usize,
    gamma: f64,
    rng: &mut RngState,
) -> Result<KernelMatrix> {
    let mut idx: Vec<usize> = (0..buffer.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(k);
    let chosen: Vec<&Transition> = idx.iter().filter_map(|i| buffer.get(*i)).collect();
    let y = td_targets(target, &chosen, gamma)?;
    let samples: Vec<LossSample> = chosen
        .iter()
        .zip(&y)
        .map(|(t, y)| LossSample::SelectedSquaredError {
            x: t.state.clone(),
            index: t.action,
            target: *y,
        })
        .collect();
    let ids: Vec<String> = idx.iter().map(|i| format!("slot{i}")).collect();
    Ok(gradient_covariance(net, &samples, &ids)?)
}

struct Update {
    loss: f64,
    max_q: f64,
}

fn update(
    net: &mut Network,
    target: &Network,
    opt: &mut Optimizer,
    batch: &[&Transition],
    gamma: f64,
) -> Result<std::result::Result<Update, String>> {
    let rows = batch.len();
    let k = net.output_dim();
    let y = td_targets(target, batch, gamma)?;
    let x: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let (q, cache) = net.forward_batch(&x, rows)?;
    let mut d = vec![0.0; q.len()];
    let mut loss = 0.0;
    for (i, (t, y)) in batch.iter().zip(&y).enumerate() {
        let e = q[i * k + t.action] - y;
        loss += e * e;
        d[i * k + t.action] = 2.0 * e / rows as f64;
    }
    let max_q = q.iter().chain(&y).fold(0.0f64, |m, v| m.max(v.abs()));
    let g = net.backward_batch(&cache, &d)?;
    if let Err(e) = opt.step(net, &g) {
        return Ok(Err(e.to_string()));
    }
    Ok(Ok(Update {
        loss: loss / rows as f64,
        max_q: if max_q.is_nan() { f64::INFINITY } else { max_q },
    }))
}

/// Mean of the last 10% of `returns` (at least one).
pub fn tail_mean(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return f64::NAN;
    }
    let n = ((returns.len() as f64) * 0.1).ceil().max(1.0) as usize;
    let tail = &returns[returns.len() - n..];
    tail.iter().sum::<f64>() / n as f64
}

pub fn dqn_train(cfg: &ExperimentConfig, seed: u64) -> Result<DqnRun> {
    let kind = cfg.dqn.env;
    dqn_train_with(cfg, seed, &|| make_env(kind))
}

/// Trains on environments produced by `make`: one for acting, one for
/// periodic greedy evaluation.
pub fn dqn_train_with(
    cfg: &ExperimentConfig,
    seed: u64,
    make: &dyn Fn() -> Box<dyn Env + Send>,
) -> Result<DqnRun> {
    let dc = &cfg.dqn;
    let mut env = make();
    let mut eval_env = make();
    let root = RngState::new(seed);
    let specs = cfg.network.layer_specs(env.obs_dim(), env.n_actions())?;
    let mut net = build_mlp(&specs, cfg.network.sigma_bias, &mut root.derive(1))?;
    let mut target = net.clone();
    let mut opt = Optimizer::new(cfg.optimizer())?;
    let lr = opt.config().learning_rate;
    let mut env_rng = root.derive(2);
    let mut act_rng = root.derive(3);
    let mut replay_rng = root.derive(4);
    let mut eval_rng = root.derive(5);
    let mut cov_rng = root.derive(6);
    let mut buffer = ReplayBuffer::new(dc.buffer);

    let total = dc.total_steps();
    let period = dc.eval_period();
    let mut episodes = Vec::new();
    let mut evals = Vec::new();
    let mut covariance = Vec::new();
    let mut aborted = None;
    let mut obs = env.reset(&mut env_rng);
    let mut ret = 0.0;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut steps = 0;

    'train: for step in 0..total {
        let eps = epsilon_at(dc, step);
        let action = if act_rng.bernoulli(eps) {
            act_rng.index(env.n_actions())
        } else {
            greedy_action(&net, &obs)?
        };
        let out = env.step(action)?;
        ret += out.reward;
        let done = out.done();
        buffer.push(Transition {
            state: std::mem::take(&mut obs),
            action,
            reward: out.reward,
            next_state: out.obs.clone(),
            done: out.terminated,
        });
        obs = out.obs;
        steps = step + 1;

        if steps >= dc.warmup && buffer.len() >= dc.batch_size {
            for _ in 0..dc.updates_per_step {
                let batch = buffer.sample(dc.batch_size, &mut replay_rng).expect("buffer holds a batch");
                match update(&mut net, &target, &mut opt, &batch, dc.gamma)? {
                    Ok(u) if u.max_q <= dc.q_limit => {
                        loss_sum += u.loss;
                        loss_n += 1;
                    }
                    Ok(u) => {
                        aborted = Some(format!("|Q| reached {} at step {steps}", u.max_q));
                        break 'train;
                    }
                    Err(reason) => {
                        aborted = Some(format!("{reason} at step {steps}"));
                        break 'train;
                    }
                }
            }
        }
        if steps % dc.target_sync == 0 {
            target = net.clone();
        }
        if done {
            episodes.push(EpisodeRecord {
                step: steps,
                episode: episodes.len(),
                ret,
                epsilon: eps,
                loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
                lr,
            });
            ret = 0.0;
            loss_sum = 0.0;
            loss_n = 0;
            obs = env.reset(&mut env_rng);
        }
        if steps % period == 0 {
            evals.push((steps, evaluate_policy_in(&net, eval_env.as_mut(), dc.eval_episodes, &mut eval_rng)?));
        }
        if dc.covariance_steps.contains(&steps) && steps < total {
            let matrix = covariance_snapshot(&net, &target, &buffer, dc.covariance_samples, dc.gamma, &mut cov_rng)?;
            covariance.push(CovarianceSnapshot { step: steps, matrix });
        }
    }

    let returns: Vec<f64> = episodes.iter().map(|e| e.ret).collect();
    let mut greedy_return = None;
    if aborted.is_none() {
        let matrix = covariance_snapshot(&net, &target, &buffer, dc.covariance_samples, dc.gamma, &mut cov_rng)?;
        covariance.push(CovarianceSnapshot { step: steps, matrix });
        greedy_return = Some(match evals.last() {
            Some((s, e)) if *s == steps => e.mean,
            _ => evaluate_policy_in(&net, eval_env.as_mut(), dc.eval_episodes, &mut eval_rng)?.mean,
        });
    }
    Ok(DqnRun {
        report: DqnReport {
            final_return: tail_mean(&returns),
            episodes,
            evals,
            covariance,
            greedy_return,
            steps,
            aborted,
        },
        net,
    })
}
