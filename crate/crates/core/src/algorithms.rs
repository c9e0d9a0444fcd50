//! The hybrid training loop and its baselines.
//!
//! [`run_hpo`], [`run_xpo`] and [`run_online_dpo`] share one loop and
//! consume the run RNG identically, so XPO is HPO with `gamma = 0` and
//! online DPO is XPO with `alpha = 0`, bit for bit. [`run_offline_dpo`] is a
//! separate full-batch (or minibatch) minimization over a fixed dataset.
//!
//! Per round the loop labels one fresh pair, resamples `gamma` offline pairs
//! with replacement and runs `inner_steps` AdamW steps on
//!
//! ```text
//! alpha * sum_{D_opt} log pi(y|x) + sum_{D_hyb} -log sigma(z)
//! ```
//!
//! scaled by `1 / (t + gamma)`. `D_opt` holds `t + gamma` draws from the
//! sampler policy; each draw comes from its own RNG stream keyed by a
//! per-round seed, so only the draws a minibatch touches are ever built.

use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{first_wins, mix_seed, BanditInstance, ContextFeatures, OfflineDataset, Preset};
use crate::objective::{dpo_accumulate, optimism_accumulate, PreparedPair};
use crate::optimizer::{run_k_steps, AdamW, AdamWConfig};
use crate::policy::{context_terms, report, sample_index, LogLinearPolicy, ObjectiveReport};
use crate::vecops::{dot, log_softmax, softmax, sub};
use crate::{seeded_rng, Error, Result};

/// How the opponent policy `pi~` is chosen after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerStrategy {
    /// Always the reference policy.
    FixedRef,
    /// A uniformly drawn iterate among `pi^(1), ..., pi^(t)`.
    UniformPast,
}

impl FromStr for SamplerStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_ref" => Ok(Self::FixedRef),
            "uniform_past" => Ok(Self::UniformPast),
            _ => Err(Error::InvalidArgument(format!("unknown sampler {s:?}"))),
        }
    }
}

/// Contents of `D_opt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimismMode {
    /// `t + gamma` fresh draws from the current sampler every round.
    Fresh,
    /// The `t` opponent responses seen so far plus `gamma` fresh draws.
    Cumulative,
}

impl FromStr for OptimismMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(Self::Fresh),
            "cumulative" => Ok(Self::Cumulative),
            _ => Err(Error::InvalidArgument(format!(
                "unknown optimism mode {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: usize,
    pub t_rounds: usize,
    pub sampler: SamplerStrategy,
    pub inner_steps: usize,
    pub eval_contexts: usize,
    pub seed: u64,
    pub minibatch: usize,
    /// Use every pair and every `D_opt` draw in each optimizer step.
    pub full_batch: bool,
    /// Start each inner minimization from the previous iterate instead of
    /// from `theta_ref`.
    pub warm_start: bool,
    /// Zero the AdamW moments at the start of every round.
    pub reset_moments: bool,
    pub optimism: OptimismMode,
    pub optimizer: AdamWConfig,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0,
            t_rounds: 100,
            sampler: SamplerStrategy::FixedRef,
            inner_steps: 20,
            eval_contexts: 512,
            seed: 0,
            minibatch: 5,
            full_batch: false,
            warm_start: true,
            reset_moments: true,
            optimism: OptimismMode::Fresh,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Optimism weights tried by the experiment; the best one is reported.
pub const PRESET_ALPHAS: [f64; 2] = [1.0, 10.0];

impl HpoConfig {
    /// Hyperparameters of the published experiment. `alpha` is the first
    /// grid value from [`PRESET_ALPHAS`]; online baselines use `gamma = 0`
    /// and `t_rounds + n_off` rounds.
    pub fn preset(preset: Preset) -> Self {
        Self {
            alpha: PRESET_ALPHAS[0],
            beta: 1.0,
            gamma: preset.n_off(),
            t_rounds: 1500,
            sampler: SamplerStrategy::FixedRef,
            inner_steps: 20,
            eval_contexts: 128,
            minibatch: 5,
            optimizer: AdamWConfig {
                lr: 0.01,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and > 0");
        }
        if self.t_rounds == 0
            || self.inner_steps == 0
            || self.eval_contexts == 0
            || self.minibatch == 0
        {
            return bad("t_rounds, inner_steps, eval_contexts and minibatch must be >= 1");
        }
        if self.optimizer.lr.is_nan()
            || self.optimizer.lr <= 0.0
            || self.optimizer.weight_decay < 0.0
        {
            return bad("lr must be > 0 and weight_decay >= 0");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        hash_json(self)
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    let s = serde_json::to_string(v).expect("config serializes");
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Frozen evaluation contexts with cached features, rewards and reference
/// log-probabilities, shared by every algorithm and seed of an experiment.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub seed: u64,
    pub beta: f64,
    contexts: Vec<Vec<f64>>,
    feats: Vec<ContextFeatures>,
    rewards: Vec<Vec<f64>>,
    ref_log_probs: Vec<Vec<f64>>,
    optimal: ObjectiveReport,
}

impl EvalSet {
    pub fn new(
        instance: &BanditInstance,
        reference: &LogLinearPolicy,
        beta: f64,
        n_contexts: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_contexts == 0 {
            return Err(Error::InvalidArgument(
                "need at least one evaluation context".into(),
            ));
        }
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let contexts: Vec<Vec<f64>> = (0..n_contexts)
            .map(|_| instance.sample_context(&mut rng))
            .collect();
        let feats: Vec<ContextFeatures> = contexts.iter().map(|x| instance.features(x)).collect();
        let rewards = feats.iter().map(|f| instance.rewards(f)).collect();
        let ref_log_probs = feats
            .iter()
            .map(|f| reference.log_probs_from_features(f))
            .collect();
        let mut set = Self {
            seed,
            beta,
            contexts,
            feats,
            rewards,
            ref_log_probs,
            optimal: report(beta, 0.0, 0.0, 1),
        };
        set.optimal = set.evaluate(&crate::policy::optimal_policy(instance, reference, beta).theta);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn features(&self) -> &[ContextFeatures] {
        &self.feats
    }

    /// `J_beta` of the closed-form optimum on this context set.
    pub fn optimal(&self) -> &ObjectiveReport {
        &self.optimal
    }

    /// `J_beta(pi_theta)` with exact sums over responses.
    pub fn evaluate(&self, theta: &[f64]) -> ObjectiveReport {
        let mut logits = Vec::new();
        let (mut er, mut kl) = (0.0, 0.0);
        for ((f, r), lr) in self
            .feats
            .iter()
            .zip(&self.rewards)
            .zip(&self.ref_log_probs)
        {
            logits.resize(f.num_responses(), 0.0);
            f.logits_into(theta, &mut logits);
            let lp = log_softmax(&logits);
            let (e, k) = context_terms(&lp, lr, r);
            er += e;
            kl += k;
        }
        report(self.beta, er, kl, self.contexts.len())
    }
}

/// One logged round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    /// Offline samples counted plus online pairs labelled so far.
    pub total_samples: usize,
    pub j_beta: f64,
    /// `J_beta(pi*) - J_beta(pi)`, unclipped.
    pub suboptimality: f64,
    /// Running sum of the clipped suboptimality.
    pub cum_regret: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub per_iter: Vec<IterRecord>,
    /// Iterate with the largest logged `J_beta`.
    pub returned_policy: LogLinearPolicy,
    pub best_index: usize,
    pub final_policy: LogLinearPolicy,
    pub optimal_j_beta: f64,
    /// Offline samples counted in `total_samples`.
    pub sample_offset: usize,
    pub wall_time_ms: u64,
}

impl PartialEq for RunResult {
    /// Wall time is excluded so that reruns compare equal.
    fn eq(&self, o: &Self) -> bool {
        self.config_hash == o.config_hash
            && self.per_iter == o.per_iter
            && self.returned_policy == o.returned_policy
            && self.best_index == o.best_index
            && self.final_policy == o.final_policy
            && self.optimal_j_beta.to_bits() == o.optimal_j_beta.to_bits()
            && self.sample_offset == o.sample_offset
    }
}

struct Logger {
    opt_j: f64,
    offset: usize,
    records: Vec<IterRecord>,
    cum: f64,
    best: Option<(usize, f64, Vec<f64>)>,
}

impl Logger {
    fn new(opt_j: f64, offset: usize) -> Self {
        Self {
            opt_j,
            offset,
            records: Vec::new(),
            cum: 0.0,
            best: None,
        }
    }

    fn log(&mut self, t: usize, online: usize, j: f64, loss: f64, theta: &[f64], accrue: bool) {
        let sub = self.opt_j - j;
        if accrue {
            self.cum += sub.max(0.0);
        }
        let idx = self.records.len();
        self.records.push(IterRecord {
            t,
            total_samples: self.offset + online,
            j_beta: j,
            suboptimality: sub,
            cum_regret: self.cum,
            loss,
        });
        if self.best.as_ref().is_none_or(|(_, bj, _)| j > *bj) {
            self.best = Some((idx, j, theta.to_vec()));
        }
    }

    fn finish(self, hash: String, final_theta: Vec<f64>, started: Instant) -> RunResult {
        let (best_index, _, best_theta) = self.best.expect("at least one logged iterate");
        RunResult {
            config_hash: hash,
            per_iter: self.records,
            returned_policy: LogLinearPolicy::new(best_theta),
            best_index,
            final_policy: LogLinearPolicy::new(final_theta),
            optimal_j_beta: self.opt_j,
            sample_offset: self.offset,
            wall_time_ms: started.elapsed().as_millis() as u64,
        }
    }
}

/// `fixed_ref` returns `pi_ref`; `uniform_past` a uniformly drawn element
/// of `past`.
pub fn select_sampler<'a, R: Rng + ?Sized>(
    strategy: SamplerStrategy,
    past: &'a [LogLinearPolicy],
    reference: &'a LogLinearPolicy,
    rng: &mut R,
) -> Result<&'a LogLinearPolicy> {
    match strategy {
        SamplerStrategy::FixedRef => Ok(reference),
        SamplerStrategy::UniformPast => {
            if past.is_empty() {
                return Err(Error::InvalidArgument(
                    "uniform_past needs a nonempty history".into(),
                ));
            }
            Ok(&past[rng.random_range(0..past.len())])
        }
    }
}

/// Lazily built `D_opt`: index `i` below `past.len()` is a stored opponent
/// response, everything else a fresh draw from the sampler.
struct OptSet<'a> {
    instance: &'a BanditInstance,
    sampler: &'a [f64],
    key: u64,
    past: &'a [(Vec<f64>, usize)],
    len: usize,
}

impl OptSet<'_> {
    fn draw(&self, i: usize) -> (ContextFeatures, usize) {
        let mut f = ContextFeatures::default();
        let y = self.draw_into(i, &mut f);
        (f, y)
    }

    /// Writes the features of draw `i` into `f` and returns its response.
    fn draw_into(&self, i: usize, f: &mut ContextFeatures) -> usize {
        if let Some((x, y)) = self.past.get(i) {
            self.instance.features_into(x, f);
            return *y;
        }
        let mut rng = seeded_rng(mix_seed(self.key, i as u64));
        let x = self.instance.sample_context(&mut rng);
        self.instance.features_into(&x, f);
        sample_index(&softmax(&f.logits(self.sampler)), &mut rng)
    }
}

/// Algorithm-level hybrid loop.
pub fn run_hpo<R: Rng + ?Sized>(
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    offline: &OfflineDataset,
    cfg: &HpoConfig,
    eval: &EvalSet,
    rng: &mut R,
) -> Result<RunResult> {
    cfg.validate()?;
    check_eval(cfg.beta, eval)?;
    if cfg.gamma > 0 && offline.is_empty() {
        return Err(Error::EmptyDataset(
            "offline dataset is empty but gamma > 0",
        ));
    }
    let offline_pairs: Vec<PreparedPair> = if cfg.gamma > 0 {
        offline
            .records
            .iter()
            .map(|r| PreparedPair::from_record(instance, r))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let offset = if cfg.gamma > 0 { offline.len() } else { 0 };
    online_loop(instance, reference, &offline_pairs, offset, cfg, eval, rng)
}

/// HPO without offline data.
pub fn run_xpo<R: Rng + ?Sized>(
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    cfg: &HpoConfig,
    eval: &EvalSet,
    rng: &mut R,
) -> Result<RunResult> {
    let cfg = HpoConfig {
        gamma: 0,
        ..cfg.clone()
    };
    run_hpo(
        instance,
        reference,
        &OfflineDataset::default(),
        &cfg,
        eval,
        rng,
    )
}

/// Iterative online DPO: XPO with `alpha = 0`.
pub fn run_online_dpo<R: Rng + ?Sized>(
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    cfg: &HpoConfig,
    eval: &EvalSet,
    rng: &mut R,
) -> Result<RunResult> {
    let cfg = HpoConfig {
        alpha: 0.0,
        ..cfg.clone()
    };
    run_xpo(instance, reference, &cfg, eval, rng)
}

fn check_eval(beta: f64, eval: &EvalSet) -> Result<()> {
    if eval.beta.to_bits() != beta.to_bits() {
        return Err(Error::InvalidArgument(format!(
            "evaluation set built for beta {} but the run uses {}",
            eval.beta, beta
        )));
    }
    Ok(())
}

fn online_loop<R: Rng + ?Sized>(
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    offline_pairs: &[PreparedPair],
    offset: usize,
    cfg: &HpoConfig,
    eval: &EvalSet,
    rng: &mut R,
) -> Result<RunResult> {
    let started = Instant::now();
    let d = instance.feat_dim();
    if reference.dim() != d {
        return Err(Error::InvalidArgument(
            "reference policy dimension mismatch".into(),
        ));
    }
    let theta_ref = &reference.theta;
    let mut theta = theta_ref.clone();
    let mut history = vec![reference.clone()];
    let mut sampler = reference.clone();
    let mut online: Vec<PreparedPair> = Vec::with_capacity(cfg.t_rounds);
    let mut past_opt: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut adam = AdamW::new(cfg.optimizer, d);
    let mut log = Logger::new(eval.optimal().j_beta, offset);
    let mut draws: Vec<(ContextFeatures, usize)> = Vec::new();

    for t in 1..=cfg.t_rounds {
        // line 4-6: sample, label, append
        let x = instance.sample_context(rng);
        let feats = instance.features(&x);
        let y = sample_index(&softmax(&feats.logits(&theta)), rng);
        let y_tilde = sample_index(&softmax(&feats.logits(&sampler.theta)), rng);
        let r_y = dot(&instance.theta_star, feats.row(y));
        let r_tilde = dot(&instance.theta_star, feats.row(y_tilde));
        let pair = if first_wins(r_y, r_tilde, rng) {
            PreparedPair::from_features(&feats, y, y_tilde)
        } else {
            PreparedPair::from_features(&feats, y_tilde, y)
        };
        online.push(pair);
        if cfg.optimism == OptimismMode::Cumulative {
            past_opt.push((x, y_tilde));
        }
        // line 7-8: gamma offline pairs with replacement
        let off_idx: Vec<usize> = (0..cfg.gamma)
            .map(|_| rng.random_range(0..offline_pairs.len()))
            .collect();
        let hyb: Vec<&PreparedPair> = online
            .iter()
            .chain(off_idx.iter().map(|&i| &offline_pairs[i]))
            .collect();
        // line 9
        let opt_set = OptSet {
            instance,
            sampler: &sampler.theta,
            key: rng.random::<u64>(),
            past: &past_opt,
            len: t + cfg.gamma,
        };
        let cached: Vec<(ContextFeatures, usize)> = if cfg.full_batch && cfg.alpha != 0.0 {
            (0..opt_set.len).map(|i| opt_set.draw(i)).collect()
        } else {
            Vec::new()
        };
        // line 10
        if cfg.reset_moments {
            adam.reset();
        }
        let start = if cfg.warm_start {
            theta.clone()
        } else {
            theta_ref.clone()
        };
        let n = hyb.len() as f64;
        let (next, loss) = run_k_steps(
            start,
            |th, grad| {
                let diff = sub(th, theta_ref);
                if cfg.full_batch {
                    let dpo = dpo_accumulate(
                        &diff,
                        hyb.iter().copied(),
                        cfg.beta,
                        1.0 / n,
                        Some(&mut *grad),
                    );
                    let opt = optimism_accumulate(
                        th,
                        cached.iter().map(|(f, y)| (f, *y)),
                        cfg.alpha / opt_set.len as f64,
                        Some(grad),
                    );
                    return Ok(dpo / n + opt);
                }
                let mb = cfg.minibatch;
                let picks: Vec<&PreparedPair> = (0..mb)
                    .map(|_| hyb[rng.random_range(0..hyb.len())])
                    .collect();
                let dpo = dpo_accumulate(&diff, picks, cfg.beta, 1.0 / mb as f64, Some(&mut *grad));
                let mut opt = 0.0;
                if cfg.alpha != 0.0 {
                    draws.resize_with(mb, Default::default);
                    for slot in draws.iter_mut() {
                        slot.1 = opt_set.draw_into(rng.random_range(0..opt_set.len), &mut slot.0);
                    }
                    opt = optimism_accumulate(
                        th,
                        draws.iter().map(|(f, y)| (f, *y)),
                        cfg.alpha / mb as f64,
                        Some(grad),
                    );
                }
                Ok(dpo / mb as f64 + opt)
            },
            cfg.inner_steps,
            &mut adam,
        )?;
        theta = next;
        history.push(LogLinearPolicy::new(theta.clone()));
        // line 11
        sampler = select_sampler(cfg.sampler, &history, reference, rng)?.clone();
        let j = eval.evaluate(&theta).j_beta;
        if !j.is_finite() {
            return Err(Error::NonFinite(format!("J_beta is {j} after round {t}")));
        }
        log.log(t, t, j, loss, &theta, true);
        log::debug!("round {t}: J_beta {j:.6} loss {loss:.6}");
    }
    Ok(log.finish(cfg.config_hash(), theta, started))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineDpoConfig {
    pub beta: f64,
    pub steps: usize,
    /// Weight of the pessimism term `-alpha sum log pi` on the dataset's
    /// responses; `None` disables it.
    pub pessimism_alpha: Option<f64>,
    /// Records per step; `None` uses the whole dataset.
    pub minibatch: Option<usize>,
    pub checkpoint_every: usize,
    pub optimizer: AdamWConfig,
}

impl Default for OfflineDpoConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            steps: 1000,
            pessimism_alpha: None,
            minibatch: None,
            checkpoint_every: 100,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl OfflineDpoConfig {
    pub fn config_hash(&self) -> String {
        hash_json(self)
    }
}

/// DPO on a fixed offline dataset, optionally with a pessimism term.
///
/// Logged rows are checkpoints at `t = step`; the last one is the final
/// policy. `steps = 0` logs the reference policy alone.
pub fn run_offline_dpo<R: Rng + ?Sized>(
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    dataset: &OfflineDataset,
    cfg: &OfflineDpoConfig,
    eval: &EvalSet,
    rng: &mut R,
) -> Result<RunResult> {
    let started = Instant::now();
    check_eval(cfg.beta, eval)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("offline dataset"));
    }
    if cfg.checkpoint_every == 0 || cfg.minibatch == Some(0) {
        return Err(Error::InvalidArgument(
            "checkpoint_every and minibatch must be >= 1".into(),
        ));
    }
    let pairs: Vec<PreparedPair> = dataset
        .records
        .iter()
        .map(|r| PreparedPair::from_record(instance, r))
        .collect::<Result<_>>()?;
    let alpha = cfg.pessimism_alpha.unwrap_or(0.0);
    let cached: Vec<ContextFeatures> = if alpha != 0.0 && cfg.minibatch.is_none() {
        dataset
            .records
            .iter()
            .map(|r| instance.features(&r.x))
            .collect()
    } else {
        Vec::new()
    };
    let theta_ref = &reference.theta;
    let mut theta = theta_ref.clone();
    let mut adam = AdamW::new(cfg.optimizer, instance.feat_dim());
    let mut log = Logger::new(eval.optimal().j_beta, dataset.len());
    if cfg.steps == 0 {
        log.log(0, 0, eval.evaluate(&theta).j_beta, f64::NAN, &theta, false);
        return Ok(log.finish(cfg.config_hash(), theta, started));
    }
    let n = pairs.len();
    let mut done = 0;
    while done < cfg.steps {
        let k = cfg.checkpoint_every.min(cfg.steps - done);
        let (next, loss) = run_k_steps(
            theta,
            |th, grad| {
                let diff = sub(th, theta_ref);
                let idx: Vec<usize> = match cfg.minibatch {
                    None => (0..n).collect(),
                    Some(mb) => (0..mb).map(|_| rng.random_range(0..n)).collect(),
                };
                let w = 1.0 / idx.len() as f64;
                let dpo = dpo_accumulate(
                    &diff,
                    idx.iter().map(|&i| &pairs[i]),
                    cfg.beta,
                    w,
                    Some(&mut *grad),
                );
                let mut pess = 0.0;
                if alpha != 0.0 {
                    let owned: Vec<ContextFeatures>;
                    let feats: Vec<&ContextFeatures> = if cached.is_empty() {
                        owned = idx
                            .iter()
                            .map(|&i| instance.features(&dataset.records[i].x))
                            .collect();
                        owned.iter().collect()
                    } else {
                        idx.iter().map(|&i| &cached[i]).collect()
                    };
                    let samples = idx.iter().zip(&feats).flat_map(|(&i, f)| {
                        let r = &dataset.records[i];
                        [(*f, r.y_plus), (*f, r.y_minus)]
                    });
                    pess = optimism_accumulate(th, samples, -alpha * w, Some(grad));
                }
                Ok(dpo * w + pess)
            },
            k,
            &mut adam,
        )?;
        theta = next;
        done += k;
        let j = eval.evaluate(&theta).j_beta;
        if !j.is_finite() {
            return Err(Error::NonFinite(format!("J_beta is {j} after step {done}")));
        }
        log.log(done, 0, j, loss, &theta, false);
    }
    Ok(log.finish(cfg.config_hash(), theta, started))
}

/// Theoretical optimism weight with absolute constant 1:
///
/// ```text
/// alpha = beta / ((V + R) e^{2R}) * sqrt(log(|Pi| T / delta) log T / ((T + gamma) SEC))
/// ```
///
/// with `log |Pi|` supplied as `log_pi_proxy`.
#[allow(clippy::too_many_arguments)]
pub fn alpha_schedule(
    beta: f64,
    v_max: f64,
    r_max: f64,
    t_rounds: usize,
    gamma: usize,
    sec_estimate: f64,
    log_pi_proxy: f64,
    delta: f64,
) -> Result<f64> {
    if !(beta > 0.0 && v_max > 0.0 && r_max > 0.0 && sec_estimate > 0.0 && log_pi_proxy > 0.0) {
        return Err(Error::InvalidArgument(
            "alpha schedule inputs must be positive".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) || t_rounds < 2 {
        return Err(Error::InvalidArgument(
            "need 0 < delta < 1 and T >= 2".into(),
        ));
    }
    let t = t_rounds as f64;
    let log_term = log_pi_proxy + t.ln() - delta.ln();
    let scale = beta / ((v_max + r_max) * (2.0 * r_max).exp());
    Ok(scale * (log_term * t.ln() / ((t + gamma as f64) * sec_estimate)).sqrt())
}
