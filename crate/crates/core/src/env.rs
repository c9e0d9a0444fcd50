//! Synthetic preference environments.
//!
//! A [`FeatureMap`] is a frozen one-hidden-layer tanh network applied to
//! `[x; onehot(y)]`; its hidden activations (times `scale`) are the features
//! shared by the ground-truth reward and by every log-linear policy. A
//! [`BanditInstance`] pairs a feature map with a reward direction, and a
//! [`TokenMdpInstance`] reuses the same construction per decoding step of a
//! tiny deterministic token-level MDP.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::policy::{sample_index, LogLinearPolicy};
use crate::vecops::{dot, norm2, sigmoid};
use crate::{seeded_rng, Error, Result};

/// Number of probe contexts used to measure `r_max`.
pub const R_MAX_PROBE_CONTEXTS: usize = 1000;

/// Largest trajectory set the token MDP will enumerate.
pub const TRAJECTORY_BUDGET: usize = 100_000;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_FEATURES: u64 = 1;
const TAG_THETA_STAR: u64 = 2;
const TAG_PROBE: u64 = 3;

/// Frozen tanh feature map `phi(x, y) = scale * tanh(W [x; onehot(y)] + b)`.
///
/// The hidden width equals the feature dimension. Because the response
/// enters as a one-hot vector, the pre-activation splits into a
/// context part `a = W_x x + b` and a response column `c_y`, and
/// `tanh(a + c) = (tanh a + tanh c) / (1 + tanh a tanh c)`. The response
/// half is tabulated once, so a full feature matrix for a context costs
/// `d` tanh evaluations instead of `d * |Y|`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    context_dim: usize,
    num_responses: usize,
    feat_dim: usize,
    /// Row-major `feat_dim x (context_dim + num_responses)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    scale: f64,
    /// `tanh(W[j, context_dim + y])` stored response-major: `[y * d + j]`.
    response_tanh: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        context_dim: usize,
        num_responses: usize,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        let feat_dim = weights.len();
        let input_dim = context_dim + num_responses;
        if context_dim == 0 || num_responses == 0 || feat_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature map dims must be >= 1".into(),
            ));
        }
        if weights.iter().any(|row| row.len() != input_dim) {
            return Err(Error::InvalidArgument(format!(
                "every weight row must have length {input_dim}"
            )));
        }
        if bias.len() != feat_dim {
            return Err(Error::InvalidArgument(
                "bias length must equal feat_dim".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if flat.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("feature map parameters".into()));
        }
        Ok(Self::from_flat(
            context_dim,
            num_responses,
            feat_dim,
            flat,
            bias,
            scale,
        ))
    }

    fn from_flat(
        context_dim: usize,
        num_responses: usize,
        feat_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        scale: f64,
    ) -> Self {
        let input_dim = context_dim + num_responses;
        let mut response_tanh = vec![0.0; num_responses * feat_dim];
        for y in 0..num_responses {
            for j in 0..feat_dim {
                response_tanh[y * feat_dim + j] = weights[j * input_dim + context_dim + y].tanh();
            }
        }
        Self {
            context_dim,
            num_responses,
            feat_dim,
            weights,
            bias,
            scale,
            response_tanh,
        }
    }

    /// Random frozen map. Weights and bias are zero-mean Gaussians with
    /// variance `1 / (context_dim + 1)`: the number of inputs that are
    /// active for any `(x, y)` (the context plus a single one-hot unit).
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        context_dim: usize,
        num_responses: usize,
        feat_dim: usize,
        scale: f64,
    ) -> Self {
        let input_dim = context_dim + num_responses;
        let std = (1.0 / (context_dim as f64 + 1.0)).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weights: Vec<f64> = (0..feat_dim * input_dim)
            .map(|_| normal.sample(rng))
            .collect();
        let bias: Vec<f64> = (0..feat_dim).map(|_| normal.sample(rng)).collect();
        Self::from_flat(context_dim, num_responses, feat_dim, weights, bias, scale)
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn num_responses(&self) -> usize {
        self.num_responses
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn input_dim(&self) -> usize {
        self.context_dim + self.num_responses
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weight matrix as rows of length `input_dim`.
    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        self.weights
            .chunks(self.input_dim())
            .map(|r| r.to_vec())
            .collect()
    }

    /// `tanh(W_x x + b)`, the context half of every hidden unit.
    pub fn context_activation(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.context_dim, "context dimension mismatch");
        let input_dim = self.input_dim();
        (0..self.feat_dim)
            .map(|j| {
                let row = &self.weights[j * input_dim..j * input_dim + self.context_dim];
                (dot(row, x) + self.bias[j]).tanh()
            })
            .collect()
    }

    #[inline]
    fn fill_response(&self, act: &[f64], y: usize, out: &mut [f64]) {
        let tc = &self.response_tanh[y * self.feat_dim..(y + 1) * self.feat_dim];
        for ((o, a), c) in out.iter_mut().zip(act).zip(tc) {
            *o = self.scale * (a + c) / (1.0 + a * c);
        }
    }

    /// Feature vector of a single `(x, y)` pair.
    pub fn phi(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        if y >= self.num_responses {
            return Err(Error::IndexOutOfRange {
                index: y,
                len: self.num_responses,
            });
        }
        let act = self.context_activation(x);
        let mut out = vec![0.0; self.feat_dim];
        self.fill_response(&act, y, &mut out);
        Ok(out)
    }

    /// Feature matrix of every response for one context.
    pub fn features(&self, x: &[f64]) -> ContextFeatures {
        let mut out = ContextFeatures::default();
        self.features_into(x, &mut out);
        out
    }

    /// Same as [`FeatureMap::features`], reusing `out`'s allocation.
    pub fn features_into(&self, x: &[f64], out: &mut ContextFeatures) {
        let act = self.context_activation(x);
        let d = self.feat_dim;
        out.feat_dim = d;
        out.num_responses = self.num_responses;
        out.data.resize(self.num_responses * d, 0.0);
        for (y, row) in out.data.chunks_mut(d).enumerate() {
            self.fill_response(&act, y, row);
        }
    }
}

/// Features of every response for one fixed context, response-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextFeatures {
    feat_dim: usize,
    num_responses: usize,
    data: Vec<f64>,
}

impl ContextFeatures {
    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn num_responses(&self) -> usize {
        self.num_responses
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.feat_dim..(y + 1) * self.feat_dim]
    }

    /// `<theta, phi(x, y)>` for every response.
    pub fn logits(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_responses];
        self.logits_into(theta, &mut out);
        out
    }

    pub fn logits_into(&self, theta: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks(self.feat_dim)) {
            *o = dot(theta, row);
        }
    }

    /// `sum_y w[y] phi(x, y)`.
    pub fn weighted_sum(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.feat_dim];
        self.weighted_sum_into(weights, &mut out);
        out
    }

    pub fn weighted_sum_into(&self, weights: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (w, row) in weights.iter().zip(self.data.chunks(self.feat_dim)) {
            crate::vecops::axpy(*w, row, out);
        }
    }
}

/// Linear-reward contextual bandit over a finite response set.
#[derive(Debug, Clone)]
pub struct BanditInstance {
    pub seed: u64,
    pub fmap: FeatureMap,
    pub theta_star: Vec<f64>,
    /// Largest `|r(x, y)|` over the probe set.
    pub r_max: f64,
}

impl BanditInstance {
    pub fn context_dim(&self) -> usize {
        self.fmap.context_dim()
    }

    pub fn num_responses(&self) -> usize {
        self.fmap.num_responses()
    }

    pub fn feat_dim(&self) -> usize {
        self.fmap.feat_dim()
    }

    pub fn reward(&self, x: &[f64], y: usize) -> Result<f64> {
        Ok(dot(&self.fmap.phi(x, y)?, &self.theta_star))
    }

    pub fn features(&self, x: &[f64]) -> ContextFeatures {
        self.fmap.features(x)
    }

    pub fn features_into(&self, x: &[f64], out: &mut ContextFeatures) {
        self.fmap.features_into(x, out)
    }

    /// Rewards of every response given precomputed features.
    pub fn rewards(&self, feats: &ContextFeatures) -> Vec<f64> {
        feats.logits(&self.theta_star)
    }

    /// Cauchy-Schwarz ceiling `||theta*|| * max ||phi||`, with
    /// `max ||phi|| <= scale * sqrt(d)` from the tanh range.
    pub fn r_max_ceiling(&self) -> f64 {
        norm2(&self.theta_star) * self.fmap.scale() * (self.feat_dim() as f64).sqrt()
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_context(rng, self.context_dim())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// On-disk form of a [`BanditInstance`].
#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    seed: u64,
    context_dim: usize,
    num_responses: usize,
    feat_dim: usize,
    scale: f64,
    r_max: f64,
    theta_star: Vec<f64>,
    bias: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl From<&BanditInstance> for InstanceDoc {
    fn from(inst: &BanditInstance) -> Self {
        Self {
            seed: inst.seed,
            context_dim: inst.context_dim(),
            num_responses: inst.num_responses(),
            feat_dim: inst.feat_dim(),
            scale: inst.fmap.scale(),
            r_max: inst.r_max,
            theta_star: inst.theta_star.clone(),
            bias: inst.fmap.bias().to_vec(),
            weights: inst.fmap.weight_rows(),
        }
    }
}

impl TryFrom<InstanceDoc> for BanditInstance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        if doc.weights.len() != doc.feat_dim || doc.theta_star.len() != doc.feat_dim {
            return Err(Error::InvalidArgument(
                "instance arrays disagree with feat_dim".into(),
            ));
        }
        let fmap = FeatureMap::new(
            doc.context_dim,
            doc.num_responses,
            doc.weights,
            doc.bias,
            doc.scale,
        )?;
        Ok(Self {
            seed: doc.seed,
            fmap,
            theta_star: doc.theta_star,
            r_max: doc.r_max,
        })
    }
}

/// Experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// `|Y| = 500`, `d = 100`, `N_off = 500`.
    Main,
    /// `|Y| = 50`, `d = 10`, `N_off = 500`.
    Appendix,
}

impl Preset {
    pub fn context_dim(self) -> usize {
        2
    }

    pub fn num_responses(self) -> usize {
        match self {
            Preset::Main => 500,
            Preset::Appendix => 50,
        }
    }

    pub fn feat_dim(self) -> usize {
        match self {
            Preset::Main => 100,
            Preset::Appendix => 10,
        }
    }

    pub fn n_off(self) -> usize {
        500
    }

    /// The experiment uses the raw hidden layer, so features are not
    /// rescaled. At `1/sqrt(d)` the reward gaps are too small for a few
    /// thousand labels to carry information.
    pub fn feature_scale(self) -> f64 {
        1.0
    }

    pub fn build_instance(self, seed: u64) -> Result<BanditInstance> {
        build_instance_with_scale(
            seed,
            self.context_dim(),
            self.num_responses(),
            self.feat_dim(),
            self.feature_scale(),
        )
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Preset::Main),
            "appendix" => Ok(Preset::Appendix),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

/// Builds a seeded bandit instance with `theta* ~ U([0,1])^d` and feature
/// scale `1/sqrt(d)`, so that `||phi|| <= 1`.
pub fn build_instance(
    seed: u64,
    context_dim: usize,
    num_responses: usize,
    feat_dim: usize,
) -> Result<BanditInstance> {
    build_instance_with_scale(
        seed,
        context_dim,
        num_responses,
        feat_dim,
        1.0 / (feat_dim.max(1) as f64).sqrt(),
    )
}

pub fn build_instance_with_scale(
    seed: u64,
    context_dim: usize,
    num_responses: usize,
    feat_dim: usize,
    scale: f64,
) -> Result<BanditInstance> {
    if context_dim == 0 || num_responses == 0 || feat_dim == 0 {
        return Err(Error::InvalidArgument("instance dims must be >= 1".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let mut frng = seeded_rng(mix_seed(seed, TAG_FEATURES));
    let fmap = FeatureMap::random(&mut frng, context_dim, num_responses, feat_dim, scale);
    let mut trng = seeded_rng(mix_seed(seed, TAG_THETA_STAR));
    let theta_star: Vec<f64> = (0..feat_dim).map(|_| trng.random::<f64>()).collect();

    let mut prng = seeded_rng(mix_seed(seed, TAG_PROBE));
    let mut r_max = 0.0f64;
    for _ in 0..R_MAX_PROBE_CONTEXTS {
        let x = sample_context(&mut prng, context_dim);
        let feats = fmap.features(&x);
        for r in feats.logits(&theta_star) {
            r_max = r_max.max(r.abs());
        }
    }
    Ok(BanditInstance {
        seed,
        fmap,
        theta_star,
        r_max,
    })
}

/// Standard-normal context.
pub fn sample_context<R: Rng + ?Sized>(rng: &mut R, context_dim: usize) -> Vec<f64> {
    (0..context_dim)
        .map(|_| StandardNormal.sample(rng))
        .collect()
}

/// Bradley-Terry probability that the first item wins, `sigma(r_a - r_b)`.
pub fn btl_prob(r_a: f64, r_b: f64) -> Result<f64> {
    if r_a.is_nan() || r_b.is_nan() {
        return Err(Error::NonFinite("btl_prob input is NaN".into()));
    }
    let p = sigmoid(r_a - r_b);
    if p.is_nan() {
        return Err(Error::NonFinite("btl_prob of two infinities".into()));
    }
    Ok(p)
}

/// Where a preference record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Offline,
    Online,
}

/// One labelled response pair sharing a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub x: Vec<f64>,
    pub y_plus: usize,
    pub y_minus: usize,
    pub source: Source,
}

/// Draws the Bradley-Terry label for `(y_a, y_b)` at context `x`.
///
/// Identical responses are allowed; they are labelled by a fair coin and
/// carry zero DPO margin.
pub fn label_pair<R: Rng + ?Sized>(
    instance: &BanditInstance,
    x: &[f64],
    y_a: usize,
    y_b: usize,
    source: Source,
    rng: &mut R,
) -> Result<PreferenceRecord> {
    let ra = instance.reward(x, y_a)?;
    let rb = instance.reward(x, y_b)?;
    let a_wins = rng.random::<f64>() < btl_prob(ra, rb)?;
    let (y_plus, y_minus) = if a_wins { (y_a, y_b) } else { (y_b, y_a) };
    Ok(PreferenceRecord {
        x: x.to_vec(),
        y_plus,
        y_minus,
        source,
    })
}

/// Labels a pair from precomputed rewards; returns true when `a` wins.
pub(crate) fn first_wins<R: Rng + ?Sized>(r_a: f64, r_b: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < sigmoid(r_a - r_b)
}

/// A set of labelled pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OfflineDataset {
    pub records: Vec<PreferenceRecord>,
}

impl OfflineDataset {
    pub fn new(records: Vec<PreferenceRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Line-delimited JSON, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }
}

/// Offline preference data collected from the reference policy: both
/// responses are drawn independently from `pi_ref(.|x)`.
pub fn gen_offline_dataset<R: Rng + ?Sized>(
    instance: &BanditInstance,
    ref_policy: &LogLinearPolicy,
    n_off: usize,
    rng: &mut R,
) -> Result<OfflineDataset> {
    if n_off == 0 {
        return Err(Error::InvalidArgument("n_off must be >= 1".into()));
    }
    let mut records = Vec::with_capacity(n_off);
    for _ in 0..n_off {
        let x = instance.sample_context(rng);
        let feats = instance.features(&x);
        let probs = ref_policy.probs_from_features(&feats);
        let ya = sample_index(&probs, rng);
        let yb = sample_index(&probs, rng);
        let rewards = instance.rewards(&feats);
        let a_wins = first_wins(rewards[ya], rewards[yb], rng);
        let (y_plus, y_minus) = if a_wins { (ya, yb) } else { (yb, ya) };
        records.push(PreferenceRecord {
            x,
            y_plus,
            y_minus,
            source: Source::Offline,
        });
    }
    Ok(OfflineDataset { records })
}

/// Tiny deterministic token-level MDP: states are an initial prompt plus the
/// tokens emitted so far, and every transition appends one token.
#[derive(Debug, Clone)]
pub struct TokenMdpInstance {
    pub vocab_size: usize,
    pub horizon: usize,
    /// Per-step features over `(state encoding, token)`.
    pub fmap: FeatureMap,
    pub nu: Vec<f64>,
    /// Initial prompt ids and their probabilities.
    pub initial_states: Vec<u64>,
    pub rho: Vec<f64>,
    pub encoding_seed: u64,
}

/// One enumerated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<usize>,
    pub reward: f64,
    /// Sum of the per-step features.
    pub feature: Vec<f64>,
}

impl TokenMdpInstance {
    /// Random instance with `nu ~ U([0,1])^d` and a uniform initial
    /// distribution over `n_initial` prompts.
    pub fn random(
        seed: u64,
        vocab_size: usize,
        horizon: usize,
        state_dim: usize,
        feat_dim: usize,
        n_initial: usize,
    ) -> Result<Self> {
        if vocab_size == 0 || horizon == 0 || state_dim == 0 || feat_dim == 0 || n_initial == 0 {
            return Err(Error::InvalidArgument("token MDP dims must be >= 1".into()));
        }
        let mut rng = seeded_rng(mix_seed(seed, TAG_FEATURES));
        let fmap = FeatureMap::random(
            &mut rng,
            state_dim,
            vocab_size,
            feat_dim,
            1.0 / (feat_dim as f64).sqrt(),
        );
        let mut trng = seeded_rng(mix_seed(seed, TAG_THETA_STAR));
        let nu = (0..feat_dim).map(|_| trng.random::<f64>()).collect();
        Ok(Self {
            vocab_size,
            horizon,
            fmap,
            nu,
            initial_states: (0..n_initial as u64).collect(),
            rho: vec![1.0 / n_initial as f64; n_initial],
            encoding_seed: seed,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.fmap.context_dim()
    }

    /// Deterministic hash embedding of `(s1, prefix)` into the context slot,
    /// coordinates uniform on `[-sqrt 3, sqrt 3]` (unit variance).
    pub fn encode_state(&self, s1: u64, prefix: &[usize]) -> Vec<f64> {
        let mut h = mix_seed(self.encoding_seed, s1);
        for &a in prefix {
            h = mix_seed(h, a as u64 + 1);
        }
        h = mix_seed(h, prefix.len() as u64);
        (0..self.state_dim())
            .map(|k| {
                let u = (mix_seed(h, k as u64) >> 11) as f64 / (1u64 << 53) as f64;
                (2.0 * u - 1.0) * 3f64.sqrt()
            })
            .collect()
    }

    /// Features of every token at state `(s1, prefix)`.
    pub fn step_features(&self, s1: u64, prefix: &[usize]) -> ContextFeatures {
        self.fmap.features(&self.encode_state(s1, prefix))
    }

    /// Number of complete trajectories, or an error past the budget.
    pub fn num_trajectories(&self) -> Result<usize> {
        let mut n: usize = 1;
        for _ in 0..self.horizon {
            n = n
                .checked_mul(self.vocab_size)
                .filter(|&n| n <= TRAJECTORY_BUDGET)
                .ok_or(Error::BudgetExceeded {
                    vocab: self.vocab_size,
                    horizon: self.horizon,
                    budget: TRAJECTORY_BUDGET,
                })?;
        }
        Ok(n)
    }
}

/// Every trajectory from `s1`, lexicographic in token ids (first token most
/// significant), with its reward `<nu, phi(tau)>` and summed feature.
pub fn enumerate_trajectories(mdp: &TokenMdpInstance, s1: u64) -> Result<Vec<Trajectory>> {
    let n = mdp.num_trajectories()?;
    let d = mdp.fmap.feat_dim();
    let mut out = Vec::with_capacity(n);
    let mut tokens = Vec::with_capacity(mdp.horizon);
    let mut feat = vec![0.0; d];
    walk(mdp, s1, &mut tokens, &mut feat, &mut out);
    Ok(out)
}

fn walk(
    mdp: &TokenMdpInstance,
    s1: u64,
    tokens: &mut Vec<usize>,
    feat: &mut Vec<f64>,
    out: &mut Vec<Trajectory>,
) {
    if tokens.len() == mdp.horizon {
        out.push(Trajectory {
            tokens: tokens.clone(),
            reward: dot(&mdp.nu, feat),
            feature: feat.clone(),
        });
        return;
    }
    let step = mdp.step_features(s1, tokens);
    for a in 0..mdp.vocab_size {
        let saved = feat.clone();
        crate::vecops::axpy(1.0, step.row(a), feat);
        tokens.push(a);
        walk(mdp, s1, tokens, feat, out);
        tokens.pop();
        *feat = saved;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_phi(fmap: &FeatureMap, x: &[f64], y: usize) -> Vec<f64> {
        let rows = fmap.weight_rows();
        let mut input = x.to_vec();
        input.extend((0..fmap.num_responses()).map(|k| if k == y { 1.0 } else { 0.0 }));
        rows.iter()
            .zip(fmap.bias())
            .map(|(row, b)| {
                let pre: f64 = row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + b;
                fmap.scale() * pre.tanh()
            })
            .collect()
    }

    #[test]
    fn phi_matches_direct_tanh_network() {
        let inst = build_instance(3, 2, 7, 5).unwrap();
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let x = inst.sample_context(&mut rng);
            for y in 0..7 {
                let a = inst.fmap.phi(&x, y).unwrap();
                let b = direct_phi(&inst.fmap, &x, y);
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() < 1e-14, "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn phi_norm_bounded_and_frozen() {
        let inst = build_instance(5, 2, 20, 16).unwrap();
        let mut rng = seeded_rng(1);
        for _ in 0..200 {
            let x: Vec<f64> = inst
                .sample_context(&mut rng)
                .iter()
                .map(|v| v * 5.0)
                .collect();
            for y in 0..20 {
                let p = inst.fmap.phi(&x, y).unwrap();
                assert!(norm2(&p) <= 1.0);
                assert!(p.iter().all(|v| v.abs() < 1.0 / 4.0 + 1e-15));
                assert_eq!(p, inst.fmap.phi(&x, y).unwrap());
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let fmap = FeatureMap::new(2, 3, vec![vec![0.0; 5]; 4], vec![0.0; 4], 0.5).unwrap();
        assert_eq!(fmap.phi(&[0.3, -2.0], 1).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn phi_rejects_out_of_range_response() {
        let inst = build_instance(1, 2, 3, 4).unwrap();
        assert!(matches!(
            inst.fmap.phi(&[0.0, 0.0], 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn build_instance_main_preset_shape() {
        let inst = build_instance(7, 2, 500, 100).unwrap();
        assert_eq!(inst.num_responses(), 500);
        assert_eq!(inst.theta_star.len(), 100);
        assert!(inst.theta_star.iter().all(|t| (0.0..=1.0).contains(t)));
        assert_eq!(inst.fmap.input_dim(), 502);
    }

    #[test]
    fn build_instance_is_deterministic() {
        let a = build_instance(9, 2, 30, 8).unwrap();
        let b = build_instance(9, 2, 30, 8).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = build_instance(10, 2, 30, 8).unwrap();
        assert_ne!(a.theta_star, c.theta_star);
    }

    #[test]
    fn r_max_within_cauchy_schwarz_ceiling() {
        let inst = build_instance(1, 2, 2, 3).unwrap();
        assert!(inst.r_max > 0.0);
        assert!(inst.r_max <= norm2(&inst.theta_star) + 1e-12);
        assert!(inst.r_max <= inst.r_max_ceiling() + 1e-12);
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = build_instance(4, 3, 6, 5).unwrap();
        let back = BanditInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back.theta_star, inst.theta_star);
        assert_eq!(back.r_max, inst.r_max);
        let x = [0.1, -0.4, 1.3];
        assert_eq!(back.fmap.phi(&x, 2).unwrap(), inst.fmap.phi(&x, 2).unwrap());
    }

    #[test]
    fn sample_context_moments() {
        let mut rng = seeded_rng(2024);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let x = sample_context(&mut rng, 2);
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
        let mut a = seeded_rng(5);
        let mut b = seeded_rng(5);
        assert_eq!(sample_context(&mut a, 4), sample_context(&mut b, 4));
    }

    #[test]
    fn btl_prob_values() {
        assert_eq!(btl_prob(0.0, 0.0).unwrap(), 0.5);
        assert!((btl_prob(3f64.ln(), 0.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((btl_prob(2.0, 1.0).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!(btl_prob(f64::NAN, 0.0).is_err());
        assert!(btl_prob(1e6, -1e6).unwrap() <= 1.0);
    }

    fn two_response_instance(gap: f64) -> BanditInstance {
        // phi(x, 0) = (0.5, 0), phi(x, 1) = (0, 0); reward gap = 0.5 * theta*_0.
        let big = 40.0;
        let fmap = FeatureMap::new(
            1,
            2,
            vec![vec![0.0, big, 0.0], vec![0.0, 0.0, 0.0]],
            vec![0.0, 0.0],
            0.5,
        )
        .unwrap();
        BanditInstance {
            seed: 0,
            fmap,
            theta_star: vec![2.0 * gap, 0.0],
            r_max: gap,
        }
    }

    #[test]
    fn label_pair_frequencies() {
        let n = 100_000;
        for (gap, expected) in [(0.0, 0.5), (3f64.ln(), 0.75)] {
            let inst = two_response_instance(gap);
            let mut rng = seeded_rng(77);
            let wins = (0..n)
                .filter(|_| {
                    label_pair(&inst, &[0.0], 0, 1, Source::Online, &mut rng)
                        .unwrap()
                        .y_plus
                        == 0
                })
                .count();
            let f = wins as f64 / n as f64;
            assert!((f - expected).abs() < 0.005, "gap {gap}: {f}");
        }
    }

    #[test]
    fn label_pair_degenerate_pair_is_fair() {
        let inst = two_response_instance(1.0);
        let mut rng = seeded_rng(8);
        let r = label_pair(&inst, &[0.0], 1, 1, Source::Offline, &mut rng).unwrap();
        assert_eq!((r.y_plus, r.y_minus), (1, 1));
    }

    #[test]
    fn offline_dataset_generation() {
        let inst = build_instance(3, 2, 10, 6).unwrap();
        let pref = LogLinearPolicy::new(vec![0.5; 6]);
        let one = gen_offline_dataset(&inst, &pref, 1, &mut seeded_rng(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(gen_offline_dataset(&inst, &pref, 0, &mut seeded_rng(1)).is_err());

        let a = gen_offline_dataset(&inst, &pref, 500, &mut seeded_rng(42)).unwrap();
        let b = gen_offline_dataset(&inst, &pref, 500, &mut seeded_rng(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert!(a.records.iter().all(|r| r.source == Source::Offline));

        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let back = OfflineDataset::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, a);
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(first.contains("\"source\":\"offline\""));
    }

    #[test]
    fn offline_labels_follow_btl_in_aggregate() {
        // Expected number of pairs won by the higher-reward member, computed
        // from the BTL probabilities, against the realized count.
        let inst = build_instance(12, 2, 20, 8).unwrap();
        let pref = LogLinearPolicy::new(vec![0.0; 8]);
        let data = gen_offline_dataset(&inst, &pref, 4000, &mut seeded_rng(3)).unwrap();
        let (mut expected, mut var, mut realized) = (0.0, 0.0, 0.0);
        for r in &data.records {
            if r.y_plus == r.y_minus {
                continue;
            }
            let rp = inst.reward(&r.x, r.y_plus).unwrap();
            let rm = inst.reward(&r.x, r.y_minus).unwrap();
            let p_hi = btl_prob(rp.max(rm), rp.min(rm)).unwrap();
            expected += p_hi;
            var += p_hi * (1.0 - p_hi);
            if rp > rm {
                realized += 1.0;
            }
        }
        assert!(
            (realized - expected).abs() <= 4.0 * var.sqrt(),
            "{realized} vs {expected}"
        );
    }

    #[test]
    fn trajectory_enumeration() {
        let mdp = TokenMdpInstance::random(5, 2, 3, 2, 4, 1).unwrap();
        let trajs = enumerate_trajectories(&mdp, 0).unwrap();
        assert_eq!(trajs.len(), 8);
        assert_eq!(trajs[0].tokens, vec![0, 0, 0]);
        assert_eq!(trajs[1].tokens, vec![0, 0, 1]);
        assert_eq!(trajs[7].tokens, vec![1, 1, 1]);
        // independent re-summation of per-step rewards
        for t in &trajs {
            let mut r = 0.0;
            for h in 0..mdp.horizon {
                let s = mdp.encode_state(0, &t.tokens[..h]);
                r += dot(&mdp.fmap.phi(&s, t.tokens[h]).unwrap(), &mdp.nu);
            }
            assert!((r - t.reward).abs() < 1e-12);
        }

        let mut zero = mdp.clone();
        zero.nu = vec![0.0; 4];
        assert!(enumerate_trajectories(&zero, 0)
            .unwrap()
            .iter()
            .all(|t| t.reward == 0.0));
    }

    #[test]
    fn trajectory_budget_enforced() {
        let mdp = TokenMdpInstance::random(5, 10, 6, 2, 4, 1).unwrap();
        assert!(matches!(
            enumerate_trajectories(&mdp, 0),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
