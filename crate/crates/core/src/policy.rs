//! Log-linear softmax policies and the KL-regularized objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{BanditInstance, ContextFeatures, TokenMdpInstance};
use crate::vecops::{log_softmax, softmax};
use crate::{Error, Result};

/// `pi_theta(y|x) = softmax_y <theta, phi(x, y)>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearPolicy {
    pub theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    theta: Vec<f64>,
    d: usize,
}

impl LogLinearPolicy {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    /// `theta = 0`, the uniform policy.
    pub fn uniform(d: usize) -> Self {
        Self::new(vec![0.0; d])
    }

    /// Reference policy with coordinates i.i.d. `U([0, 1])`.
    pub fn random_reference<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        Self::new((0..d).map(|_| rng.random::<f64>()).collect())
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn probs_from_features(&self, feats: &ContextFeatures) -> Vec<f64> {
        softmax(&feats.logits(&self.theta))
    }

    pub fn log_probs_from_features(&self, feats: &ContextFeatures) -> Vec<f64> {
        log_softmax(&feats.logits(&self.theta))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PolicyDoc {
            theta: self.theta.clone(),
            d: self.theta.len(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(s)?;
        if doc.d != doc.theta.len() {
            return Err(Error::InvalidArgument(
                "policy d disagrees with theta".into(),
            ));
        }
        Ok(Self::new(doc.theta))
    }
}

/// Exact response distribution at context `x`.
pub fn action_probs(policy: &LogLinearPolicy, instance: &BanditInstance, x: &[f64]) -> Vec<f64> {
    policy.probs_from_features(&instance.features(x))
}

/// `log pi(y|x) - log pi_ref(y|x)`.
pub fn log_ratio(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    instance: &BanditInstance,
    x: &[f64],
    y: usize,
) -> Result<f64> {
    if y >= instance.num_responses() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: instance.num_responses(),
        });
    }
    let feats = instance.features(x);
    let lp = policy.log_probs_from_features(&feats);
    let lr = reference.log_probs_from_features(&feats);
    Ok(lp[y] - lr[y])
}

/// `beta * max |log pi/pi_ref|` over the given policies, probe contexts and
/// all responses.
pub fn measure_vmax(
    policies: &[&LogLinearPolicy],
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    beta: f64,
    probe_contexts: &[Vec<f64>],
) -> Result<f64> {
    if probe_contexts.is_empty() {
        return Err(Error::InvalidArgument("probe context set is empty".into()));
    }
    let mut worst = 0.0f64;
    for x in probe_contexts {
        let feats = instance.features(x);
        let lr = reference.log_probs_from_features(&feats);
        for p in policies {
            let lp = p.log_probs_from_features(&feats);
            for (a, b) in lp.iter().zip(&lr) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(beta * worst)
}

/// Monte Carlo estimate of `J_beta` with exact inner sums over responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub expected_reward: f64,
    pub kl_to_ref: f64,
    pub j_beta: f64,
    pub beta: f64,
    pub n_eval_contexts: usize,
}

/// Expected reward and `KL(pi || pi_ref)` at one context.
pub(crate) fn context_terms(log_p: &[f64], ref_log_p: &[f64], rewards: &[f64]) -> (f64, f64) {
    let mut er = 0.0;
    let mut kl = 0.0;
    for ((lp, lr), r) in log_p.iter().zip(ref_log_p).zip(rewards) {
        let p = lp.exp();
        er += p * r;
        kl += p * (lp - lr);
    }
    // Rounding can leave a tiny negative KL when pi == pi_ref.
    (er, kl.max(0.0))
}

pub(crate) fn report(beta: f64, er_sum: f64, kl_sum: f64, n: usize) -> ObjectiveReport {
    let expected_reward = er_sum / n as f64;
    let kl_to_ref = kl_sum / n as f64;
    ObjectiveReport {
        expected_reward,
        kl_to_ref,
        j_beta: expected_reward - beta * kl_to_ref,
        beta,
        n_eval_contexts: n,
    }
}

/// `J_beta` on a fixed context set.
pub fn j_beta_on_contexts(
    policy: &LogLinearPolicy,
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    beta: f64,
    contexts: &[Vec<f64>],
) -> Result<ObjectiveReport> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::InvalidArgument("beta must be positive".into()));
    }
    if contexts.is_empty() {
        return Err(Error::InvalidArgument("need at least one context".into()));
    }
    let (mut er, mut kl) = (0.0, 0.0);
    for x in contexts {
        let feats = instance.features(x);
        let (e, k) = context_terms(
            &policy.log_probs_from_features(&feats),
            &reference.log_probs_from_features(&feats),
            &instance.rewards(&feats),
        );
        er += e;
        kl += k;
    }
    Ok(report(beta, er, kl, contexts.len()))
}

/// `J_beta` on `n_contexts` freshly drawn contexts.
pub fn j_beta<R: Rng + ?Sized>(
    policy: &LogLinearPolicy,
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    beta: f64,
    n_contexts: usize,
    rng: &mut R,
) -> Result<ObjectiveReport> {
    let contexts: Vec<Vec<f64>> = (0..n_contexts)
        .map(|_| instance.sample_context(rng))
        .collect();
    j_beta_on_contexts(policy, instance, reference, beta, &contexts)
}

/// KL-regularized optimum `theta_ref + theta*/beta`.
///
/// `pi_ref(y|x) exp(r(x,y)/beta)` is itself log-linear in the shared
/// features, so the unconstrained optimum lies in the class.
pub fn optimal_policy(
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    beta: f64,
) -> LogLinearPolicy {
    assert!(beta > 0.0, "beta must be positive");
    LogLinearPolicy::new(
        reference
            .theta
            .iter()
            .zip(&instance.theta_star)
            .map(|(r, t)| r + t / beta)
            .collect(),
    )
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the final partial sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Per-token log-probabilities of a log-linear policy at `(s1, prefix)`.
pub fn token_step_log_probs(
    policy: &LogLinearPolicy,
    mdp: &TokenMdpInstance,
    s1: u64,
    prefix: &[usize],
) -> Vec<f64> {
    policy.log_probs_from_features(&mdp.step_features(s1, prefix))
}

/// `log pi(tau) = sum_h log pi(a_h | s_h)`.
pub fn trajectory_log_prob(
    policy: &LogLinearPolicy,
    mdp: &TokenMdpInstance,
    s1: u64,
    tokens: &[usize],
) -> f64 {
    (0..tokens.len())
        .map(|h| token_step_log_probs(policy, mdp, s1, &tokens[..h])[tokens[h]])
        .sum()
}

/// `pi(tau) = prod_h pi(a_h | s_h)`.
pub fn trajectory_prob(
    policy: &LogLinearPolicy,
    mdp: &TokenMdpInstance,
    s1: u64,
    tokens: &[usize],
) -> f64 {
    (0..tokens.len())
        .map(|h| {
            let probs = policy.probs_from_features(&mdp.step_features(s1, &tokens[..h]));
            probs[tokens[h]]
        })
        .product()
}

/// Tabular soft-optimal policy of a token MDP from one initial state.
///
/// Prefix nodes are indexed as a complete `A`-ary tree: the empty prefix is
/// node 0 and `child(i, a) = i * A + a + 1`.
#[derive(Debug, Clone)]
pub struct SoftOptimalTokenPolicy {
    pub s1: u64,
    pub vocab_size: usize,
    pub horizon: usize,
    /// `A` log-probabilities per internal node.
    log_probs: Vec<f64>,
    /// Soft value per internal node.
    values: Vec<f64>,
}

impl SoftOptimalTokenPolicy {
    fn node(&self, prefix: &[usize]) -> usize {
        prefix.iter().fold(0, |i, &a| i * self.vocab_size + a + 1)
    }

    /// `V*_beta(s1)`.
    pub fn v1(&self) -> f64 {
        self.values[0]
    }

    pub fn value(&self, prefix: &[usize]) -> f64 {
        self.values[self.node(prefix)]
    }

    pub fn step_log_probs(&self, prefix: &[usize]) -> &[f64] {
        let n = self.node(prefix);
        &self.log_probs[n * self.vocab_size..(n + 1) * self.vocab_size]
    }

    pub fn trajectory_log_prob(&self, tokens: &[usize]) -> f64 {
        (0..tokens.len())
            .map(|h| self.step_log_probs(&tokens[..h])[tokens[h]])
            .sum()
    }
}

/// Backward induction
/// `V_h(s) = beta log sum_a pi_ref(a|s) exp((r(s,a) + V_{h+1}(s a)) / beta)`
/// with `pi*(a|s)` proportional to the summand.
pub fn soft_optimal_token_policy(
    mdp: &TokenMdpInstance,
    reference: &LogLinearPolicy,
    beta: f64,
    s1: u64,
) -> Result<SoftOptimalTokenPolicy> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::InvalidArgument("beta must be positive".into()));
    }
    mdp.num_trajectories()?;
    let a = mdp.vocab_size;
    let internal = (0..mdp.horizon).map(|h| a.pow(h as u32)).sum::<usize>();
    let mut sol = SoftOptimalTokenPolicy {
        s1,
        vocab_size: a,
        horizon: mdp.horizon,
        log_probs: vec![0.0; internal * a],
        values: vec![0.0; internal],
    };
    let mut prefix = Vec::with_capacity(mdp.horizon);
    soft_value(mdp, reference, beta, &mut prefix, 0, &mut sol);
    Ok(sol)
}

fn soft_value(
    mdp: &TokenMdpInstance,
    reference: &LogLinearPolicy,
    beta: f64,
    prefix: &mut Vec<usize>,
    node: usize,
    sol: &mut SoftOptimalTokenPolicy,
) -> f64 {
    if prefix.len() == mdp.horizon {
        return 0.0;
    }
    let a = mdp.vocab_size;
    let feats = mdp.step_features(sol.s1, prefix);
    let ref_lp = reference.log_probs_from_features(&feats);
    let rewards = feats.logits(&mdp.nu);
    let mut scores = vec![0.0; a];
    for tok in 0..a {
        prefix.push(tok);
        let v_next = soft_value(mdp, reference, beta, prefix, node * a + tok + 1, sol);
        prefix.pop();
        scores[tok] = ref_lp[tok] + (rewards[tok] + v_next) / beta;
    }
    let lse = crate::vecops::log_sum_exp(&scores);
    for (tok, s) in scores.iter().enumerate() {
        sol.log_probs[node * a + tok] = s - lse;
    }
    let v = beta * lse;
    sol.values[node] = v;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_instance, enumerate_trajectories, FeatureMap};
    use crate::seeded_rng;
    use crate::vecops::log_sum_exp;

    #[test]
    fn zero_theta_is_uniform() {
        let inst = build_instance(1, 2, 9, 4).unwrap();
        let p = action_probs(&LogLinearPolicy::uniform(4), &inst, &[0.3, 0.1]);
        assert!(p.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn two_response_logit_gap_ln3() {
        let fmap = FeatureMap::new(1, 2, vec![vec![0.0, 40.0, 0.0]], vec![0.0], 1.0).unwrap();
        let inst = BanditInstance {
            seed: 0,
            fmap,
            theta_star: vec![0.0],
            r_max: 0.0,
        };
        let p = action_probs(&LogLinearPolicy::new(vec![3f64.ln()]), &inst, &[0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalized_and_positive() {
        let inst = build_instance(2, 2, 50, 10).unwrap();
        let mut rng = seeded_rng(4);
        let pol = LogLinearPolicy::new((0..10).map(|i| i as f64 - 3.0).collect());
        for _ in 0..20 {
            let p = action_probs(&pol, &inst, &inst.sample_context(&mut rng));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn log_ratio_properties() {
        let inst = build_instance(3, 2, 12, 6).unwrap();
        let mut rng = seeded_rng(9);
        let reference = LogLinearPolicy::random_reference(&mut rng, 6);
        let pol = LogLinearPolicy::random_reference(&mut rng, 6);
        let x = inst.sample_context(&mut rng);
        assert_eq!(
            log_ratio(&reference, &reference, &inst, &x, 3).unwrap(),
            0.0
        );
        // E_ref[pi/pi_ref] = 1
        let pr = action_probs(&reference, &inst, &x);
        let s: f64 = (0..12)
            .map(|y| pr[y] * log_ratio(&pol, &reference, &inst, &x, y).unwrap().exp())
            .sum();
        assert!((s - 1.0).abs() < 1e-10);
        assert!(log_ratio(&pol, &reference, &inst, &x, 12).is_err());
    }

    #[test]
    fn optimal_log_ratio_is_reward_minus_soft_value() {
        let inst = build_instance(8, 2, 15, 6).unwrap();
        let mut rng = seeded_rng(10);
        let reference = LogLinearPolicy::random_reference(&mut rng, 6);
        let beta = 0.3;
        let opt = optimal_policy(&inst, &reference, beta);
        for _ in 0..10 {
            let x = inst.sample_context(&mut rng);
            let feats = inst.features(&x);
            let rewards = inst.rewards(&feats);
            let ref_lp = reference.log_probs_from_features(&feats);
            let scores: Vec<f64> = ref_lp
                .iter()
                .zip(&rewards)
                .map(|(l, r)| l + r / beta)
                .collect();
            let v = beta * log_sum_exp(&scores);
            for (y, r) in rewards.iter().enumerate() {
                let lr = log_ratio(&opt, &reference, &inst, &x, y).unwrap();
                assert!((lr - (r - v) / beta).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn optimal_policy_closed_form() {
        let mut inst = build_instance(6, 2, 20, 5).unwrap();
        let mut rng = seeded_rng(12);
        let reference = LogLinearPolicy::random_reference(&mut rng, 5);
        let a = optimal_policy(&inst, &reference, 0.5);
        let b = optimal_policy(&inst, &reference, 1.0);
        for k in 0..5 {
            let ta = a.theta[k] - reference.theta[k];
            let tb = b.theta[k] - reference.theta[k];
            assert!((ta - 2.0 * tb).abs() < 1e-12);
        }
        // distribution equals pi_ref exp(r/beta) / Z on random contexts
        for _ in 0..100 {
            let x = inst.sample_context(&mut rng);
            let feats = inst.features(&x);
            let rewards = inst.rewards(&feats);
            let pr = reference.probs_from_features(&feats);
            let w: Vec<f64> = pr
                .iter()
                .zip(&rewards)
                .map(|(p, r)| p * (r / 0.5).exp())
                .collect();
            let z: f64 = w.iter().sum();
            let pa = a.probs_from_features(&feats);
            for y in 0..20 {
                assert!((pa[y] - w[y] / z).abs() < 1e-10);
            }
        }
        inst.theta_star = vec![0.0; 5];
        assert_eq!(optimal_policy(&inst, &reference, 0.7), reference);
    }

    #[test]
    fn j_beta_of_reference_has_zero_kl() {
        let inst = build_instance(1, 2, 30, 8).unwrap();
        let mut rng = seeded_rng(1);
        let reference = LogLinearPolicy::random_reference(&mut rng, 8);
        let rep = j_beta(&reference, &inst, &reference, 0.5, 64, &mut rng).unwrap();
        assert_eq!(rep.kl_to_ref, 0.0);
        assert_eq!(rep.j_beta, rep.expected_reward);
        assert_eq!(rep.n_eval_contexts, 64);
    }

    #[test]
    fn j_beta_hand_enumeration() {
        // single context, two responses, phi(x,0) = (1/2, 0), phi(x,1) = 0
        let fmap = FeatureMap::new(
            1,
            2,
            vec![vec![0.0, 40.0, 0.0], vec![0.0; 3]],
            vec![0.0; 2],
            0.5,
        )
        .unwrap();
        let inst = BanditInstance {
            seed: 0,
            fmap,
            theta_star: vec![2.0, 0.0],
            r_max: 1.0,
        };
        let reference = LogLinearPolicy::new(vec![0.0, 0.0]);
        let pol = LogLinearPolicy::new(vec![2.0 * 3f64.ln(), 0.0]);
        let beta = 0.25;
        let rep = j_beta_on_contexts(&pol, &inst, &reference, beta, &[vec![0.0]]).unwrap();
        // p = (3/4, 1/4), r = (1, 0), ref uniform
        let er = 0.75;
        let kl = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((rep.expected_reward - er).abs() < 1e-12);
        assert!((rep.kl_to_ref - kl).abs() < 1e-12);
        assert!((rep.j_beta - (er - beta * kl)).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_optimum_is_reference() {
        let mut inst = build_instance(2, 2, 10, 4).unwrap();
        inst.theta_star = vec![0.0; 4];
        let mut rng = seeded_rng(3);
        let reference = LogLinearPolicy::random_reference(&mut rng, 4);
        let opt = optimal_policy(&inst, &reference, 1.0);
        let rep = j_beta(&opt, &inst, &reference, 1.0, 32, &mut rng).unwrap();
        assert_eq!(rep.j_beta, 0.0);
    }

    #[test]
    fn optimum_dominates_random_policies() {
        let inst = build_instance(21, 2, 25, 6).unwrap();
        let mut rng = seeded_rng(22);
        let reference = LogLinearPolicy::random_reference(&mut rng, 6);
        let beta = 0.4;
        let contexts: Vec<Vec<f64>> = (0..64).map(|_| inst.sample_context(&mut rng)).collect();
        let opt = optimal_policy(&inst, &reference, beta);
        let best = j_beta_on_contexts(&opt, &inst, &reference, beta, &contexts)
            .unwrap()
            .j_beta;
        for _ in 0..100 {
            let theta = (0..6).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let j = j_beta_on_contexts(
                &LogLinearPolicy::new(theta),
                &inst,
                &reference,
                beta,
                &contexts,
            )
            .unwrap()
            .j_beta;
            assert!(j <= best + 1e-12);
        }
    }

    #[test]
    fn vmax_properties() {
        let inst = build_instance(4, 2, 10, 5).unwrap();
        let mut rng = seeded_rng(5);
        let reference = LogLinearPolicy::random_reference(&mut rng, 5);
        let probes: Vec<Vec<f64>> = (0..50).map(|_| inst.sample_context(&mut rng)).collect();
        assert_eq!(
            measure_vmax(&[&reference], &inst, &reference, 0.3, &probes).unwrap(),
            0.0
        );
        let p1 = LogLinearPolicy::random_reference(&mut rng, 5);
        let p2 = LogLinearPolicy::random_reference(&mut rng, 5);
        let beta = 0.3;
        let v1 = measure_vmax(&[&p1], &inst, &reference, beta, &probes).unwrap();
        let v12 = measure_vmax(&[&p1, &p2], &inst, &reference, beta, &probes).unwrap();
        assert!(v12 >= v1);
        for p in [&p1, &p2] {
            let diff = crate::vecops::sub(&p.theta, &reference.theta);
            let ceiling = 2.0 * beta * crate::vecops::norm2(&diff);
            assert!(measure_vmax(&[p], &inst, &reference, beta, &probes).unwrap() <= ceiling);
        }
        assert!(measure_vmax(&[&p1], &inst, &reference, beta, &[]).is_err());
    }

    #[test]
    fn trajectory_prob_product_matches_log_sum() {
        let mdp = TokenMdpInstance::random(3, 3, 3, 2, 4, 2).unwrap();
        let pol = LogLinearPolicy::random_reference(&mut seeded_rng(1), 4);
        for t in enumerate_trajectories(&mdp, 1).unwrap() {
            let p = trajectory_prob(&pol, &mdp, 1, &t.tokens);
            let lp = trajectory_log_prob(&pol, &mdp, 1, &t.tokens);
            assert!((p - lp.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_optimal_token_policy_identity() {
        let mdp = TokenMdpInstance::random(17, 3, 3, 2, 5, 1).unwrap();
        let reference = LogLinearPolicy::random_reference(&mut seeded_rng(18), 5);
        let beta = 0.7;
        let sol = soft_optimal_token_policy(&mdp, &reference, beta, 0).unwrap();
        let trajs = enumerate_trajectories(&mdp, 0).unwrap();
        assert_eq!(trajs.len(), 27);
        let mut total = 0.0;
        for t in &trajs {
            let lhs = beta
                * (sol.trajectory_log_prob(&t.tokens)
                    - trajectory_log_prob(&reference, &mdp, 0, &t.tokens));
            assert!((lhs - (t.reward - sol.v1())).abs() < 1e-9);
            total += sol.trajectory_log_prob(&t.tokens).exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_optimal_zero_reward_is_reference() {
        let mut mdp = TokenMdpInstance::random(2, 2, 3, 2, 3, 1).unwrap();
        mdp.nu = vec![0.0; 3];
        let reference = LogLinearPolicy::random_reference(&mut seeded_rng(4), 3);
        let sol = soft_optimal_token_policy(&mdp, &reference, 0.5, 0).unwrap();
        assert!(sol.v1().abs() < 1e-15);
        let ref_lp = token_step_log_probs(&reference, &mdp, 0, &[1]);
        for (a, b) in sol.step_log_probs(&[1]).iter().zip(&ref_lp) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_reduces_to_bandit_closed_form() {
        let mdp = TokenMdpInstance::random(9, 6, 1, 2, 4, 1).unwrap();
        let reference = LogLinearPolicy::random_reference(&mut seeded_rng(6), 4);
        let beta = 0.5;
        let sol = soft_optimal_token_policy(&mdp, &reference, beta, 0).unwrap();
        let theta: Vec<f64> = reference
            .theta
            .iter()
            .zip(&mdp.nu)
            .map(|(r, n)| r + n / beta)
            .collect();
        let closed =
            LogLinearPolicy::new(theta).log_probs_from_features(&mdp.step_features(0, &[]));
        for (a, b) in sol.step_log_probs(&[]).iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_error_propagates() {
        let mdp = TokenMdpInstance::random(1, 20, 5, 2, 3, 1).unwrap();
        let reference = LogLinearPolicy::uniform(3);
        assert!(soft_optimal_token_policy(&mdp, &reference, 1.0, 0).is_err());
    }

    #[test]
    fn policy_json_round_trip() {
        let p = LogLinearPolicy::new(vec![0.1, -2.5, 1e-300]);
        let s = p.to_json().unwrap();
        assert!(s.contains("\"d\":3"));
        assert_eq!(LogLinearPolicy::from_json(&s).unwrap(), p);
    }
}
