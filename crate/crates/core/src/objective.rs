//! DPO and hybrid losses, the `g` discrepancy and offline coverage.
//!
//! For log-linear policies the log-partition terms cancel between two
//! responses that share a context, so the DPO margin is linear in
//! `theta - theta_ref` and a preference pair is summarised by its feature
//! difference. The optimism term needs the full response distribution and
//! therefore works on complete per-context feature matrices.

use serde::{Deserialize, Serialize};

use crate::env::{BanditInstance, ContextFeatures, PreferenceRecord, TokenMdpInstance};
use crate::policy::{trajectory_log_prob, LogLinearPolicy};
use crate::vecops::{axpy, dot, log_sum_exp, neg_log_sigmoid, sigmoid, sub};
use crate::{Error, Result};

/// Value of a (possibly hybrid) objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub dpo_part: f64,
    pub optimism_part: f64,
    pub n_pref_pairs: usize,
    pub n_opt_samples: usize,
}

impl LossValue {
    fn new(dpo_part: f64, optimism_part: f64, n_pref_pairs: usize, n_opt_samples: usize) -> Self {
        Self {
            total: optimism_part + dpo_part,
            dpo_part,
            optimism_part,
            n_pref_pairs,
            n_opt_samples,
        }
    }
}

/// A preference pair reduced to `phi(x, y+) - phi(x, y-)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub delta_phi: Vec<f64>,
}

impl PreparedPair {
    pub fn from_record(instance: &BanditInstance, rec: &PreferenceRecord) -> Result<Self> {
        let plus = instance.fmap.phi(&rec.x, rec.y_plus)?;
        let minus = instance.fmap.phi(&rec.x, rec.y_minus)?;
        Ok(Self {
            delta_phi: sub(&plus, &minus),
        })
    }

    pub fn from_features(feats: &ContextFeatures, y_plus: usize, y_minus: usize) -> Self {
        Self {
            delta_phi: sub(feats.row(y_plus), feats.row(y_minus)),
        }
    }
}

/// `beta <theta - theta_ref, phi(x, y+) - phi(x, y-)>`.
pub fn dpo_margin(
    theta: &[f64],
    theta_ref: &[f64],
    instance: &BanditInstance,
    rec: &PreferenceRecord,
    beta: f64,
) -> Result<f64> {
    let pair = PreparedPair::from_record(instance, rec)?;
    Ok(beta * dot(&sub(theta, theta_ref), &pair.delta_phi))
}

/// The same margin through full softmax log-probabilities,
/// `beta [log pi/pi_ref (y+) - log pi/pi_ref (y-)]`.
pub fn dpo_margin_softmax(
    theta: &[f64],
    theta_ref: &[f64],
    instance: &BanditInstance,
    rec: &PreferenceRecord,
    beta: f64,
) -> Result<f64> {
    let n = instance.num_responses();
    for y in [rec.y_plus, rec.y_minus] {
        if y >= n {
            return Err(Error::IndexOutOfRange { index: y, len: n });
        }
    }
    let feats = instance.features(&rec.x);
    let lp = LogLinearPolicy::new(theta.to_vec()).log_probs_from_features(&feats);
    let lr = LogLinearPolicy::new(theta_ref.to_vec()).log_probs_from_features(&feats);
    Ok(beta * ((lp[rec.y_plus] - lr[rec.y_plus]) - (lp[rec.y_minus] - lr[rec.y_minus])))
}

/// Sum of `-log sigma(margin)` over prepared pairs and, when `grad` is given,
/// adds `weight * sum (sigma(m) - 1) beta delta_phi` into it. `diff` is
/// `theta - theta_ref`.
pub fn dpo_accumulate<'a, I>(
    diff: &[f64],
    pairs: I,
    beta: f64,
    weight: f64,
    mut grad: Option<&mut [f64]>,
) -> f64
where
    I: IntoIterator<Item = &'a PreparedPair>,
{
    let mut loss = 0.0;
    for p in pairs {
        let m = beta * dot(diff, &p.delta_phi);
        loss += neg_log_sigmoid(m);
        if let Some(g) = grad.as_deref_mut() {
            axpy(weight * (sigmoid(m) - 1.0) * beta, &p.delta_phi, g);
        }
    }
    loss
}

fn prepare_all(
    instance: &BanditInstance,
    records: &[PreferenceRecord],
) -> Result<Vec<PreparedPair>> {
    records
        .iter()
        .map(|r| PreparedPair::from_record(instance, r))
        .collect()
}

/// DPO loss `sum_i -log sigma(z_i)` over a record set.
pub fn dpo_loss(
    theta: &[f64],
    theta_ref: &[f64],
    instance: &BanditInstance,
    records: &[PreferenceRecord],
    beta: f64,
) -> Result<LossValue> {
    let pairs = prepare_all(instance, records)?;
    let v = dpo_accumulate(&sub(theta, theta_ref), &pairs, beta, 1.0, None);
    Ok(LossValue::new(v, 0.0, records.len(), 0))
}

/// Gradient of [`dpo_loss`] in `theta`.
pub fn dpo_grad(
    theta: &[f64],
    theta_ref: &[f64],
    instance: &BanditInstance,
    records: &[PreferenceRecord],
    beta: f64,
) -> Result<Vec<f64>> {
    let pairs = prepare_all(instance, records)?;
    let mut g = vec![0.0; theta.len()];
    dpo_accumulate(&sub(theta, theta_ref), &pairs, beta, 1.0, Some(&mut g));
    Ok(g)
}

/// Adds `coef * sum log pi_theta(y | x)` over `(features, y)` samples and,
/// when `grad` is given, `coef * sum (phi(x, y) - E_pi phi(x, .))` into it.
pub fn optimism_accumulate<'a, I>(
    theta: &[f64],
    samples: I,
    coef: f64,
    mut grad: Option<&mut [f64]>,
) -> f64
where
    I: IntoIterator<Item = (&'a ContextFeatures, usize)>,
{
    let mut value = 0.0;
    let mut logits = Vec::new();
    let mut mean = vec![0.0; theta.len()];
    for (feats, y) in samples {
        logits.resize(feats.num_responses(), 0.0);
        feats.logits_into(theta, &mut logits);
        let lse = log_sum_exp(&logits);
        value += logits[y] - lse;
        if let Some(g) = grad.as_deref_mut() {
            for l in logits.iter_mut() {
                *l = (*l - lse).exp();
            }
            feats.weighted_sum_into(&logits, &mut mean);
            axpy(coef, feats.row(y), g);
            axpy(-coef, &mean, g);
        }
    }
    coef * value
}

/// Optimism (`sign = +1`) or pessimism (`sign = -1`) regularizer
/// `sign * alpha * sum log pi_theta(y | x)` with its gradient.
pub fn optimism_term(
    theta: &[f64],
    instance: &BanditInstance,
    opt_samples: &[(Vec<f64>, usize)],
    alpha: f64,
    sign: f64,
) -> Result<(f64, Vec<f64>)> {
    let feats = context_features(instance, opt_samples)?;
    let mut g = vec![0.0; theta.len()];
    let v = optimism_accumulate(
        theta,
        feats.iter().zip(opt_samples).map(|(f, (_, y))| (f, *y)),
        sign * alpha,
        Some(&mut g),
    );
    Ok((v, g))
}

fn context_features(
    instance: &BanditInstance,
    samples: &[(Vec<f64>, usize)],
) -> Result<Vec<ContextFeatures>> {
    let n = instance.num_responses();
    samples
        .iter()
        .map(|(x, y)| {
            if *y >= n {
                Err(Error::IndexOutOfRange { index: *y, len: n })
            } else {
                Ok(instance.features(x))
            }
        })
        .collect()
}

/// Hybrid objective: `alpha sum_{D_opt} log pi + sum_{D_hyb} -log sigma(z)`.
pub fn hpo_objective(
    theta: &[f64],
    theta_ref: &[f64],
    instance: &BanditInstance,
    d_hyb: &[PreferenceRecord],
    d_opt: &[(Vec<f64>, usize)],
    alpha: f64,
    beta: f64,
) -> Result<LossValue> {
    let dpo = dpo_loss(theta, theta_ref, instance, d_hyb, beta)?;
    let (opt, _) = optimism_term(theta, instance, d_opt, alpha, 1.0)?;
    Ok(LossValue::new(dpo.dpo_part, opt, d_hyb.len(), d_opt.len()))
}

/// Gradient of [`hpo_objective`].
pub fn hpo_grad(
    theta: &[f64],
    theta_ref: &[f64],
    instance: &BanditInstance,
    d_hyb: &[PreferenceRecord],
    d_opt: &[(Vec<f64>, usize)],
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let mut g = dpo_grad(theta, theta_ref, instance, d_hyb, beta)?;
    let (_, go) = optimism_term(theta, instance, d_opt, alpha, 1.0)?;
    axpy(1.0, &go, &mut g);
    Ok(g)
}

/// `g(tau, tau~) = beta log pi/pi_ref (tau) - r(tau) - beta log pi/pi_ref (tau~) + r(tau~)`
/// for two responses to the same context.
pub fn g_value(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    instance: &BanditInstance,
    beta: f64,
    tau: (&[f64], usize),
    tau_tilde: (&[f64], usize),
) -> Result<f64> {
    if tau.0 != tau_tilde.0 {
        return Err(Error::ContextMismatch);
    }
    let n = instance.num_responses();
    for y in [tau.1, tau_tilde.1] {
        if y >= n {
            return Err(Error::IndexOutOfRange { index: y, len: n });
        }
    }
    let feats = instance.features(tau.0);
    let lp = policy.log_probs_from_features(&feats);
    let lr = reference.log_probs_from_features(&feats);
    let r = instance.rewards(&feats);
    let (a, b) = (tau.1, tau_tilde.1);
    Ok(beta * (lp[a] - lr[a]) - r[a] - beta * (lp[b] - lr[b]) + r[b])
}

/// Token-MDP `g` from trajectory log-probabilities; both trajectories start
/// at `s1`.
pub fn g_value_token(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    mdp: &TokenMdpInstance,
    beta: f64,
    s1: u64,
    tau: &[usize],
    tau_tilde: &[usize],
) -> Result<f64> {
    if tau.len() != mdp.horizon || tau_tilde.len() != mdp.horizon {
        return Err(Error::InvalidArgument(
            "trajectory length must equal the horizon".into(),
        ));
    }
    if let Some(&a) = tau.iter().chain(tau_tilde).find(|&&a| a >= mdp.vocab_size) {
        return Err(Error::IndexOutOfRange {
            index: a,
            len: mdp.vocab_size,
        });
    }
    let side = |t: &[usize]| {
        let lr =
            trajectory_log_prob(policy, mdp, s1, t) - trajectory_log_prob(reference, mdp, s1, t);
        let reward: f64 = (0..t.len())
            .map(|h| dot(&mdp.nu, mdp.step_features(s1, &t[..h]).row(t[h])))
            .sum();
        beta * lr - reward
    };
    Ok(side(tau) - side(tau_tilde))
}

/// Linear-form `g` over a prepared pair: `<beta (theta - theta_ref) - theta*, delta_phi>`.
pub(crate) fn g_linear(w: &[f64], pair: &PreparedPair) -> f64 {
    dot(w, &pair.delta_phi)
}

/// `beta (theta - theta_ref) - theta*`, the direction `g` is linear in.
pub(crate) fn g_direction(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    instance: &BanditInstance,
    beta: f64,
) -> Vec<f64> {
    policy
        .theta
        .iter()
        .zip(&reference.theta)
        .zip(&instance.theta_star)
        .map(|((t, r), s)| beta * (t - r) - s)
        .collect()
}

/// Offline coverage functional: mean of `g(y+, y-)^2` over the dataset.
pub fn c_off(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    instance: &BanditInstance,
    beta: f64,
    records: &[PreferenceRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("offline dataset"));
    }
    let pairs = prepare_all(instance, records)?;
    Ok(c_off_prepared(
        &g_direction(policy, reference, instance, beta),
        &pairs,
    ))
}

pub(crate) fn c_off_prepared(w: &[f64], pairs: &[PreparedPair]) -> f64 {
    pairs.iter().map(|p| g_linear(w, p).powi(2)).sum::<f64>() / pairs.len() as f64
}
