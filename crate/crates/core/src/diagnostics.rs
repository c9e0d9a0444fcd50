//! Coverage of an offline dataset, exploration coefficients, bound
//! evaluators and regret bookkeeping.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{BanditInstance, PreferenceRecord};
use crate::objective::{c_off_prepared, g_direction, PreparedPair};
use crate::policy::{sample_index, LogLinearPolicy};
use crate::vecops::{dot, norm2, softmax};
use crate::{Error, Result};

/// `(1/N) sum (phi(y+) - phi(y-)) (phi(y+) - phi(y-))^T`.
pub fn lambda_off(records: &[PreferenceRecord], instance: &BanditInstance) -> Result<DMatrix<f64>> {
    let deltas: Vec<Vec<f64>> = records
        .iter()
        .map(|r| PreparedPair::from_record(instance, r).map(|p| p.delta_phi))
        .collect::<Result<_>>()?;
    lambda_off_from_deltas(&deltas)
}

/// Covariance of given feature differences.
pub fn lambda_off_from_deltas(deltas: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = deltas
        .first()
        .ok_or(Error::EmptyDataset("offline dataset"))?;
    let d = first.len();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for delta in deltas {
        if delta.len() != d {
            return Err(Error::InvalidArgument(
                "feature differences disagree in length".into(),
            ));
        }
        let v = DVector::from_column_slice(delta);
        m.ger(1.0, &v, &v, 1.0);
    }
    m /= deltas.len() as f64;
    // exact symmetry regardless of accumulation order
    let mt = m.transpose();
    Ok((m + mt) * 0.5)
}

/// `Lambda_off + (v_max^2 / gamma) I`.
pub fn lambda_tilde(lambda_off: &DMatrix<f64>, v_max: f64, gamma: usize) -> Result<DMatrix<f64>> {
    if gamma == 0 {
        return Err(Error::InvalidArgument(
            "the regularized covariance divides by gamma and is undefined at gamma = 0".into(),
        ));
    }
    let d = lambda_off.nrows();
    Ok(lambda_off + DMatrix::<f64>::identity(d, d) * (v_max * v_max / gamma as f64))
}

/// Symmetric eigendecomposition, eigenvalues ascending and eigenvectors as
/// matching columns.
pub fn eig_sym(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    Ok((values, vectors))
}

/// Default `d_hyb` threshold constant `4 v_max^2`.
pub fn default_threshold(v_max: f64) -> f64 {
    4.0 * v_max * v_max
}

/// Number of eigenvalues at or below `threshold_c / t_rounds`.
pub fn d_hyb(eigenvalues: &[f64], t_rounds: usize, threshold_c: f64) -> usize {
    let cut = threshold_c / t_rounds as f64;
    eigenvalues.iter().filter(|&&l| l <= cut).count()
}

/// `||Lambda^{-1/2} nu||` through the spectral pseudo-inverse; infinite when
/// `nu` has a component along an eigenvalue below `rank_tol`
/// (default `1e-10 * lambda_max`).
pub fn concentrability(
    lambda_off: &DMatrix<f64>,
    nu_star: &[f64],
    rank_tol: Option<f64>,
) -> Result<f64> {
    if (norm2(nu_star) - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(
            "nu_star must be a unit vector".into(),
        ));
    }
    if nu_star.len() != lambda_off.nrows() {
        return Err(Error::InvalidArgument("nu_star dimension mismatch".into()));
    }
    let (vals, vecs) = eig_sym(lambda_off)?;
    let lmax = vals.last().copied().unwrap_or(0.0).max(0.0);
    let tol = rank_tol.unwrap_or(1e-10 * lmax);
    let nu = DVector::from_column_slice(nu_star);
    let mut acc = 0.0;
    for (i, &l) in vals.iter().enumerate() {
        let c = vecs.column(i).dot(&nu);
        if l > tol {
            acc += c * c / l;
        } else if c.abs() > 1e-9 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(acc.sqrt())
}

/// Normalized `E_{x, y ~ pi*}[phi(x, y)]` over the given contexts.
pub fn nu_star(
    instance: &BanditInstance,
    optimal: &LogLinearPolicy,
    contexts: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if contexts.is_empty() {
        return Err(Error::InvalidArgument("need at least one context".into()));
    }
    let mut mean = vec![0.0; instance.feat_dim()];
    for x in contexts {
        let f = instance.features(x);
        let p = optimal.probs_from_features(&f);
        crate::vecops::axpy(1.0, &f.weighted_sum(&p), &mut mean);
    }
    let n = norm2(&mean);
    if n < 1e-12 * contexts.len() as f64 {
        return Err(Error::InvalidArgument(
            "optimal feature expectation is zero".into(),
        ));
    }
    Ok(mean.iter().map(|m| m / n).collect())
}

/// `2 sum_i log(1 + 4T / (gamma lambda~_i))`.
pub fn sec_bound_linear(
    lambda_tilde_eigenvalues: &[f64],
    t_rounds: usize,
    gamma: usize,
) -> Result<f64> {
    if gamma == 0 {
        return Err(Error::InvalidArgument("gamma must be >= 1".into()));
    }
    if let Some(l) = lambda_tilde_eigenvalues
        .iter()
        .find(|&&l| l.is_nan() || l <= 0.0)
    {
        return Err(Error::InvalidArgument(format!(
            "nonpositive eigenvalue {l}"
        )));
    }
    let t = t_rounds as f64;
    let g = gamma as f64;
    Ok(2.0
        * lambda_tilde_eigenvalues
            .iter()
            .map(|l| (4.0 * t / (g * l)).ln_1p())
            .sum::<f64>())
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Per-sequence hybrid exploration coefficient.
///
/// `policies[t-1]` is `pi^(t)` and `samplers[t-1]` is `pi~^(t)`; at least
/// `T - 1` samplers are needed. The `t = 1` term is skipped. Context
/// expectations are Monte Carlo with `mc_samples` draws; expectations over
/// responses are exact.
#[allow(clippy::too_many_arguments)]
pub fn sec_empirical<R: Rng + ?Sized>(
    policies: &[LogLinearPolicy],
    samplers: &[LogLinearPolicy],
    instance: &BanditInstance,
    reference: &LogLinearPolicy,
    beta: f64,
    gamma: usize,
    offline: &[PreferenceRecord],
    v_max: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<SecEstimate> {
    let t_len = policies.len();
    if t_len < 2 {
        return Err(Error::InvalidArgument(
            "policy sequence must have length >= 2".into(),
        ));
    }
    if samplers.len() + 1 < t_len {
        return Err(Error::InvalidArgument("need T - 1 sampler policies".into()));
    }
    if mc_samples < 100 {
        return Err(Error::InvalidArgument("mc_samples must be >= 100".into()));
    }
    let pairs: Vec<PreparedPair> = offline
        .iter()
        .map(|r| PreparedPair::from_record(instance, r))
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut var = 0.0;
    let n = mc_samples as f64;
    for t in 2..=t_len {
        let w = g_direction(&policies[t - 1], reference, instance, beta);
        // (E g)^2 under pi^(t) x pi~^(t-1)
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..mc_samples {
            let f = instance.features(&instance.sample_context(rng));
            let a = f.logits(&w);
            let p = softmax(&f.logits(&policies[t - 1].theta));
            let q = softmax(&f.logits(&samplers[t - 2].theta));
            let m = dot(&p, &a) - dot(&q, &a);
            s += m;
            s2 += m * m;
        }
        let mean = s / n;
        let se = ((s2 / n - mean * mean).max(0.0) / n).sqrt();
        let num = mean * mean;
        // E g^2 under mu^(t), the average of pi^(i) x pi~^(i) for i < t
        let mut mu = 0.0;
        for _ in 0..mc_samples {
            let i = rng.random_range(1..t);
            let f = instance.features(&instance.sample_context(rng));
            let a = f.logits(&w);
            let p = softmax(&f.logits(&policies[i - 1].theta));
            let q = softmax(&f.logits(&samplers[i - 1].theta));
            let (ea, eb) = (dot(&p, &a), dot(&q, &a));
            let a2: Vec<f64> = a.iter().map(|v| v * v).collect();
            mu += dot(&p, &a2) - 2.0 * ea * eb + dot(&q, &a2);
        }
        mu /= n;
        let coff = if pairs.is_empty() {
            0.0
        } else {
            c_off_prepared(&w, &pairs)
        };
        let den = (v_max * v_max).max((t - 1) as f64 * (mu + gamma as f64 * coff));
        if den.is_nan() || den <= 0.0 {
            // zero denominator only when every g vanishes
            continue;
        }
        value += num / den;
        let se_num = 2.0 * mean.abs() * se + se * se;
        var += (se_num / den).powi(2);
    }
    Ok(SecEstimate {
        value,
        std_error: var.sqrt(),
    })
}

/// Right-hand side of the suboptimality bound with absolute constant 1:
///
/// ```text
/// (V + R) e^{2R} sqrt((1 + gamma/T) SEC log(|Pi| T / delta) log T / T)
/// ```
pub fn theorem1_rhs(
    sec_value: f64,
    v_max: f64,
    r_max: f64,
    gamma: usize,
    t_rounds: usize,
    log_pi_proxy: f64,
    delta: f64,
) -> Result<f64> {
    if !(sec_value >= 0.0 && v_max > 0.0 && r_max >= 0.0 && log_pi_proxy > 0.0) {
        return Err(Error::InvalidArgument(
            "bound inputs must be positive".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) || t_rounds < 2 {
        return Err(Error::InvalidArgument(
            "need 0 < delta < 1 and T >= 2".into(),
        ));
    }
    let t = t_rounds as f64;
    let log_term = log_pi_proxy + t.ln() - delta.ln();
    let lead = (v_max + r_max) * (2.0 * r_max).exp();
    Ok(lead * ((1.0 + gamma as f64 / t) * sec_value * log_term * t.ln() / t).sqrt())
}

/// `(8 (R + V) e^{2R})^{-2}`.
pub fn kappa(r_max: f64, v_max: f64) -> f64 {
    (8.0 * (r_max + v_max) * (2.0 * r_max).exp()).powi(-2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurves {
    pub suboptimality: Vec<f64>,
    pub cum_regret: Vec<f64>,
}

/// Suboptimality per logged iterate, and its clipped running sum over
/// iterates whose total sample count exceeds `n_off_offset`.
pub fn regret_accounting(
    j_betas: &[f64],
    total_samples: &[usize],
    optimal_j_beta: f64,
    n_off_offset: usize,
) -> Result<RegretCurves> {
    if j_betas.len() != total_samples.len() {
        return Err(Error::InvalidArgument(
            "j_beta and sample counts differ in length".into(),
        ));
    }
    let suboptimality: Vec<f64> = j_betas.iter().map(|j| optimal_j_beta - j).collect();
    let mut cum = 0.0;
    let cum_regret = suboptimality
        .iter()
        .zip(total_samples)
        .map(|(s, &n)| {
            if n > n_off_offset {
                cum += s.max(0.0);
            }
            cum
        })
        .collect();
    Ok(RegretCurves {
        suboptimality,
        cum_regret,
    })
}

/// Spectral summary of an offline dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub lambda_off: Vec<Vec<f64>>,
    pub lambda_tilde: Vec<Vec<f64>>,
    /// Eigenvalues of `lambda_tilde`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues of `lambda_off`, ascending.
    pub eigenvalues_off: Vec<f64>,
    pub d_hyb: usize,
    /// `None` when `c_star_infinite` is set.
    pub c_star: Option<f64>,
    pub c_star_infinite: bool,
    pub threshold_c: f64,
    pub t_rounds: usize,
    pub gamma: usize,
    pub v_max: f64,
    pub nu_star: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a [`CoverageReport`]; `threshold_c` defaults to `4 v_max^2`.
pub fn coverage_report(
    lambda_off: &DMatrix<f64>,
    nu_star: &[f64],
    t_rounds: usize,
    gamma: usize,
    v_max: f64,
    threshold_c: Option<f64>,
) -> Result<CoverageReport> {
    let tilde = lambda_tilde(lambda_off, v_max, gamma)?;
    let (eigenvalues, _) = eig_sym(&tilde)?;
    let (eigenvalues_off, _) = eig_sym(lambda_off)?;
    let threshold_c = threshold_c.unwrap_or_else(|| default_threshold(v_max));
    let c = concentrability(lambda_off, nu_star, None)?;
    Ok(CoverageReport {
        lambda_off: rows(lambda_off),
        lambda_tilde: rows(&tilde),
        d_hyb: d_hyb(&eigenvalues, t_rounds, threshold_c),
        eigenvalues,
        eigenvalues_off,
        c_star: c.is_finite().then_some(c),
        c_star_infinite: !c.is_finite(),
        threshold_c,
        t_rounds,
        gamma,
        v_max,
        nu_star: nu_star.to_vec(),
    })
}

/// Draws a response pair from `pi x pi~` at a fresh context; used by tests
/// and benches that need on-policy pairs.
pub fn sample_pair<R: Rng + ?Sized>(
    instance: &BanditInstance,
    policy: &LogLinearPolicy,
    sampler: &LogLinearPolicy,
    rng: &mut R,
) -> (Vec<f64>, usize, usize) {
    let x = instance.sample_context(rng);
    let f = instance.features(&x);
    let y = sample_index(&policy.probs_from_features(&f), rng);
    let yt = sample_index(&sampler.probs_from_features(&f), rng);
    (x, y, yt)
}
