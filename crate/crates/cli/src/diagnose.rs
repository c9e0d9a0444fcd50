//! Coverage and bound report for an offline dataset.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use hpo_core::diagnostics::{coverage_report, lambda_off, nu_star, sec_bound_linear, theorem1_rhs};
use hpo_core::policy::{measure_vmax, optimal_policy};
use hpo_core::{mix_seed, seeded_rng, CoverageReport};
use serde::Serialize;

use crate::data::Bundle;

pub const COVERAGE_FILE: &str = "coverage.json";
pub const SPECTRUM_FILE: &str = "spectrum.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseArgs {
    pub t_rounds: usize,
    pub gamma: usize,
    pub beta: f64,
    /// `None` measures `beta * max |log pi*/pi_ref|` on probe contexts.
    pub v_max: Option<f64>,
    /// `None` uses `4 v_max^2`.
    pub threshold_c: Option<f64>,
    /// Contexts used for the optimal feature direction and the `V_max` probe.
    pub probe_contexts: usize,
    pub seed: u64,
    /// Stand-in for `log |Pi|`; `None` uses the feature dimension.
    pub log_pi: Option<f64>,
    pub delta: f64,
}

impl Default for DiagnoseArgs {
    fn default() -> Self {
        Self {
            t_rounds: 1500,
            gamma: 500,
            beta: 1.0,
            v_max: None,
            threshold_c: None,
            probe_contexts: 256,
            seed: 0,
            log_pi: None,
            delta: 0.05,
        }
    }
}

/// Contents of `coverage.json`. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub n_records: usize,
    pub beta: f64,
    pub r_max: f64,
    pub v_max_measured: bool,
    pub sec_bound_linear: f64,
    pub theorem1_rhs: f64,
    pub log_pi: f64,
    pub delta: f64,
    pub coverage: CoverageReport,
}

pub fn diagnose(bundle: &Bundle, args: &DiagnoseArgs) -> Result<Diagnosis> {
    ensure!(
        args.gamma > 0,
        "gamma = 0 leaves the regularized covariance undefined: its ridge term is V_max^2 / gamma"
    );
    ensure!(!bundle.dataset.is_empty(), "offline dataset is empty");
    ensure!(args.probe_contexts >= 1, "probe_contexts must be >= 1");
    let inst = &bundle.instance;
    let mut rng = seeded_rng(mix_seed(args.seed, 0));
    let contexts: Vec<Vec<f64>> = (0..args.probe_contexts)
        .map(|_| inst.sample_context(&mut rng))
        .collect();
    let opt = optimal_policy(inst, &bundle.reference, args.beta);
    let v_max = match args.v_max {
        Some(v) => v,
        None => measure_vmax(&[&opt], inst, &bundle.reference, args.beta, &contexts)?,
    };
    ensure!(
        v_max > 0.0 && v_max.is_finite(),
        "v_max must be positive, got {v_max}"
    );
    let lam = lambda_off(&bundle.dataset.records, inst)?;
    let nu = nu_star(inst, &opt, &contexts)?;
    let coverage = coverage_report(
        &lam,
        &nu,
        args.t_rounds,
        args.gamma,
        v_max,
        args.threshold_c,
    )?;
    let sec = sec_bound_linear(&coverage.eigenvalues, args.t_rounds, args.gamma)?;
    let log_pi = args.log_pi.unwrap_or(inst.feat_dim() as f64);
    let rhs = theorem1_rhs(
        sec,
        v_max,
        inst.r_max,
        args.gamma,
        args.t_rounds,
        log_pi,
        args.delta,
    )?;
    Ok(Diagnosis {
        n_records: bundle.dataset.len(),
        beta: args.beta,
        r_max: inst.r_max,
        v_max_measured: args.v_max.is_none(),
        sec_bound_linear: sec,
        theorem1_rhs: rhs,
        log_pi,
        delta: args.delta,
        coverage,
    })
}

/// Writes `coverage.json` and `spectrum.csv` (ascending eigenvalues of the
/// raw and regularized covariance, and whether each regularized direction
/// falls under the `c / T` threshold).
pub fn write_diagnosis(d: &Diagnosis, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(
        dir.join(COVERAGE_FILE),
        serde_json::to_string_pretty(d)? + "\n",
    )?;
    let mut w = csv::Writer::from_path(dir.join(SPECTRUM_FILE))?;
    w.write_record(["k", "eigenvalue_off", "eigenvalue_tilde", "under_covered"])?;
    let cut = d.coverage.threshold_c / d.coverage.t_rounds as f64;
    for (k, (a, b)) in d
        .coverage
        .eigenvalues_off
        .iter()
        .zip(&d.coverage.eigenvalues)
        .enumerate()
    {
        w.write_record([
            k.to_string(),
            crate::results::fmt_float(*a),
            crate::results::fmt_float(*b),
            (*b <= cut).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
