//! Experiment specs, seeded runs and alpha sweeps.
//!
//! Each `(algorithm, seed)` pair is an independent job with its own
//! `seeded_rng(seed)` stream, so results do not depend on the worker count
//! or on which other algorithms share the run. Rows are written in
//! `(algo, seed, t)` order.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use hpo_core::{
    run_hpo, run_offline_dpo, run_online_dpo, run_xpo, seeded_rng, EvalSet, HpoConfig,
    LogLinearPolicy, OfflineDpoConfig, Preset, RunResult, PRESET_ALPHAS,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bundle, GenSpec};
use crate::results::{mean_curves, rows_from_run, write_csv, ResultRow};
use crate::worker_threads;

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const SPEC_FILE: &str = "spec.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Variants are listed in name order so that sorting by `Algo` sorts the
/// CSV by its `algo` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Hpo,
    OfflineDpo,
    OnlineDpo,
    Xpo,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Hpo, Algo::OfflineDpo, Algo::OnlineDpo, Algo::Xpo];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Hpo => "hpo",
            Algo::OfflineDpo => "offline-dpo",
            Algo::OnlineDpo => "online-dpo",
            Algo::Xpo => "xpo",
        }
    }

    /// Whether the optimism weight changes this algorithm's output.
    pub fn uses_alpha(self) -> bool {
        matches!(self, Algo::Hpo | Algo::Xpo)
    }

    /// Whether the algorithm trains on the offline dataset.
    pub fn uses_offline(self) -> bool {
        matches!(self, Algo::Hpo | Algo::OfflineDpo)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .with_context(|| {
                format!("unknown algorithm {s:?}; expected hpo, xpo, online-dpo or offline-dpo")
            })
    }
}

/// Where the instance, reference policy and dataset come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A directory written by `hpo-lab gen`.
    Dir(PathBuf),
    Generate(GenSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Bundle> {
        match self {
            DataSource::Dir(d) => Bundle::load(d),
            DataSource::Generate(g) => g.generate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: u32,
    pub data: DataSource,
    pub algorithms: Vec<Algo>,
    /// Shared by the online algorithms; `seed` fixes the evaluation contexts.
    pub hpo: HpoConfig,
    /// Offline DPO settings; `null` uses the defaults with `hpo`'s beta and
    /// optimizer.
    #[serde(default)]
    pub offline: Option<OfflineDpoConfig>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Run the online baselines for `t_rounds + N_off` rounds so that their
    /// sample axis reaches the hybrid run's.
    #[serde(default)]
    pub match_total_samples: bool,
    /// Fill the `wall_ms` column.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentSpec {
    /// The published experiment: every algorithm, five seeds, first alpha of
    /// the grid.
    pub fn preset(preset: Preset, out_dir: PathBuf) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            data: DataSource::Generate(GenSpec::preset(preset, 0)),
            algorithms: Algo::ALL.to_vec(),
            hpo: HpoConfig::preset(preset),
            offline: None,
            seeds: (0..5).collect(),
            out_dir,
            match_total_samples: true,
            timing: false,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s).context("parsing experiment spec")?;
        match v.get("schema").and_then(|s| s.as_u64()) {
            Some(n) if n == SCHEMA_VERSION as u64 => {}
            Some(n) => {
                bail!("unsupported spec schema {n}; this build reads schema {SCHEMA_VERSION}")
            }
            None => bail!("experiment spec needs an integer `schema` field"),
        }
        serde_json::from_value(v).context("parsing experiment spec")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&s).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn offline_config(&self) -> OfflineDpoConfig {
        self.offline.clone().unwrap_or_else(|| OfflineDpoConfig {
            beta: self.hpo.beta,
            optimizer: self.hpo.optimizer,
            ..OfflineDpoConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema == SCHEMA_VERSION,
            "unsupported spec schema {}",
            self.schema
        );
        ensure!(!self.seeds.is_empty(), "seeds must be nonempty");
        ensure!(
            self.seeds.iter().collect::<BTreeSet<_>>().len() == self.seeds.len(),
            "seeds must be distinct"
        );
        ensure!(!self.algorithms.is_empty(), "algorithms must be nonempty");
        ensure!(
            self.algorithms.iter().collect::<BTreeSet<_>>().len() == self.algorithms.len(),
            "algorithms must be distinct"
        );
        if let DataSource::Dir(d) = &self.data {
            ensure!(d.is_dir(), "data directory {} does not exist", d.display());
        }
        self.hpo.validate()?;
        if self.algorithms.contains(&Algo::OfflineDpo) {
            let off = self.offline_config();
            ensure!(
                off.beta.to_bits() == self.hpo.beta.to_bits(),
                "offline beta {} differs from the online beta {}; both are scored on one evaluation set",
                off.beta,
                self.hpo.beta
            );
            ensure!(
                off.steps == 0 || off.checkpoint_every >= 1,
                "checkpoint_every must be >= 1"
            );
        }
        Ok(())
    }
}

/// Rows and returned policies of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub rows: Vec<ResultRow>,
    /// `(algo, seed, policy with the best logged objective)`.
    pub policies: Vec<(Algo, u64, LogLinearPolicy)>,
}

/// A job that failed, with enough context to rerun it.
#[derive(Debug)]
pub struct JobFailure {
    pub algo: Algo,
    pub seed: u64,
    pub error: anyhow::Error,
}

impl fmt::Display for JobFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},\"{:#}\"", self.algo, self.seed, self.error)
    }
}

fn run_one(
    spec: &ExperimentSpec,
    bundle: &Bundle,
    eval: &EvalSet,
    algo: Algo,
    seed: u64,
) -> Result<RunResult> {
    let mut rng = seeded_rng(seed);
    let (inst, refp) = (&bundle.instance, &bundle.reference);
    let online = if spec.match_total_samples {
        HpoConfig {
            t_rounds: spec.hpo.t_rounds + bundle.dataset.len(),
            ..spec.hpo.clone()
        }
    } else {
        spec.hpo.clone()
    };
    Ok(match algo {
        Algo::Hpo => run_hpo(inst, refp, &bundle.dataset, &spec.hpo, eval, &mut rng)?,
        Algo::Xpo => run_xpo(inst, refp, &online, eval, &mut rng)?,
        Algo::OnlineDpo => run_online_dpo(inst, refp, &online, eval, &mut rng)?,
        Algo::OfflineDpo => run_offline_dpo(
            inst,
            refp,
            &bundle.dataset,
            &spec.offline_config(),
            eval,
            &mut rng,
        )?,
    })
}

/// Runs every `(algo, seed)` job on a worker pool. On failure, returns
/// every failed job.
pub fn execute(
    spec: &ExperimentSpec,
    bundle: &Bundle,
) -> std::result::Result<Outcome, Vec<JobFailure>> {
    let fail = |error: anyhow::Error| {
        vec![JobFailure {
            algo: spec.algorithms[0],
            seed: spec.seeds[0],
            error,
        }]
    };
    spec.validate().map_err(fail)?;
    let eval = EvalSet::new(
        &bundle.instance,
        &bundle.reference,
        spec.hpo.beta,
        spec.hpo.eval_contexts,
        spec.hpo.seed,
    )
    .map_err(|e| fail(e.into()))?;
    let mut algos = spec.algorithms.clone();
    algos.sort();
    let mut seeds = spec.seeds.clone();
    seeds.sort();
    let jobs: Vec<(Algo, u64)> = algos
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads().map_err(fail)?)
        .build()
        .map_err(|e| fail(e.into()))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, s)| {
                log::info!("running {a} seed {s}");
                run_one(spec, bundle, &eval, a, s)
            })
            .collect()
    });
    let mut out = Outcome {
        rows: Vec::new(),
        policies: Vec::new(),
    };
    let mut failures = Vec::new();
    for ((algo, seed), res) in jobs.into_iter().zip(results) {
        match res {
            Ok(run) => {
                out.rows
                    .extend(rows_from_run(algo.as_str(), seed, &run, spec.timing));
                out.policies.push((algo, seed, run.returned_policy));
            }
            Err(error) => failures.push(JobFailure { algo, seed, error }),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(failures)
    }
}

/// Writes `results.csv`, `spec.json` and `policies/<algo>-seed<seed>.json`.
pub fn write_outcome(spec: &ExperimentSpec, outcome: &Outcome) -> Result<()> {
    let dir = &spec.out_dir;
    let pdir = dir.join("policies");
    std::fs::create_dir_all(&pdir).with_context(|| format!("creating {}", pdir.display()))?;
    let path = dir.join(RESULTS_FILE);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_csv(&outcome.rows, &mut w)?;
    w.flush()?;
    std::fs::write(dir.join(SPEC_FILE), spec.to_json()? + "\n")?;
    for (algo, seed, policy) in &outcome.policies {
        let p = pdir.join(format!("{algo}-seed{seed}.json"));
        std::fs::write(&p, policy.to_json()? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// Loads the data, runs and writes. Failed jobs are reported one per line
/// as `algo,seed,"error"`.
pub fn run(spec: &ExperimentSpec) -> Result<Outcome> {
    spec.validate()?;
    let bundle = spec.data.load()?;
    match execute(spec, &bundle) {
        Ok(outcome) => {
            write_outcome(spec, &outcome)?;
            Ok(outcome)
        }
        Err(failures) => {
            let lines: Vec<String> = failures.iter().map(|f| f.to_string()).collect();
            bail!(
                "{} job(s) failed:\nalgo,seed,error\n{}",
                failures.len(),
                lines.join("\n")
            )
        }
    }
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algo: Algo,
    /// `None` for algorithms that ignore alpha.
    pub alpha: Option<f64>,
    pub final_suboptimality: f64,
    pub final_cum_regret: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub table: Vec<SweepRow>,
    /// Rows of the selected alpha for each algorithm, plus the alpha-free
    /// baselines; written as the top-level `results.csv`.
    pub best: Vec<ResultRow>,
}

fn alpha_dir(alpha: f64) -> String {
    format!("alpha-{alpha}")
}

/// Runs the alpha-dependent algorithms once per alpha and the others once,
/// then keeps, per algorithm, the alpha with the lowest final mean
/// suboptimality (first on ties).
pub fn sweep(base: &ExperimentSpec, alphas: &[f64]) -> Result<SweepOutcome> {
    ensure!(!alphas.is_empty(), "need at least one alpha");
    ensure!(
        alphas.iter().all(|a| a.is_finite() && *a >= 0.0),
        "alphas must be finite and >= 0"
    );
    base.validate()?;
    let bundle = base.data.load()?;
    let mut groups: Vec<(Option<f64>, Vec<Algo>)> = Vec::new();
    let tuned: Vec<Algo> = base
        .algorithms
        .iter()
        .copied()
        .filter(|a| a.uses_alpha())
        .collect();
    let fixed: Vec<Algo> = base
        .algorithms
        .iter()
        .copied()
        .filter(|a| !a.uses_alpha())
        .collect();
    if !tuned.is_empty() {
        groups.extend(alphas.iter().map(|&a| (Some(a), tuned.clone())));
    }
    if !fixed.is_empty() {
        groups.push((None, fixed));
    }
    let mut table = Vec::new();
    let mut runs: Vec<(Option<f64>, Vec<ResultRow>)> = Vec::new();
    for (alpha, algos) in groups {
        let sub = match alpha {
            Some(a) => alpha_dir(a),
            None => "baselines".to_string(),
        };
        let spec = ExperimentSpec {
            algorithms: algos,
            hpo: HpoConfig {
                alpha: alpha.unwrap_or(base.hpo.alpha),
                ..base.hpo.clone()
            },
            out_dir: base.out_dir.join(sub),
            ..base.clone()
        };
        let outcome = match execute(&spec, &bundle) {
            Ok(o) => o,
            Err(failures) => {
                let lines: Vec<String> = failures.iter().map(|f| f.to_string()).collect();
                bail!(
                    "sweep alpha {alpha:?}: job(s) failed:\n{}",
                    lines.join("\n")
                );
            }
        };
        write_outcome(&spec, &outcome)?;
        for (name, c) in mean_curves(&outcome.rows)? {
            let (s, r) = c
                .last()
                .map(|p| (p.suboptimality, p.cum_regret))
                .unwrap_or((f64::NAN, f64::NAN));
            table.push(SweepRow {
                algo: name.parse()?,
                alpha,
                final_suboptimality: s,
                final_cum_regret: r,
                selected: false,
            });
        }
        runs.push((alpha, outcome.rows));
    }
    let mut best = Vec::new();
    for algo in Algo::ALL {
        let pick = table
            .iter()
            .enumerate()
            .filter(|(_, r)| r.algo == algo)
            .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
                Some((_, b)) if r.final_suboptimality >= b => acc,
                _ => Some((i, r.final_suboptimality)),
            });
        if let Some((i, _)) = pick {
            table[i].selected = true;
            let alpha = table[i].alpha;
            let rows = runs
                .iter()
                .filter(|(a, _)| a.map(f64::to_bits) == alpha.map(f64::to_bits))
                .flat_map(|(_, rows)| rows.iter().filter(|r| r.algo == algo.as_str()).cloned());
            best.extend(rows);
        }
    }
    table.sort_by(|a, b| {
        a.algo
            .cmp(&b.algo)
            .then(a.alpha.unwrap_or(0.0).total_cmp(&b.alpha.unwrap_or(0.0)))
    });
    std::fs::create_dir_all(&base.out_dir)?;
    let mut w = csv::Writer::from_path(base.out_dir.join(SWEEP_FILE))?;
    w.write_record([
        "algo",
        "alpha",
        "final_suboptimality",
        "final_cum_regret",
        "selected",
    ])?;
    for r in &table {
        w.write_record([
            r.algo.as_str().to_string(),
            r.alpha.map(|a| a.to_string()).unwrap_or_default(),
            crate::results::fmt_float(r.final_suboptimality),
            crate::results::fmt_float(r.final_cum_regret),
            r.selected.to_string(),
        ])?;
    }
    w.flush()?;
    let f = File::create(base.out_dir.join(RESULTS_FILE))?;
    let mut bw = BufWriter::new(f);
    write_csv(&best, &mut bw)?;
    bw.flush()?;
    Ok(SweepOutcome { table, best })
}

/// The preset alpha grid.
pub fn preset_alphas() -> Vec<f64> {
    PRESET_ALPHAS.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: PathBuf) -> ExperimentSpec {
        ExperimentSpec {
            schema: 1,
            data: DataSource::Generate(GenSpec {
                seed: 1,
                context_dim: 2,
                num_responses: 8,
                feat_dim: 4,
                scale: Some(1.0),
                n_off: 30,
            }),
            algorithms: Algo::ALL.to_vec(),
            hpo: HpoConfig {
                gamma: 10,
                t_rounds: 12,
                eval_contexts: 16,
                inner_steps: 3,
                ..HpoConfig::default()
            },
            offline: Some(OfflineDpoConfig {
                steps: 20,
                checkpoint_every: 5,
                ..OfflineDpoConfig::default()
            }),
            seeds: vec![2, 0],
            out_dir: out,
            match_total_samples: true,
            timing: false,
        }
    }

    #[test]
    fn algo_order_matches_names() {
        let mut names: Vec<&str> = Algo::ALL.iter().map(|a| a.as_str()).collect();
        names.sort();
        assert_eq!(
            names,
            Algo::ALL.iter().map(|a| a.as_str()).collect::<Vec<_>>()
        );
        for a in Algo::ALL {
            assert_eq!(a.as_str().parse::<Algo>().unwrap(), a);
        }
        assert!("dpo".parse::<Algo>().is_err());
    }

    #[test]
    fn rows_sorted_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny(dir.path().to_path_buf());
        let bundle = spec.data.load().unwrap();
        let out = execute(&spec, &bundle).unwrap();
        let key = |r: &ResultRow| (r.algo.clone(), r.seed, r.t);
        assert!(out.rows.windows(2).all(|w| key(&w[0]) < key(&w[1])));
        let count = |a: &str| out.rows.iter().filter(|r| r.algo == a).count();
        assert_eq!(count("hpo"), 2 * 12);
        assert_eq!(count("xpo"), 2 * (12 + 30));
        assert_eq!(count("online-dpo"), 2 * (12 + 30));
        assert_eq!(count("offline-dpo"), 2 * 4);
        let last_hpo = out.rows.iter().rfind(|r| r.algo == "hpo").unwrap();
        assert_eq!(last_hpo.total_samples, 30 + 12);
        assert_eq!(out.policies.len(), 8);
    }

    #[test]
    fn spec_json_round_trip_and_schema_check() {
        let spec = tiny(PathBuf::from("out"));
        let back = ExperimentSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
        let bumped = spec
            .to_json()
            .unwrap()
            .replace("\"schema\": 1", "\"schema\": 2");
        assert!(ExperimentSpec::from_json(&bumped).is_err());
        let mut bad = spec.clone();
        bad.seeds.clear();
        assert!(bad.validate().is_err());
        let mut dup = spec;
        dup.seeds = vec![1, 1];
        assert!(dup.validate().is_err());
    }

    #[test]
    fn offline_beta_must_match() {
        let mut spec = tiny(PathBuf::from("out"));
        spec.offline.as_mut().unwrap().beta = 0.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sweep_selects_one_alpha_per_algo() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny(dir.path().to_path_buf());
        let out = sweep(&spec, &[0.0, 1.0]).unwrap();
        for a in Algo::ALL {
            assert_eq!(
                out.table
                    .iter()
                    .filter(|r| r.algo == a && r.selected)
                    .count(),
                1
            );
        }
        assert_eq!(out.table.len(), 2 * 2 + 2);
        assert!(dir.path().join("alpha-0").join(RESULTS_FILE).exists());
        assert!(dir.path().join("baselines").join(RESULTS_FILE).exists());
        assert!(dir.path().join(SWEEP_FILE).exists());
        let n_hpo = out.best.iter().filter(|r| r.algo == "hpo").count();
        assert_eq!(n_hpo, 2 * 12);
    }
}
