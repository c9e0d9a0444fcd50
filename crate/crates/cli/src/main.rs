//! `hpo-lab`: generate synthetic preference data, run the hybrid algorithm
//! and its baselines, sweep the optimism weight, and report coverage.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use hpo_cli::data::GenSpec;
use hpo_cli::diagnose::{diagnose, write_diagnosis, DiagnoseArgs};
use hpo_cli::experiment::{self, Algo, DataSource, ExperimentSpec};
use hpo_cli::results::summary;
use hpo_core::reduction::identity_table;
use hpo_core::{seeded_rng, Preset};

/// Sample counts at which the run summary reports mean suboptimality.
const SUMMARY_MARKS: [usize; 3] = [1000, 1500, 2000];

#[derive(Parser)]
#[command(
    name = "hpo-lab",
    version,
    about = "Hybrid preference optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write instance.json, reference.json and dataset.jsonl.
    Gen(GenArgs),
    /// Run algorithms over seeds and write results.csv.
    Run(RunArgs),
    /// Run once per optimism weight and keep the best per algorithm.
    Sweep(SweepArgs),
    /// Coverage spectrum and bound values of an offline dataset.
    Diagnose(DiagArgs),
    /// Print the Gumbel duel win-rate table as CSV.
    ReduceDemo(ReduceArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_preset, conflicts_with_all = ["context_dim", "num_responses", "feat_dim"])]
    paper_preset: Option<Preset>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    context_dim: Option<usize>,
    #[arg(long)]
    num_responses: Option<usize>,
    #[arg(long)]
    feat_dim: Option<usize>,
    /// Feature multiplier; defaults to the preset's, or 1/sqrt(feat_dim).
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    n_off: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SpecArgs {
    /// JSON experiment spec (schema 1).
    #[arg(
        long,
        conflicts_with = "paper_preset",
        required_unless_present = "paper_preset"
    )]
    config: Option<PathBuf>,
    /// Use the published experiment's settings.
    #[arg(long, value_parser = parse_preset)]
    paper_preset: Option<Preset>,
    /// Read data from a `gen` directory instead of the spec's source.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated algorithms: hpo, xpo, online-dpo, offline-dpo.
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algo>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    t_rounds: Option<usize>,
    /// Fill the wall_ms column.
    #[arg(long)]
    timing: bool,
    /// Print the resolved spec and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Comma-separated optimism weights; defaults to the preset grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

#[derive(Args)]
struct DiagArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 1500)]
    t_rounds: usize,
    #[arg(long, default_value_t = 500)]
    gamma: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    threshold_c: Option<f64>,
    #[arg(long, default_value_t = 256)]
    probe_contexts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    log_pi: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReduceArgs {
    /// Comma-separated score gaps; defaults to -2,-0.5,0,0.5,ln 3,2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    gaps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: hpo_core::Error| e.to_string())
}

fn resolve(a: &SpecArgs) -> Result<ExperimentSpec> {
    let mut spec = match (&a.config, a.paper_preset) {
        (Some(path), _) => ExperimentSpec::load(path)?,
        (None, Some(p)) => ExperimentSpec::preset(p, PathBuf::from("hpo-out")),
        (None, None) => bail!("pass --config or --paper-preset"),
    };
    if let Some(d) = &a.data_dir {
        spec.data = DataSource::Dir(d.clone());
    }
    if let Some(o) = &a.out_dir {
        spec.out_dir = o.clone();
    }
    if let Some(s) = &a.seeds {
        spec.seeds = s.clone();
    }
    if let Some(al) = &a.algo {
        spec.algorithms = al.clone();
    }
    if let Some(x) = a.alpha {
        spec.hpo.alpha = x;
    }
    if let Some(g) = a.gamma {
        spec.hpo.gamma = g;
    }
    if let Some(b) = a.beta {
        spec.hpo.beta = b;
        if let Some(off) = spec.offline.as_mut() {
            off.beta = b;
        }
    }
    if let Some(t) = a.t_rounds {
        spec.hpo.t_rounds = t;
    }
    spec.timing |= a.timing;
    spec.validate()?;
    Ok(spec)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let base = GenSpec::preset(a.paper_preset.unwrap_or(Preset::Main), a.seed);
    let custom = a.paper_preset.is_none();
    let feat_dim = a.feat_dim.unwrap_or(base.feat_dim);
    let spec = GenSpec {
        seed: a.seed,
        context_dim: a.context_dim.unwrap_or(base.context_dim),
        num_responses: a.num_responses.unwrap_or(base.num_responses),
        feat_dim,
        scale: match a.scale {
            Some(s) => Some(s),
            None if custom && a.feat_dim.is_some() => None,
            None => base.scale,
        },
        n_off: a.n_off.unwrap_or(base.n_off),
    };
    let bundle = spec.generate()?;
    for (path, hash) in bundle.write(&a.out_dir)? {
        println!("{hash}  {}", path.display());
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let spec = resolve(&a.spec)?;
    if a.spec.print_spec {
        println!("{}", spec.to_json()?);
        return Ok(());
    }
    let out = experiment::run(&spec)?;
    print!("{}", summary(&out.rows, &SUMMARY_MARKS)?);
    println!(
        "wrote {}",
        spec.out_dir.join(experiment::RESULTS_FILE).display()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let spec = resolve(&a.spec)?;
    if a.spec.print_spec {
        println!("{}", spec.to_json()?);
        return Ok(());
    }
    let alphas = a.alphas.unwrap_or_else(experiment::preset_alphas);
    let out = experiment::sweep(&spec, &alphas)?;
    println!("algo          alpha  final_subopt  selected");
    for r in &out.table {
        let alpha = r.alpha.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{:<12}  {alpha:>5}  {:>12.6}  {}",
            r.algo.as_str(),
            r.final_suboptimality,
            if r.selected { "*" } else { "" }
        );
    }
    print!("{}", summary(&out.best, &SUMMARY_MARKS)?);
    println!(
        "wrote {}",
        spec.out_dir.join(experiment::SWEEP_FILE).display()
    );
    Ok(())
}

fn cmd_diagnose(a: DiagArgs) -> Result<()> {
    let bundle = hpo_cli::data::Bundle::load(&a.data_dir)?;
    let args = DiagnoseArgs {
        t_rounds: a.t_rounds,
        gamma: a.gamma,
        beta: a.beta,
        v_max: a.v_max,
        threshold_c: a.threshold_c,
        probe_contexts: a.probe_contexts,
        seed: a.seed,
        log_pi: a.log_pi,
        delta: a.delta,
    };
    let d = diagnose(&bundle, &args)?;
    write_diagnosis(&d, &a.out_dir)?;
    println!(
        "d_hyb {} of {}  sec_bound {:.6}  theorem1_rhs {:.6e}  v_max {:.6}",
        d.coverage.d_hyb,
        d.coverage.eigenvalues.len(),
        d.sec_bound_linear,
        d.theorem1_rhs,
        d.coverage.v_max
    );
    Ok(())
}

fn cmd_reduce(a: ReduceArgs) -> Result<()> {
    let gaps = a
        .gaps
        .unwrap_or_else(|| vec![-2.0, -0.5, 0.0, 0.5, 3f64.ln(), 2.0]);
    anyhow::ensure!(a.trials >= 1, "trials must be >= 1");
    let rows = identity_table(&gaps, a.trials, &mut seeded_rng(a.seed));
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["gap", "sigma", "empirical", "ci", "trials", "within"])?;
    for r in rows {
        w.write_record([
            r.gap.to_string(),
            format!("{:.6}", r.sigma),
            format!("{:.6}", r.empirical),
            format!("{:.6}", r.ci),
            r.trials.to_string(),
            r.within(1e-3).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::ReduceDemo(a) => cmd_reduce(a),
    }
}
