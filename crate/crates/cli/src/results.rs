//! The results CSV.
//!
//! Columns are fixed: `algo,seed,t,total_samples,j_beta,suboptimality,
//! cum_regret,wall_ms`. Floats are written with 17 significant digits so a
//! parse and re-emit reproduces the file byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use anyhow::{ensure, Context, Result};
use hpo_core::RunResult;

pub const HEADER: [&str; 8] = [
    "algo",
    "seed",
    "t",
    "total_samples",
    "j_beta",
    "suboptimality",
    "cum_regret",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algo: String,
    pub seed: u64,
    pub t: usize,
    /// Offline samples counted plus online samples seen.
    pub total_samples: usize,
    pub j_beta: f64,
    pub suboptimality: f64,
    pub cum_regret: f64,
    /// Wall time of the whole run in milliseconds, `0` unless timing is on.
    pub wall_ms: u64,
}

/// One row per logged iterate of `run`.
pub fn rows_from_run(algo: &str, seed: u64, run: &RunResult, timing: bool) -> Vec<ResultRow> {
    let wall_ms = if timing { run.wall_time_ms } else { 0 };
    run.per_iter
        .iter()
        .map(|r| ResultRow {
            algo: algo.to_string(),
            seed,
            t: r.t,
            total_samples: r.total_samples,
            j_beta: r.j_beta,
            suboptimality: r.suboptimality,
            cum_regret: r.cum_regret,
            wall_ms,
        })
        .collect()
}

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in rows {
        out.write_record([
            r.algo.clone(),
            r.seed.to_string(),
            r.t.to_string(),
            r.total_samples.to_string(),
            fmt_float(r.j_beta),
            fmt_float(r.suboptimality),
            fmt_float(r.cum_regret),
            r.wall_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    ensure!(header == HEADER, "unexpected results header {header:?}");
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let field = |k: usize| {
                rec.get(k)
                    .with_context(|| format!("row {}: missing column {k}", i + 1))
            };
            Ok(ResultRow {
                algo: field(0)?.to_string(),
                seed: field(1)?.parse()?,
                t: field(2)?.parse()?,
                total_samples: field(3)?.parse()?,
                j_beta: field(4)?.parse()?,
                suboptimality: field(5)?.parse()?,
                cum_regret: field(6)?.parse()?,
                wall_ms: field(7)?.parse()?,
            })
        })
        .collect()
}

/// Seed-means at one logged index `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanPoint {
    pub total_samples: usize,
    pub suboptimality: f64,
    pub cum_regret: f64,
}

/// Seed-averaged curve of one algorithm, keyed by `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeanCurve {
    pub n_seeds: usize,
    pub points: BTreeMap<usize, MeanPoint>,
}

impl MeanCurve {
    /// Mean suboptimality of the last point with this sample count.
    pub fn suboptimality_at(&self, total_samples: usize) -> Option<f64> {
        self.points
            .values()
            .rfind(|p| p.total_samples == total_samples)
            .map(|p| p.suboptimality)
    }

    pub fn last(&self) -> Option<MeanPoint> {
        self.points.values().next_back().copied()
    }

    pub fn final_suboptimality(&self) -> Option<f64> {
        self.last().map(|p| p.suboptimality)
    }

    /// Mean cumulative regret accrued over the last `rounds` points.
    pub fn final_regret_increment(&self, rounds: usize) -> Option<f64> {
        let vals: Vec<f64> = self.points.values().map(|p| p.cum_regret).collect();
        if vals.len() <= rounds {
            return None;
        }
        Some(vals[vals.len() - 1] - vals[vals.len() - 1 - rounds])
    }
}

/// Mean curves per algorithm. Every seed of an algorithm must log the same
/// indices with the same sample counts.
pub fn mean_curves(rows: &[ResultRow]) -> Result<BTreeMap<String, MeanCurve>> {
    type Acc = BTreeMap<usize, (usize, Vec<(f64, f64)>)>;
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let mut seeds: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    for r in rows {
        let slot = acc
            .entry(r.algo.clone())
            .or_default()
            .entry(r.t)
            .or_insert((r.total_samples, Vec::new()));
        ensure!(
            slot.0 == r.total_samples,
            "{} seed {}: t {} has total_samples {} but another seed has {}",
            r.algo,
            r.seed,
            r.t,
            r.total_samples,
            slot.0
        );
        slot.1.push((r.suboptimality, r.cum_regret));
        seeds.entry(r.algo.clone()).or_default().insert(r.seed);
    }
    acc.into_iter()
        .map(|(algo, pts)| {
            let n = seeds[&algo].len();
            let points = pts
                .into_iter()
                .map(|(t, (total_samples, v))| {
                    ensure!(
                        v.len() == n,
                        "{algo}: {} of {n} seeds logged t = {t}",
                        v.len()
                    );
                    let m = v.len() as f64;
                    Ok((
                        t,
                        MeanPoint {
                            total_samples,
                            suboptimality: v.iter().map(|p| p.0).sum::<f64>() / m,
                            cum_regret: v.iter().map(|p| p.1).sum::<f64>() / m,
                        },
                    ))
                })
                .collect::<Result<_>>()?;
            Ok((algo, MeanCurve { n_seeds: n, points }))
        })
        .collect()
}

/// Plain-text summary: final mean suboptimality and regret per algorithm,
/// plus the mean suboptimality at a few shared sample counts.
pub fn summary(rows: &[ResultRow], marks: &[usize]) -> Result<String> {
    let curves = mean_curves(rows)?;
    let mut s = String::new();
    s.push_str("algo          seeds  final_subopt  final_cum_regret");
    for m in marks {
        s.push_str(&format!("  subopt@{m}"));
    }
    s.push('\n');
    for (algo, c) in &curves {
        let (fs, fc) = c
            .last()
            .map(|p| (p.suboptimality, p.cum_regret))
            .unwrap_or((f64::NAN, f64::NAN));
        s.push_str(&format!(
            "{algo:<12}  {:>5}  {fs:>12.6}  {fc:>16.6}",
            c.n_seeds
        ));
        for &m in marks {
            let w = format!("subopt@{m}").len();
            match c.suboptimality_at(m) {
                Some(v) => s.push_str(&format!("  {v:>w$.6}")),
                None => s.push_str(&format!("  {:>w$}", "-")),
            }
        }
        s.push('\n');
    }
    Ok(s)
}
