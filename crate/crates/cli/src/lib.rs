//! Experiment orchestration behind the `hpo-lab` binary.
//!
//! - [`data`]: generating and loading the instance, reference policy and
//!   offline dataset.
//! - [`experiment`]: versioned experiment specs, seeded runs and alpha sweeps.
//! - [`results`]: the results CSV and mean-over-seeds summaries.
//! - [`diagnose`]: coverage and bound reports for an offline dataset.

pub mod data;
pub mod diagnose;
pub mod experiment;
pub mod results;

use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Worker count from `HPO_LAB_THREADS`; `0` lets rayon decide.
pub fn worker_threads() -> Result<usize> {
    match std::env::var("HPO_LAB_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("HPO_LAB_THREADS={v:?} is not a count"))?;
            anyhow::ensure!(n >= 1, "HPO_LAB_THREADS must be >= 1");
            Ok(n)
        }
        Err(_) => Ok(0),
    }
}
