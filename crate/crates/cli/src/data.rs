//! Instance, reference policy and offline dataset as files.
//!
//! A data directory holds `instance.json`, `reference.json` and
//! `dataset.jsonl`. Everything is derived from one seed: the instance from
//! the seed itself, the reference policy and the dataset from independent
//! sub-streams of it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use hpo_core::{
    build_instance_with_scale, gen_offline_dataset, mix_seed, seeded_rng, BanditInstance,
    LogLinearPolicy, OfflineDataset, Preset,
};
use serde::{Deserialize, Serialize};

use crate::sha256_file;

pub const INSTANCE_FILE: &str = "instance.json";
pub const REFERENCE_FILE: &str = "reference.json";
pub const DATASET_FILE: &str = "dataset.jsonl";

const REFERENCE_STREAM: u64 = 1;
const DATASET_STREAM: u64 = 2;

/// Generation parameters for a data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub context_dim: usize,
    pub num_responses: usize,
    pub feat_dim: usize,
    /// Feature multiplier; `null` means `1/sqrt(feat_dim)`.
    pub scale: Option<f64>,
    pub n_off: usize,
}

impl GenSpec {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        Self {
            seed,
            context_dim: preset.context_dim(),
            num_responses: preset.num_responses(),
            feat_dim: preset.feat_dim(),
            scale: Some(preset.feature_scale()),
            n_off: preset.n_off(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
            .unwrap_or_else(|| 1.0 / (self.feat_dim.max(1) as f64).sqrt())
    }

    pub fn generate(&self) -> Result<Bundle> {
        ensure!(
            self.context_dim >= 1 && self.num_responses >= 2 && self.feat_dim >= 1,
            "invalid dims: context_dim {}, num_responses {}, feat_dim {}",
            self.context_dim,
            self.num_responses,
            self.feat_dim
        );
        let instance = build_instance_with_scale(
            self.seed,
            self.context_dim,
            self.num_responses,
            self.feat_dim,
            self.scale(),
        )?;
        let reference = LogLinearPolicy::random_reference(
            &mut seeded_rng(mix_seed(self.seed, REFERENCE_STREAM)),
            self.feat_dim,
        );
        let dataset = gen_offline_dataset(
            &instance,
            &reference,
            self.n_off,
            &mut seeded_rng(mix_seed(self.seed, DATASET_STREAM)),
        )?;
        Ok(Bundle {
            instance,
            reference,
            dataset,
        })
    }
}

/// Everything a run needs besides its configuration.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub instance: BanditInstance,
    pub reference: LogLinearPolicy,
    pub dataset: OfflineDataset,
}

impl Bundle {
    /// Writes the three files and returns each path with its SHA-256.
    pub fn write(&self, dir: &Path) -> Result<Vec<(PathBuf, String)>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let inst = dir.join(INSTANCE_FILE);
        write_text(&inst, &self.instance.to_json()?)?;
        let refp = dir.join(REFERENCE_FILE);
        write_text(&refp, &self.reference.to_json()?)?;
        let data = dir.join(DATASET_FILE);
        let f = File::create(&data).with_context(|| format!("creating {}", data.display()))?;
        let mut w = BufWriter::new(f);
        self.dataset.write_jsonl(&mut w)?;
        w.flush()?;
        [inst, refp, data]
            .into_iter()
            .map(|p| {
                let h = sha256_file(&p)?;
                Ok((p, h))
            })
            .collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
        };
        let instance = BanditInstance::from_json(&read(INSTANCE_FILE)?)?;
        let reference = LogLinearPolicy::from_json(&read(REFERENCE_FILE)?)?;
        let p = dir.join(DATASET_FILE);
        let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        let dataset = OfflineDataset::read_jsonl(BufReader::new(f))?;
        ensure!(
            reference.dim() == instance.feat_dim(),
            "reference policy has dim {} but the instance has feat_dim {}",
            reference.dim(),
            instance.feat_dim()
        );
        Ok(Self {
            instance,
            reference,
            dataset,
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut s = text.to_string();
    if !s.ends_with('\n') {
        s.push('\n');
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
