//! End-to-end checks of the `hpo-lab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hpo_cli::data::GenSpec;
use hpo_cli::experiment::{Algo, DataSource, ExperimentSpec, RESULTS_FILE};
use hpo_cli::results::{read_csv, write_csv};
use hpo_core::{HpoConfig, OfflineDpoConfig};
use sha2::{Digest, Sha256};

fn hpo_lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpo-lab"))
        .args(args)
        .current_dir(cwd)
        .env("HPO_LAB_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_small(dir: &Path, seed: u64) -> String {
    ok(hpo_lab(
        &[
            "gen",
            "--seed",
            &seed.to_string(),
            "--context-dim",
            "2",
            "--num-responses",
            "10",
            "--feat-dim",
            "4",
            "--n-off",
            "40",
            "--out-dir",
            dir.to_str().unwrap(),
        ],
        dir.parent().unwrap(),
    ))
}

fn small_spec(out: PathBuf, data: PathBuf) -> ExperimentSpec {
    ExperimentSpec {
        schema: 1,
        data: DataSource::Dir(data),
        algorithms: Algo::ALL.to_vec(),
        hpo: HpoConfig {
            alpha: 0.5,
            gamma: 20,
            t_rounds: 12,
            eval_contexts: 32,
            ..Default::default()
        },
        offline: Some(OfflineDpoConfig {
            steps: 30,
            checkpoint_every: 10,
            ..Default::default()
        }),
        seeds: vec![0, 1],
        out_dir: out,
        match_total_samples: true,
        timing: false,
    }
}

fn write_spec(spec: &ExperimentSpec, path: &Path) {
    std::fs::write(path, spec.to_json().unwrap()).unwrap();
}

#[test]
fn gen_prints_reproducible_file_hashes() {
    let root = tempfile::tempdir().unwrap();
    let a = gen_small(&root.path().join("a"), 3);
    let b = gen_small(&root.path().join("b"), 3);
    let c = gen_small(&root.path().join("c"), 4);
    let hashes = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect()
    };
    assert_eq!(hashes(&a).len(), 3);
    assert_eq!(hashes(&a), hashes(&b));
    assert_ne!(hashes(&a), hashes(&c));
    for line in a.lines() {
        let (hash, path) = line.split_once("  ").unwrap();
        let bytes = std::fs::read(root.path().join(path)).unwrap();
        assert_eq!(hash, hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn hybrid_without_offline_data_reproduces_xpo_rows() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data, 1);
    let mut spec = small_spec(root.path().join("out"), data);
    spec.algorithms = vec![Algo::Hpo, Algo::Xpo];
    spec.hpo.gamma = 0;
    spec.match_total_samples = false;
    let cfg = root.path().join("spec.json");
    write_spec(&spec, &cfg);
    ok(hpo_lab(&["run", "--config", "spec.json"], root.path()));
    let text = std::fs::read_to_string(root.path().join("out").join(RESULTS_FILE)).unwrap();
    let body = |algo: &str| -> Vec<String> {
        text.lines()
            .filter_map(|l| l.strip_prefix(&format!("{algo},")).map(str::to_string))
            .collect()
    };
    assert_eq!(body("hpo").len(), 2 * 12);
    assert_eq!(body("hpo"), body("xpo"));
}

#[test]
fn run_leaves_inputs_untouched_and_csv_round_trips() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data, 2);
    let spec = small_spec(root.path().join("out"), data.clone());
    write_spec(&spec, &root.path().join("spec.json"));
    let read_all = |dir: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                let bytes = std::fs::read(&p).unwrap();
                (p, bytes)
            })
            .collect();
        v.sort();
        v
    };
    let before = (
        read_all(&data),
        std::fs::read(root.path().join("spec.json")).unwrap(),
    );
    let stdout = ok(hpo_lab(&["run", "--config", "spec.json"], root.path()));
    let after = (
        read_all(&data),
        std::fs::read(root.path().join("spec.json")).unwrap(),
    );
    assert_eq!(before, after);
    assert!(stdout.contains("final_subopt"));

    let csv = std::fs::read(root.path().join("out").join(RESULTS_FILE)).unwrap();
    let rows = read_csv(csv.as_slice()).unwrap();
    // hpo 12, online baselines 12 + 40 each, offline 3 checkpoints; two seeds
    assert_eq!(rows.len(), 2 * (12 + 52 + 52 + 3));
    let mut again = Vec::new();
    write_csv(&rows, &mut again).unwrap();
    assert_eq!(again, csv);
    let policies = std::fs::read_dir(root.path().join("out").join("policies")).unwrap();
    assert_eq!(policies.count(), 8);
}

#[test]
fn generated_and_loaded_data_agree() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data, 6);
    let gen = GenSpec {
        seed: 6,
        context_dim: 2,
        num_responses: 10,
        feat_dim: 4,
        scale: None,
        n_off: 40,
    };
    let mut a = small_spec(root.path().join("a"), data);
    a.algorithms = vec![Algo::Hpo];
    let mut b = a.clone();
    b.data = DataSource::Generate(gen);
    b.out_dir = root.path().join("b");
    write_spec(&a, &root.path().join("a.json"));
    write_spec(&b, &root.path().join("b.json"));
    ok(hpo_lab(&["run", "--config", "a.json"], root.path()));
    ok(hpo_lab(&["run", "--config", "b.json"], root.path()));
    let res = |d: &str| std::fs::read(root.path().join(d).join(RESULTS_FILE)).unwrap();
    assert_eq!(res("a"), res("b"));
}

#[test]
fn print_spec_emits_a_loadable_preset() {
    let root = tempfile::tempdir().unwrap();
    let out = ok(hpo_lab(
        &["run", "--paper-preset", "main", "--print-spec"],
        root.path(),
    ));
    let spec = ExperimentSpec::from_json(&out).unwrap();
    assert_eq!(spec.hpo.gamma, 500);
    assert_eq!(spec.hpo.t_rounds, 1500);
    assert_eq!(spec.hpo.minibatch, 5);
    assert_eq!(spec.hpo.inner_steps, 20);
    assert_eq!(spec.seeds.len(), 5);
    assert!(!root.path().join("hpo-out").exists());
}

#[test]
fn diagnose_rejects_gamma_zero() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data, 1);
    let out = hpo_lab(
        &[
            "diagnose",
            "--data-dir",
            "data",
            "--gamma",
            "0",
            "--out-dir",
            "diag",
        ],
        root.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma = 0"));
    let out = ok(hpo_lab(
        &["diagnose", "--data-dir", "data", "--out-dir", "diag"],
        root.path(),
    ));
    assert!(out.starts_with("d_hyb"));
    assert!(root.path().join("diag/coverage.json").exists());
    assert!(root.path().join("diag/spectrum.csv").exists());
}

#[test]
fn reduce_demo_rows_stay_within_tolerance() {
    let root = tempfile::tempdir().unwrap();
    let out = ok(hpo_lab(&["reduce-demo", "--trials", "200000"], root.path()));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("gap,sigma,empirical,ci,trials,within"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn bad_thread_count_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data, 1);
    let out = Command::new(env!("CARGO_BIN_EXE_hpo-lab"))
        .args([
            "run",
            "--paper-preset",
            "appendix",
            "--data-dir",
            "data",
            "--t-rounds",
            "2",
            "--out-dir",
            "out",
        ])
        .current_dir(root.path())
        .env("HPO_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("HPO_LAB_THREADS"));
}
