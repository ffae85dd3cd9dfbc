use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use rydsim::runner::{self, parse_config, ExperimentConfig, MANIFEST_SCHEMA};
use rydsim::Error;

const SMALL_DYNAMICS: &str = r#"
task = "dynamics"
seed = 9

[geometry]
kind = "square"
dimensions = [3, 2]

[couplings]
mode = "nn"
u_nn_mhz = 2.7

[schedule]
t_rise_us = 0.25
t_sweep_us = 0.44
t_fall_us = 0.25
omega_max_mhz = 1.8
delta0_mhz = -6.0
delta_final_mhz = 4.5

[scan]
parameter = "t_sweep_us"
values = [0.2, 0.44]

[evolution]
method = "mcwf"
n_steps = 60
hbar_gamma_over_u = 1.2
n_traj = 6
unraveling = "phase_flip"
compare_unitary = true

[measurement]
n_shots = 200
"#;

fn small() -> ExperimentConfig {
    parse_config(SMALL_DYNAMICS, None).expect("small config parses")
}

/// Every file below `dir`, keyed by its `/`-separated relative path.
fn read_bundle(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().components();
                let key = rel.map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn run_with_threads(config: &ExperimentConfig, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| runner::run(config, dir.path(), None)).expect("run succeeds");
    read_bundle(dir.path())
}

#[test]
fn bundles_are_byte_identical_across_runs_and_thread_counts() {
    let config = small();
    let one = run_with_threads(&config, 1);
    assert!(one.contains_key("manifest.json"));
    assert!(one.contains_key("summary.json"));
    assert_eq!(one, run_with_threads(&config, 1));
    assert_eq!(one, run_with_threads(&config, 3));
}

#[test]
fn a_different_seed_changes_the_trajectories() {
    let mut other = small();
    other.seed += 1;
    let a = run_with_threads(&small(), 1);
    let b = run_with_threads(&other, 1);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert_ne!(a, b);
}

#[test]
fn manifest_lists_every_file_and_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let report = runner::run(&small(), dir.path(), None).unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest["schema"], MANIFEST_SCHEMA);
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config"]["seed"], 9);
    let mut listed: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    listed.sort();
    let on_disk: Vec<String> = read_bundle(dir.path()).into_keys().collect();
    assert_eq!(listed, on_disk);
    assert_eq!(report.outputs.len(), on_disk.len());
}

#[test]
fn validation_failure_writes_nothing() {
    let mut config = small();
    config.schedule.as_mut().unwrap().t_sweep_us = -0.1;
    config.scan = None;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bundle");
    let err = runner::run(&config, &out, None).unwrap_err();
    assert!(matches!(err, Error::Invalid { .. }), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_keys_and_unused_blocks_are_rejected() {
    let typo = SMALL_DYNAMICS.replace("n_traj = 6", "n_trajectories = 6");
    match parse_config(&typo, None) {
        Err(Error::Config(msg)) => assert!(msg.contains("n_trajectories"), "{msg}"),
        other => panic!("expected an unknown-field error, got {other:?}"),
    }

    let with_spectrum = format!(
        "{SMALL_DYNAMICS}\n[spectrum]\nomega_over_u = 0.5\ndelta_over_u_start = 0.0\n\
         delta_over_u_stop = 1.0\ncount = 3\nn_levels = 2\n"
    );
    let config = parse_config(&with_spectrum, None).unwrap();
    match runner::validate(&config) {
        Err(Error::Invalid { field, .. }) => assert_eq!(field, "spectrum"),
        other => panic!("expected rejection of the spectrum block, got {other:?}"),
    }
}

#[test]
fn overlay_merges_into_a_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("overlay.toml");
    std::fs::write(&path, "seed = 123\n[classical]\nx_points = 11\n").unwrap();
    let config = runner::load_config(Some("classical-diagram"), Some(&path)).unwrap();
    assert_eq!(config.seed, 123);
    let classical = config.classical.as_ref().unwrap();
    assert_eq!(classical.x_points, 11);
    assert_eq!(classical.x_max, 5.0);
    assert_eq!(config.geometry.dimensions, vec![6, 6]);

    let json = dir.path().join("overlay.json");
    std::fs::write(&json, r#"{"spectrum": {"count": 5}}"#).unwrap();
    let config = runner::load_config(Some("spectrum-2x2"), Some(&json)).unwrap();
    assert_eq!(config.spectrum.unwrap().count, 5);
}

#[test]
fn every_preset_validates() {
    for name in runner::presets() {
        let config = runner::load_config(Some(name), None).unwrap();
        runner::validate(&config).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rydsim"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("bad.toml");
    let text = SMALL_DYNAMICS.replace("t_sweep_us = 0.44", "t_sweep_us = -0.44").replace(
        "[scan]\nparameter = \"t_sweep_us\"\nvalues = [0.2, 0.44]\n",
        "",
    );
    std::fs::write(&bad, text).unwrap();
    let out = dir.path().join("bad-out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());

    let status = bin().args(["no-such-preset", "--out"]).arg(dir.path().join("x")).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let status = bin()
        .args(["spectrum-2x2", "--out"])
        .arg(dir.path().join("y"))
        .env("RYDSIM_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let good = dir.path().join("good.toml");
    std::fs::write(&good, SMALL_DYNAMICS).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let status = bin()
            .args(["run", "--config"])
            .arg(&good)
            .arg("--out")
            .arg(out)
            .args(["--seed", "5", "--threads", threads])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read_bundle(&out_a), read_bundle(&out_b));
}

#[test]
fn bin_runs_a_preset_with_an_env_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("spectrum");
    let status = bin()
        .args(["spectrum-2x2", "--out"])
        .arg(&out)
        .env("RYDSIM_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("manifest.json").exists());
}
