//! End-to-end checks of the command-line surface: stage composability,
//! config layering, and the error contract for bad inputs.

use std::path::{Path, PathBuf};
use std::process::Command;

use flowsong::mesh::io::save_obj;
use flowsong::mesh::primitives::icosphere;
use flowsong_cli::{pipeline, ConfigOverlay, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowsong"))
}

fn write_sphere_obj(dir: &Path, subdivisions: u32) -> PathBuf {
    let mesh = icosphere(subdivisions, 1.0);
    let compact = mesh.compact();
    let path = dir.join("sphere.obj");
    save_obj(&path, &compact.positions, &compact.tris).unwrap();
    path
}

fn small_run_config(input: PathBuf, out_dir: PathBuf) -> RunConfig {
    let mut config = RunConfig::default();
    config.input = input;
    config.out_dir = out_dir;
    config.modes = 6;
    config
}

#[test]
fn spectrum_stage_reproduces_every_run_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sphere_obj(dir.path(), 1);
    let out = dir.path().join("out");
    let config = small_run_config(input, out.clone());
    let products = pipeline::run_pipeline(&config).unwrap();

    let rows = flowsong_cli::artifacts::read_eigenvalues_csv(&out.join("eigenvalues.csv")).unwrap();
    assert_eq!(rows.len(), products.outcome.snapshots.len());
    for (index, (time, values)) in rows.iter().enumerate() {
        let frame = out.join(format!("frame_{index:06}.obj"));
        let again =
            pipeline::spectrum_stage(&frame, "auto", config.modes, config.seed, None).unwrap();
        assert_eq!(products.outcome.snapshots[index].time, *time);
        assert_eq!(again.len(), values.len(), "frame {index}");
        for (a, b) in again.iter().zip(values) {
            assert!(
                (a - b).abs() <= 1e-8 * a.abs().max(1.0),
                "frame {index}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn sound_stage_rebuilds_the_identical_wav_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sphere_obj(dir.path(), 1);
    let out = dir.path().join("out");
    let config = small_run_config(input, out.clone());
    pipeline::run_pipeline(&config).unwrap();

    let resynth = dir.path().join("resynth.wav");
    let silent =
        pipeline::sound_stage(&out.join("traces.csv"), &resynth, config.fs, config.sample_rate)
            .unwrap();
    assert!(!silent);
    let original = std::fs::read(out.join("song.wav")).unwrap();
    let rebuilt = std::fs::read(&resynth).unwrap();
    assert_eq!(original, rebuilt, "resynthesis must be byte-identical");

    // A different frequency scale gives a different song without any flow
    // recomputation.
    let retuned = dir.path().join("retuned.wav");
    pipeline::sound_stage(&out.join("traces.csv"), &retuned, config.fs * 1.5, config.sample_rate)
        .unwrap();
    assert_ne!(std::fs::read(&retuned).unwrap(), original);
}

#[test]
fn invalid_stl_exits_nonzero_with_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("garbage.stl");
    std::fs::write(&bad, b"solid nope\nfacet normal oops\n").unwrap();
    let out = dir.path().join("out");
    let output = bin()
        .args(["run", "--input"])
        .arg(&bad)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
    assert!(
        stderr.contains("parse") || stderr.contains("loading"),
        "diagnostic should mention the parse failure: {stderr}"
    );
    assert!(!out.exists(), "no output directory may be created");
}

#[test]
fn validate_reports_boundary_edges_on_a_holey_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let holey = dir.path().join("triangle.obj");
    std::fs::write(&holey, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let output = bin()
        .args(["validate", "--input"])
        .arg(&holey)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("boundary edges: 3"), "stdout: {stdout}");
    assert!(stdout.contains("boundary edge (0, 1)"), "stdout: {stdout}");

    let sphere = write_sphere_obj(dir.path(), 0);
    let output = bin()
        .args(["validate", "--input"])
        .arg(&sphere)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("closed-manifold validation: ok"), "stdout: {stdout}");
}

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sphere_obj(dir.path(), 0);
    let out = dir.path().join("out");
    let file = dir.path().join("run.conf");
    std::fs::write(
        &file,
        format!(
            "# test config\ninput = {}\nmodes = 2\ncs = 0.4\nout_dir = {}\n",
            input.display(),
            out.display()
        ),
    )
    .unwrap();

    let status = bin()
        .args(["run", "--config"])
        .arg(&file)
        .args(["--modes", "3"])
        .status()
        .unwrap();
    assert!(status.success());

    let header = std::fs::read_to_string(out.join("eigenvalues.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "t,lambda_1,lambda_2,lambda_3", "flag beats file");
    let summary = std::fs::read_to_string(out.join("run.json")).unwrap();
    assert!(summary.contains("\"modes\": 3"), "run.json echoes the flag");
    assert!(summary.contains("\"cs\": 0.4"), "run.json echoes the file value");
    assert!(summary.contains("\"termination\": \"extinct\""));
}

#[test]
fn gen_output_feeds_the_other_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["ball.obj", "ball.stl"] {
        let path = dir.path().join(name);
        let status = bin()
            .args(["gen", "icosphere", "--subdiv", "1", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        let output = bin().args(["validate", "--input"]).arg(&path).output().unwrap();
        assert_eq!(output.status.code(), Some(0), "{name} should validate");
    }

    // Unknown config keys are rejected before any work happens.
    let file = dir.path().join("bad.conf");
    std::fs::write(&file, "modez = 3\n").unwrap();
    let output = bin().args(["run", "--config"]).arg(&file).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown config key"));
}
