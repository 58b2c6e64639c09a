//! End-to-end tests of the installed binary: exit codes, output files, the
//! self-spawned tcp launcher, and the config layering as seen from outside.

use std::process::{Command, Output};

use rtmlab::perf::report::REPORT_HEADER;
use rtmlab::{fd_weights, Snapshot};

fn rtmlab(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rtmlab"));
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    rtmlab(args).output().expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be utf-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr should be utf-8")
}

/// Small, fast base case shared by the run-shaped tests.
const SMALL: &[&str] = &[
    "--grid.nx=12",
    "--grid.ny=10",
    "--grid.nz=6",
    "--stencil.rx=2",
    "--stencil.ry=2",
    "--stencil.rz=1",
    "--run.steps=3",
    "--run.threads=1",
    "--source.x=6",
    "--source.y=5",
    "--source.z=3",
];

fn small_with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["run"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    args
}

#[test]
fn missing_and_unknown_subcommands_exit_2_with_usage() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("USAGE"));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown subcommand 'frobnicate'"));

    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("cachesim"));
}

#[test]
fn invalid_config_values_exit_2_and_name_the_key() {
    let out = run(&["run", "--grid.nx=zero"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("grid.nx"), "{}", stderr(&out));

    let out = run(&["run", "--grid.nx=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nonzero"), "{}", stderr(&out));

    let out = run(&["run", "--grid.nx"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["run", "--no.such.key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no.such.key"), "{}", stderr(&out));
}

#[test]
fn weights_prints_the_exact_coefficients() {
    let out = run(&["weights", "--radius=2", "--spacing=1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let expected = fd_weights(2, 1.0).unwrap();
    let mut offsets = Vec::new();
    for (line, want) in text.lines().zip(&expected) {
        let (offset, value) = line.split_once(' ').expect("offset value");
        offsets.push(offset.parse::<i64>().unwrap());
        assert_eq!(value.parse::<f64>().unwrap(), *want, "line '{line}'");
    }
    assert_eq!(offsets, [-2, -1, 0, 1, 2]);
    assert_eq!(text.lines().count(), expected.len());

    let out = run(&["weights", "--radius=0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cachesim_prints_one_line_per_order_and_favors_zyx_at_large_radii() {
    let out = run(&[
        "cachesim",
        "--stencil.rx=12",
        "--stencil.ry=12",
        "--stencil.rz=8",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let misses: Vec<(String, u64)> = text
        .lines()
        .map(|line| {
            let order = line
                .split(' ')
                .find_map(|f| f.strip_prefix("order="))
                .unwrap()
                .to_string();
            let misses = line
                .split(' ')
                .find_map(|f| f.strip_prefix("misses="))
                .unwrap()
                .parse()
                .unwrap();
            (order, misses)
        })
        .collect();
    assert_eq!(misses.len(), 2);
    assert_eq!(misses[0].0, "yzx");
    assert_eq!(misses[1].0, "zyx");
    assert!(misses[1].1 < misses[0].1, "{text}");

    let out = run(&["cachesim", "--loop.order=zyx"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().count(), 1);

    let out = run(&["cachesim", "--cache.line=48"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_the_requested_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = dir.path().join("field.snap");
    let csv = dir.path().join("phases.csv");
    let trace = dir.path().join("trace.json");
    let snap_flag = format!("--out.snapshot={}", snapshot.display());
    let csv_flag = format!("--out.csv={}", csv.display());
    let trace_flag = format!("--out.trace={}", trace.display());
    let out = run(&small_with(&[&snap_flag, &csv_flag, &trace_flag]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("wall_ms="), "{text}");
    assert!(text.contains("ranks=1"), "{text}");

    let snap = Snapshot::read(&snapshot).unwrap();
    assert_eq!((snap.ext.nx, snap.ext.ny, snap.ext.nz), (12, 10, 6));
    assert_eq!(snap.elem_bytes, 4);

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().next().unwrap(), REPORT_HEADER);
    assert_eq!(csv_text.lines().count(), 1 + 6 + 1);

    let trace_text = std::fs::read_to_string(&trace).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&trace_text).unwrap();
    let events = parsed["traceEvents"].as_array().unwrap();
    let driver_rows = events.iter().filter(|e| e["tid"] == 0).count();
    assert_eq!(driver_rows, 3 * 6, "one driver row per step and phase");
}

#[test]
fn environment_overrides_sit_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = dir.path().join("env.snap");
    let snap_flag = format!("--out.snapshot={}", snapshot.display());
    let mut args = small_with(&[&snap_flag]);
    args.retain(|a| !a.starts_with("--grid.nx"));
    let out = rtmlab(&args)
        .env("RTMLAB_GRID_NX", "14")
        .env("RTMLAB_RUN_STEPS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let snap = Snapshot::read(&snapshot).unwrap();
    assert_eq!(snap.ext.nx, 14, "env should override the file default");
    assert!(stdout(&out).contains("steps=3"), "flags beat environment");
}

#[test]
fn verify_reports_bitwise_equality_for_a_decomposed_variant() {
    let mut args = vec!["verify"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&[
        "--decomp.px=2",
        "--run.threads=2",
        "--sched.policy=dynamic",
        "--comm.strategy=commthread",
        "--view.mode=copy",
    ]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max_abs_diff=0e0"), "{text}");
    assert!(text.contains("bitwise_equal=true"), "{text}");
}

#[test]
fn matrix_emits_baseline_plus_the_variant_product() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("matrix.csv");
    let csv_flag = format!("--out.csv={}", csv.display());
    let mut args = vec!["matrix"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&[
        "--run.reps=2",
        "--vary.schedule=static,dynamic",
        "--vary.order=yzx,zyx",
        &csv_flag,
    ]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("variants=5"));

    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("baseline,"));
    let improvement = lines[1].rsplit(',').next().unwrap();
    assert_eq!(improvement.parse::<f64>().unwrap(), 0.0);
    assert!(lines[2].starts_with("schedule=static,order=yzx"));
}

#[test]
fn matrix_without_a_csv_path_prints_the_table() {
    let mut args = vec!["matrix"];
    args.extend_from_slice(SMALL);
    args.push("--run.reps=1");
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().next().unwrap(), REPORT_HEADER);
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn tcp_spawn_local_matches_the_in_process_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let inproc = dir.path().join("inproc.snap");
    let tcp = dir.path().join("tcp.snap");

    let inproc_flag = format!("--out.snapshot={}", inproc.display());
    let out = run(&small_with(&["--decomp.px=2", &inproc_flag]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let tcp_flag = format!("--out.snapshot={}", tcp.display());
    let out = run(&small_with(&[
        "--decomp.px=2",
        "--comm.transport=tcp",
        "--comm.base_port=10230",
        "--spawn=local",
        &tcp_flag,
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("ranks=2"));

    let a = Snapshot::read(&inproc).unwrap();
    let b = Snapshot::read(&tcp).unwrap();
    assert!(a.bitwise_equal(&b));
    assert!(field_energy(&a) > 0.0, "the source should have injected");
}

/// Sum of squares over the payload, just to prove the field is nonzero.
fn field_energy(snap: &Snapshot) -> f64 {
    assert_eq!(snap.elem_bytes, 4);
    snap.data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .map(|v| v * v)
        .sum()
}

#[test]
fn tcp_needs_a_launch_mode_and_valid_rank() {
    let out = run(&small_with(&["--comm.transport=tcp"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--spawn=local"), "{}", stderr(&out));

    let out = run(&small_with(&[
        "--comm.transport=tcp",
        "--decomp.px=2",
        "--rank=7",
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rank"), "{}", stderr(&out));
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.cfg");
    std::fs::write(
        &path,
        "# base case\ngrid.nx = 12\ngrid.ny = 10\ngrid.nz = 6\nstencil.rx = 2\nstencil.ry = 2\nstencil.rz = 1\nrun.steps = 5\nrun.threads = 1\nsource.x = 6\nsource.y = 5\nsource.z = 3\n",
    )
    .unwrap();
    let config_flag = format!("--config={}", path.display());
    let out = run(&["run", &config_flag, "--run.steps=2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("steps=2"), "{}", stdout(&out));

    let missing = format!("--config={}", dir.path().join("nope.cfg").display());
    let out = run(&["run", &missing]);
    assert_eq!(out.status.code(), Some(2));
}
