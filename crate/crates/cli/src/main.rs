//! Command-line front end.
//!
//! Every flag is `--key=value`. For the config-driven commands (`run`,
//! `verify`, `matrix`) the keys are exactly the config keys, layered over
//! the optional `--config=PATH` file and `RTMLAB_*` environment overrides.
//! `cachesim` and `weights` are self-contained utilities with their own
//! small key sets. Exit codes: 0 success, 1 correctness or runtime
//! failure, 2 configuration error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Instant;

use rtmlab::perf::cache::{access_stream, cache_simulate, CacheModel, StreamLayout};
use rtmlab::perf::report::{emit_report, report_csv};
use rtmlab::{
    collect_rank_parts, fd_weights, parse_config, run_local, run_matrix, run_tcp_rank,
    verify_against_serial, write_rank_parts, write_run_outputs, Box3, Error, LoopOrder, Radii,
    Result, RunArtifacts, RunConfig, StencilSpec, TransportKind,
};

const USAGE: &str = "rtmlab - distributed reverse-time-migration mini-app

USAGE
  rtmlab <run|verify|matrix|cachesim|weights> [--key=value ...]

CONFIG-DRIVEN COMMANDS (run, verify, matrix)
  --config=PATH   flat key=value config file
  --KEY=VALUE     any config key, e.g. --grid.nx=96 --sched.policy=dynamic
  environment     RTMLAB_GRID_NX=96 style; prefix RTMLAB_, first _ is the dot
  precedence      defaults < file < environment < flags

  run       propagate, then write whatever out.trace/out.csv/out.snapshot name
            tcp transport: add --spawn=local to fork one process per rank, or
            start ranks yourself, each with --rank=N [--parts-dir=DIR]
  verify    run the configured variant and the serial reference, compare
  matrix    run baseline plus every vary.* combination, gate on bitwise
            equivalence, write the comparison CSV to out.csv (stdout if unset)

CACHESIM (tile sweep through a set-associative LRU model, one line per order)
  rtmlab cachesim [--tile.x=64 --tile.y=32 --tile.z=32]
                  [--stencil.rx=4 --stencil.ry=4 --stencil.rz=2]
                  [--loop.order=yzx|zyx] [--value.bytes=4]
                  [--cache.capacity=262144 --cache.line=64 --cache.ways=8]

WEIGHTS (central second-derivative weights, one \"offset value\" per line)
  rtmlab weights [--radius=4 --spacing=1]

EXIT CODES
  0 success, 1 correctness or runtime failure, 2 configuration error";

/// Parsed command line: the split-out launcher flags plus everything else
/// verbatim (`raw`) so a parent process can re-issue its own arguments to
/// spawned ranks.
#[derive(Debug)]
struct Invocation {
    command: String,
    config_path: Option<PathBuf>,
    rank: Option<u32>,
    spawn_local: bool,
    parts_dir: Option<PathBuf>,
    overrides: Vec<(String, String)>,
    raw: Vec<String>,
}

fn parse_invocation(command: &str, args: &[String]) -> Result<Invocation> {
    let mut inv = Invocation {
        command: command.to_string(),
        config_path: None,
        rank: None,
        spawn_local: false,
        parts_dir: None,
        overrides: Vec::new(),
        raw: args.to_vec(),
    };
    for arg in args {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::InvalidArgument(format!(
                "expected --key=value, got '{arg}'"
            )));
        };
        let Some((key, value)) = flag.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "flag '--{flag}' needs =value"
            )));
        };
        match key {
            "config" => inv.config_path = Some(PathBuf::from(value)),
            "rank" => {
                let rank = value.parse().map_err(|_| {
                    Error::InvalidArgument(format!("--rank needs an integer, got '{value}'"))
                })?;
                inv.rank = Some(rank);
            }
            "spawn" => {
                if value != "local" {
                    return Err(Error::InvalidArgument(format!(
                        "--spawn only supports 'local', got '{value}'"
                    )));
                }
                inv.spawn_local = true;
            }
            "parts-dir" => inv.parts_dir = Some(PathBuf::from(value)),
            _ => inv.overrides.push((key.to_string(), value.to_string())),
        }
    }
    Ok(inv)
}

impl Invocation {
    /// Commands other than `run` take none of the launcher flags.
    fn reject_launcher_flags(&self) -> Result<()> {
        if self.rank.is_some() || self.spawn_local || self.parts_dir.is_some() {
            return Err(Error::InvalidArgument(format!(
                "--rank/--spawn/--parts-dir only apply to 'run', not '{}'",
                self.command
            )));
        }
        Ok(())
    }

    fn reject_config_file(&self) -> Result<()> {
        if self.config_path.is_some() {
            return Err(Error::InvalidArgument(format!(
                "'{}' does not read a config file",
                self.command
            )));
        }
        Ok(())
    }
}

fn print_run_summary(cfg: &RunConfig, artifacts: &RunArtifacts) {
    println!(
        "wall_ms={:.3} ranks={} steps={} bytes_copied={}",
        artifacts.wall.as_secs_f64() * 1e3,
        cfg.decomp.ranks(),
        cfg.steps,
        artifacts.total_bytes_copied()
    );
    let outputs = [
        ("trace", &cfg.trace_path),
        ("csv", &cfg.csv_path),
        ("snapshot", &cfg.snapshot_path),
    ];
    for (label, path) in outputs {
        if let Some(p) = path {
            println!("{label}={}", p.display());
        }
    }
}

/// Fork one child per rank, re-issuing our own flags plus `--rank`/
/// `--parts-dir`, then assemble the part files they leave behind.
fn spawn_local_ranks(cfg: &RunConfig, inv: &Invocation) -> Result<()> {
    let exe = std::env::current_exe()?;
    let dir = tempfile::tempdir()?;
    let start = Instant::now();
    let mut children = Vec::new();
    for rank in 0..cfg.decomp.ranks() as u32 {
        let mut cmd = Command::new(&exe);
        cmd.arg("run");
        for arg in &inv.raw {
            if !arg.starts_with("--spawn=") {
                cmd.arg(arg);
            }
        }
        cmd.arg(format!("--rank={rank}"));
        cmd.arg(format!("--parts-dir={}", dir.path().display()));
        cmd.stdout(Stdio::null());
        children.push((rank, cmd.spawn()?));
    }
    let mut failure = None;
    for (rank, mut child) in children {
        let status = child.wait()?;
        if !status.success() && failure.is_none() {
            failure = Some(Error::Comm(format!("rank {rank} exited with {status}")));
        }
    }
    if let Some(err) = failure {
        return Err(err);
    }
    let artifacts = collect_rank_parts(cfg, dir.path(), start.elapsed())?;
    write_run_outputs(cfg, &artifacts)?;
    print_run_summary(cfg, &artifacts);
    Ok(())
}

fn cmd_run(inv: &Invocation) -> Result<()> {
    let cfg = parse_config(inv.config_path.as_deref(), &inv.overrides)?;
    match cfg.transport {
        TransportKind::InProcess => {
            inv.reject_launcher_flags()?;
            let artifacts = run_local(&cfg)?;
            write_run_outputs(&cfg, &artifacts)?;
            print_run_summary(&cfg, &artifacts);
            Ok(())
        }
        TransportKind::Tcp => match (inv.rank, inv.spawn_local) {
            (Some(_), true) => Err(Error::InvalidArgument(
                "--rank and --spawn=local are mutually exclusive".into(),
            )),
            (Some(rank), false) => {
                let artifacts = run_tcp_rank(&cfg, rank, None)?;
                if let Some(dir) = &inv.parts_dir {
                    write_rank_parts(dir, &artifacts)?;
                }
                Ok(())
            }
            (None, true) => spawn_local_ranks(&cfg, inv),
            (None, false) => Err(Error::Config(
                "tcp transport needs --rank=N (externally launched ranks) or --spawn=local".into(),
            )),
        },
    }
}

fn cmd_verify(inv: &Invocation) -> Result<()> {
    inv.reject_launcher_flags()?;
    let cfg = parse_config(inv.config_path.as_deref(), &inv.overrides)?;
    let report = verify_against_serial(&cfg)?;
    println!(
        "max_abs_diff={:e} bitwise_equal={}",
        report.max_abs_diff, report.bitwise_equal
    );
    if report.bitwise_equal {
        Ok(())
    } else {
        Err(Error::Equivalence(
            "the distributed field differs from the serial reference".into(),
        ))
    }
}

fn cmd_matrix(inv: &Invocation) -> Result<()> {
    inv.reject_launcher_flags()?;
    let cfg = parse_config(inv.config_path.as_deref(), &inv.overrides)?;
    let rows = run_matrix(&cfg)?;
    match &cfg.csv_path {
        Some(path) => {
            emit_report(&rows, path)?;
            println!("variants={} csv={}", rows.len(), path.display());
        }
        None => print!("{}", report_csv(&rows)),
    }
    Ok(())
}

/// Keyed value lookup for the self-contained commands: every key must be
/// consumed, leftovers are errors.
struct KeyMap(BTreeMap<String, String>);

impl KeyMap {
    fn new(overrides: &[(String, String)]) -> KeyMap {
        KeyMap(
            overrides
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::InvalidArgument(format!("bad value '{raw}' for --{key}"))
            }),
        }
    }

    fn finish(self, command: &str) -> Result<()> {
        if let Some(key) = self.0.keys().next() {
            return Err(Error::InvalidArgument(format!(
                "unknown {command} key '--{key}'"
            )));
        }
        Ok(())
    }
}

fn cmd_cachesim(inv: &Invocation) -> Result<()> {
    inv.reject_launcher_flags()?;
    inv.reject_config_file()?;
    let mut keys = KeyMap::new(&inv.overrides);
    let tx: usize = keys.take("tile.x", 64)?;
    let ty: usize = keys.take("tile.y", 32)?;
    let tz: usize = keys.take("tile.z", 32)?;
    let rx: usize = keys.take("stencil.rx", 4)?;
    let ry: usize = keys.take("stencil.ry", 4)?;
    let rz: usize = keys.take("stencil.rz", 2)?;
    let elem_bytes: usize = keys.take("value.bytes", 4)?;
    let capacity: usize = keys.take("cache.capacity", 256 * 1024)?;
    let line: usize = keys.take("cache.line", 64)?;
    let ways: usize = keys.take("cache.ways", 8)?;
    let order = match keys.0.remove("loop.order") {
        Some(raw) => Some(raw.parse::<LoopOrder>()?),
        None => None,
    };
    keys.finish("cachesim")?;

    let spec = StencilSpec::from_radii(Radii { rx, ry, rz }, 1.0)?;
    let (ax, ay, az) = (tx + 2 * rx, ty + 2 * ry, tz + 2 * rz);
    let layout = StreamLayout {
        ax,
        ay,
        in_base: 0,
        out_base: (ax * ay * az * elem_bytes) as u64,
        elem_bytes,
    };
    let tile = Box3 {
        x0: rx,
        x1: rx + tx,
        y0: ry,
        y1: ry + ty,
        z0: rz,
        z1: rz + tz,
    };
    let model = CacheModel {
        capacity,
        line,
        ways,
        elem_bytes,
    };
    let orders = match order {
        Some(o) => vec![o],
        None => vec![LoopOrder::Yzx, LoopOrder::Zyx],
    };
    for order in orders {
        let stream = access_stream(tile, &spec, order, &layout);
        let stats = cache_simulate(&stream, &model)?;
        println!(
            "order={order} accesses={} hits={} misses={} evictions={}",
            stats.accesses, stats.hits, stats.misses, stats.evictions
        );
    }
    Ok(())
}

fn cmd_weights(inv: &Invocation) -> Result<()> {
    inv.reject_launcher_flags()?;
    inv.reject_config_file()?;
    let mut keys = KeyMap::new(&inv.overrides);
    let radius: usize = keys.take("radius", 4)?;
    let spacing: f64 = keys.take("spacing", 1.0)?;
    keys.finish("weights")?;
    let weights = fd_weights(radius, spacing)?;
    for (i, w) in weights.iter().enumerate() {
        println!("{} {w:e}", i as i64 - radius as i64);
    }
    Ok(())
}

fn run_cli(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return Err(Error::InvalidArgument("missing subcommand".into()));
    };
    if matches!(command.as_str(), "help" | "--help" | "-h") {
        println!("{USAGE}");
        return Ok(());
    }
    let inv = parse_invocation(command, &args[1..])?;
    match command.as_str() {
        "run" => cmd_run(&inv),
        "verify" => cmd_verify(&inv),
        "matrix" => cmd_matrix(&inv),
        "cachesim" => cmd_cachesim(&inv),
        "weights" => cmd_weights(&inv),
        other => {
            eprintln!("{USAGE}");
            Err(Error::InvalidArgument(format!(
                "unknown subcommand '{other}'"
            )))
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(err) = run_cli(&args) {
        eprintln!("error: {err}");
        let code = match err {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
