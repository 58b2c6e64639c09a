//! Layered run configuration.
//!
//! Settings are flat dotted keys (`grid.nx = 96`) resolved in four layers,
//! each overriding the previous: built-in defaults, a config file,
//! `RTMLAB_*` environment variables, then command-line flags. Environment
//! variables map the first underscore to the section dot
//! (`RTMLAB_GRID_NX=96` sets `grid.nx`). Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::grid::{decompose, Decomposition, GlobalGrid};
use crate::halo::exchange::ExchangeStrategy;
use crate::halo::transport::config_checksum;
use crate::perf::view::ViewMode;
use crate::schedule::SchedulePolicy;
use crate::stencil::Radii;
use crate::value::ValueType;
use crate::wavefield::{cfl_dt_bound, SourceSpec};

/// How ranks exchange halos.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    /// All ranks are threads of one process, connected by channels.
    InProcess,
    /// One process per rank, connected by loopback TCP.
    Tcp,
}

impl std::fmt::Display for TransportKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransportKind::InProcess => "inprocess",
            TransportKind::Tcp => "tcp",
        })
    }
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inprocess" => Ok(TransportKind::InProcess),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport '{other}' (inprocess, tcp)")),
        }
    }
}

/// How the velocity model is synthesized, identically on every rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityModel {
    /// v0 everywhere.
    Constant,
    /// Linear in global Z from v0 (top) to v1 (bottom).
    GradientZ,
    /// Per-cell values in [v0, v1), hashed from the seed and the global
    /// cell index, so any decomposition sees the same model.
    Random,
}

impl std::fmt::Display for VelocityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VelocityModel::Constant => "constant",
            VelocityModel::GradientZ => "gradient",
            VelocityModel::Random => "random",
        })
    }
}

impl std::str::FromStr for VelocityModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(VelocityModel::Constant),
            "gradient" => Ok(VelocityModel::GradientZ),
            "random" => Ok(VelocityModel::Random),
            other => Err(format!(
                "unknown velocity model '{other}' (constant, gradient, random)"
            )),
        }
    }
}

/// Variant lists for the experiment matrix, one per optimization axis.
/// Empty lists leave that axis at the baseline value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixAxes {
    pub schedules: Vec<SchedulePolicy>,
    pub orders: Vec<crate::stencil::LoopOrder>,
    pub strategies: Vec<ExchangeStrategy>,
    pub views: Vec<ViewMode>,
    pub decomps: Vec<(usize, usize)>,
}

impl MatrixAxes {
    pub fn is_empty(&self) -> bool {
        self.schedules.is_empty()
            && self.orders.is_empty()
            && self.strategies.is_empty()
            && self.views.is_empty()
            && self.decomps.is_empty()
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: GlobalGrid,
    pub radii: Radii,
    pub decomp: Decomposition,
    pub tile_y: usize,
    pub tile_z: usize,
    pub threads: usize,
    pub steps: u64,
    /// Explicit time step; `None` selects half the stability bound.
    pub dt: Option<f64>,
    pub value_type: ValueType,
    pub seed: u64,
    pub reps: usize,
    pub interior_pad: Duration,
    pub policy: SchedulePolicy,
    pub order: crate::stencil::LoopOrder,
    pub strategy: ExchangeStrategy,
    pub view_mode: ViewMode,
    pub transport: TransportKind,
    pub base_port: u16,
    pub latency: Duration,
    pub source: SourceSpec,
    pub velocity_model: VelocityModel,
    pub v0: f64,
    pub v1: f64,
    pub trace_path: Option<PathBuf>,
    pub csv_path: Option<PathBuf>,
    pub snapshot_path: Option<PathBuf>,
    pub vary: MatrixAxes,
}

impl RunConfig {
    /// Largest velocity the model can produce, for the stability bound.
    pub fn vmax(&self) -> f64 {
        match self.velocity_model {
            VelocityModel::Constant => self.v0,
            VelocityModel::GradientZ | VelocityModel::Random => self.v0.max(self.v1),
        }
    }

    /// The time step actually used: explicit, or half the bound.
    pub fn dt_resolved(&self) -> Result<f64> {
        let bound = cfl_dt_bound(self.radii, self.grid.dx, self.vmax())?;
        Ok(self.dt.unwrap_or(0.5 * bound))
    }

    /// Handshake digest: two ranks agree iff their physics-relevant
    /// settings agree.
    pub fn checksum(&self) -> u64 {
        config_checksum(&[
            self.grid.nx as u64,
            self.grid.ny as u64,
            self.grid.nz as u64,
            self.grid.dx.to_bits(),
            self.radii.rx as u64,
            self.radii.ry as u64,
            self.radii.rz as u64,
            self.decomp.px as u64,
            self.decomp.py as u64,
            self.steps,
            self.value_type.code() as u64,
            self.seed,
            self.dt.map_or(0, f64::to_bits),
            self.v0.to_bits(),
            self.v1.to_bits(),
            self.source.cell.0 as u64,
            self.source.cell.1 as u64,
            self.source.cell.2 as u64,
            self.source.frequency.to_bits(),
            self.source.amplitude.to_bits(),
            self.source.delay.to_bits(),
        ])
    }
}

const KNOWN_KEYS: &[&str] = &[
    "grid.nx",
    "grid.ny",
    "grid.nz",
    "grid.dx",
    "stencil.rx",
    "stencil.ry",
    "stencil.rz",
    "decomp.px",
    "decomp.py",
    "tile.ty",
    "tile.tz",
    "run.threads",
    "run.steps",
    "run.dt",
    "run.value_type",
    "run.seed",
    "run.reps",
    "run.interior_pad_ms",
    "sched.policy",
    "loop.order",
    "view.mode",
    "comm.strategy",
    "comm.transport",
    "comm.base_port",
    "comm.latency_ms",
    "source.x",
    "source.y",
    "source.z",
    "source.frequency",
    "source.amplitude",
    "source.delay",
    "velocity.model",
    "velocity.v0",
    "velocity.v1",
    "out.trace",
    "out.csv",
    "out.snapshot",
    "vary.schedule",
    "vary.order",
    "vary.strategy",
    "vary.view",
    "vary.decomp",
];

/// One `key = value` pair plus the layer it came from, for error messages.
#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: &'static str,
}

#[derive(Debug, Default)]
struct Layers {
    map: BTreeMap<String, Entry>,
}

impl Layers {
    fn apply(&mut self, key: &str, value: &str, origin: &'static str) {
        self.map.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin,
            },
        );
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.map.remove(key)
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are
/// skipped, later duplicates win.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Map `RTMLAB_SECTION_REST` to `section.rest` (sections never contain an
/// underscore, key remainders may).
pub fn env_key_to_config_key(name: &str) -> Option<String> {
    let rest = name.strip_prefix("RTMLAB_")?;
    let lower = rest.to_lowercase();
    let (section, key) = lower.split_once('_')?;
    Some(format!("{section}.{key}"))
}

fn parse_as<T: std::str::FromStr>(key: &str, entry: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    entry.value.parse::<T>().map_err(|e| {
        Error::Config(format!(
            "{key} = '{}' (from {}): {e}",
            entry.value, entry.origin
        ))
    })
}

fn take_parsed<T: std::str::FromStr>(layers: &mut Layers, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match layers.take(key) {
        Some(entry) => Ok(Some(parse_as(key, &entry)?)),
        None => Ok(None),
    }
}

fn take_or<T: std::str::FromStr>(layers: &mut Layers, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(take_parsed(layers, key)?.unwrap_or(default))
}

fn take_list<T: std::str::FromStr>(layers: &mut Layers, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    match layers.take(key) {
        None => Ok(Vec::new()),
        Some(entry) => entry
            .value
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim().parse::<T>().map_err(|e| {
                    Error::Config(format!(
                        "{key} = '{}' (from {}): {e}",
                        entry.value, entry.origin
                    ))
                })
            })
            .collect(),
    }
}

fn parse_decomp_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (px, py) = s
        .split_once('x')
        .ok_or_else(|| format!("expected PXxPY, got '{s}'"))?;
    let px = px.parse().map_err(|e| format!("bad px: {e}"))?;
    let py = py.parse().map_err(|e| format!("bad py: {e}"))?;
    Ok((px, py))
}

/// Resolve the four layers into a validated [`RunConfig`].
pub fn resolve_config(
    file: &[(String, String)],
    env: &[(String, String)],
    flags: &[(String, String)],
) -> Result<RunConfig> {
    let mut layers = Layers::default();
    for (k, v) in file {
        layers.apply(k, v, "config file");
    }
    for (k, v) in env {
        layers.apply(k, v, "environment");
    }
    for (k, v) in flags {
        layers.apply(k, v, "command line");
    }
    for key in layers.map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "unknown key '{key}' (from {})",
                layers.map[key].origin
            )));
        }
    }

    let grid = GlobalGrid {
        nx: take_or(&mut layers, "grid.nx", 64usize)?,
        ny: take_or(&mut layers, "grid.ny", 64usize)?,
        nz: take_or(&mut layers, "grid.nz", 64usize)?,
        dx: take_or(&mut layers, "grid.dx", 10.0f64)?,
    };
    let radii = Radii {
        rx: take_or(&mut layers, "stencil.rx", 4usize)?,
        ry: take_or(&mut layers, "stencil.ry", 4usize)?,
        rz: take_or(&mut layers, "stencil.rz", 2usize)?,
    };
    let decomp = Decomposition {
        px: take_or(&mut layers, "decomp.px", 1usize)?,
        py: take_or(&mut layers, "decomp.py", 1usize)?,
    };
    let tile_y = take_or(&mut layers, "tile.ty", 32usize)?;
    let tile_z = take_or(&mut layers, "tile.tz", 32usize)?;
    let threads = take_or(&mut layers, "run.threads", 4usize)?;
    let steps = take_or(&mut layers, "run.steps", 100u64)?;
    let dt = match layers.take("run.dt") {
        None => None,
        Some(entry) if entry.value == "auto" => None,
        Some(entry) => Some(parse_as::<f64>("run.dt", &entry)?),
    };
    let value_type = match layers.take("run.value_type") {
        None => ValueType::F32,
        Some(entry) => match entry.value.as_str() {
            "f32" => ValueType::F32,
            "f64" => ValueType::F64,
            other => {
                return Err(Error::Config(format!(
                    "run.value_type = '{other}' (from {}): expected f32 or f64",
                    entry.origin
                )))
            }
        },
    };
    let seed = take_or(&mut layers, "run.seed", 0u64)?;
    let reps = take_or(&mut layers, "run.reps", 3usize)?;
    let interior_pad = Duration::from_millis(take_or(&mut layers, "run.interior_pad_ms", 0u64)?);
    let policy = take_or(&mut layers, "sched.policy", SchedulePolicy::Dynamic)?;
    let order = take_or(&mut layers, "loop.order", crate::stencil::LoopOrder::Zyx)?;
    let view_mode = take_or(&mut layers, "view.mode", ViewMode::Alias)?;
    let strategy = take_or(&mut layers, "comm.strategy", ExchangeStrategy::PostedOverlap)?;
    let transport = take_or(&mut layers, "comm.transport", TransportKind::InProcess)?;
    let base_port = take_or(&mut layers, "comm.base_port", 9800u16)?;
    let latency = Duration::from_millis(take_or(&mut layers, "comm.latency_ms", 0u64)?);
    let source_x = take_parsed::<usize>(&mut layers, "source.x")?;
    let source_y = take_parsed::<usize>(&mut layers, "source.y")?;
    let source_z = take_parsed::<usize>(&mut layers, "source.z")?;
    let frequency = take_or(&mut layers, "source.frequency", 25.0f64)?;
    let amplitude = take_or(&mut layers, "source.amplitude", 1.0f64)?;
    let delay = take_parsed::<f64>(&mut layers, "source.delay")?;
    let velocity_model = take_or(&mut layers, "velocity.model", VelocityModel::Constant)?;
    let v0 = take_or(&mut layers, "velocity.v0", 1500.0f64)?;
    let v1 = take_or(&mut layers, "velocity.v1", 3000.0f64)?;
    let trace_path = layers.take("out.trace").map(|e| PathBuf::from(e.value));
    let csv_path = layers.take("out.csv").map(|e| PathBuf::from(e.value));
    let snapshot_path = layers.take("out.snapshot").map(|e| PathBuf::from(e.value));
    let vary = MatrixAxes {
        schedules: take_list(&mut layers, "vary.schedule")?,
        orders: take_list(&mut layers, "vary.order")?,
        strategies: take_list(&mut layers, "vary.strategy")?,
        views: take_list(&mut layers, "vary.view")?,
        decomps: match layers.take("vary.decomp") {
            None => Vec::new(),
            Some(entry) => entry
                .value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    parse_decomp_pair(s.trim()).map_err(|e| {
                        Error::Config(format!(
                            "vary.decomp = '{}' (from {}): {e}",
                            entry.value, entry.origin
                        ))
                    })
                })
                .collect::<Result<_>>()?,
        },
    };
    debug_assert!(layers.map.is_empty(), "every known key must be consumed");

    let cfg = RunConfig {
        grid,
        radii,
        decomp,
        tile_y,
        tile_z,
        threads,
        steps,
        dt,
        value_type,
        seed,
        reps,
        interior_pad,
        policy,
        order,
        strategy,
        view_mode,
        transport,
        base_port,
        latency,
        source: SourceSpec {
            cell: (
                source_x.unwrap_or(grid.nx / 2),
                source_y.unwrap_or(grid.ny / 2),
                source_z.unwrap_or(grid.nz / 2),
            ),
            frequency,
            amplitude,
            delay: delay.unwrap_or(1.2 / frequency),
        },
        velocity_model,
        v0,
        v1,
        trace_path,
        csv_path,
        snapshot_path,
        vary,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.grid.nx == 0 || cfg.grid.ny == 0 || cfg.grid.nz == 0 {
        return Err(Error::Config("grid extents must be nonzero".into()));
    }
    if cfg.grid.dx <= 0.0 {
        return Err(Error::Config(format!(
            "grid.dx must be positive, got {}",
            cfg.grid.dx
        )));
    }
    if cfg.tile_y == 0 || cfg.tile_z == 0 {
        return Err(Error::Config("tile.ty and tile.tz must be nonzero".into()));
    }
    if cfg.threads == 0 {
        return Err(Error::Config("run.threads must be at least 1".into()));
    }
    if cfg.reps == 0 {
        return Err(Error::Config("run.reps must be at least 1".into()));
    }
    if cfg.v0 <= 0.0 || cfg.v1 <= 0.0 {
        return Err(Error::Config(format!(
            "velocities must be positive, got v0={}, v1={}",
            cfg.v0, cfg.v1
        )));
    }
    let ranks = cfg.decomp.ranks();
    if ranks == 0 {
        return Err(Error::Config("decomposition must have at least one rank".into()));
    }
    if cfg.transport == TransportKind::Tcp
        && cfg.base_port as usize + ranks > u16::MAX as usize + 1
    {
        return Err(Error::Config(format!(
            "comm.base_port {} leaves no room for {ranks} rank ports",
            cfg.base_port
        )));
    }
    decompose(&cfg.grid, &cfg.decomp, cfg.radii)?;
    for &(px, py) in &cfg.vary.decomps {
        decompose(&cfg.grid, &Decomposition { px, py }, cfg.radii)?;
    }
    cfg.source.validate(&cfg.grid)?;
    let bound = cfl_dt_bound(cfg.radii, cfg.grid.dx, cfg.vmax())?;
    if let Some(dt) = cfg.dt {
        if dt <= 0.0 {
            return Err(Error::Config(format!("run.dt must be positive, got {dt}")));
        }
        if dt > bound {
            return Err(Error::Config(format!(
                "run.dt {dt} violates the stability bound {bound:.9} \
                 (dx {}, vmax {})",
                cfg.grid.dx,
                cfg.vmax()
            )));
        }
    }
    Ok(())
}

/// Read + resolve: optional file, the process environment, then flags.
pub fn parse_config(path: Option<&Path>, flags: &[(String, String)]) -> Result<RunConfig> {
    let file = match path {
        None => Vec::new(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config file {}: {e}", p.display()))
            })?;
            parse_kv_text(&text)?
        }
    };
    let env: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| env_key_to_config_key(&k).map(|key| (key, v)))
        .collect();
    resolve_config(&file, &env, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::LoopOrder;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn empty_input_yields_documented_defaults() {
        let cfg = resolve_config(&[], &[], &[]).unwrap();
        assert_eq!((cfg.grid.nx, cfg.grid.ny, cfg.grid.nz), (64, 64, 64));
        assert_eq!(cfg.grid.dx, 10.0);
        assert_eq!((cfg.radii.rx, cfg.radii.ry, cfg.radii.rz), (4, 4, 2));
        assert_eq!((cfg.decomp.px, cfg.decomp.py), (1, 1));
        assert_eq!((cfg.tile_y, cfg.tile_z), (32, 32));
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.dt, None);
        assert_eq!(cfg.value_type, ValueType::F32);
        assert_eq!(cfg.policy, SchedulePolicy::Dynamic);
        assert_eq!(cfg.order, LoopOrder::Zyx);
        assert_eq!(cfg.strategy, ExchangeStrategy::PostedOverlap);
        assert_eq!(cfg.view_mode, ViewMode::Alias);
        assert_eq!(cfg.transport, TransportKind::InProcess);
        assert_eq!(cfg.base_port, 9800);
        assert_eq!(cfg.source.cell, (32, 32, 32));
        assert_eq!(cfg.source.frequency, 25.0);
        assert_eq!(cfg.source.delay, 1.2 / 25.0);
        assert_eq!(cfg.velocity_model, VelocityModel::Constant);
        assert_eq!(cfg.v0, 1500.0);
        assert_eq!(cfg.reps, 3);
        assert!(cfg.vary.is_empty());
        assert!(cfg.trace_path.is_none());
    }

    #[test]
    fn later_layers_override_earlier_ones() {
        let file = kv(&[("grid.nx", "80"), ("grid.ny", "80"), ("run.steps", "7")]);
        let env = kv(&[("grid.ny", "96"), ("run.threads", "2")]);
        let flags = kv(&[("run.threads", "3")]);
        let cfg = resolve_config(&file, &env, &flags).unwrap();
        assert_eq!(cfg.grid.nx, 80, "file beats defaults");
        assert_eq!(cfg.grid.ny, 96, "environment beats file");
        assert_eq!(cfg.threads, 3, "flags beat environment");
        assert_eq!(cfg.steps, 7);
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let err = resolve_config(&[], &[], &kv(&[("grid.nw", "5")])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.nw") && msg.contains("command line"), "{msg}");
    }

    #[test]
    fn bad_values_name_key_value_and_origin() {
        let err = resolve_config(&kv(&[("grid.nx", "lots")]), &[], &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.nx") && msg.contains("lots") && msg.contains("config file"));
    }

    #[test]
    fn infeasible_decomposition_is_rejected() {
        // 8 cells over 4 ranks gives 2-cell interiors, thinner than the
        // radius-4 halo.
        let err = resolve_config(&kv(&[("grid.nx", "8"), ("decomp.px", "4")]), &[], &[])
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn explicit_dt_is_checked_against_the_stability_bound() {
        let cfg = resolve_config(&kv(&[("run.dt", "0.001")]), &[], &[]).unwrap();
        assert_eq!(cfg.dt, Some(0.001));
        let err = resolve_config(&kv(&[("run.dt", "0.5")]), &[], &[]).unwrap_err();
        assert!(err.to_string().contains("stability bound"));
        let auto = resolve_config(&[], &[], &[]).unwrap();
        let bound = cfl_dt_bound(auto.radii, auto.grid.dx, auto.vmax()).unwrap();
        assert_eq!(auto.dt_resolved().unwrap(), 0.5 * bound);
    }

    #[test]
    fn env_names_map_first_underscore_to_the_section_dot() {
        assert_eq!(env_key_to_config_key("RTMLAB_GRID_NX").unwrap(), "grid.nx");
        assert_eq!(
            env_key_to_config_key("RTMLAB_RUN_VALUE_TYPE").unwrap(),
            "run.value_type"
        );
        assert_eq!(
            env_key_to_config_key("RTMLAB_COMM_BASE_PORT").unwrap(),
            "comm.base_port"
        );
        assert_eq!(env_key_to_config_key("PATH"), None);
        assert_eq!(env_key_to_config_key("RTMLAB_NODOT"), None);
    }

    #[test]
    fn kv_text_skips_comments_and_rejects_junk() {
        let pairs = parse_kv_text("# a comment\n\ngrid.nx = 96\n  loop.order=yzx  \n").unwrap();
        assert_eq!(
            pairs,
            kv(&[("grid.nx", "96"), ("loop.order", "yzx")])
        );
        assert!(parse_kv_text("grid.nx 96").is_err());
    }

    #[test]
    fn vary_lists_parse_every_axis() {
        let flags = kv(&[
            ("vary.schedule", "static,dynamic"),
            ("vary.order", "yzx,zyx"),
            ("vary.strategy", "blocking,posted,commthread"),
            ("vary.view", "copy,alias"),
            ("vary.decomp", "2x2,4x1"),
            ("grid.nx", "96"),
            ("grid.ny", "96"),
        ]);
        let cfg = resolve_config(&[], &[], &flags).unwrap();
        assert_eq!(cfg.vary.schedules.len(), 2);
        assert_eq!(cfg.vary.orders.len(), 2);
        assert_eq!(cfg.vary.strategies.len(), 3);
        assert_eq!(cfg.vary.views.len(), 2);
        assert_eq!(cfg.vary.decomps, vec![(2, 2), (4, 1)]);
    }

    #[test]
    fn vary_decomps_are_feasibility_checked() {
        let err = resolve_config(
            &[],
            &[],
            &kv(&[("grid.nx", "16"), ("vary.decomp", "8x1")]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn checksum_distinguishes_physics_but_not_plumbing() {
        let a = resolve_config(&[], &[], &[]).unwrap();
        let mut b = a.clone();
        b.threads = 8;
        b.policy = SchedulePolicy::Static;
        assert_eq!(a.checksum(), b.checksum());
        let mut c = a.clone();
        c.grid.nx = 65;
        // Feasibility unaffected; only the digest should change.
        assert_ne!(a.checksum(), c.checksum());
    }
}
