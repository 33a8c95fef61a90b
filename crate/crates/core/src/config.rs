//! Run configuration and the wildfire model constants.
//!
//! Configs are flat INI-style text: `[section]` headers, `key = value`
//! lines, `#` or `;` comments. [`RunConfig::to_ini`] writes every field, so
//! a run directory always carries the exact configuration it was produced by.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::environment::{ModelParams, ObsMatrix};
use crate::error::{Error, Result};
use crate::tensor::Kernel4;

/// Constants of the three-state wildfire model (0 normal, 1 latent, 2 fire).
///
/// All spread weights couple *fire* neighbours into the *latent* channel of
/// the cell being updated. Kernel rows are ordered top to bottom, so
/// `spread_from_above` is the weight of a burning cell one row up: fire
/// creeps downward.
///
/// | quantity | value | effect on a one-hot neighbourhood |
/// |---|---|---|
/// | `bias` | (1e-3, 2e-4, 1e-4) | spontaneous ignition ~2e-4 per normal cell and step |
/// | `persist` normal -> normal | 1.0 | |
/// | `persist` latent -> latent, latent -> fire | 0.6, 0.4 | latent lasts ~2.5 steps |
/// | `persist` fire -> fire, fire -> normal | 0.8, 0.2 | fire lasts ~5 steps |
/// | `spread_from_above` | 0.10 per cell | a fire directly above ignites with p ~ 0.09 |
/// | `spread_beside` | 0.02 per cell | |
/// | `spread_from_below` | 0.004 per cell | |
/// | observation rows | see `observation` | latent cells look normal 80% of the time |
///
/// A free-running 64x64 map settles near 16% non-normal cells; on 16x16
/// the downward drift drains fire through the bottom edge and the share
/// drops to roughly 5%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WildfirePreset {
    pub bias: [f64; 3],
    /// `persist[to][from]`: kernel-centre weight from the cell's own state.
    pub persist: [[f64; 3]; 3],
    pub spread_from_above: f64,
    pub spread_beside: f64,
    pub spread_from_below: f64,
    /// Rows are states, columns observation symbols.
    pub observation: [[f64; 3]; 3],
}

impl Default for WildfirePreset {
    fn default() -> Self {
        WildfirePreset {
            bias: [1e-3, 2e-4, 1e-4],
            persist: [
                [1.0, 0.0, 0.2],
                [0.0, 0.6, 0.0],
                [0.0, 0.4, 0.8],
            ],
            spread_from_above: 0.10,
            spread_beside: 0.02,
            spread_from_below: 0.004,
            observation: [
                [0.94, 0.03, 0.03],
                [0.80, 0.15, 0.05],
                [0.02, 0.03, 0.95],
            ],
        }
    }
}

impl WildfirePreset {
    pub const NORMAL: u8 = 0;
    pub const LATENT: u8 = 1;
    pub const FIRE: u8 = 2;

    pub fn build(&self, height: usize, width: usize) -> Result<ModelParams> {
        let mut kernel = Kernel4::zeros(3, 3, 3)?;
        for to in 0..3 {
            for from in 0..3 {
                kernel.set_weight(to, from, 1, 1, self.persist[to][from]);
            }
        }
        let (latent, fire) = (Self::LATENT as usize, Self::FIRE as usize);
        for c in 0..3 {
            kernel.set_weight(latent, fire, 0, c, self.spread_from_above);
            kernel.set_weight(latent, fire, 2, c, self.spread_from_below);
        }
        kernel.set_weight(latent, fire, 1, 0, self.spread_beside);
        kernel.set_weight(latent, fire, 1, 2, self.spread_beside);
        kernel.set_bias(self.bias.to_vec())?;
        if !kernel.is_positive() {
            return Err(Error::config("wildfire kernel must be non-negative with positive bias"));
        }
        let obs = ObsMatrix::new(3, 3, self.observation.iter().flatten().copied().collect())?;
        ModelParams::new(height, width, kernel, obs)
    }
}

/// Which high-level policy drives the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    Learned,
    RandomWalk,
    Exploitation,
    Exploratory,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::RandomWalk,
        PolicyKind::Learned,
        PolicyKind::Exploitation,
        PolicyKind::Exploratory,
    ];

    pub fn flag(self) -> &'static str {
        match self {
            PolicyKind::Learned => "learned",
            PolicyKind::RandomWalk => "random",
            PolicyKind::Exploitation => "exploit",
            PolicyKind::Exploratory => "explore",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Learned => "Learned Policy",
            PolicyKind::RandomWalk => "Random Walk",
            PolicyKind::Exploitation => "Exploitation",
            PolicyKind::Exploratory => "Exploratory",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(PolicyKind::Learned),
            "random" => Ok(PolicyKind::RandomWalk),
            "exploit" => Ok(PolicyKind::Exploitation),
            "explore" => Ok(PolicyKind::Exploratory),
            _ => Err(Error::Parse(format!(
                "unknown policy '{s}' (expected learned, random, exploit or explore)"
            ))),
        }
    }
}

/// Which slow-time steps write PGM frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameMode {
    None,
    All,
    Every(u64),
}

impl FrameMode {
    pub fn should_write(self, k: u64) -> bool {
        match self {
            FrameMode::None => false,
            FrameMode::All => true,
            FrameMode::Every(n) => k % n == 0,
        }
    }
}

impl fmt::Display for FrameMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameMode::None => f.write_str("none"),
            FrameMode::All => f.write_str("all"),
            FrameMode::Every(n) => write!(f, "every-{n}"),
        }
    }
}

impl FromStr for FrameMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FrameMode::None),
            "all" => Ok(FrameMode::All),
            _ => s
                .strip_prefix("every-")
                .and_then(|n| n.parse::<u64>().ok())
                .filter(|&n| n > 0)
                .map(FrameMode::Every)
                .ok_or_else(|| Error::Parse(format!("bad frame mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    pub states: usize,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    /// Free-running steps from the all-normal map before the robot starts.
    pub burn_in: u64,
    pub target_state: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub latent: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub trajectory_len: usize,
    pub batch: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub actions: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub batch: usize,
    pub capacity: usize,
    pub sync_interval: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the run over which exploration decays linearly.
    pub eps_decay_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub eta_sys: f64,
    pub eta_dqn: f64,
    pub delta_sys: f64,
    pub delta_dqn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub iterations: u64,
    pub seeds: Vec<u64>,
    pub policy: PolicyKind,
    /// Checkpoint every this many iterations; 0 disables checkpoints.
    pub checkpoint_every: u64,
    pub frames: FrameMode,
    /// Fill the `wall_ms` metrics column. Off by default so reruns are
    /// byte-identical.
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub environment: EnvironmentConfig,
    pub planner: PlannerConfig,
    pub autoencoder: AutoencoderConfig,
    pub agent: AgentConfig,
    pub schedule: ScheduleConfig,
    pub run: RunSection,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl RunConfig {
    /// 16x16 map, 16-step paths: small enough for a laptop run.
    pub fn desk_scale() -> Self {
        RunConfig {
            grid: GridConfig {
                height: 16,
                width: 16,
                states: 3,
                observations: 3,
            },
            environment: EnvironmentConfig {
                burn_in: 100,
                target_state: WildfirePreset::FIRE,
            },
            planner: PlannerConfig {
                horizon: 16,
                samples: 256,
            },
            autoencoder: AutoencoderConfig {
                latent: 64,
                conv1_channels: 8,
                conv2_channels: 16,
                trajectory_len: 8,
                batch: 4,
                capacity: 512,
            },
            agent: AgentConfig {
                actions: 4,
                hidden: 128,
                gamma: 0.95,
                batch: 32,
                capacity: 4096,
                sync_interval: 100,
                eps_start: 1.0,
                eps_end: 0.05,
                eps_decay_fraction: 0.2,
            },
            schedule: ScheduleConfig {
                eta_sys: 1e-2,
                eta_dqn: 1e-2,
                delta_sys: 0.81,
                delta_dqn: 0.51,
            },
            run: RunSection {
                iterations: 5000,
                seeds: vec![1],
                policy: PolicyKind::Learned,
                checkpoint_every: 0,
                frames: FrameMode::None,
                wall_clock: false,
            },
            output: OutputConfig {
                dir: PathBuf::from("runs"),
            },
        }
    }

    /// 64x64 map, 64-step paths, 25,000 iterations.
    pub fn full_scale() -> Self {
        let mut c = Self::desk_scale();
        c.grid.height = 64;
        c.grid.width = 64;
        c.planner.horizon = 64;
        c.planner.samples = 1024;
        c.autoencoder.latent = 256;
        c.agent.capacity = 10_000;
        c.run.iterations = 25_000;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.height == 0 || g.width == 0 {
            return Err(Error::config("grid dims must be positive"));
        }
        if g.states != 3 || g.observations != 3 {
            return Err(Error::config("the wildfire preset needs states = 3 and observations = 3"));
        }
        if self.environment.target_state as usize >= g.states {
            return Err(Error::config("target_state out of range"));
        }
        if self.planner.horizon == 0 || self.planner.samples == 0 {
            return Err(Error::config("planner horizon and samples must be >= 1"));
        }
        let a = &self.autoencoder;
        if a.latent == 0 || a.conv1_channels == 0 || a.conv2_channels == 0 {
            return Err(Error::config("autoencoder widths must be positive"));
        }
        if a.trajectory_len == 0 || a.batch == 0 || a.capacity == 0 {
            return Err(Error::config("trajectory length, batch and capacity must be positive"));
        }
        let q = &self.agent;
        if q.actions != g.states + 1 {
            return Err(Error::config(format!(
                "actions must be states + 1 = {} (one per state plus explore)",
                g.states + 1
            )));
        }
        if q.hidden == 0 || q.batch == 0 || q.capacity == 0 || q.sync_interval == 0 {
            return Err(Error::config("agent sizes must be positive"));
        }
        if !(q.gamma > 0.0 && q.gamma < 1.0) {
            return Err(Error::config("gamma must lie in (0, 1)"));
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(q.eps_start) || !eps_ok(q.eps_end) || q.eps_end > q.eps_start {
            return Err(Error::config("need 0 <= eps_end <= eps_start <= 1"));
        }
        if !(q.eps_decay_fraction > 0.0 && q.eps_decay_fraction <= 1.0) {
            return Err(Error::config("eps_decay_fraction must lie in (0, 1]"));
        }
        crate::orchestrator::ScheduleParams::from_config(&self.schedule)?;
        if self.run.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        Ok(())
    }

    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let _ = writeln!(s, "[grid]\nheight = {}\nwidth = {}\nstates = {}\nobservations = {}\n",
            g.height, g.width, g.states, g.observations);
        let e = &self.environment;
        let _ = writeln!(s, "[environment]\nburn_in = {}\ntarget_state = {}\n", e.burn_in, e.target_state);
        let p = &self.planner;
        let _ = writeln!(s, "[planner]\nhorizon = {}\nsamples = {}\n", p.horizon, p.samples);
        let a = &self.autoencoder;
        let _ = writeln!(
            s,
            "[autoencoder]\nlatent = {}\nconv1_channels = {}\nconv2_channels = {}\ntrajectory_len = {}\nbatch = {}\ncapacity = {}\n",
            a.latent, a.conv1_channels, a.conv2_channels, a.trajectory_len, a.batch, a.capacity
        );
        let q = &self.agent;
        let _ = writeln!(
            s,
            "[agent]\nactions = {}\nhidden = {}\ngamma = {}\nbatch = {}\ncapacity = {}\nsync_interval = {}\neps_start = {}\neps_end = {}\neps_decay_fraction = {}\n",
            q.actions, q.hidden, q.gamma, q.batch, q.capacity, q.sync_interval, q.eps_start, q.eps_end, q.eps_decay_fraction
        );
        let t = &self.schedule;
        let _ = writeln!(
            s,
            "[schedule]\neta_sys = {}\neta_dqn = {}\ndelta_sys = {}\ndelta_dqn = {}\n",
            t.eta_sys, t.eta_dqn, t.delta_sys, t.delta_dqn
        );
        let r = &self.run;
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "[run]\niterations = {}\nseeds = {}\npolicy = {}\ncheckpoint_every = {}\nframes = {}\nwall_clock = {}\n",
            r.iterations, seeds.join(","), r.policy, r.checkpoint_every, r.frames, r.wall_clock
        );
        let _ = writeln!(s, "[output]\ndir = {}", self.output.dir.display());
        s
    }

    /// Parses INI text on top of the desk-scale defaults; unknown keys are errors.
    pub fn from_ini(text: &str) -> Result<Self> {
        let entries = parse_ini(text)?;
        let mut c = RunConfig::desk_scale();
        for ((section, key), (line, value)) in &entries {
            let bad = |msg: String| Error::Parse(format!("line {line}: {section}.{key}: {msg}"));
            let v = value.as_str();
            macro_rules! set {
                ($field:expr) => {
                    $field = v.parse().map_err(|e| bad(format!("{e}")))?
                };
            }
            match (section.as_str(), key.as_str()) {
                ("grid", "height") => set!(c.grid.height),
                ("grid", "width") => set!(c.grid.width),
                ("grid", "states") => set!(c.grid.states),
                ("grid", "observations") => set!(c.grid.observations),
                ("environment", "burn_in") => set!(c.environment.burn_in),
                ("environment", "target_state") => set!(c.environment.target_state),
                ("planner", "horizon") => set!(c.planner.horizon),
                ("planner", "samples") => set!(c.planner.samples),
                ("autoencoder", "latent") => set!(c.autoencoder.latent),
                ("autoencoder", "conv1_channels") => set!(c.autoencoder.conv1_channels),
                ("autoencoder", "conv2_channels") => set!(c.autoencoder.conv2_channels),
                ("autoencoder", "trajectory_len") => set!(c.autoencoder.trajectory_len),
                ("autoencoder", "batch") => set!(c.autoencoder.batch),
                ("autoencoder", "capacity") => set!(c.autoencoder.capacity),
                ("agent", "actions") => set!(c.agent.actions),
                ("agent", "hidden") => set!(c.agent.hidden),
                ("agent", "gamma") => set!(c.agent.gamma),
                ("agent", "batch") => set!(c.agent.batch),
                ("agent", "capacity") => set!(c.agent.capacity),
                ("agent", "sync_interval") => set!(c.agent.sync_interval),
                ("agent", "eps_start") => set!(c.agent.eps_start),
                ("agent", "eps_end") => set!(c.agent.eps_end),
                ("agent", "eps_decay_fraction") => set!(c.agent.eps_decay_fraction),
                ("schedule", "eta_sys") => set!(c.schedule.eta_sys),
                ("schedule", "eta_dqn") => set!(c.schedule.eta_dqn),
                ("schedule", "delta_sys") => set!(c.schedule.delta_sys),
                ("schedule", "delta_dqn") => set!(c.schedule.delta_dqn),
                ("run", "iterations") => set!(c.run.iterations),
                ("run", "seeds") => {
                    c.run.seeds = v
                        .split(',')
                        .map(|s| s.trim().parse::<u64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(format!("{e}")))?
                }
                ("run", "policy") => set!(c.run.policy),
                ("run", "checkpoint_every") => set!(c.run.checkpoint_every),
                ("run", "frames") => set!(c.run.frames),
                ("run", "wall_clock") => set!(c.run.wall_clock),
                ("output", "dir") => c.output.dir = PathBuf::from(v),
                _ => return Err(bad("unknown key".into())),
            }
        }
        Ok(c)
    }
}

type IniEntries = BTreeMap<(String, String), (usize, String)>;

fn parse_ini(text: &str) -> Result<IniEntries> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            section = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse(format!("line {line_no}: unterminated section header")))?
                .trim()
                .to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {line_no}: expected key = value")))?;
        if section.is_empty() {
            return Err(Error::Parse(format!("line {line_no}: key outside any section")));
        }
        let key = (section.clone(), k.trim().to_string());
        if out.insert(key, (line_no, v.trim().to_string())).is_some() {
            return Err(Error::Parse(format!("line {line_no}: duplicate key '{}'", k.trim())));
        }
    }
    Ok(out)
}
