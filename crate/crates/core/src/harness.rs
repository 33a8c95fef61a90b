//! Experiment commands behind the `stgrid` binary.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.ini                       effective configuration
//! simulate:    seed<s>/occupancy.csv, seed<s>/frames/{state,obs}_<k>.pgm
//! filter-demo: seed<s>/filter.csv,    seed<s>/frames/belief<c>_<k>.pgm
//! train:       <policy>_seed<s>/metrics.csv, .../frames/, .../checkpoints/
//! compare:     <policy>_seed<s>/metrics.csv for every policy, summary.csv, summary.txt
//! ```
//!
//! A command refuses to write into a directory that already has files in it.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::{FrameMode, PolicyKind, RunConfig, WildfirePreset};
use crate::environment::{Environment, StateMap};
use crate::error::{Error, Result};
use crate::filter::{bayes_correct, mean_cross_entropy, predict, BeliefGrid};
use crate::frames::{belief_pixels, observation_pixels, state_pixels, write_frame};
use crate::metrics::{self, MetricsWriter};
use crate::orchestrator::{tail_mean_reward, MetricsRow, Workbench};
use crate::par::{self, Execution};

/// Fraction of final iterations averaged in the compare table.
pub const TAIL_FRACTION: f64 = 0.1;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub policy: Option<PolicyKind>,
    pub iters: Option<u64>,
    pub frames: Option<FrameMode>,
}

pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::from_ini(&fs::read_to_string(p)?)?,
        None => RunConfig::desk_scale(),
    };
    if let Some(s) = ov.seed {
        c.run.seeds = vec![s];
    }
    if let Some(o) = &ov.out {
        c.output.dir = o.clone();
    }
    if let Some(p) = ov.policy {
        c.run.policy = p;
    }
    if let Some(n) = ov.iters {
        c.run.iterations = n;
    }
    if let Some(f) = ov.frames {
        c.run.frames = f;
    }
    c.validate()?;
    Ok(c)
}

/// Creates the output directory, refusing one that already holds files, and
/// writes the effective config into it.
pub fn prepare_output(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output.dir.clone();
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        return Err(Error::config(format!(
            "output directory {} is not empty; choose a fresh one",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.ini"), config.to_ini())?;
    Ok(dir)
}

fn burned_in_environment(config: &RunConfig, seed: u64) -> Result<Environment> {
    let (h, w) = (config.grid.height, config.grid.width);
    let params = WildfirePreset::default().build(h, w)?;
    let mut env = Environment::new(params, StateMap::uniform(h, w, WildfirePreset::NORMAL), seed);
    for _ in 0..config.environment.burn_in {
        env.step()?;
    }
    Ok(env)
}

/// Per-step state counts for one seed of `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub seed: u64,
    /// `counts[k][s]`: cells in state `s` at step `k`.
    pub counts: Vec<Vec<usize>>,
}

/// Free-runs the environment, fully observing it at every step.
pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<Occupancy>> {
    let root = prepare_output(config)?;
    let (h, w) = (config.grid.height, config.grid.width);
    let (ns, no) = (config.grid.states, config.grid.observations);
    let mut out = Vec::new();
    for &seed in &config.run.seeds {
        if config.run.iterations == 0 {
            break;
        }
        let dir = root.join(format!("seed{seed}"));
        fs::create_dir_all(&dir)?;
        let mut env = burned_in_environment(config, seed)?;
        let mut csv = String::from("# stgrid occupancy v1\nk");
        for s in 0..ns {
            let _ = write!(csv, ",state{s}");
        }
        csv.push('\n');
        let mut counts = Vec::new();
        for k in 0..config.run.iterations {
            let y = env.observe_all();
            let c: Vec<usize> = (0..ns).map(|s| env.state().count(s as u8)).collect();
            let _ = writeln!(
                csv,
                "{k},{}",
                c.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            );
            if config.run.frames.should_write(k) {
                let frames = dir.join("frames");
                write_frame(&frames, "state", k, w, h, &state_pixels(env.state(), ns))?;
                write_frame(&frames, "obs", k, w, h, &observation_pixels(&y, no))?;
            }
            counts.push(c);
            env.step()?;
        }
        fs::write(dir.join("occupancy.csv"), csv)?;
        out.push(Occupancy { seed, counts });
    }
    Ok(out)
}

/// Per-step cross-entropy of the corrected estimate and of the uncorrected
/// prior iteration, both against the true state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub seed: u64,
    pub ce_filter: Vec<f64>,
    pub ce_prior: Vec<f64>,
}

impl FilterTrace {
    pub fn mean_filter(&self) -> f64 {
        mean(&self.ce_filter)
    }

    pub fn mean_prior(&self) -> f64 {
        mean(&self.ce_prior)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Filters one seed's environment under full observation with the true model.
pub fn filter_trace(config: &RunConfig, seed: u64, frames_dir: Option<&Path>) -> Result<FilterTrace> {
    let mut env = burned_in_environment(config, seed)?;
    let (h, w, ns) = (config.grid.height, config.grid.width, config.grid.states);
    let mut predictor = BeliefGrid::uniform(ns, h, w);
    let mut prior = predictor.clone();
    let mut trace = FilterTrace {
        seed,
        ce_filter: Vec::new(),
        ce_prior: Vec::new(),
    };
    for k in 0..config.run.iterations {
        let y = env.observe_all();
        let params = env.params().clone();
        let estimate = bayes_correct(&predictor, &y, &params.obs_matrix)?;
        trace.ce_filter.push(mean_cross_entropy(&estimate, env.state()));
        trace.ce_prior.push(mean_cross_entropy(&prior, env.state()));
        if let Some(dir) = frames_dir.filter(|_| config.run.frames.should_write(k)) {
            for c in 0..ns {
                write_frame(dir, &format!("belief{c}"), k, w, h, &belief_pixels(&estimate, c))?;
            }
        }
        predictor = predict(&estimate, &params)?;
        prior = predict(&prior, &params)?;
        env.step()?;
    }
    Ok(trace)
}

pub fn cmd_filter_demo(config: &RunConfig) -> Result<Vec<FilterTrace>> {
    let root = prepare_output(config)?;
    let mut out = Vec::new();
    for &seed in &config.run.seeds {
        let dir = root.join(format!("seed{seed}"));
        fs::create_dir_all(&dir)?;
        let trace = filter_trace(config, seed, Some(&dir.join("frames")))?;
        let mut csv = String::from("# stgrid filter v1\nk,ce_filter,ce_prior\n");
        for (k, (f, p)) in trace.ce_filter.iter().zip(&trace.ce_prior).enumerate() {
            let _ = writeln!(csv, "{k},{f},{p}");
        }
        fs::write(dir.join("filter.csv"), csv)?;
        out.push(trace);
    }
    Ok(out)
}

pub fn run_dir_name(policy: PolicyKind, seed: u64) -> String {
    format!("{}_seed{seed}", policy.flag())
}

/// Drives one workbench to the configured iteration count, streaming rows
/// to `<dir>/metrics.csv`.
fn drive(config: &RunConfig, mut wb: Workbench, dir: &Path) -> Result<Vec<MetricsRow>> {
    fs::create_dir_all(dir)?;
    let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let (h, w) = (config.grid.height, config.grid.width);
    let (ns, no) = (config.grid.states, config.grid.observations);
    let target = config.environment.target_state as usize;
    let frames = dir.join("frames");
    let mut rows = Vec::new();
    while wb.iteration() < config.run.iterations {
        let k = wb.iteration();
        let truth = config.run.frames.should_write(k).then(|| wb.environment().state().clone());
        let row = wb.run_iteration()?;
        writer.write_row(&row)?;
        if let Some(truth) = truth {
            write_frame(&frames, "state", k, w, h, &state_pixels(&truth, ns))?;
            write_frame(&frames, "obs", k, w, h, &observation_pixels(wb.last_observation(), no))?;
            if let Some(b) = wb.belief() {
                write_frame(&frames, "belief", k, w, h, &belief_pixels(b, target))?;
            }
        }
        let every = config.run.checkpoint_every;
        if every > 0 && wb.iteration() % every == 0 {
            writer.flush()?;
            checkpoint::save(&wb, &dir.join("checkpoints"))?;
        }
        rows.push(row);
    }
    writer.flush()?;
    Ok(rows)
}

/// Runs the configured policy once per seed. With `resume`, continues the
/// checkpointed run instead (single seed, taken from the checkpoint); its
/// metrics file then holds only the rows after the checkpoint.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<Vec<Vec<MetricsRow>>> {
    let root = prepare_output(config)?;
    match resume {
        Some(bin) => {
            let wb = checkpoint::load(config, bin)?;
            let dir = root.join(run_dir_name(wb.policy(), wb.seed()));
            Ok(vec![drive(config, wb, &dir)?])
        }
        None => config
            .run
            .seeds
            .iter()
            .map(|&seed| {
                let wb = Workbench::new(config, config.run.policy, seed)?;
                drive(config, wb, &root.join(run_dir_name(config.run.policy, seed)))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    /// Tail-mean reward per seed, in config seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// `100 * mean / RandomWalk mean`.
    pub percent_of_baseline: f64,
}

/// Aggregates `<root>/<policy>_seed<s>/metrics.csv` files into the summary table.
pub fn summarize(root: &Path, seeds: &[u64]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for policy in PolicyKind::ALL {
        let per_seed = seeds
            .iter()
            .map(|&s| {
                let m = metrics::read(&root.join(run_dir_name(policy, s)).join("metrics.csv"))?;
                Ok(tail_mean_reward(&m, TAIL_FRACTION))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(SummaryRow {
            policy,
            mean: mean(&per_seed),
            per_seed,
            percent_of_baseline: f64::NAN,
        });
    }
    let base = rows.iter().find(|r| r.policy == PolicyKind::RandomWalk).map(|r| r.mean).unwrap_or(f64::NAN);
    for r in &mut rows {
        r.percent_of_baseline = 100.0 * r.mean / base;
    }
    Ok(rows)
}

pub fn format_summary(rows: &[SummaryRow], iterations: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Average reward over the final {:.0}% of {iterations} iterations", TAIL_FRACTION * 100.0);
    let _ = writeln!(s, "{:<16} {:>8}  {:>10}", "Plan method", "Reward", "");
    for r in rows {
        let pct = if r.policy == PolicyKind::RandomWalk {
            "(baseline)".to_string()
        } else {
            format!("{:.0}%", r.percent_of_baseline)
        };
        let _ = writeln!(s, "{:<16} {:>8.3}  {:>10}", r.policy.label(), r.mean, pct);
    }
    s
}

/// Runs every policy for every seed, then tabulates from the written CSVs.
pub fn cmd_compare(config: &RunConfig) -> Result<Vec<SummaryRow>> {
    let root = prepare_output(config)?;
    let arms: Vec<(PolicyKind, u64)> = PolicyKind::ALL
        .iter()
        .flat_map(|&p| config.run.seeds.iter().map(move |&s| (p, s)))
        .collect();
    par::map_slice(Execution::default(), &arms, |&(policy, seed)| {
        let wb = Workbench::new(config, policy, seed)?;
        drive(config, wb, &root.join(run_dir_name(policy, seed))).map(|_| ())
    })
    .into_iter()
    .collect::<Result<Vec<()>>>()?;
    let rows = summarize(&root, &config.run.seeds)?;
    let mut csv = String::from("# stgrid summary v1\npolicy,mean_reward,percent_of_baseline");
    for s in &config.run.seeds {
        let _ = write!(csv, ",seed{s}");
    }
    csv.push('\n');
    for r in &rows {
        let _ = write!(csv, "{},{},{}", r.policy.flag(), r.mean, r.percent_of_baseline);
        for v in &r.per_seed {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    fs::write(root.join("summary.csv"), csv)?;
    let mut f = fs::File::create(root.join("summary.txt"))?;
    f.write_all(format_summary(&rows, config.run.iterations).as_bytes())?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path, iterations: u64) -> RunConfig {
        let mut c = RunConfig::desk_scale();
        c.grid.height = 8;
        c.grid.width = 8;
        c.planner.horizon = 4;
        c.planner.samples = 16;
        c.autoencoder.latent = 8;
        c.autoencoder.conv1_channels = 2;
        c.autoencoder.conv2_channels = 2;
        c.autoencoder.trajectory_len = 2;
        c.agent.hidden = 8;
        c.agent.batch = 4;
        c.environment.burn_in = 10;
        c.run.iterations = iterations;
        c.output.dir = dir.to_path_buf();
        c
    }

    #[test]
    fn overrides_apply_and_validate() {
        let ov = Overrides {
            seed: Some(9),
            policy: Some(PolicyKind::Exploratory),
            iters: Some(12),
            frames: Some(FrameMode::Every(3)),
            out: Some(PathBuf::from("x")),
        };
        let c = load_config(None, &ov).unwrap();
        assert_eq!(c.run.seeds, vec![9]);
        assert_eq!(c.run.policy, PolicyKind::Exploratory);
        assert_eq!(c.run.iterations, 12);
        assert_eq!(c.output.dir, PathBuf::from("x"));
    }

    #[test]
    fn zero_iteration_simulate_only_echoes_config() {
        let tmp = tempfile::tempdir().unwrap();
        let c = tiny(&tmp.path().join("sim"), 0);
        assert!(cmd_simulate(&c).unwrap().is_empty());
        let names: Vec<_> = fs::read_dir(&c.output.dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec!["config.ini"]);
        assert_eq!(RunConfig::from_ini(&fs::read_to_string(c.output.dir.join("config.ini")).unwrap()).unwrap(), c);
    }

    #[test]
    fn refuses_non_empty_output() {
        let tmp = tempfile::tempdir().unwrap();
        let c = tiny(tmp.path(), 0);
        fs::write(tmp.path().join("keep.txt"), "x").unwrap();
        assert!(cmd_simulate(&c).is_err());
        assert_eq!(fs::read_to_string(tmp.path().join("keep.txt")).unwrap(), "x");
    }

    #[test]
    fn simulate_counts_cover_the_grid() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = tiny(&tmp.path().join("sim"), 5);
        c.run.frames = FrameMode::All;
        let occ = cmd_simulate(&c).unwrap();
        assert_eq!(occ[0].counts.len(), 5);
        assert!(occ[0].counts.iter().all(|c| c.iter().sum::<usize>() == 64));
        assert!(c.output.dir.join("seed1/frames/state_4.pgm").exists());
        assert!(c.output.dir.join("seed1/frames/obs_0.pgm").exists());
    }

    #[test]
    fn train_writes_one_row_per_iteration() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = tiny(&tmp.path().join("t"), 9);
        c.run.checkpoint_every = 4;
        let runs = cmd_train(&c, None).unwrap();
        let dir = c.output.dir.join("learned_seed1");
        let rows = metrics::read(&dir.join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().zip(&runs[0]).all(|(a, b)| a.same_as(b)));
        assert!(dir.join("checkpoints/checkpoint_8.bin").exists());
        assert!(dir.join("checkpoints/checkpoint_8.manifest.txt").exists());
    }

    #[test]
    fn summary_percent_is_relative_to_random_walk() {
        let rows = vec![
            SummaryRow { policy: PolicyKind::RandomWalk, per_seed: vec![2.0], mean: 2.0, percent_of_baseline: 100.0 },
            SummaryRow { policy: PolicyKind::Learned, per_seed: vec![5.0], mean: 5.0, percent_of_baseline: 250.0 },
        ];
        let t = format_summary(&rows, 100);
        assert!(t.contains("(baseline)"));
        assert!(t.contains("250%"));
    }
}
