//! Command line front-end: `simulate`, `fuse`, `eval` and `montecarlo`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{load_config, read_log, render_log, ConfigFile, SensorLog};
use crate::metrics::{histogram_csv, windowed_rms, Sensor, DEFAULT_BIN_WIDTH};
use crate::noise::{NoiseParams, COV_TOLERANCE};
use crate::pipeline::{
    aggregate, evaluate, fuse_log, run_replica, simulate_log, FusionOptions, MonteCarloAggregate, ReplicaResult,
    StepOutcome,
};
use crate::sim::ScenarioSpec;

/// Window of the smoothed error column in `errors.csv` (s).
const RMS_WINDOW: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(name = "ixloc", version, about = "GPS, IMU and infrastructure-node localization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `key = value` configuration file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Correlated noise covariances and a fixed-radius GPS gate.
    #[arg(long)]
    pub paper_literal: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a ground truth and sensor log from a scenario.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        output: PathBuf,
        /// Overrides the seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the filter over a log and append EST records.
    Fuse {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write per-epoch innovations and gains to `<output>.diag.csv`.
        #[arg(long)]
        diag: bool,
        /// Ignore node detections.
        #[arg(long)]
        no_ix: bool,
    },
    /// Compare GPS, node and fused errors of a fused log.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run seeded replicas of simulate, fuse and eval.
    Montecarlo {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        replicas: u64,
        /// Replica `i` uses seed `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum replicas run at once; defaults to the number of CPUs.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: Option<u64>,
    },
}

/// A validated invocation.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub command: Command,
}

impl RunSpec {
    pub fn from_cli(cli: Cli) -> Self {
        Self { command: cli.command }
    }

    fn stage(&self) -> &'static str {
        match self.command {
            Command::Simulate { .. } => "simulate",
            Command::Fuse { .. } => "fuse",
            Command::Eval { .. } => "eval",
            Command::Montecarlo { .. } => "montecarlo",
        }
    }
}

/// Error tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

/// Tracks files written so far so that a failing run leaves nothing behind.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    fn dir(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            self.dirs.push(path.to_path_buf());
        }
        Ok(())
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        self.files.push(path.to_path_buf());
        fs::write(path, contents).map_err(|e| Error::io(path, e))
    }

    fn remove_all(self) {
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn load(common: &CommonArgs) -> Result<ConfigFile> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => ConfigFile {
            params: NoiseParams::default(),
            scenario: ScenarioSpec::default(),
            case_windows: None,
            warnings: Vec::new(),
        },
    };
    for w in &cfg.warnings {
        warn!("{w}");
    }
    if common.paper_literal {
        cfg.params = cfg.params.paper_literal();
    }
    Ok(cfg)
}

/// Executes a command, removing partial outputs on failure.
pub fn run(spec: &RunSpec) -> std::result::Result<(), StageError> {
    let mut outputs = Outputs::default();
    let result = execute(&spec.command, &mut outputs);
    result.map_err(|error| {
        outputs.remove_all();
        StageError { stage: spec.stage(), error }
    })
}

fn execute(command: &Command, out: &mut Outputs) -> Result<()> {
    match command {
        Command::Simulate { common, output, seed } => {
            let mut cfg = load(common)?;
            if let Some(seed) = seed {
                cfg.scenario.seed = *seed;
            }
            let log = simulate_log(&cfg.scenario, &cfg.params)?;
            out.write(output, &render_log(&log)?)?;
            info!("wrote {} records to {}", log.records.len(), output.display());
        }
        Command::Fuse { common, input, output, diag, no_ix } => {
            let cfg = load(common)?;
            let log = read_log(input)?;
            let options = FusionOptions { use_gps: true, use_ix: !no_ix };
            let fused = fuse_log(&log, &cfg.params, options)?;
            out.write(output, &render_log(&fused.log)?)?;
            if *diag {
                let mut path = output.clone().into_os_string();
                path.push(".diag.csv");
                out.write(Path::new(&path), &diagnostics_csv(&fused.outcomes))?;
            }
            info!("fused {} epochs into {}", fused.outcomes.len(), output.display());
        }
        Command::Eval { common, input, output } => {
            let cfg = load(common)?;
            let log = read_log(input)?;
            out.dir(output)?;
            write_eval(&log, &cfg, output, out)?;
        }
        Command::Montecarlo { common, output, replicas, seed, jobs } => {
            let cfg = load(common)?;
            let results = montecarlo(&cfg, *replicas as usize, *seed, jobs.map(|j| j as usize))?;
            let agg = aggregate(&results)?;
            out.dir(output)?;
            out.write(&output.join("replicas.csv"), &replicas_csv(&results))?;
            out.write(&output.join("aggregate.csv"), &aggregate_csv(&agg))?;
            info!(
                "{} replicas: fusion/GPS mean error ratio {:.3}",
                agg.replicas,
                agg.fusion_gps_ratio()
            );
        }
    }
    Ok(())
}

fn write_eval(log: &SensorLog, cfg: &ConfigFile, dir: &Path, out: &mut Outputs) -> Result<()> {
    let eval = evaluate(log, &cfg.params, cfg.case_windows.as_deref())?;
    out.write(&dir.join("report.csv"), &eval.report.to_csv())?;
    out.write(&dir.join("report.txt"), &eval.report.to_table())?;
    out.write(&dir.join("histogram.csv"), &histogram_csv(&eval.histograms(DEFAULT_BIN_WIDTH)?))?;

    let mut errors = String::from("source,t,longitudinal,lateral,total,rms_1s\n");
    for (sensor, series) in &eval.errors {
        let rms = windowed_rms(series, RMS_WINDOW);
        for (s, (_, r)) in series.samples.iter().zip(rms) {
            writeln!(
                errors,
                "{},{:.6},{},{},{},{}",
                sensor.name(),
                s.t,
                s.longitudinal,
                s.lateral,
                s.total,
                r
            )
            .expect("writing to a String cannot fail");
        }
    }
    out.write(&dir.join("errors.csv"), &errors)
}

/// Runs `replicas` isolated replicas with seeds `seed_base + i`, at most
/// `jobs` at a time. Results are in replica order.
pub fn montecarlo(cfg: &ConfigFile, replicas: usize, seed_base: u64, jobs: Option<usize>) -> Result<Vec<ReplicaResult>> {
    if replicas == 0 {
        return Err(Error::Validation("replicas must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..replicas)
            .into_par_iter()
            .map(|i| {
                let spec = ScenarioSpec { seed: seed_base.wrapping_add(i as u64), ..cfg.scenario.clone() };
                run_replica(i, &spec, &cfg.params, cfg.case_windows.as_deref())
            })
            .collect()
    })
}

fn replicas_csv(results: &[ReplicaResult]) -> String {
    let mut out = String::from("replica,seed,n");
    for s in Sensor::ALL {
        let name = s.name().to_ascii_lowercase();
        write!(out, ",{name}_mean,{name}_std,{name}_rmse").unwrap();
    }
    out.push('\n');
    for r in results {
        match &r.overall {
            Some(o) => {
                write!(out, "{},{},{}", r.replica, r.seed, o[0].n).unwrap();
                for s in o {
                    write!(out, ",{:.6},{:.6},{:.6}", s.mean, s.std, s.rmse).unwrap();
                }
            }
            None => write!(out, "{},{},0{}", r.replica, r.seed, ",,,".repeat(3)).unwrap(),
        }
        out.push('\n');
    }
    out
}

fn aggregate_csv(agg: &MonteCarloAggregate) -> String {
    let mut out = String::from("source,replicas,mean_of_means,std_of_means\n");
    for s in Sensor::ALL {
        let i = s as usize;
        writeln!(out, "{},{},{:.6},{:.6}", s.name(), agg.replicas, agg.mean[i], agg.std[i]).unwrap();
    }
    writeln!(out, "fusion/gps,{},{:.6},", agg.replicas, agg.fusion_gps_ratio()).unwrap();
    out
}

/// One row per fused epoch: innovation, its covariance and the gain of
/// each applied update, and the covariance trace before and after.
pub fn diagnostics_csv(outcomes: &[StepOutcome]) -> String {
    let mut out = String::from("t,x,y,trace_pred,trace_post");
    for src in ["gps", "ix"] {
        write!(
            out,
            ",{src}_used,{src}_nu_x,{src}_nu_y,{src}_s_xx,{src}_s_yy,{src}_s_xy,{src}_k_xx,{src}_k_xy,{src}_k_yx,{src}_k_yy"
        )
        .unwrap();
    }
    out.push('\n');
    for outcome in outcomes {
        let StepOutcome::Fused(r) = outcome else { continue };
        let s = &r.final_state;
        debug_assert!(s.cov.is_psd(COV_TOLERANCE));
        write!(out, "{:.6},{},{},{},{}", s.t, s.pos.x, s.pos.y, r.predicted.cov.trace(), s.cov.trace()).unwrap();
        for detail in [&r.gps, &r.ix] {
            match detail {
                Some(d) => {
                    let (k, sc) = (&d.gain, &d.innovation_cov);
                    write!(
                        out,
                        ",1,{},{},{},{},{},{},{},{},{}",
                        d.innovation.x,
                        d.innovation.y,
                        sc.xx(),
                        sc.yy(),
                        sc.xy(),
                        k[(0, 0)],
                        k[(0, 1)],
                        k[(1, 0)],
                        k[(1, 1)]
                    )
                    .unwrap();
                }
                None => out.push_str(",0,,,,,,,,,"),
            }
        }
        out.push('\n');
    }
    out
}
