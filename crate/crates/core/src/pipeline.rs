//! End-to-end processing: synchronized epochs -> gating -> EKF, and the
//! evaluation of a fused log against its ground truth.

use crate::assoc::{gate_candidates, gate_gps, select_candidate, synchronize_streams, CandidateSet, PreEpoch, SyncedEpoch};
use crate::ekf::{fuse_epoch, predict, FusionEpochResult, Measurement, Source, VehicleState};
use crate::error::{Error, Result};
use crate::geo::MapPoint;
use crate::io::{scenario_records, LogRecord, LogStreams, SensorLog};
use crate::metrics::{
    compare_report, detection_windows, histogram, position_errors, summarize_values, ComparisonReport, ErrorSeries,
    HistogramBins, Sensor, SummaryStats,
};
use crate::noise::{gps_covariance, ix_covariance_in_map, Covariance2, NoiseParams};
use crate::sim::{simulate, ScenarioSpec, Trajectory, PRNG_NAME};

/// Which measurement sources the filter may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionOptions {
    pub use_gps: bool,
    pub use_ix: bool,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self { use_gps: true, use_ix: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// No GPS fix seen yet; the epoch was consumed without output.
    Waiting,
    Initialized(VehicleState),
    Fused(Box<FusionEpochResult>),
}

impl StepOutcome {
    pub fn estimate(&self) -> Option<&VehicleState> {
        match self {
            StepOutcome::Waiting => None,
            StepOutcome::Initialized(s) => Some(s),
            StepOutcome::Fused(r) => Some(&r.final_state),
        }
    }
}

/// Stateful driver running gating and fusion epoch by epoch.
///
/// The filter starts at the first GPS fix with covariance `Q_gps + I`.
/// Epochs more than one and a half steps after the current state are
/// reached by extra prediction-only steps.
#[derive(Debug, Clone)]
pub struct Localizer {
    params: NoiseParams,
    options: FusionOptions,
    state: Option<VehicleState>,
}

impl Localizer {
    pub fn new(params: NoiseParams, options: FusionOptions) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, options, state: None })
    }

    pub fn state(&self) -> Option<&VehicleState> {
        self.state.as_ref()
    }

    fn gps_measurement(&self, epoch: &PreEpoch) -> Option<Measurement> {
        if !self.options.use_gps {
            return None;
        }
        epoch.gps.map(|fix| Measurement {
            pos: fix.pos,
            t: epoch.t,
            source: Source::Gps,
            noise: gps_covariance(&self.params),
        })
    }

    pub fn step(&mut self, epoch: &PreEpoch) -> Result<StepOutcome> {
        let Some(mut state) = self.state else {
            let Some(m) = self.gps_measurement(epoch) else {
                return Ok(StepOutcome::Waiting);
            };
            let init = VehicleState {
                pos: m.pos,
                cov: m.noise + Covariance2::identity(),
                t: epoch.t,
            };
            self.state = Some(init);
            return Ok(StepOutcome::Initialized(init));
        };

        let dt = self.params.dt;
        if epoch.t <= state.t {
            return Err(Error::invalid(format!(
                "epoch at t={} does not advance past the filter state at t={}",
                epoch.t, state.t
            )));
        }
        while epoch.t - state.t > 1.5 * dt {
            state = predict(&state, &epoch.vel, &self.params)?;
        }

        let mut predicted = predict(&state, &epoch.vel, &self.params)?;
        predicted.t = epoch.t;

        let gps = match self.gps_measurement(epoch) {
            Some(m) => gate_gps(&m, &predicted, &self.params)?,
            None => None,
        };
        let ix = if self.options.use_ix {
            let gated = gate_candidates(
                &CandidateSet { t: epoch.t, candidates: epoch.candidates.clone() },
                &predicted,
                &self.params,
            );
            select_candidate(&gated, &predicted).map(|pos| Measurement {
                pos,
                t: epoch.t,
                source: Source::Ix,
                noise: ix_covariance_in_map(pos, &self.params),
            })
        } else {
            None
        };

        let synced = SyncedEpoch { t: epoch.t, vel: epoch.vel, gps, ix };
        let result = fuse_epoch(&state, &synced, &self.params)?;
        self.state = Some(result.final_state);
        Ok(StepOutcome::Fused(Box::new(result)))
    }
}

/// Runs the filter over every epoch, returning one outcome per epoch.
pub fn run_filter(epochs: &[PreEpoch], params: &NoiseParams, options: FusionOptions) -> Result<Vec<StepOutcome>> {
    let mut localizer = Localizer::new(params.clone(), options)?;
    epochs.iter().map(|e| localizer.step(e)).collect()
}

/// Synchronizes the sensor streams of a log (ground truth is never read)
/// and runs the filter.
pub fn fuse_streams(streams: &LogStreams, params: &NoiseParams, options: FusionOptions) -> Result<Vec<StepOutcome>> {
    let ix: &[CandidateSet] = if options.use_ix { &streams.ix } else { &[] };
    let epochs = synchronize_streams(&streams.gps, &streams.imu, ix, params)?;
    run_filter(&epochs, params, options)
}

/// Sensor-only view of a log: GT rows are dropped before anything else
/// touches the data.
fn sensor_streams(log: &SensorLog) -> Result<LogStreams> {
    let sensors = SensorLog {
        metadata: Vec::new(),
        records: log
            .records
            .iter()
            .filter(|r| !matches!(r, LogRecord::Gt { .. } | LogRecord::Est { .. }))
            .copied()
            .collect(),
    };
    sensors.streams(0.0)
}

/// Result of fusing a log: the outcome per epoch and the log with EST rows
/// added (any previous EST rows are replaced).
#[derive(Debug, Clone)]
pub struct FusedLog {
    pub outcomes: Vec<StepOutcome>,
    pub log: SensorLog,
}

pub fn fuse_log(log: &SensorLog, params: &NoiseParams, options: FusionOptions) -> Result<FusedLog> {
    let log = log.clone().into_map_frame(params)?;
    let streams = sensor_streams(&log)?;
    let outcomes = fuse_streams(&streams, params, options)?;

    let mut out = SensorLog {
        metadata: log.metadata.clone(),
        records: log.records.iter().filter(|r| !matches!(r, LogRecord::Est { .. })).copied().collect(),
    };
    out.records.extend(
        outcomes
            .iter()
            .filter_map(StepOutcome::estimate)
            .map(|s| LogRecord::Est { t: s.t, pos: s.pos, cov: s.cov }),
    );
    out.sort_by_time();
    Ok(FusedLog { outcomes, log: out })
}

/// Per-source estimate streams and error series of a fused log.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub truth: Trajectory,
    pub gps: Vec<(f64, MapPoint)>,
    pub ix: Vec<(f64, MapPoint)>,
    pub fusion: Vec<(f64, MapPoint)>,
    pub windows: Vec<(f64, f64)>,
    pub report: ComparisonReport,
    pub errors: Vec<(Sensor, ErrorSeries)>,
}

impl Evaluation {
    pub fn histograms(&self, bin_width: f64) -> Result<Vec<(Sensor, HistogramBins)>> {
        self.errors
            .iter()
            .map(|(s, e)| Ok((*s, histogram(e, bin_width)?)))
            .collect()
    }
}

/// Minimum length of an automatically detected evaluation window (s).
pub const MIN_CASE_DURATION: f64 = 1.0;

/// Evaluates a fused log against its ground truth.
///
/// GPS-only estimates are the raw fixes. The node-only estimate at an
/// epoch is the synchronized candidate nearest to the fused estimate
/// (within `d_thresh` and detection range), i.e. the detection the fusion
/// associated with. Without explicit `case_windows` the cases are the
/// intervals during which the vehicle is within detection range.
pub fn evaluate(log: &SensorLog, params: &NoiseParams, case_windows: Option<&[(f64, f64)]>) -> Result<Evaluation> {
    let log = log.clone().into_map_frame(params)?;
    let all = log.streams(params.d_gnss)?;
    if all.truth.samples.is_empty() {
        return Err(Error::Validation("log has no GT records to evaluate against".into()));
    }
    if all.est.is_empty() {
        return Err(Error::Validation("log has no EST records; run fuse first".into()));
    }

    let gps: Vec<(f64, MapPoint)> = all.gps.iter().map(|f| (f.t, f.pos)).collect();
    let fusion: Vec<(f64, MapPoint)> = all.est.iter().map(|(t, p, _)| (*t, *p)).collect();

    let epochs = synchronize_streams(&all.gps, &all.imu, &all.ix, params)?;
    let mut ix = Vec::new();
    let mut est_iter = all.est.iter().peekable();
    for epoch in &epochs {
        while est_iter.peek().is_some_and(|(t, _, _)| *t < epoch.t - 1e-9) {
            est_iter.next();
        }
        let Some((t, pos, cov)) = est_iter.peek() else { break };
        if (t - epoch.t).abs() > 1e-9 {
            continue;
        }
        let reference = VehicleState { pos: *pos, cov: *cov, t: *t };
        let gated = gate_candidates(
            &CandidateSet { t: epoch.t, candidates: epoch.candidates.clone() },
            &reference,
            params,
        );
        if let Some(c) = select_candidate(&gated, &reference) {
            ix.push((epoch.t, c));
        }
    }

    let windows = match case_windows {
        Some(w) => w.to_vec(),
        None => detection_windows(&all.truth, params.node(), params.detection_range, MIN_CASE_DURATION),
    };
    let report = compare_report(&gps, &ix, &fusion, &all.truth, &windows)?;
    let errors = [(Sensor::Gps, &gps), (Sensor::Ix, &ix), (Sensor::Fusion, &fusion)]
        .into_iter()
        .map(|(s, e)| (s, position_errors(e, &all.truth, true).series))
        .collect();
    Ok(Evaluation { truth: all.truth, gps, ix, fusion, windows, report, errors })
}

/// Simulates a scenario into a map-frame log tagged with its seed.
pub fn simulate_log(spec: &ScenarioSpec, params: &NoiseParams) -> Result<SensorLog> {
    let scenario = simulate(spec, params)?;
    let mut log = SensorLog::new(scenario_records(&scenario.truth, &scenario.streams, params));
    log.set_meta("frame", "map");
    log.set_meta("seed", spec.seed.to_string());
    log.set_meta("prng", PRNG_NAME);
    Ok(log)
}

/// Summary of one simulate, fuse and evaluate cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaResult {
    pub replica: usize,
    pub seed: u64,
    /// Pooled stats over the in-range epochs; `None` if there were none.
    pub overall: Option<[SummaryStats; 3]>,
}

pub fn run_replica(
    replica: usize,
    spec: &ScenarioSpec,
    params: &NoiseParams,
    case_windows: Option<&[(f64, f64)]>,
) -> Result<ReplicaResult> {
    let log = simulate_log(spec, params)?;
    let fused = fuse_log(&log, params, FusionOptions::default())?;
    let eval = evaluate(&fused.log, params, case_windows)?;
    Ok(ReplicaResult { replica, seed: spec.seed, overall: eval.report.overall })
}

/// Mean and sample std across replicas of each source's mean error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloAggregate {
    pub replicas: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl MonteCarloAggregate {
    pub fn fusion_gps_ratio(&self) -> f64 {
        self.mean[Sensor::Fusion as usize] / self.mean[Sensor::Gps as usize]
    }
}

pub fn aggregate(results: &[ReplicaResult]) -> Result<MonteCarloAggregate> {
    let valid: Vec<&[SummaryStats; 3]> = results.iter().filter_map(|r| r.overall.as_ref()).collect();
    if valid.is_empty() {
        return Err(Error::Validation("no replica produced in-range epochs".into()));
    }
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for s in Sensor::ALL {
        let values: Vec<f64> = valid.iter().map(|o| o[s as usize].mean).collect();
        let stats = summarize_values(&values)?;
        mean[s as usize] = stats.mean;
        std[s as usize] = stats.std;
    }
    Ok(MonteCarloAggregate { replicas: valid.len(), mean, std })
}
