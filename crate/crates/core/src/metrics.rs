//! Localization error analysis against ground truth.
//!
//! Standard deviations use the sample (n - 1) convention; a single sample
//! has std 0. Longitudinal and lateral errors are stored signed and
//! summarized by magnitude.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geo::{node_distance, MapPoint};
use crate::sim::Trajectory;

/// Estimate timestamps are matched on a microsecond grid.
fn time_key(t: f64) -> i64 {
    (t * 1e6).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub longitudinal: f64,
    pub lateral: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorSeries {
    pub samples: Vec<ErrorSample>,
}

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self, component: Component) -> Vec<f64> {
        self.samples.iter().map(|s| component.of(s)).collect()
    }

    /// Samples with `start <= t <= end`.
    pub fn window(&self, start: f64, end: f64) -> ErrorSeries {
        ErrorSeries {
            samples: self.samples.iter().filter(|s| s.t >= start && s.t <= end).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Longitudinal,
    Lateral,
    Total,
}

impl Component {
    fn of(self, s: &ErrorSample) -> f64 {
        match self {
            Component::Longitudinal => s.longitudinal.abs(),
            Component::Lateral => s.lateral.abs(),
            Component::Total => s.total,
        }
    }
}

/// Error series plus the number of estimates that fell outside the truth span.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionErrors {
    pub series: ErrorSeries,
    pub dropped: usize,
}

/// Compares time-stamped estimates with interpolated truth. With
/// `heading_aware` the error is split along and across the truth heading,
/// otherwise into map x and y.
pub fn position_errors(estimates: &[(f64, MapPoint)], truth: &Trajectory, heading_aware: bool) -> PositionErrors {
    let mut series = ErrorSeries::default();
    let mut dropped = 0;
    for &(t, est) in estimates {
        let Some(gt) = truth.sample_at(t) else {
            dropped += 1;
            continue;
        };
        let (ex, ey) = (est.x - gt.pos.x, est.y - gt.pos.y);
        let (longitudinal, lateral) = if heading_aware {
            let (s, c) = gt.heading.radians().sin_cos();
            (ex * c + ey * s, -ex * s + ey * c)
        } else {
            (ex, ey)
        };
        series.samples.push(ErrorSample { t, longitudinal, lateral, total: ex.hypot(ey) });
    }
    PositionErrors { series, dropped }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub rmse: f64,
    pub max: f64,
    pub n: usize,
}

pub fn summarize_values(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty error series"));
    }
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let sq = values.iter().map(|v| v * v).sum::<f64>() / nf;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    Ok(SummaryStats {
        mean,
        std: var.sqrt(),
        rmse: sq.sqrt(),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n,
    })
}

pub fn summarize(series: &ErrorSeries, component: Component) -> Result<SummaryStats> {
    summarize_values(&series.values(component))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBins {
    pub bin_width: f64,
    pub range_start: f64,
    pub counts: Vec<usize>,
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.25;

/// Histogram of total error with bins `[k w, (k + 1) w)` starting at zero.
pub fn histogram(series: &ErrorSeries, bin_width: f64) -> Result<HistogramBins> {
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(Error::invalid(format!("bin width must be > 0, got {bin_width}")));
    }
    let mut counts: Vec<usize> = Vec::new();
    for s in &series.samples {
        let bin = (s.total / bin_width).floor().max(0.0) as usize;
        if bin >= counts.len() {
            counts.resize(bin + 1, 0);
        }
        counts[bin] += 1;
    }
    Ok(HistogramBins { bin_width, range_start: 0.0, counts })
}

/// Trailing-window RMS of total error, one value per sample.
pub fn windowed_rms(series: &ErrorSeries, window: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(series.len());
    let mut start = 0;
    let mut sum_sq = 0.0;
    for (i, s) in series.samples.iter().enumerate() {
        sum_sq += s.total * s.total;
        while series.samples[start].t < s.t - window {
            sum_sq -= series.samples[start].total.powi(2);
            start += 1;
        }
        let n = (i + 1 - start) as f64;
        out.push((s.t, (sum_sq.max(0.0) / n).sqrt()));
    }
    out
}

/// Maximal time intervals during which the truth is within `range` of the
/// node, ignoring ones shorter than `min_duration`.
pub fn detection_windows(truth: &Trajectory, node: MapPoint, range: f64, min_duration: f64) -> Vec<(f64, f64)> {
    let mut windows = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for s in &truth.samples {
        if node_distance(s.pos, node) <= range {
            open = Some(open.map_or((s.t, s.t), |(a, _)| (a, s.t)));
        } else if let Some(w) = open.take() {
            windows.push(w);
        }
    }
    windows.extend(open);
    windows.retain(|(a, b)| b - a >= min_duration);
    windows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sensor {
    Gps,
    Ix,
    Fusion,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Gps, Sensor::Ix, Sensor::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Gps => "GPS",
            Sensor::Ix => "Ix",
            Sensor::Fusion => "Fusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStats {
    pub start: f64,
    pub end: f64,
    /// `None` when the window holds no epoch common to all sources.
    pub stats: Option<[SummaryStats; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub cases: Vec<CaseStats>,
    /// Unweighted mean over non-empty cases of each source's (mean, std).
    pub average: Option<[(f64, f64); 3]>,
    /// Stats pooled over every common epoch of every case.
    pub overall: Option<[SummaryStats; 3]>,
}

impl ComparisonReport {
    pub fn overall(&self, sensor: Sensor) -> Option<SummaryStats> {
        self.overall.map(|o| o[sensor as usize])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,start,end,n");
        for s in Sensor::ALL {
            let name = s.name().to_ascii_lowercase();
            write!(out, ",{name}_mean,{name}_std,{name}_rmse,{name}_max").unwrap();
        }
        out.push('\n');
        let row = |out: &mut String, label: &str, start: f64, end: f64, stats: &Option<[SummaryStats; 3]>| {
            let n = stats.map_or(0, |s| s[0].n);
            write!(out, "{label},{start:.6},{end:.6},{n}").unwrap();
            match stats {
                Some(st) => {
                    for s in st {
                        write!(out, ",{:.6},{:.6},{:.6},{:.6}", s.mean, s.std, s.rmse, s.max).unwrap();
                    }
                }
                None => out.push_str(&",".repeat(12)),
            }
            out.push('\n');
        };
        for (i, c) in self.cases.iter().enumerate() {
            row(&mut out, &format!("case{}", i + 1), c.start, c.end, &c.stats);
        }
        if let Some(avg) = self.average {
            out.push_str("average,,,");
            for (m, s) in avg {
                write!(out, ",{m:.6},{s:.6},,").unwrap();
            }
            out.push('\n');
        }
        let (start, end) = (
            self.cases.first().map_or(0.0, |c| c.start),
            self.cases.last().map_or(0.0, |c| c.end),
        );
        row(&mut out, "overall", start, end, &self.overall);
        out
    }

    /// Aligned plain-text table of per-case mean and std.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "Sensor", "GPS", "GPS", "Ix", "Ix", "Fusion", "Fusion", ""
        )
        .unwrap();
        writeln!(
            out,
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "Statistics", "Mean", "Std.", "Mean", "Std.", "Mean", "Std.", "n"
        )
        .unwrap();
        for (i, c) in self.cases.iter().enumerate() {
            let label = format!("Case {} (m)", i + 1);
            match &c.stats {
                Some(st) => writeln!(
                    out,
                    "{label:<14} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>7}",
                    st[0].mean, st[0].std, st[1].mean, st[1].std, st[2].mean, st[2].std, st[0].n
                )
                .unwrap(),
                None => writeln!(out, "{label:<14} {:>8}", "(no common epochs)").unwrap(),
            }
        }
        if let Some(avg) = self.average {
            writeln!(
                out,
                "{:<14} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                "Average (m)", avg[0].0, avg[0].1, avg[1].0, avg[1].1, avg[2].0, avg[2].1
            )
            .unwrap();
        }
        out
    }
}

fn restrict(series: &ErrorSeries, keys: &BTreeSet<i64>) -> ErrorSeries {
    ErrorSeries {
        samples: series.samples.iter().filter(|s| keys.contains(&time_key(s.t))).copied().collect(),
    }
}

/// Per-window and averaged statistics of total error for the three sources,
/// each computed over the epochs that all three sources share.
pub fn compare_report(
    gps_est: &[(f64, MapPoint)],
    ix_est: &[(f64, MapPoint)],
    fusion_est: &[(f64, MapPoint)],
    truth: &Trajectory,
    case_windows: &[(f64, f64)],
) -> Result<ComparisonReport> {
    let series = [gps_est, ix_est, fusion_est].map(|e| position_errors(e, truth, true).series);
    let key_sets: Vec<BTreeSet<i64>> = series
        .iter()
        .map(|s| s.samples.iter().map(|x| time_key(x.t)).collect())
        .collect();
    let common: BTreeSet<i64> = key_sets[0]
        .iter()
        .filter(|k| key_sets[1].contains(k) && key_sets[2].contains(k))
        .copied()
        .collect();

    let mut cases = Vec::new();
    let mut pooled: BTreeMap<Sensor, Vec<f64>> = BTreeMap::new();
    for &(start, end) in case_windows {
        let keys: BTreeSet<i64> = common
            .range(time_key(start)..=time_key(end))
            .copied()
            .collect();
        if keys.is_empty() {
            cases.push(CaseStats { start, end, stats: None });
            continue;
        }
        let restricted = series.clone().map(|s| restrict(&s, &keys));
        let times: Vec<Vec<i64>> = restricted
            .iter()
            .map(|s| s.samples.iter().map(|x| time_key(x.t)).collect())
            .collect();
        if times.iter().any(|t| *t != times[0]) {
            return Err(Error::Validation(format!(
                "sources disagree on the epoch set in window [{start}, {end}]"
            )));
        }
        for (sensor, s) in Sensor::ALL.iter().zip(&restricted) {
            pooled.entry(*sensor).or_default().extend(s.values(Component::Total));
        }
        let stats = [
            summarize(&restricted[0], Component::Total)?,
            summarize(&restricted[1], Component::Total)?,
            summarize(&restricted[2], Component::Total)?,
        ];
        cases.push(CaseStats { start, end, stats: Some(stats) });
    }

    let filled: Vec<&[SummaryStats; 3]> = cases.iter().filter_map(|c| c.stats.as_ref()).collect();
    let average = (!filled.is_empty()).then(|| {
        let k = filled.len() as f64;
        [0, 1, 2].map(|i| {
            (
                filled.iter().map(|s| s[i].mean).sum::<f64>() / k,
                filled.iter().map(|s| s[i].std).sum::<f64>() / k,
            )
        })
    });
    let overall = if pooled.is_empty() {
        None
    } else {
        Some([
            summarize_values(&pooled[&Sensor::Gps])?,
            summarize_values(&pooled[&Sensor::Ix])?,
            summarize_values(&pooled[&Sensor::Fusion])?,
        ])
    };
    Ok(ComparisonReport { cases, average, overall })
}

pub fn histogram_csv(rows: &[(Sensor, HistogramBins)]) -> String {
    let mut out = String::from("source,bin_start,bin_end,count\n");
    for (sensor, h) in rows {
        for (k, c) in h.counts.iter().enumerate() {
            let a = h.range_start + k as f64 * h.bin_width;
            writeln!(out, "{},{:.6},{:.6},{}", sensor.name(), a, a + h.bin_width, c).unwrap();
        }
    }
    out
}
