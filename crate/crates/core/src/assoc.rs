//! Time alignment and spatial association of the sensor streams.
//!
//! Everything is resampled onto the GPS clock: one epoch per GPS tick, with
//! inertial velocity and node detections linearly interpolated to the tick
//! time. A tick whose fix is missing (e.g. lost in a tunnel) still produces
//! an epoch without a GPS fix, so the filter can coast or use the node alone.
//! Ticks outside the span of any stream are dropped rather than extrapolated.

use std::collections::VecDeque;

use crate::ekf::{innovation_mahalanobis2, Measurement, Source, VehicleState, VelocityInput};
use crate::error::{Error, Result};
use crate::geo::{node_distance, MapPoint};
use crate::noise::{GpsGate, NoiseParams, CHI2_2DOF_99};

/// Timestamps closer than this are treated as the same instant.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub t: f64,
    pub pos: MapPoint,
}

/// All vehicle candidates reported by the node in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub t: f64,
    pub candidates: Vec<MapPoint>,
}

/// Sensor inputs aligned to one GPS tick, before any gating.
#[derive(Debug, Clone, PartialEq)]
pub struct PreEpoch {
    pub t: f64,
    pub vel: VelocityInput,
    pub gps: Option<GpsFix>,
    pub candidates: Vec<MapPoint>,
}

/// Gated and selected filter inputs for one fusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedEpoch {
    pub t: f64,
    pub vel: VelocityInput,
    pub gps: Option<Measurement>,
    pub ix: Option<Measurement>,
}

trait Stamped {
    fn stamp(&self) -> f64;
}

impl Stamped for VelocityInput {
    fn stamp(&self) -> f64 {
        self.t
    }
}

impl Stamped for CandidateSet {
    fn stamp(&self) -> f64 {
        self.t
    }
}

/// Bracketing samples around `t`: the exact sample, or the pair `(a, b)`
/// with interpolation weight toward `b`. `None` outside the buffered span.
enum Bracket<'a, T> {
    Exact(&'a T),
    Between(&'a T, &'a T, f64),
}

fn bracket<T: Stamped>(buf: &VecDeque<T>, t: f64) -> Option<Bracket<'_, T>> {
    let idx = buf.partition_point(|s| s.stamp() < t - TIME_EPS);
    let after = buf.get(idx)?;
    if (after.stamp() - t).abs() <= TIME_EPS {
        return Some(Bracket::Exact(after));
    }
    let before = buf.get(idx.checked_sub(1)?)?;
    let w = (t - before.stamp()) / (after.stamp() - before.stamp());
    Some(Bracket::Between(before, after, w))
}

/// Drops samples that can no longer bracket a time at or after `t`.
fn prune<T: Stamped>(buf: &mut VecDeque<T>, t: f64) {
    while buf.len() > 1 && buf[1].stamp() <= t + TIME_EPS {
        buf.pop_front();
    }
}

fn interpolate_velocity(buf: &VecDeque<VelocityInput>, t: f64) -> Option<VelocityInput> {
    Some(match bracket(buf, t)? {
        Bracket::Exact(v) => VelocityInput::new(v.vx, v.vy, t),
        Bracket::Between(a, b, w) => {
            VelocityInput::new(a.vx + w * (b.vx - a.vx), a.vy + w * (b.vy - a.vy), t)
        }
    })
}

/// Interpolates candidate positions between two frames. Candidates are paired
/// greedily by smallest displacement (at most `pair_radius`); unpaired
/// candidates of the temporally nearer frame are carried over unchanged.
fn interpolate_candidates(a: &CandidateSet, b: &CandidateSet, w: f64, pair_radius: f64) -> Vec<MapPoint> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, pa) in a.candidates.iter().enumerate() {
        for (j, pb) in b.candidates.iter().enumerate() {
            let d = pa.distance(pb);
            if d <= pair_radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; a.candidates.len()];
    let mut used_b = vec![false; b.candidates.len()];
    let mut matched = Vec::new();
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched.push((i, j));
        }
    }
    matched.sort_unstable();

    let mut out: Vec<MapPoint> = matched
        .iter()
        .map(|&(i, j)| a.candidates[i].lerp(&b.candidates[j], w))
        .collect();
    let (near, used) = if w <= 0.5 { (a, &used_a) } else { (b, &used_b) };
    out.extend(
        near.candidates
            .iter()
            .zip(used.iter())
            .filter(|(_, &u)| !u)
            .map(|(c, _)| *c),
    );
    out
}

/// Incremental resampler onto the GPS clock.
///
/// Push samples per stream in time order, then pull epochs with
/// [`pop_ready`](Self::pop_ready) as soon as every stream has advanced past
/// the next tick. Call [`finish`](Self::finish) once all input is in to
/// flush the tail.
#[derive(Debug)]
pub struct StreamSynchronizer {
    dt: f64,
    pair_radius: f64,
    use_ix: bool,
    gps: VecDeque<GpsFix>,
    imu: VecDeque<VelocityInput>,
    ix: VecDeque<CandidateSet>,
    last_gps: Option<f64>,
    first_imu: Option<f64>,
    last_imu: Option<f64>,
    first_ix: Option<f64>,
    last_ix: Option<f64>,
    anchor: Option<f64>,
    next_tick: u64,
    finished: bool,
    dropped: usize,
}

fn check_order(stream: &str, last: Option<f64>, t: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("{stream} sample has non-finite time {t}")));
    }
    match last {
        Some(prev) if t < prev => Err(Error::invalid(format!(
            "{stream} stream is not time-sorted ({t} after {prev})"
        ))),
        _ => Ok(()),
    }
}

impl StreamSynchronizer {
    /// `use_ix = false` ignores node detections entirely (no span constraint).
    pub fn new(params: &NoiseParams, use_ix: bool) -> Self {
        Self {
            dt: params.dt,
            pair_radius: params.d_thresh,
            use_ix,
            gps: VecDeque::new(),
            imu: VecDeque::new(),
            ix: VecDeque::new(),
            last_gps: None,
            first_imu: None,
            last_imu: None,
            first_ix: None,
            last_ix: None,
            anchor: None,
            next_tick: 0,
            finished: false,
            dropped: 0,
        }
    }

    pub fn push_gps(&mut self, fix: GpsFix) -> Result<()> {
        check_order("GPS", self.last_gps, fix.t)?;
        if !fix.pos.is_finite() {
            return Err(Error::invalid(format!("non-finite GPS fix at t={}", fix.t)));
        }
        self.anchor.get_or_insert(fix.t);
        self.last_gps = Some(fix.t);
        self.gps.push_back(fix);
        Ok(())
    }

    pub fn push_imu(&mut self, vel: VelocityInput) -> Result<()> {
        check_order("IMU", self.last_imu, vel.t)?;
        if !vel.vx.is_finite() || !vel.vy.is_finite() {
            return Err(Error::invalid(format!("non-finite IMU velocity at t={}", vel.t)));
        }
        self.first_imu.get_or_insert(vel.t);
        self.last_imu = Some(vel.t);
        self.imu.push_back(vel);
        Ok(())
    }

    pub fn push_ix(&mut self, frame: CandidateSet) -> Result<()> {
        check_order("IX", self.last_ix, frame.t)?;
        if frame.candidates.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite candidate at t={}", frame.t)));
        }
        if !self.use_ix {
            return Ok(());
        }
        self.first_ix.get_or_insert(frame.t);
        self.last_ix = Some(frame.t);
        self.ix.push_back(frame);
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished = true;
    }

    /// Ticks discarded so far because they fell outside a stream's span.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    fn stream_reached(&self, last: Option<f64>, t: f64) -> bool {
        self.finished || last.is_some_and(|l| l >= t - TIME_EPS)
    }

    pub fn pop_ready(&mut self) -> Option<PreEpoch> {
        loop {
            let anchor = self.anchor?;
            let half = 0.5 * self.dt;
            let tick = anchor + self.next_tick as f64 * self.dt;
            let last_gps = self.last_gps?;
            if !self.finished && last_gps < tick + half {
                return None;
            }
            if tick - half > last_gps {
                return None;
            }

            let fix = self
                .gps
                .iter()
                .filter(|f| (f.t - tick).abs() <= half + TIME_EPS)
                .min_by(|a, b| (a.t - tick).abs().total_cmp(&(b.t - tick).abs()))
                .copied();
            let t = fix.map_or(tick, |f| f.t);

            if !self.stream_reached(self.last_imu, t) {
                return None;
            }
            if self.use_ix && !self.stream_reached(self.last_ix, t) {
                return None;
            }

            self.next_tick += 1;
            while self.gps.front().is_some_and(|f| f.t <= tick + half + TIME_EPS) {
                self.gps.pop_front();
            }

            let vel = interpolate_velocity(&self.imu, t);
            let candidates = if self.use_ix {
                match bracket(&self.ix, t) {
                    Some(Bracket::Exact(frame)) => Some(frame.candidates.clone()),
                    Some(Bracket::Between(a, b, w)) => {
                        Some(interpolate_candidates(a, b, w, self.pair_radius))
                    }
                    None => None,
                }
            } else {
                Some(Vec::new())
            };
            prune(&mut self.imu, t);
            prune(&mut self.ix, t);

            match (vel, candidates) {
                (Some(vel), Some(candidates)) => {
                    return Some(PreEpoch {
                        t,
                        vel,
                        gps: fix,
                        candidates,
                    })
                }
                _ => self.dropped += 1,
            }
        }
    }
}

/// Batch form of [`StreamSynchronizer`]. An empty node stream means the log
/// carries no node data and places no constraint on the overlap window.
pub fn synchronize_streams(
    gps: &[GpsFix],
    imu: &[VelocityInput],
    ix: &[CandidateSet],
    params: &NoiseParams,
) -> Result<Vec<PreEpoch>> {
    let mut sync = StreamSynchronizer::new(params, !ix.is_empty());
    for fix in gps {
        sync.push_gps(*fix)?;
    }
    for vel in imu {
        sync.push_imu(*vel)?;
    }
    for frame in ix {
        sync.push_ix(frame.clone())?;
    }
    sync.finish();
    Ok(std::iter::from_fn(|| sync.pop_ready()).collect())
}

/// Keeps candidates within `d_thresh` of the prediction and within the
/// node's detection range. Both bounds are inclusive.
pub fn gate_candidates(cands: &CandidateSet, predicted: &VehicleState, params: &NoiseParams) -> CandidateSet {
    let node = params.node();
    CandidateSet {
        t: cands.t,
        candidates: cands
            .candidates
            .iter()
            .filter(|c| c.distance(&predicted.pos) <= params.d_thresh)
            .filter(|c| node_distance(**c, node) <= params.detection_range)
            .copied()
            .collect(),
    }
}

/// Nearest candidate to the prediction; the earliest one wins ties.
pub fn select_candidate(cands: &CandidateSet, predicted: &VehicleState) -> Option<MapPoint> {
    let mut best: Option<(f64, MapPoint)> = None;
    for c in &cands.candidates {
        let d = c.distance(&predicted.pos);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *c));
        }
    }
    best.map(|(_, c)| c)
}

pub fn gate_gps(fix: &Measurement, predicted: &VehicleState, params: &NoiseParams) -> Result<Option<Measurement>> {
    if fix.source != Source::Gps {
        return Err(Error::invalid("gate_gps called with a non-GPS measurement"));
    }
    let pass = match params.gps_gate {
        GpsGate::ChiSquare => innovation_mahalanobis2(predicted, fix)? <= CHI2_2DOF_99,
        GpsGate::FixedRadius => fix.pos.distance(&predicted.pos) <= params.d_thresh,
    };
    Ok(pass.then_some(*fix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Covariance2;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params() -> NoiseParams {
        NoiseParams::default()
    }

    fn ticks(n: usize, rate: f64) -> impl Iterator<Item = f64> {
        (0..n).map(move |k| k as f64 / rate)
    }

    fn predicted_at(x: f64, y: f64, cov: Covariance2) -> VehicleState {
        VehicleState {
            pos: MapPoint::new(x, y),
            cov,
            t: 0.0,
        }
    }

    fn frame(t: f64, pts: &[(f64, f64)]) -> CandidateSet {
        CandidateSet {
            t,
            candidates: pts.iter().map(|&(x, y)| MapPoint::new(x, y)).collect(),
        }
    }

    #[test]
    fn candidate_midpoint_interpolation() {
        let gps = [GpsFix { t: 1.1, pos: MapPoint::new(0.0, 0.0) }];
        let imu = [VelocityInput::new(0.0, 0.0, 1.0), VelocityInput::new(0.0, 0.0, 1.2)];
        let ix = [frame(1.0, &[(0.0, 0.0)]), frame(1.2, &[(1.0, 0.0)])];
        let out = synchronize_streams(&gps, &imu, &ix, &params()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].candidates.len(), 1);
        assert_abs_diff_eq!(out[0].candidates[0].x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].candidates[0].y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ticks_outside_imu_span_are_dropped() {
        let gps: Vec<_> = ticks(20, 10.0).map(|t| GpsFix { t, pos: MapPoint::ORIGIN }).collect();
        let imu: Vec<_> = (50..=150).map(|k| VelocityInput::new(1.0, 0.0, k as f64 / 100.0)).collect();
        let out = synchronize_streams(&gps, &imu, &[], &params()).unwrap();
        let times: Vec<f64> = out.iter().map(|e| e.t).collect();
        let expected: Vec<f64> = (5..=15).map(|k| k as f64 / 10.0).collect();
        assert_eq!(times, expected);
    }

    #[test]
    fn samples_on_the_ticks_pass_through() {
        let gps: Vec<_> = ticks(10, 10.0)
            .map(|t| GpsFix { t, pos: MapPoint::new(t, 2.0 * t) })
            .collect();
        let imu: Vec<_> = ticks(10, 10.0).map(|t| VelocityInput::new(t + 1.0, -t, t)).collect();
        let ix: Vec<_> = ticks(10, 10.0).map(|t| frame(t, &[(3.0 * t, 1.0), (50.0, 50.0)])).collect();
        let out = synchronize_streams(&gps, &imu, &ix, &params()).unwrap();
        assert_eq!(out.len(), 10);
        for ((e, g), (v, f)) in out.iter().zip(&gps).zip(imu.iter().zip(&ix)) {
            assert_eq!(e.t, g.t);
            assert_eq!(e.gps, Some(*g));
            assert_eq!(e.vel, *v);
            assert_eq!(e.candidates, f.candidates);
        }
    }

    #[test]
    fn missing_fixes_leave_fixless_ticks() {
        let gps: Vec<_> = ticks(10, 10.0)
            .filter(|t| !(0.25..0.65).contains(t))
            .map(|t| GpsFix { t, pos: MapPoint::ORIGIN })
            .collect();
        let imu: Vec<_> = ticks(100, 100.0).map(|t| VelocityInput::new(0.0, 0.0, t)).collect();
        let out = synchronize_streams(&gps, &imu, &[], &params()).unwrap();
        assert_eq!(out.len(), 10);
        let with_fix = out.iter().filter(|e| e.gps.is_some()).count();
        assert_eq!(with_fix, 6);
        for (k, e) in out.iter().enumerate() {
            assert_abs_diff_eq!(e.t, k as f64 / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unsorted_stream_is_rejected() {
        let gps = [
            GpsFix { t: 0.2, pos: MapPoint::ORIGIN },
            GpsFix { t: 0.1, pos: MapPoint::ORIGIN },
        ];
        let err = synchronize_streams(&gps, &[], &[], &params()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let imu = [VelocityInput::new(0.0, 0.0, 1.0), VelocityInput::new(0.0, 0.0, 0.5)];
        assert!(synchronize_streams(&[], &imu, &[], &params()).is_err());
    }

    #[test]
    fn empty_gps_gives_no_epochs() {
        let imu: Vec<_> = ticks(10, 10.0).map(|t| VelocityInput::new(0.0, 0.0, t)).collect();
        assert!(synchronize_streams(&[], &imu, &[], &params()).unwrap().is_empty());
    }

    #[test]
    fn unpaired_candidates_come_from_nearer_frame() {
        let a = frame(0.0, &[(0.0, 0.0), (30.0, 0.0)]);
        let b = frame(0.1, &[(1.0, 0.0), (-30.0, 0.0)]);
        let near_a = interpolate_candidates(&a, &b, 0.25, 5.0);
        assert_eq!(near_a.len(), 2);
        assert_abs_diff_eq!(near_a[0].x, 0.25, epsilon = 1e-12);
        assert_eq!(near_a[1], MapPoint::new(30.0, 0.0));
        let near_b = interpolate_candidates(&a, &b, 0.75, 5.0);
        assert_eq!(near_b[1], MapPoint::new(-30.0, 0.0));
    }

    #[test]
    fn incremental_matches_batch() {
        let p = params();
        let gps: Vec<_> = ticks(30, 10.0).map(|t| GpsFix { t, pos: MapPoint::new(t, 0.0) }).collect();
        let imu: Vec<_> = ticks(300, 100.0).map(|t| VelocityInput::new(1.0, t, t)).collect();
        let ix: Vec<_> = ticks(60, 20.0).map(|t| frame(t, &[(t, 1.0)])).collect();
        let batch = synchronize_streams(&gps, &imu, &ix, &p).unwrap();

        let mut sync = StreamSynchronizer::new(&p, true);
        let mut streamed = Vec::new();
        let (mut gi, mut ii, mut xi) = (0, 0, 0);
        for step in 0..300 {
            let now = step as f64 / 100.0;
            while gi < gps.len() && gps[gi].t <= now {
                sync.push_gps(gps[gi]).unwrap();
                gi += 1;
            }
            while ii < imu.len() && imu[ii].t <= now {
                sync.push_imu(imu[ii]).unwrap();
                ii += 1;
            }
            while xi < ix.len() && ix[xi].t <= now {
                sync.push_ix(ix[xi].clone()).unwrap();
                xi += 1;
            }
            streamed.extend(std::iter::from_fn(|| sync.pop_ready()));
        }
        sync.finish();
        streamed.extend(std::iter::from_fn(|| sync.pop_ready()));
        assert_eq!(streamed, batch);
    }

    #[test]
    fn candidate_gating_examples() {
        let p = NoiseParams {
            node_x: 0.0,
            node_y: 0.0,
            ..params()
        };
        let pred = predicted_at(0.0, 0.0, Covariance2::identity());
        let gated = gate_candidates(&frame(0.0, &[(1.0, 1.0), (10.0, 0.0)]), &pred, &p);
        assert_eq!(gated.candidates, vec![MapPoint::new(1.0, 1.0)]);
        assert!(gate_candidates(&frame(0.0, &[]), &pred, &p).candidates.is_empty());
        let boundary = gate_candidates(&frame(0.0, &[(5.0, 0.0)]), &pred, &p);
        assert_eq!(boundary.candidates.len(), 1);

        // close to the prediction but outside the node's detection range
        let far = predicted_at(60.0, 0.0, Covariance2::identity());
        assert!(gate_candidates(&frame(0.0, &[(61.0, 0.0)]), &far, &p).candidates.is_empty());
    }

    #[test]
    fn nearest_neighbour_selection() {
        let pred = predicted_at(0.0, 0.0, Covariance2::identity());
        assert_eq!(
            select_candidate(&frame(0.0, &[(3.0, 0.0), (1.0, 0.0)]), &pred),
            Some(MapPoint::new(1.0, 0.0))
        );
        assert_eq!(
            select_candidate(&frame(0.0, &[(2.0, 2.0)]), &pred),
            Some(MapPoint::new(2.0, 2.0))
        );
        let tie = frame(0.0, &[(1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(tie.candidates[0].distance(&pred.pos), tie.candidates[1].distance(&pred.pos));
        assert_eq!(select_candidate(&tie, &pred), Some(MapPoint::new(1.0, 0.0)));
        assert_eq!(select_candidate(&frame(0.0, &[]), &pred), None);
    }

    fn gps_meas(x: f64, y: f64) -> Measurement {
        Measurement {
            pos: MapPoint::new(x, y),
            t: 0.0,
            source: Source::Gps,
            noise: Covariance2::identity(),
        }
    }

    #[test]
    fn gps_chi_square_gate() {
        let p = params();
        let pred = predicted_at(0.0, 0.0, Covariance2::identity());
        assert!(gate_gps(&gps_meas(0.0, 0.0), &pred, &p).unwrap().is_some());
        // nu^T S^-1 nu = 100 / 2 = 50
        assert!(gate_gps(&gps_meas(10.0, 0.0), &pred, &p).unwrap().is_none());
        // 4 / 2 = 2
        assert!(gate_gps(&gps_meas(2.0, 0.0), &pred, &p).unwrap().is_some());

        let mut ix = gps_meas(0.0, 0.0);
        ix.source = Source::Ix;
        assert!(gate_gps(&ix, &pred, &p).is_err());
    }

    #[test]
    fn gps_fixed_radius_gate() {
        let p = NoiseParams::default().paper_literal();
        let pred = predicted_at(0.0, 0.0, Covariance2::identity());
        assert!(gate_gps(&gps_meas(4.0, 3.0), &pred, &p).unwrap().is_some());
        assert!(gate_gps(&gps_meas(4.0, 3.1), &pred, &p).unwrap().is_none());
    }

    #[test]
    fn gps_gate_reports_singular_innovation() {
        let p = params();
        let pred = predicted_at(0.0, 0.0, Covariance2::zeros());
        let mut fix = gps_meas(1.0, 0.0);
        fix.noise = Covariance2::zeros();
        assert!(matches!(gate_gps(&fix, &pred, &p), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn interpolation_stays_between_brackets(
            v0 in (-5.0..5.0f64, -5.0..5.0f64), v1 in (-5.0..5.0f64, -5.0..5.0f64),
            c0 in (-10.0..10.0f64, -10.0..10.0f64), step in (-1.0..1.0f64, -1.0..1.0f64),
            offset in 0.01..0.09f64,
        ) {
            let gps = [GpsFix { t: offset, pos: MapPoint::ORIGIN }];
            let imu = [VelocityInput::new(v0.0, v0.1, 0.0), VelocityInput::new(v1.0, v1.1, 0.1)];
            let c1 = (c0.0 + step.0, c0.1 + step.1);
            let ix = [frame(0.0, &[c0]), frame(0.1, &[c1])];
            let out = synchronize_streams(&gps, &imu, &ix, &params()).unwrap();
            prop_assert_eq!(out.len(), 1);
            let e = &out[0];
            let within = |v: f64, a: f64, b: f64| v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12;
            prop_assert!(within(e.vel.vx, v0.0, v1.0) && within(e.vel.vy, v0.1, v1.1));
            prop_assert_eq!(e.candidates.len(), 1);
            prop_assert!(within(e.candidates[0].x, c0.0, c1.0) && within(e.candidates[0].y, c0.1, c1.1));
        }

        #[test]
        fn output_times_are_the_gps_times(n in 2usize..40, start in 0usize..10) {
            let gps: Vec<_> = (start..start + n).map(|k| GpsFix { t: k as f64 / 10.0, pos: MapPoint::ORIGIN }).collect();
            let imu: Vec<_> = ticks(1000, 100.0).map(|t| VelocityInput::new(0.0, 0.0, t)).collect();
            let out = synchronize_streams(&gps, &imu, &[], &params()).unwrap();
            let times: Vec<f64> = out.iter().map(|e| e.t).collect();
            let expected: Vec<f64> = gps.iter().map(|g| g.t).collect();
            prop_assert_eq!(times, expected);
        }

        #[test]
        fn gating_is_a_monotone_subset(
            pts in proptest::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 0..12),
            r1 in 0.1..10.0f64, extra in 0.0..10.0f64,
        ) {
            let cands = frame(0.0, &pts);
            let pred = predicted_at(7.0, 60.0, Covariance2::identity());
            let small = gate_candidates(&cands, &pred, &NoiseParams { d_thresh: r1, ..params() });
            let large = gate_candidates(&cands, &pred, &NoiseParams { d_thresh: r1 + extra, ..params() });
            prop_assert!(small.candidates.iter().all(|c| cands.candidates.contains(c)));
            prop_assert!(small.candidates.iter().all(|c| large.candidates.contains(c)));
            if let Some(sel) = select_candidate(&large, &pred) {
                prop_assert!(large.candidates.contains(&sel));
            } else {
                prop_assert!(large.candidates.is_empty());
            }
        }
    }
}
