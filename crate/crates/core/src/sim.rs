//! Synthetic scenarios: a constant-speed vehicle following waypoints, plus
//! noisy GPS, inertial velocity and node detections generated from it.
//!
//! Randomness comes from ChaCha8 seeded with [`ScenarioSpec::seed`]; each
//! sensor draws from its own ChaCha stream so changing one sensor's
//! settings never perturbs another's noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::assoc::{CandidateSet, GpsFix};
use crate::ekf::VelocityInput;
use crate::error::{Error, Result};
use crate::geo::{node_distance, Heading, MapPoint};
use crate::noise::{ix_longitudinal_std, NoiseParams};

/// Recorded in log metadata so runs can be reproduced.
pub const PRNG_NAME: &str = "chacha8-rand_chacha-0.9";

const GPS_STREAM: u64 = 1;
const IMU_STREAM: u64 = 2;
const IX_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub waypoints: Vec<MapPoint>,
    /// m/s
    pub speed: f64,
    /// seconds
    pub duration: f64,
    pub gps_rate: f64,
    pub imu_rate: f64,
    pub ix_rate: f64,
    /// `[start, end]` windows (s) where GPS is attenuated.
    pub tunnel_intervals: Vec<(f64, f64)>,
    /// Probability that the vehicle is missed in a node frame.
    pub occlusion_prob: f64,
    /// Expected number of false node candidates per frame.
    pub clutter_rate: f64,
    pub seed: u64,
    /// Per-axis velocity noise of the inertial unit (m/s).
    pub vel_sigma: f64,
    /// GPS noise multiplier inside tunnels.
    pub tunnel_noise_factor: f64,
    /// Probability of losing a GPS fix inside tunnels.
    pub tunnel_drop_prob: f64,
    /// Multiplier on node detection noise; zero gives exact detections.
    pub ix_noise_scale: f64,
}

impl Default for ScenarioSpec {
    /// Three laps of a 140 m x 60 m loop south and north of the node at
    /// 4 m/s. The short sides lie 22 m and 38 m from the node.
    fn default() -> Self {
        let corners = [(-60.0, 40.0), (80.0, 40.0), (80.0, 100.0), (-60.0, 100.0)];
        let mut waypoints = Vec::new();
        for _ in 0..3 {
            waypoints.extend(corners.iter().map(|&(x, y)| MapPoint::new(x, y)));
        }
        waypoints.push(MapPoint::new(corners[0].0, corners[0].1));
        Self {
            waypoints,
            speed: 4.0,
            duration: 300.0,
            gps_rate: 10.0,
            imu_rate: 100.0,
            ix_rate: 20.0,
            tunnel_intervals: Vec::new(),
            occlusion_prob: 0.1,
            clutter_rate: 0.1,
            seed: 0,
            vel_sigma: 1.0,
            tunnel_noise_factor: 4.0,
            tunnel_drop_prob: 0.5,
            ix_noise_scale: 1.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.waypoints.len() < 2 {
            return fail("scenario needs at least two waypoints".into());
        }
        if self.waypoints.iter().any(|w| !w.is_finite()) {
            return fail("waypoints must be finite".into());
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return fail(format!("speed must be > 0, got {}", self.speed));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail(format!("duration must be > 0, got {}", self.duration));
        }
        for (name, rate) in [("gps_rate", self.gps_rate), ("imu_rate", self.imu_rate), ("ix_rate", self.ix_rate)] {
            if !(rate > 0.0 && rate.is_finite()) {
                return fail(format!("{name} must be > 0, got {rate}"));
            }
        }
        for &(a, b) in &self.tunnel_intervals {
            if !(0.0 <= a && a <= b && b <= self.duration) {
                return fail(format!("tunnel interval [{a}, {b}] not within [0, {}]", self.duration));
            }
        }
        for (name, p) in [
            ("occlusion_prob", self.occlusion_prob),
            ("tunnel_drop_prob", self.tunnel_drop_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        for (name, v) in [
            ("clutter_rate", self.clutter_rate),
            ("vel_sigma", self.vel_sigma),
            ("tunnel_noise_factor", self.tunnel_noise_factor),
            ("ix_noise_scale", self.ix_noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn in_tunnel(&self, t: f64) -> bool {
        self.tunnel_intervals.iter().any(|&(a, b)| a <= t && t <= b)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        rng_for(self.seed, stream)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One ground-truth sample of the GPS antenna track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pos: MapPoint,
    pub vx: f64,
    pub vy: f64,
    pub heading: Heading,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<TruthSample>,
}

impl Trajectory {
    pub fn start(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn end(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Position linearly interpolated to `t`; velocity and heading come from
    /// the sample at or just before `t`. `None` outside the sampled span.
    pub fn sample_at(&self, t: f64) -> Option<TruthSample> {
        let idx = self.samples.partition_point(|s| s.t < t);
        let after = self.samples.get(idx)?;
        if after.t == t {
            return Some(*after);
        }
        let before = self.samples.get(idx.checked_sub(1)?)?;
        let w = (t - before.t) / (after.t - before.t);
        Some(TruthSample {
            t,
            pos: before.pos.lerp(&after.pos, w),
            ..*before
        })
    }
}

/// Sample times `k / rate` covering `[0, duration]`.
fn sample_times(rate: f64, duration: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as u64;
    (0..=n).map(move |k| k as f64 / rate)
}

/// Constant-speed traversal of the waypoints sampled at `imu_rate`. Once the
/// last waypoint is reached the vehicle stays there with zero velocity.
pub fn generate_trajectory(spec: &ScenarioSpec) -> Result<Trajectory> {
    spec.validate()?;
    struct Segment {
        start: MapPoint,
        dir: (f64, f64),
        length: f64,
        s0: f64,
    }
    let mut segments = Vec::with_capacity(spec.waypoints.len() - 1);
    let mut s0 = 0.0;
    for (i, pair) in spec.waypoints.windows(2).enumerate() {
        let length = pair[0].distance(&pair[1]);
        if length <= 0.0 {
            return Err(Error::invalid(format!(
                "waypoints {i} and {} coincide (zero-length segment)",
                i + 1
            )));
        }
        let dir = ((pair[1].x - pair[0].x) / length, (pair[1].y - pair[0].y) / length);
        segments.push(Segment {
            start: pair[0],
            dir,
            length,
            s0,
        });
        s0 += length;
    }
    let total = s0;
    let last = segments.last().expect("at least one segment");
    let end = spec.waypoints[spec.waypoints.len() - 1];

    let samples = sample_times(spec.imu_rate, spec.duration)
        .map(|t| {
            let s = spec.speed * t;
            if s >= total {
                return TruthSample {
                    t,
                    pos: end,
                    vx: 0.0,
                    vy: 0.0,
                    heading: Heading::from_direction(last.dir.0, last.dir.1),
                };
            }
            let idx = segments.partition_point(|seg| seg.s0 + seg.length <= s);
            let seg = &segments[idx];
            let along = s - seg.s0;
            TruthSample {
                t,
                pos: MapPoint::new(seg.start.x + along * seg.dir.0, seg.start.y + along * seg.dir.1),
                vx: spec.speed * seg.dir.0,
                vy: spec.speed * seg.dir.1,
                heading: Heading::from_direction(seg.dir.0, seg.dir.1),
            }
        })
        .collect();
    Ok(Trajectory { samples })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// GPS fixes at `gps_rate`: truth plus independent Gaussian noise on the map
/// axes. Inside tunnels the noise is amplified and fixes may be lost.
pub fn simulate_gps(traj: &Trajectory, spec: &ScenarioSpec, params: &NoiseParams) -> Vec<GpsFix> {
    let mut rng = spec.rng(GPS_STREAM);
    let mut out = Vec::new();
    for t in sample_times(spec.gps_rate, spec.duration) {
        let Some(truth) = traj.sample_at(t) else { continue };
        let tunnel = spec.in_tunnel(t);
        let scale = if tunnel { spec.tunnel_noise_factor } else { 1.0 };
        let ex = normal(&mut rng) * params.sigma_x_gps * scale;
        let ey = normal(&mut rng) * params.sigma_y_gps * scale;
        let drop_draw: f64 = rng.random();
        if tunnel && drop_draw < spec.tunnel_drop_prob {
            continue;
        }
        out.push(GpsFix {
            t,
            pos: MapPoint::new(truth.pos.x + ex, truth.pos.y + ey),
        });
    }
    out
}

/// Inertial velocity at every trajectory sample with white Gaussian noise.
pub fn simulate_imu(traj: &Trajectory, vel_sigma: f64, seed: u64) -> Vec<VelocityInput> {
    let mut rng = rng_for(seed, IMU_STREAM);
    traj.samples
        .iter()
        .map(|s| {
            let ex = normal(&mut rng) * vel_sigma;
            let ey = normal(&mut rng) * vel_sigma;
            VelocityInput::new(s.vx + ex, s.vy + ey, s.t)
        })
        .collect()
}

/// Node detection frames at `ix_rate`.
///
/// While the vehicle is within detection range it is reported (unless
/// occluded) with noise along the node-to-vehicle ray of the distance model's
/// standard deviation and lateral noise `sigma_y_ix` across it. Poisson
/// clutter is spread uniformly over the detection disc. Out of range, frames
/// are empty.
pub fn simulate_ix(traj: &Trajectory, spec: &ScenarioSpec, params: &NoiseParams) -> Vec<CandidateSet> {
    let mut rng = spec.rng(IX_STREAM);
    let node = params.node();
    let clutter = (spec.clutter_rate > 0.0)
        .then(|| Poisson::new(spec.clutter_rate).expect("clutter rate validated > 0"));
    let mut out = Vec::new();
    for t in sample_times(spec.ix_rate, spec.duration) {
        let Some(truth) = traj.sample_at(t) else { continue };
        let d_ix = node_distance(truth.pos, node);
        let mut frame = CandidateSet { t, candidates: Vec::new() };
        if d_ix > params.detection_range {
            out.push(frame);
            continue;
        }

        let (ux, uy) = if d_ix > 0.0 {
            ((truth.pos.x - node.x) / d_ix, (truth.pos.y - node.y) / d_ix)
        } else {
            (1.0, 0.0)
        };
        let e_long = normal(&mut rng) * ix_longitudinal_std(d_ix, params) * spec.ix_noise_scale;
        let e_lat = normal(&mut rng) * params.sigma_y_ix * spec.ix_noise_scale;
        let occluded = rng.random::<f64>() < spec.occlusion_prob;

        if let Some(poisson) = &clutter {
            let n = poisson.sample(&mut rng) as usize;
            for _ in 0..n {
                let r = params.detection_range * rng.random::<f64>().sqrt();
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                frame
                    .candidates
                    .push(MapPoint::new(node.x + r * phi.cos(), node.y + r * phi.sin()));
            }
        }
        if !occluded {
            let detection = MapPoint::new(
                truth.pos.x + e_long * ux - e_lat * uy,
                truth.pos.y + e_long * uy + e_lat * ux,
            );
            let slot = rng.random_range(0..=frame.candidates.len());
            frame.candidates.insert(slot, detection);
        }
        out.push(frame);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorStreams {
    pub gps: Vec<GpsFix>,
    pub imu: Vec<VelocityInput>,
    pub ix: Vec<CandidateSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: Trajectory,
    pub streams: SensorStreams,
}

pub fn simulate(spec: &ScenarioSpec, params: &NoiseParams) -> Result<Scenario> {
    params.validate()?;
    let truth = generate_trajectory(spec)?;
    let streams = SensorStreams {
        gps: simulate_gps(&truth, spec, params),
        imu: simulate_imu(&truth, spec.vel_sigma, spec.seed),
        ix: simulate_ix(&truth, spec, params),
    };
    Ok(Scenario { truth, streams })
}
