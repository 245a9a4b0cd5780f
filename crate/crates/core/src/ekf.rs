//! Constant-velocity position filter with sequential GPS and node updates.
//!
//! The state is the planar vehicle position `[x, y]` in the map frame. The
//! motion model `x' = x + v dt` and both observation models measure the state
//! directly, so the transition and observation Jacobians are the 2x2
//! identity and are not carried around. Covariance updates use the Joseph
//! form `(I - K) P (I - K)^T + K Q K^T`, which equals `(I - K) P` in exact
//! arithmetic but stays positive semidefinite when `Q` is rank one.

use nalgebra::{Matrix2, Vector2};

use crate::assoc::SyncedEpoch;
use crate::error::{Error, Result};
use crate::geo::MapPoint;
use crate::noise::{process_noise, Covariance2, NoiseParams};

/// Relative determinant below which an innovation covariance is treated as singular.
const SINGULAR_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pos: MapPoint,
    pub cov: Covariance2,
    /// Seconds.
    pub t: f64,
}

/// Velocity control input from the inertial unit (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityInput {
    pub vx: f64,
    pub vy: f64,
    pub t: f64,
}

impl VelocityInput {
    pub fn new(vx: f64, vy: f64, t: f64) -> Self {
        Self { vx, vy, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Gps,
    Ix,
}

/// A position observation of the vehicle together with its noise covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub pos: MapPoint,
    pub t: f64,
    pub source: Source,
    pub noise: Covariance2,
}

/// Intermediate quantities of one Kalman correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDetail {
    pub innovation: Vector2<f64>,
    pub innovation_cov: Covariance2,
    pub gain: Matrix2<f64>,
    pub posterior: VehicleState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionEpochResult {
    pub predicted: VehicleState,
    pub gps: Option<UpdateDetail>,
    pub ix: Option<UpdateDetail>,
    pub gps_measurement: Option<Measurement>,
    pub ix_measurement: Option<Measurement>,
    pub final_state: VehicleState,
}

impl FusionEpochResult {
    pub fn post_gps(&self) -> Option<&VehicleState> {
        self.gps.as_ref().map(|u| &u.posterior)
    }

    pub fn is_coasting(&self) -> bool {
        self.gps.is_none() && self.ix.is_none()
    }
}

/// Propagates the state one filter step with the constant-velocity model.
pub fn predict(state: &VehicleState, vel: &VelocityInput, params: &NoiseParams) -> Result<VehicleState> {
    if !vel.vx.is_finite() || !vel.vy.is_finite() || !vel.t.is_finite() {
        return Err(Error::invalid(format!("non-finite velocity input {vel:?}")));
    }
    if vel.t < state.t {
        return Err(Error::invalid(format!(
            "velocity timestamp {} precedes state timestamp {}",
            vel.t, state.t
        )));
    }
    let dt = params.dt;
    Ok(VehicleState {
        pos: MapPoint::new(state.pos.x + vel.vx * dt, state.pos.y + vel.vy * dt),
        cov: state.cov + process_noise(params),
        t: state.t + dt,
    })
}

/// Kalman correction with an identity observation model, returning every
/// intermediate term.
pub fn kalman_update(state: &VehicleState, m: &Measurement) -> Result<UpdateDetail> {
    if !m.pos.is_finite() {
        return Err(Error::invalid(format!("non-finite measurement {m:?}")));
    }
    let prior = state.cov.matrix();
    let q = m.noise.matrix();
    let s = Covariance2::from_computed(prior + q);
    let s_inv = invert_innovation(&s, &state.cov, &m.noise)?;
    let gain = prior * s_inv;
    let innovation = m.pos.to_vector() - state.pos.to_vector();
    let pos = state.pos.to_vector() + gain * innovation;
    let i_minus_k = Matrix2::identity() - gain;
    let cov = i_minus_k * prior * i_minus_k.transpose() + gain * q * gain.transpose();
    Ok(UpdateDetail {
        innovation,
        innovation_cov: s,
        gain,
        posterior: VehicleState {
            pos: MapPoint::from_vector(pos),
            cov: Covariance2::from_computed(cov),
            t: state.t,
        },
    })
}

fn invert_innovation(s: &Covariance2, prior: &Covariance2, noise: &Covariance2) -> Result<Matrix2<f64>> {
    let det = s.determinant();
    let scale = s.trace() * s.trace();
    let singular = !det.is_finite() || scale <= 0.0 || det <= SINGULAR_RTOL * scale;
    let inv = if singular { None } else { s.matrix().try_inverse() };
    inv.ok_or_else(|| {
        Error::Degenerate(format!(
            "innovation covariance S = {s:?} is singular (prior covariance {prior:?}, measurement noise {noise:?})"
        ))
    })
}

pub fn measurement_update(state: &VehicleState, m: &Measurement) -> Result<VehicleState> {
    kalman_update(state, m).map(|u| u.posterior)
}

/// Squared Mahalanobis distance of the innovation under `S = P + Q`.
pub fn innovation_mahalanobis2(state: &VehicleState, m: &Measurement) -> Result<f64> {
    let s = state.cov + m.noise;
    let s_inv = invert_innovation(&s, &state.cov, &m.noise)?;
    let nu = m.pos.to_vector() - state.pos.to_vector();
    Ok(nu.dot(&(s_inv * nu)))
}

/// One fusion step: predict, then correct with GPS, then with the node
/// detection. Absent measurements are skipped.
pub fn fuse_epoch(state: &VehicleState, epoch: &SyncedEpoch, params: &NoiseParams) -> Result<FusionEpochResult> {
    let expected = state.t + params.dt;
    if (epoch.t - expected).abs() > 0.5 * params.dt {
        return Err(Error::invalid(format!(
            "epoch at t={} is not one step ({} s) after state at t={}",
            epoch.t, params.dt, state.t
        )));
    }
    let mut predicted = predict(state, &epoch.vel, params)?;
    predicted.t = epoch.t;

    let gps = epoch
        .gps
        .as_ref()
        .map(|m| kalman_update(&predicted, m))
        .transpose()?;
    let after_gps = gps.as_ref().map_or(predicted, |u| u.posterior);
    let ix = epoch
        .ix
        .as_ref()
        .map(|m| kalman_update(&after_gps, m))
        .transpose()?;
    let final_state = ix.as_ref().map_or(after_gps, |u| u.posterior);

    Ok(FusionEpochResult {
        predicted,
        gps,
        ix,
        gps_measurement: epoch.gps,
        ix_measurement: epoch.ix,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{SMatrix, SVector};
    use proptest::prelude::*;

    fn state(x: f64, y: f64, cov: Matrix2<f64>) -> VehicleState {
        VehicleState {
            pos: MapPoint::new(x, y),
            cov: Covariance2::new(cov).unwrap(),
            t: 0.0,
        }
    }

    fn meas(x: f64, y: f64, noise: Matrix2<f64>, source: Source) -> Measurement {
        Measurement {
            pos: MapPoint::new(x, y),
            t: 0.0,
            source,
            noise: Covariance2::new(noise).unwrap(),
        }
    }

    fn diag(a: f64, b: f64) -> Matrix2<f64> {
        Matrix2::new(a, 0.0, 0.0, b)
    }

    fn quiet_params() -> NoiseParams {
        NoiseParams {
            process_q_x: 0.0,
            process_q_y: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn predict_examples() {
        let p = quiet_params();
        let s = state(10.0, 20.0, diag(1.0, 1.0));
        let out = predict(&s, &VelocityInput::new(1.0, -2.0, 0.1), &p).unwrap();
        assert_abs_diff_eq!(out.pos.x, 10.1, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pos.y, 19.8, epsilon = 1e-12);
        assert_abs_diff_eq!(out.t, 0.1, epsilon = 1e-15);

        let rest = predict(&s, &VelocityInput::new(0.0, 0.0, 0.1), &p).unwrap();
        assert_eq!(rest.pos, s.pos);
        assert_eq!(rest.cov, s.cov);

        let p = NoiseParams {
            process_q_x: 1.0,
            process_q_y: 1.0,
            ..Default::default()
        };
        let grown = predict(&s, &VelocityInput::new(0.0, 0.0, 0.1), &p).unwrap();
        assert_abs_diff_eq!(grown.cov.xx(), 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(grown.cov.yy(), 1.1, epsilon = 1e-12);
        assert_eq!(grown.cov.xy(), 0.0);
    }

    #[test]
    fn predict_rejects_bad_velocity() {
        let s = state(0.0, 0.0, diag(1.0, 1.0));
        let p = NoiseParams::default();
        assert!(predict(&s, &VelocityInput::new(f64::NAN, 0.0, 0.1), &p).is_err());
        let mut late = s;
        late.t = 1.0;
        assert!(predict(&late, &VelocityInput::new(0.0, 0.0, 0.5), &p).is_err());
    }

    #[test]
    fn update_closed_form_diagonal() {
        // K = P (P + Q)^-1 = diag(1/2, 1/4)
        let s = state(0.0, 0.0, diag(1.0, 1.0));
        let m = meas(2.0, 0.0, diag(1.0, 3.0), Source::Gps);
        let u = kalman_update(&s, &m).unwrap();
        assert_abs_diff_eq!(u.posterior.pos.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.posterior.pos.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.posterior.cov.xx(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(u.posterior.cov.yy(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(u.gain[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(u.gain[(1, 1)], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn update_limits() {
        let s = state(1.0, -1.0, Matrix2::new(2.0, 0.3, 0.3, 1.0));
        let vague = meas(5.0, 7.0, diag(1e12, 1e12), Source::Ix);
        let out = measurement_update(&s, &vague).unwrap();
        let correction = (out.pos.to_vector() - s.pos.to_vector()).norm();
        let innovation = (vague.pos.to_vector() - s.pos.to_vector()).norm();
        assert!(correction < 1e-9 * innovation);

        let exact = meas(5.0, 7.0, Matrix2::zeros(), Source::Gps);
        let out = measurement_update(&s, &exact).unwrap();
        assert_abs_diff_eq!(out.pos.x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pos.y, 7.0, epsilon = 1e-12);
        assert!(out.cov.matrix().abs().max() < 1e-12);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let s = state(0.0, 0.0, Matrix2::zeros());
        let m = meas(1.0, 1.0, Matrix2::new(1.0, 1.0, 1.0, 1.0), Source::Ix);
        let err = measurement_update(&s, &m).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        let text = err.to_string();
        assert!(text.contains("innovation covariance") && text.contains("measurement noise"));
    }

    fn epoch(t: f64, gps: Option<Measurement>, ix: Option<Measurement>) -> SyncedEpoch {
        SyncedEpoch {
            t,
            vel: VelocityInput::new(0.0, 0.0, t),
            gps,
            ix,
        }
    }

    #[test]
    fn fuse_epoch_coasting_and_single_update() {
        let p = NoiseParams::default();
        let s = state(0.0, 0.0, diag(1.0, 1.0));
        let r = fuse_epoch(&s, &epoch(0.1, None, None), &p).unwrap();
        assert!(r.is_coasting());
        assert_eq!(r.final_state, r.predicted);

        let g = meas(1.0, 2.0, diag(1.0, 1.0), Source::Gps);
        let r = fuse_epoch(&s, &epoch(0.1, Some(g), None), &p).unwrap();
        assert!(r.ix.is_none());
        assert_eq!(Some(&r.final_state), r.post_gps());
    }

    #[test]
    fn fuse_epoch_two_sequential_scalar_updates() {
        // Hand oracle: 0 -> 0.5 (variance 1/2) -> 0.5 + (1/3)(1 - 0.5) = 2/3
        let p = quiet_params();
        let s = state(0.0, 0.0, diag(1.0, 1.0));
        let g = meas(1.0, 0.0, diag(1.0, 1.0), Source::Gps);
        let i = meas(1.0, 0.0, diag(1.0, 1.0), Source::Ix);
        let r = fuse_epoch(&s, &epoch(0.1, Some(g), Some(i)), &p).unwrap();
        let post_gps = r.post_gps().unwrap();
        assert_abs_diff_eq!(post_gps.pos.x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.final_state.pos.x, 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.final_state.pos.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.final_state.cov.xx(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fuse_epoch_rejects_misaligned_epoch() {
        let p = NoiseParams::default();
        let s = state(0.0, 0.0, diag(1.0, 1.0));
        assert!(fuse_epoch(&s, &epoch(0.3, None, None), &p).is_err());
        assert!(fuse_epoch(&s, &epoch(0.12, None, None), &p).is_ok());
    }

    #[test]
    fn correlated_noise_keeps_covariance_psd() {
        let p = NoiseParams::default().paper_literal();
        let s = state(0.0, 0.0, diag(0.05, 0.05));
        let m = Measurement {
            pos: MapPoint::new(1.0, 2.0),
            t: 0.0,
            source: Source::Gps,
            noise: crate::noise::gps_covariance(&p),
        };
        let out = measurement_update(&s, &m).unwrap();
        assert!(out.cov.is_psd(1e-12));
    }

    fn pd_matrix() -> impl Strategy<Value = Matrix2<f64>> {
        (0.05..5.0f64, 0.05..5.0f64, -0.9..0.9f64).prop_map(|(a, b, rho)| {
            let off = rho * (a * b).sqrt();
            Matrix2::new(a, off, off, b)
        })
    }

    fn psd_matrix() -> impl Strategy<Value = Matrix2<f64>> {
        (0.0..5.0f64, 0.0..5.0f64, -1.0..1.0f64).prop_map(|(a, b, rho)| {
            let off = rho * (a * b).sqrt();
            Matrix2::new(a, off, off, b)
        })
    }

    fn is_psd(m: &Matrix2<f64>, tol: f64) -> bool {
        let c = Covariance2::from_computed(*m);
        c.min_eigenvalue() >= -tol
    }

    proptest! {
        #[test]
        fn joseph_matches_simple_form(p in pd_matrix(), q in psd_matrix(), zx in -10.0..10.0f64, zy in -10.0..10.0f64) {
            let s = state(0.0, 0.0, p);
            let m = meas(zx, zy, q, Source::Gps);
            let u = kalman_update(&s, &m).unwrap();
            let simple = (Matrix2::identity() - u.gain) * p;
            let diff = (u.posterior.cov.matrix() - simple).abs().max();
            prop_assert!(diff <= 1e-9 * p.abs().max());
        }

        #[test]
        fn update_contracts_covariance(p in pd_matrix(), q in psd_matrix()) {
            let s = state(3.0, 4.0, p);
            let out = measurement_update(&s, &meas(0.0, 0.0, q, Source::Ix)).unwrap();
            prop_assert!(out.cov.is_psd(1e-12));
            prop_assert!(is_psd(&(p - out.cov.matrix()), 1e-12));
            prop_assert!(out.cov.trace() <= p.trace() + 1e-12);
        }

        #[test]
        fn update_order_does_not_matter(p in pd_matrix(), qg in pd_matrix(), qi in pd_matrix(),
                                        g in (-5.0..5.0f64, -5.0..5.0f64), i in (-5.0..5.0f64, -5.0..5.0f64)) {
            let s = state(0.0, 0.0, p);
            let mg = meas(g.0, g.1, qg, Source::Gps);
            let mi = meas(i.0, i.1, qi, Source::Ix);
            let a = measurement_update(&measurement_update(&s, &mg).unwrap(), &mi).unwrap();
            let b = measurement_update(&measurement_update(&s, &mi).unwrap(), &mg).unwrap();
            prop_assert!((a.pos.to_vector() - b.pos.to_vector()).norm() <= 1e-9 * (1.0 + a.pos.to_vector().norm()));
            prop_assert!((a.cov.matrix() - b.cov.matrix()).abs().max() <= 1e-9 * a.cov.matrix().abs().max().max(1e-12));
        }

        #[test]
        fn sequential_matches_stacked(p in pd_matrix(), qg in pd_matrix(), qi in pd_matrix(),
                                      g in (-5.0..5.0f64, -5.0..5.0f64), i in (-5.0..5.0f64, -5.0..5.0f64)) {
            let s = state(0.5, -0.5, p);
            let seq = measurement_update(
                &measurement_update(&s, &meas(g.0, g.1, qg, Source::Gps)).unwrap(),
                &meas(i.0, i.1, qi, Source::Ix),
            ).unwrap();

            let h = SMatrix::<f64, 4, 2>::new(1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0);
            let mut r = SMatrix::<f64, 4, 4>::zeros();
            r.fixed_view_mut::<2, 2>(0, 0).copy_from(&qg);
            r.fixed_view_mut::<2, 2>(2, 2).copy_from(&qi);
            let z = SVector::<f64, 4>::new(g.0, g.1, i.0, i.1);
            let x = Vector2::new(0.5, -0.5);
            let sm = h * p * h.transpose() + r;
            let k = p * h.transpose() * sm.try_inverse().unwrap();
            let x_post = x + k * (z - h * x);
            let p_post = (Matrix2::identity() - k * h) * p;

            prop_assert!((seq.pos.to_vector() - x_post).norm() <= 1e-9 * (1.0 + x_post.norm()));
            prop_assert!((seq.cov.matrix() - p_post).abs().max() <= 1e-9 * p_post.abs().max());
        }

        #[test]
        fn coasting_grows_trace(k in 1usize..50, q in 0.01..2.0f64) {
            let p = NoiseParams { process_q_x: q, process_q_y: q, ..Default::default() };
            let mut s = state(0.0, 0.0, Matrix2::identity());
            for _ in 0..k {
                let next = predict(&s, &VelocityInput::new(1.0, 0.5, s.t + p.dt), &p).unwrap();
                prop_assert!(next.cov.trace() > s.cov.trace());
                s = next;
            }
        }
    }
}
