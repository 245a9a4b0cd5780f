//! Measurement and process noise models.
//!
//! GPS and infrastructure-node covariances come in two shapes: the
//! correlated form `[[sx^2, sx*sy], [sx*sy, sy^2]]` (rank one) and the
//! plain diagonal `diag(sx^2, sy^2)`, selected by
//! [`NoiseParams::correlated_offdiag`].

use std::fmt;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geo::{node_distance, MapPoint};

/// Symmetry and PSD tolerance applied to every covariance.
pub const COV_TOLERANCE: f64 = 1e-12;

/// How GPS fixes are screened against the predicted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsGate {
    /// Squared Mahalanobis distance of the innovation against the 99% chi-square
    /// quantile with two degrees of freedom.
    ChiSquare,
    /// Euclidean distance against `d_thresh`.
    FixedRadius,
}

/// 99% quantile of the chi-square distribution with two degrees of freedom.
pub const CHI2_2DOF_99: f64 = 9.21;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// Filter time step in seconds.
    pub dt: f64,
    /// Map origin, East (m).
    pub x_o: f64,
    /// Map origin, North (m).
    pub y_o: f64,
    /// Candidate gate radius around the predicted position (m).
    pub d_thresh: f64,
    pub sigma_x_gps: f64,
    pub sigma_y_gps: f64,
    /// Lateral standard deviation of node detections (m).
    pub sigma_y_ix: f64,
    /// Mounting offset between reference receiver and GPS antenna (m).
    pub d_gnss: f64,
    /// Node position in the map frame (m).
    pub node_x: f64,
    pub node_y: f64,
    pub ix_std_slope: f64,
    pub ix_std_offset: f64,
    pub ix_std_floor: f64,
    /// Process noise intensities (m^2/s).
    pub process_q_x: f64,
    pub process_q_y: f64,
    pub correlated_offdiag: bool,
    /// Node detections farther than this from the node are discarded (m).
    pub detection_range: f64,
    pub gps_gate: GpsGate,
    /// Rotate the node covariance so its longitudinal axis follows the
    /// node-to-candidate ray. When off, longitudinal is map x.
    pub ix_radial_frame: bool,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            x_o: 277495.0,
            y_o: 4686600.0,
            d_thresh: 5.0,
            sigma_x_gps: 0.8,
            sigma_y_gps: 2.0,
            sigma_y_ix: 0.3,
            d_gnss: 0.0381,
            node_x: 7.13,
            node_y: 62.19,
            ix_std_slope: 0.051,
            ix_std_offset: 0.702,
            ix_std_floor: 0.05,
            process_q_x: 0.5,
            process_q_y: 0.5,
            correlated_offdiag: false,
            detection_range: 50.0,
            gps_gate: GpsGate::ChiSquare,
            ix_radial_frame: true,
        }
    }
}

impl NoiseParams {
    /// Correlated noise matrices, fixed-radius GPS gate and axis-aligned node
    /// covariance, i.e. the original unmodified formulation.
    pub fn paper_literal(mut self) -> Self {
        self.correlated_offdiag = true;
        self.gps_gate = GpsGate::FixedRadius;
        self.ix_radial_frame = false;
        self
    }

    pub fn node(&self) -> MapPoint {
        MapPoint::new(self.node_x, self.node_y)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("dt", self.dt),
            ("x_o", self.x_o),
            ("y_o", self.y_o),
            ("d_thresh", self.d_thresh),
            ("sigma_x_gps", self.sigma_x_gps),
            ("sigma_y_gps", self.sigma_y_gps),
            ("sigma_y_ix", self.sigma_y_ix),
            ("d_gnss", self.d_gnss),
            ("node_x", self.node_x),
            ("node_y", self.node_y),
            ("ix_std_slope", self.ix_std_slope),
            ("ix_std_offset", self.ix_std_offset),
            ("ix_std_floor", self.ix_std_floor),
            ("process_q_x", self.process_q_x),
            ("process_q_y", self.process_q_y),
            ("detection_range", self.detection_range),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("{name} = {v} is not finite")));
        }
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(what.to_string()))
            }
        };
        check(self.dt > 0.0, "dt must be > 0")?;
        check(self.d_thresh > 0.0, "d_thresh must be > 0")?;
        check(
            self.sigma_x_gps >= 0.0 && self.sigma_y_gps >= 0.0 && self.sigma_y_ix >= 0.0,
            "standard deviations must be >= 0",
        )?;
        check(self.ix_std_floor > 0.0, "ix_std_floor must be > 0")?;
        check(self.d_gnss >= 0.0, "d_gnss must be >= 0")?;
        check(
            self.process_q_x >= 0.0 && self.process_q_y >= 0.0,
            "process noise intensities must be >= 0",
        )?;
        check(self.detection_range > 0.0, "detection_range must be > 0")
    }
}

/// Symmetric positive semidefinite 2x2 matrix in m^2.
#[derive(Clone, Copy, PartialEq)]
pub struct Covariance2(Matrix2<f64>);

impl fmt::Debug for Covariance2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "[[{:e}, {:e}], [{:e}, {:e}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(1, 0)],
            m[(1, 1)]
        )
    }
}

impl Covariance2 {
    /// Validates symmetry and positive semidefiniteness within [`COV_TOLERANCE`].
    pub fn new(m: Matrix2<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("covariance {m:?} is not finite")));
        }
        if (m[(0, 1)] - m[(1, 0)]).abs() > COV_TOLERANCE {
            return Err(Error::invalid(format!("covariance {m:?} is not symmetric")));
        }
        let c = Covariance2(symmetrize(m));
        if c.min_eigenvalue() < -COV_TOLERANCE {
            return Err(Error::invalid(format!(
                "covariance {c:?} is not positive semidefinite"
            )));
        }
        Ok(c)
    }

    pub fn zeros() -> Self {
        Covariance2(Matrix2::zeros())
    }

    pub fn identity() -> Self {
        Covariance2(Matrix2::identity())
    }

    pub fn diagonal(xx: f64, yy: f64) -> Result<Self> {
        Self::new(Matrix2::new(xx, 0.0, 0.0, yy))
    }

    /// Wraps a matrix produced by this crate's own arithmetic, forcing exact
    /// symmetry. Finite-ness and PSD are the caller's responsibility.
    pub(crate) fn from_computed(m: Matrix2<f64>) -> Self {
        Covariance2(symmetrize(m))
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    pub fn xx(&self) -> f64 {
        self.0[(0, 0)]
    }

    pub fn yy(&self) -> f64 {
        self.0[(1, 1)]
    }

    pub fn xy(&self) -> f64 {
        self.0[(0, 1)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Eigenvalues in ascending order (closed form for symmetric 2x2).
    pub fn eigenvalues(&self) -> (f64, f64) {
        let (a, b, d) = (self.xx(), self.xy(), self.yy());
        let mean = 0.5 * (a + d);
        let radius = (0.5 * (a - d)).hypot(b);
        (mean - radius, mean + radius)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0[(0, 1)] - self.0[(1, 0)]).abs() <= tol
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.is_symmetric(tol) && self.min_eigenvalue() >= -tol
    }

    /// `R C R^T` for the rotation taking the x axis onto `angle`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix2::new(c, -s, s, c);
        Covariance2::from_computed(r * self.0 * r.transpose())
    }

    pub fn quadratic_form(&self, v: &Vector2<f64>) -> f64 {
        v.dot(&(self.0 * v))
    }
}

impl std::ops::Add for Covariance2 {
    type Output = Covariance2;

    fn add(self, rhs: Covariance2) -> Covariance2 {
        Covariance2::from_computed(self.0 + rhs.0)
    }
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

fn structured(sx: f64, sy: f64, correlated: bool) -> Covariance2 {
    let off = if correlated { sx * sy } else { 0.0 };
    Covariance2::from_computed(Matrix2::new(sx * sx, off, off, sy * sy))
}

pub fn gps_covariance(params: &NoiseParams) -> Covariance2 {
    structured(params.sigma_x_gps, params.sigma_y_gps, params.correlated_offdiag)
}

/// Longitudinal detection noise `|slope * d - offset|`, never below the floor.
pub fn ix_longitudinal_std(d_ix: f64, params: &NoiseParams) -> f64 {
    (params.ix_std_slope * d_ix - params.ix_std_offset)
        .abs()
        .max(params.ix_std_floor)
}

/// Node detection covariance in its (longitudinal, lateral) axes.
pub fn ix_covariance(candidate: MapPoint, params: &NoiseParams) -> Covariance2 {
    let d_ix = node_distance(candidate, params.node());
    structured(
        ix_longitudinal_std(d_ix, params),
        params.sigma_y_ix,
        params.correlated_offdiag,
    )
}

/// Node detection covariance expressed in the map frame. With
/// `ix_radial_frame` the longitudinal axis is the node-to-candidate ray; a
/// candidate sitting on the node keeps the axis-aligned form.
pub fn ix_covariance_in_map(candidate: MapPoint, params: &NoiseParams) -> Covariance2 {
    let local = ix_covariance(candidate, params);
    if !params.ix_radial_frame {
        return local;
    }
    let dx = candidate.x - params.node_x;
    let dy = candidate.y - params.node_y;
    if dx == 0.0 && dy == 0.0 {
        return local;
    }
    local.rotated(dy.atan2(dx))
}

pub fn process_noise(params: &NoiseParams) -> Covariance2 {
    Covariance2::from_computed(Matrix2::new(
        params.process_q_x * params.dt,
        0.0,
        0.0,
        params.process_q_y * params.dt,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_matrix(c: &Covariance2, expected: [[f64; 2]; 2]) {
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(c.matrix()[(i, j)], expected[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn table_defaults() {
        let p = NoiseParams::default();
        assert_eq!((p.dt, p.d_thresh), (0.1, 5.0));
        assert_eq!((p.x_o, p.y_o), (277495.0, 4686600.0));
        assert_eq!((p.sigma_x_gps, p.sigma_y_gps, p.sigma_y_ix), (0.8, 2.0, 0.3));
        assert_eq!((p.d_gnss, p.node_x, p.node_y), (0.0381, 7.13, 62.19));
        p.validate().unwrap();
    }

    #[test]
    fn gps_covariance_shapes() {
        let mut p = NoiseParams { correlated_offdiag: true, ..NoiseParams::default() };
        assert_matrix(&gps_covariance(&p), [[0.64, 1.6], [1.6, 4.0]]);
        p.correlated_offdiag = false;
        assert_matrix(&gps_covariance(&p), [[0.64, 0.0], [0.0, 4.0]]);
        p.sigma_x_gps = 0.0;
        p.sigma_y_gps = 0.0;
        assert_eq!(gps_covariance(&p), Covariance2::zeros());
    }

    #[test]
    fn longitudinal_std_examples() {
        let p = NoiseParams::default();
        assert_abs_diff_eq!(ix_longitudinal_std(0.0, &p), 0.702, epsilon = 1e-15);
        assert_eq!(ix_longitudinal_std(0.702 / 0.051, &p), p.ix_std_floor);
        assert_abs_diff_eq!(ix_longitudinal_std((0.702 + 1.0) / 0.051, &p), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ix_covariance_examples() {
        let mut p = NoiseParams { correlated_offdiag: true, ..NoiseParams::default() };
        let at_node = ix_covariance(p.node(), &p);
        assert_matrix(&at_node, [[0.702 * 0.702, 0.702 * 0.3], [0.702 * 0.3, 0.09]]);
        assert_eq!(ix_covariance_in_map(p.node(), &p), at_node);

        p.correlated_offdiag = false;
        let floored = MapPoint::new(p.node_x + 0.702 / 0.051, p.node_y);
        let c = ix_covariance(floored, &p);
        assert_matrix(&c, [[0.05 * 0.05, 0.0], [0.0, 0.09]]);
        // along +x the radial frame coincides with the map frame
        assert_matrix(&ix_covariance_in_map(floored, &p), [[0.0025, 0.0], [0.0, 0.09]]);

        for d in [0.0, 5.0, 20.0, 45.0] {
            let cand = MapPoint::new(p.node_x, p.node_y + d);
            assert_abs_diff_eq!(ix_covariance(cand, &p).yy(), 0.09, epsilon = 1e-15);
        }
    }

    #[test]
    fn radial_frame_rotates_longitudinal_axis() {
        let p = NoiseParams::default();
        // candidate due north: longitudinal variance lands on the map y axis
        let cand = MapPoint::new(p.node_x, p.node_y + 30.0);
        let long = ix_longitudinal_std(30.0, &p);
        let c = ix_covariance_in_map(cand, &p);
        assert_abs_diff_eq!(c.xx(), 0.09, epsilon = 1e-12);
        assert_abs_diff_eq!(c.yy(), long * long, epsilon = 1e-12);
        assert_abs_diff_eq!(c.xy(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn process_noise_examples() {
        let mut p = NoiseParams { process_q_x: 0.0, process_q_y: 0.0, ..NoiseParams::default() };
        assert_eq!(process_noise(&p), Covariance2::zeros());
        p.process_q_x = 1.0;
        p.process_q_y = 1.0;
        assert_matrix(&process_noise(&p), [[0.1, 0.0], [0.0, 0.1]]);
        p.process_q_x = 0.5;
        p.process_q_y = 2.0;
        assert_matrix(&process_noise(&p), [[0.05, 0.0], [0.0, 0.2]]);
    }

    #[test]
    fn covariance_validation() {
        assert!(Covariance2::new(Matrix2::new(1.0, 0.5, 0.4, 1.0)).is_err());
        assert!(Covariance2::new(Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(Covariance2::new(Matrix2::new(f64::NAN, 0.0, 0.0, 1.0)).is_err());
        assert!(Covariance2::new(Matrix2::new(1.0, 1.0, 1.0, 1.0)).is_ok());
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            NoiseParams { dt: 0.0, ..Default::default() },
            NoiseParams { ix_std_floor: 0.0, ..Default::default() },
            NoiseParams { d_thresh: -1.0, ..Default::default() },
            NoiseParams { sigma_y_ix: -0.1, ..Default::default() },
            NoiseParams { node_x: f64::NAN, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    fn params_strategy() -> impl Strategy<Value = NoiseParams> {
        (0.0..5.0f64, 0.0..5.0f64, 0.0..3.0f64, any::<bool>(), any::<bool>(), 0.001..1.0f64).prop_map(
            |(sx, sy, sy_ix, correlated, radial, floor)| NoiseParams {
                sigma_x_gps: sx,
                sigma_y_gps: sy,
                sigma_y_ix: sy_ix,
                correlated_offdiag: correlated,
                ix_radial_frame: radial,
                ix_std_floor: floor,
                ..Default::default()
            },
        )
    }

    proptest! {
        #[test]
        fn covariances_are_symmetric_psd(p in params_strategy(), cx in -100.0..100.0f64, cy in -100.0..100.0f64) {
            let cand = MapPoint::new(cx, cy);
            for c in [gps_covariance(&p), ix_covariance(cand, &p), ix_covariance_in_map(cand, &p), process_noise(&p)] {
                prop_assert!(c.is_psd(COV_TOLERANCE), "{:?}", c);
            }
            if p.correlated_offdiag {
                for c in [gps_covariance(&p), ix_covariance(cand, &p)] {
                    let scale = c.trace().powi(2).max(1e-300);
                    prop_assert!(c.determinant().abs() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn longitudinal_std_floor_and_growth(d in 0.0..200.0f64, step in 0.0..50.0f64) {
            let p = NoiseParams::default();
            let s = ix_longitudinal_std(d, &p);
            prop_assert!(s >= p.ix_std_floor);
            let zero_crossing = p.ix_std_offset / p.ix_std_slope;
            if d >= zero_crossing {
                prop_assert!(ix_longitudinal_std(d + step, &p) >= s);
            }
        }

        #[test]
        fn longitudinal_variance_grows_radially(angle in -std::f64::consts::PI..std::f64::consts::PI, d in 14.8..100.0f64, step in 0.01..20.0f64) {
            let p = NoiseParams::default();
            let at = |r: f64| MapPoint::new(p.node_x + r * angle.cos(), p.node_y + r * angle.sin());
            prop_assert!(ix_covariance(at(d + step), &p).xx() > ix_covariance(at(d), &p).xx());
        }
    }
}
