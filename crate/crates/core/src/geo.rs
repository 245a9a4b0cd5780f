//! Planar coordinate handling.
//!
//! Raw positions live in the East/North plane of a local ENU frame. The
//! filter works in the *map frame*: ENU offset by a fixed map origin so the
//! numbers stay small. Headings are measured counterclockwise from East.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// East/North position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
}

impl EnuPoint {
    pub fn new(east: f64, north: f64) -> Self {
        Self { east, north }
    }

    pub fn is_finite(&self) -> bool {
        self.east.is_finite() && self.north.is_finite()
    }
}

/// Position relative to the map origin, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
}

impl MapPoint {
    pub const ORIGIN: MapPoint = MapPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { x: v.x, y: v.y }
    }

    pub fn distance(&self, other: &MapPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Linear interpolation; `w = 0` gives `self`, `w = 1` gives `other`.
    pub fn lerp(&self, other: &MapPoint, w: f64) -> MapPoint {
        MapPoint {
            x: self.x + w * (other.x - self.x),
            y: self.y + w * (other.y - self.y),
        }
    }
}

/// Vehicle orientation in radians, counterclockwise from East, kept in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading(f64);

impl Heading {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::invalid(format!("heading {theta} is not finite")));
        }
        Ok(Heading(normalize_angle(theta)))
    }

    /// Heading of a direction vector. Zero vectors map to East.
    pub fn from_direction(dx: f64, dy: f64) -> Self {
        Heading(normalize_angle(dy.atan2(dx)))
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

fn normalize_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU
    if a >= PI {
        a -= TAU;
    }
    a
}

/// Removes the mounting offset between the reference receiver and the GPS
/// antenna: `(x - d cos(theta + pi/2), y - d sin(theta + pi/2))`.
pub fn lever_arm_correct(raw: EnuPoint, heading: Heading, d: f64) -> Result<EnuPoint> {
    if !raw.is_finite() || !d.is_finite() || d < 0.0 {
        return Err(Error::invalid(format!(
            "lever arm correction needs finite input and d >= 0 (raw {raw:?}, d {d})"
        )));
    }
    let angle = heading.radians() + FRAC_PI_2;
    Ok(EnuPoint {
        east: raw.east - d * angle.cos(),
        north: raw.north - d * angle.sin(),
    })
}

/// Inverse of [`lever_arm_correct`]; used by the simulator to produce raw
/// reference-receiver readings from the antenna track.
pub fn lever_arm_apply(corrected: EnuPoint, heading: Heading, d: f64) -> EnuPoint {
    let angle = heading.radians() + FRAC_PI_2;
    EnuPoint {
        east: corrected.east + d * angle.cos(),
        north: corrected.north + d * angle.sin(),
    }
}

pub fn to_map_frame(p: EnuPoint, origin: EnuPoint) -> Result<MapPoint> {
    if !p.is_finite() || !origin.is_finite() {
        return Err(Error::invalid(format!(
            "non-finite point {p:?} or origin {origin:?}"
        )));
    }
    Ok(MapPoint {
        x: p.east - origin.east,
        y: p.north - origin.north,
    })
}

pub fn from_map_frame(p: MapPoint, origin: EnuPoint) -> EnuPoint {
    EnuPoint {
        east: p.x + origin.east,
        north: p.y + origin.north,
    }
}

/// Euclidean distance from a point to the infrastructure node.
pub fn node_distance(p: MapPoint, node: MapPoint) -> f64 {
    p.distance(&node)
}
