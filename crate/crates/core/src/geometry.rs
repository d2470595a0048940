//! Quaternion and behavioral-cue algebra.
//!
//! Cues are laid out as flat feature vectors `b = [q; l; s]`: a unit
//! quaternion `(w, x, y, z)` for orientation, a location vector of
//! configurable dimension, and a binary speaking flag. Any block may be
//! absent for a given dataset; [`CueLayout`] records which are present.
//!
//! Quaternions are kept in the `w >= 0` hemisphere so that equal rotations
//! compare equal. Headings are rotations about the vertical `z` axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("cannot normalise a zero-norm quaternion")]
    DegenerateQuaternion,
    #[error("cue vector has {got} entries but the layout needs {expected}")]
    LayoutMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }

    /// Largest component-wise difference, treating `q` and `-q` as equal.
    pub fn distance(self, other: Self) -> f64 {
        let a = self.canonical().to_array();
        let b = other.canonical().to_array();
        a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn quat_normalize(q: [f64; 4]) -> Result<UnitQuaternion, GeometryError> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(GeometryError::DegenerateQuaternion);
    }
    Ok(UnitQuaternion { w: q[0] / n, x: q[1] / n, y: q[2] / n, z: q[3] / n }.canonical())
}

pub fn quat_hamilton_product(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    }
    .canonical()
}

pub fn quat_inverse(q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion { w: q.w, x: -q.x, y: -q.y, z: -q.z }.canonical()
}

/// Rotation by `degrees` about the vertical axis.
pub fn heading_to_quat(degrees: f64) -> UnitQuaternion {
    let half = degrees.to_radians() / 2.0;
    UnitQuaternion { w: half.cos(), x: 0.0, y: 0.0, z: half.sin() }.canonical()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    /// Signed yaw in `[-180, 180)`.
    pub degrees: f64,
    /// Set when the quaternion also rotates about a horizontal axis; the
    /// reading is then the yaw of its projection.
    pub out_of_model: bool,
}

pub fn quat_to_heading_deg(q: UnitQuaternion) -> Heading {
    let tilt = (q.x * q.x + q.y * q.y).sqrt();
    let degrees = wrap_degrees((2.0 * q.z.atan2(q.w)).to_degrees());
    Heading { degrees, out_of_model: tilt > 1e-6 }
}

pub fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return 360 - eps rounding up to exactly 360.0
    if w >= 180.0 { w - 360.0 } else { w }
}

/// Glance signals live in `[-1, 1]` and span a horizontal head rotation of
/// `[-90°, 90°]`.
pub fn glance_to_heading_deg(value: f64) -> f64 {
    quat_to_heading_deg(heading_to_quat(90.0 * value)).degrees
}

/// Which cue blocks a dataset carries, in `[q; l; s]` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CueLayout {
    pub orientation: bool,
    pub location_dim: usize,
    pub speaking: bool,
}

impl CueLayout {
    pub const fn new(orientation: bool, location_dim: usize, speaking: bool) -> Self {
        Self { orientation, location_dim, speaking }
    }

    /// Single scalar heading stored in the location slot.
    pub const GLANCE: Self = Self::new(false, 1, false);
    pub const SPEAKING: Self = Self::new(false, 0, true);
    pub const POSE_2D: Self = Self::new(true, 2, true);

    pub fn dims(&self) -> usize {
        4 * self.orientation as usize + self.location_dim + self.speaking as usize
    }

    pub fn location_offset(&self) -> usize {
        4 * self.orientation as usize
    }

    pub fn speaking_offset(&self) -> Option<usize> {
        self.speaking.then(|| self.location_offset() + self.location_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralCue {
    pub orientation: UnitQuaternion,
    pub location: Vec<f64>,
    pub speaking: f64,
}

impl BehavioralCue {
    pub fn from_features(layout: &CueLayout, b: &[f64]) -> Result<Self, GeometryError> {
        if b.len() != layout.dims() {
            return Err(GeometryError::LayoutMismatch { expected: layout.dims(), got: b.len() });
        }
        let orientation = if layout.orientation {
            // raw quaternions may come straight from a model head
            quat_normalize([b[0], b[1], b[2], b[3]]).unwrap_or_default()
        } else {
            UnitQuaternion::IDENTITY
        };
        let lo = layout.location_offset();
        let location = b[lo..lo + layout.location_dim].to_vec();
        let speaking = layout.speaking_offset().map_or(0.0, |i| b[i]);
        Ok(Self { orientation, location, speaking })
    }

    pub fn to_features(&self, layout: &CueLayout) -> Vec<f64> {
        let mut out = Vec::with_capacity(layout.dims());
        if layout.orientation {
            out.extend_from_slice(&self.orientation.to_array());
        }
        out.extend(self.location.iter().take(layout.location_dim));
        if layout.speaking {
            out.push(self.speaking);
        }
        out
    }
}

/// Express `partner` in the frame of `this`: `q_rel = q_this * q_partner^-1`,
/// `l_rel = l_partner - l_this`, `s_rel = s_partner - s_this`.
pub fn relative_cue(this: &BehavioralCue, partner: &BehavioralCue) -> BehavioralCue {
    BehavioralCue {
        orientation: quat_hamilton_product(this.orientation, quat_inverse(partner.orientation)),
        location: partner.location.iter().zip(&this.location).map(|(p, s)| p - s).collect(),
        speaking: partner.speaking - this.speaking,
    }
}

/// [`relative_cue`] on flat feature vectors.
pub fn relative_features(layout: &CueLayout, this: &[f64], partner: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let a = BehavioralCue::from_features(layout, this)?;
    let b = BehavioralCue::from_features(layout, partner)?;
    Ok(relative_cue(&a, &b).to_features(layout))
}
