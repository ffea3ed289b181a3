//! Rigid-body pose primitives.

use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Unit quaternion in the same direction; `None` for a zero quaternion.
    pub fn normalized(self) -> Option<Quat> {
        let n = self.norm();
        (n > 0.0 && n.is_finite())
            .then(|| Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Representative with `w ≥ 0`.
    pub fn canonical(self) -> Quat {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Sign choice of `self` closest to `reference`.
    pub fn aligned_to(self, reference: Quat) -> Quat {
        if self.dot(reference) < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Rotates a vector (assumes a unit quaternion).
    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let p = Quat::new(0.0, v[0], v[1], v[2]);
        let r = self * p * self.conjugate();
        [r.x, r.y, r.z]
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// 3-D position (metres / scene units) plus unit-quaternion orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: Quat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        distance(self.position, other.position)
    }
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_about_z_maps_x_to_y() {
        let q = Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_and_alignment() {
        let q = Quat::new(-0.5, 0.5, 0.5, 0.5);
        assert_eq!(q.canonical(), Quat::new(0.5, -0.5, -0.5, -0.5));
        assert_eq!(q.aligned_to(Quat::IDENTITY).w, 0.5);
        assert!(Quat::new(0.0, 0.0, 0.0, 0.0).normalized().is_none());
    }
}
