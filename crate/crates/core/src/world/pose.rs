use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Planar pose in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Applies a body-frame displacement `(dx, dy, dtheta)`.
    pub fn compose(&self, dx: f64, dy: f64, dtheta: f64) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            self.x + c * dx - s * dy,
            self.y + s * dx + c * dy,
            self.theta + dtheta,
        )
    }

    /// Body-frame displacement that takes `self` to `other`.
    pub fn between(&self, other: &Pose) -> (f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let gx = other.x - self.x;
        let gy = other.y - self.y;
        (c * gx + s * gy, -s * gx + c * gy, wrap_angle(other.theta - self.theta))
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute wrapped heading difference.
    pub fn angle_error(&self, other: &Pose) -> f64 {
        wrap_angle(self.theta - other.theta).abs()
    }
}
