use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{invalid, Result};

/// Pinhole camera with world-from-camera extrinsics.
///
/// `fov` is the horizontal field of view used by the planar sensor models;
/// `max_range` bounds semantic ray casting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub fov: f64,
    /// Row-major 3x3 rotation, world from camera.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub max_range: f64,
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Default for CameraModel {
    fn default() -> Self {
        Self::pinhole(640, 480, 1.5, 5.0)
    }
}

impl CameraModel {
    /// Pinhole with the principal point at the image center and focal length
    /// chosen to match the horizontal field of view.
    pub fn pinhole(width_px: u32, height_px: u32, fov: f64, max_range: f64) -> Self {
        let cx = width_px as f64 / 2.0;
        let f = cx / (fov / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx,
            cy: height_px as f64 / 2.0,
            fov,
            rotation: IDENTITY,
            translation: [0.0; 3],
            max_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid("camera", "focal lengths must be > 0"));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::TAU) {
            return Err(invalid("camera", "fov must lie in (0, 2π)"));
        }
        if !(self.max_range > 0.0) {
            return Err(invalid("camera", "max_range must be > 0"));
        }
        let r = self.rotation_matrix();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(invalid("camera", "rotation must be orthonormal with det +1"));
        }
        Ok(())
    }

    pub fn with_extrinsics(mut self, rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        self.rotation = rotation;
        self.translation = translation;
        self.validate()?;
        Ok(self)
    }

    /// Extrinsics of a forward-looking camera mounted `height` meters above a
    /// planar pose: optical axis along the heading, image x to the right,
    /// image y down.
    pub fn mounted_at(mut self, pose: &Pose, height: f64) -> Self {
        let (s, c) = pose.theta.sin_cos();
        self.rotation = [[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]];
        self.translation = [pose.x, pose.y, height];
        self
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    /// World position of pixel `(u, v)` observed at depth `depth` along the
    /// optical axis: `t + Z R K^-1 [u, v, 1]`.
    pub fn pixel_to_world(&self, u: f64, v: f64, depth: f64) -> Result<[f64; 3]> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(invalid("depth", format!("must be > 0, got {depth}")));
        }
        let ray = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let p = Vector3::from(self.translation) + self.rotation_matrix() * ray * depth;
        Ok([p.x, p.y, p.z])
    }

    /// Bearing (CCW positive, relative to the optical axis) of image column `u`.
    pub fn column_bearing(&self, u: f64) -> f64 {
        ((self.cx - u) / self.fx).atan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam(f: f64, cx: f64, cy: f64) -> CameraModel {
        CameraModel {
            fx: f,
            fy: f,
            cx,
            cy,
            fov: 1.5,
            rotation: IDENTITY,
            translation: [0.0; 3],
            max_range: 5.0,
        }
    }

    #[test]
    fn principal_ray() {
        let p = cam(1.0, 0.0, 0.0).pixel_to_world(0.0, 0.0, 2.0).unwrap();
        assert_eq!(p, [0.0, 0.0, 2.0]);
    }

    #[test]
    fn principal_point_with_translation() {
        let c = cam(500.0, 320.0, 240.0)
            .with_extrinsics(IDENTITY, [1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(c.pixel_to_world(320.0, 240.0, 1.5).unwrap(), [1.0, 0.0, 1.5]);
    }

    #[test]
    fn off_axis_pixel() {
        let p = cam(500.0, 320.0, 240.0).pixel_to_world(420.0, 240.0, 2.0).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12 && p[1] == 0.0 && p[2] == 2.0);
    }

    #[test]
    fn rejects_bad_depth_and_rotation() {
        assert!(cam(500.0, 320.0, 240.0).pixel_to_world(1.0, 1.0, 0.0).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(cam(500.0, 320.0, 240.0).with_extrinsics(skew, [0.0; 3]).is_err());
        let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(cam(500.0, 320.0, 240.0).with_extrinsics(mirror, [0.0; 3]).is_err());
    }

    #[test]
    fn mounted_camera_looks_along_heading() {
        let pose = Pose::new(1.0, 2.0, std::f64::consts::FRAC_PI_2);
        let c = CameraModel::default().mounted_at(&pose, 1.2);
        c.validate().unwrap();
        let p = c.pixel_to_world(c.cx, c.cy, 3.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 5.0).abs() < 1e-12 && (p[2] - 1.2).abs() < 1e-12);
        // a pixel right of center lands to the robot's right (-x when facing +y)
        let q = c.pixel_to_world(c.cx + 50.0, c.cy, 3.0).unwrap();
        assert!(q[0] > 1.0);
    }

    proptest! {
        #[test]
        fn linear_in_depth(u in 0.0f64..640.0, v in 0.0f64..480.0, z in 0.1f64..10.0,
                           tx in -5.0f64..5.0, th in -3.0f64..3.0) {
            let c = CameraModel::default().mounted_at(&Pose::new(tx, 1.0, th), 0.8);
            let a = c.pixel_to_world(u, v, z).unwrap();
            let b = c.pixel_to_world(u, v, 2.0 * z).unwrap();
            for i in 0..3 {
                let da = a[i] - c.translation[i];
                let db = b[i] - c.translation[i];
                prop_assert!((db - 2.0 * da).abs() < 1e-9);
            }
        }
    }
}
