//! Poses, the pinhole camera model and pixel/world projection.
//!
//! World frame: x east, y north, z up, meters. Yaw is measured from +x
//! towards +y. The camera sits `mount_height` above the pose position and
//! is pitched by `tilt_deg` (negative looks down).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{EqaError, Result};

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2π for tiny negative inputs
    if w >= PI {
        w -= 2.0 * PI;
    }
    w
}

/// Absolute heading difference in `[0, π]`.
pub fn angle_between(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            position: [x, y, 0.0],
            yaw: wrap_angle(yaw),
        }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.yaw.is_finite()
    }

    /// Planar distance to another pose.
    pub fn distance_to(&self, other: &Pose) -> f64 {
        dist2(self.xy(), other.xy())
    }

    pub fn with_yaw(&self, yaw: f64) -> Self {
        Self {
            position: self.position,
            yaw: wrap_angle(yaw),
        }
    }
}

pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Mount height above the floor, meters.
    pub mount_height: f64,
    pub tilt_deg: f64,
    pub hfov_deg: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// Sensor range; rays that hit nothing report this depth.
    pub max_depth: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            mount_height: 1.5,
            tilt_deg: -30.0,
            hfov_deg: 120.0,
            image_width: 64,
            image_height: 48,
            max_depth: 8.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(EqaError::Config(format!(
                "camera hfov must lie in (0, 180), got {}",
                self.hfov_deg
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(EqaError::Config("camera image size must be positive".into()));
        }
        if !(self.mount_height > 0.0) || !(self.max_depth > 0.0) {
            return Err(EqaError::Config(
                "camera height and max depth must be positive".into(),
            ));
        }
        if !self.tilt_deg.is_finite() || self.tilt_deg.abs() >= 90.0 {
            return Err(EqaError::Config("camera tilt must lie in (-90, 90)".into()));
        }
        Ok(())
    }

    /// Focal length in pixels; pixels are square.
    pub fn focal(&self) -> f64 {
        (self.image_width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn at(&self, pose: &Pose) -> Camera {
        Camera::new(*self, *pose)
    }
}

/// A camera model placed at a pose.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub model: CameraModel,
    pub pose: Pose,
    focal: f64,
    cos_yaw: f64,
    sin_yaw: f64,
    cos_tilt: f64,
    sin_tilt: f64,
}

/// A world point expressed in pixel coordinates. `u`, `v` are continuous:
/// pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Distance along the optical axis.
    pub forward: f64,
}

impl Camera {
    pub fn new(model: CameraModel, pose: Pose) -> Self {
        let tilt = model.tilt_deg.to_radians();
        Self {
            model,
            pose,
            focal: model.focal(),
            cos_yaw: pose.yaw.cos(),
            sin_yaw: pose.yaw.sin(),
            cos_tilt: tilt.cos(),
            sin_tilt: tilt.sin(),
        }
    }

    pub fn origin(&self) -> [f64; 3] {
        [
            self.pose.position[0],
            self.pose.position[1],
            self.pose.position[2] + self.model.mount_height,
        ]
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    /// Unit world-frame direction through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> [f64; 3] {
        self.ray_through(u as f64 + 0.5, v as f64 + 0.5)
    }

    /// Unit world-frame direction through continuous pixel coordinates.
    pub fn ray_through(&self, u: f64, v: f64) -> [f64; 3] {
        let cx = self.model.image_width as f64 / 2.0;
        let cy = self.model.image_height as f64 / 2.0;
        let xn = (u - cx) / self.focal;
        let yn = (v - cy) / self.focal;
        // camera frame (forward, left, up)
        let (f, l, up) = (1.0, -xn, -yn);
        let fw = f * self.cos_tilt - up * self.sin_tilt;
        let zw = f * self.sin_tilt + up * self.cos_tilt;
        let x = fw * self.cos_yaw - l * self.sin_yaw;
        let y = fw * self.sin_yaw + l * self.cos_yaw;
        let n = (x * x + y * y + zw * zw).sqrt();
        [x / n, y / n, zw / n]
    }

    /// Projects a world point. Returns `None` for points at or behind the
    /// image plane; the result may lie outside the image bounds.
    pub fn project(&self, p: [f64; 3]) -> Option<Projection> {
        let o = self.origin();
        let (rx, ry, rz) = (p[0] - o[0], p[1] - o[1], p[2] - o[2]);
        let fw = rx * self.cos_yaw + ry * self.sin_yaw;
        let l = -rx * self.sin_yaw + ry * self.cos_yaw;
        let f = fw * self.cos_tilt + rz * self.sin_tilt;
        let up = -fw * self.sin_tilt + rz * self.cos_tilt;
        if f <= 1e-9 {
            return None;
        }
        let cx = self.model.image_width as f64 / 2.0;
        let cy = self.model.image_height as f64 / 2.0;
        Some(Projection {
            u: cx + self.focal * (-l / f),
            v: cy + self.focal * (-up / f),
            forward: f,
        })
    }

    /// Pixel index containing a projection, if inside the image.
    pub fn pixel_of(&self, pr: &Projection) -> Option<(usize, usize)> {
        if pr.u < 0.0 || pr.v < 0.0 {
            return None;
        }
        let (u, v) = (pr.u.floor() as usize, pr.v.floor() as usize);
        (u < self.model.image_width && v < self.model.image_height).then_some((u, v))
    }

    /// Planar bearing of a world point relative to the camera heading.
    pub fn bearing_to(&self, p: [f64; 2]) -> f64 {
        let o = self.origin();
        wrap_angle((p[1] - o[1]).atan2(p[0] - o[0]) - self.pose.yaw)
    }
}
