//! Pinhole cameras.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn length(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / length(a))
}

/// Depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

/// Orthonormal camera frame: `right` and `down` span the image plane and
/// `forward` is the viewing direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn new(
        position: Vec3,
        look_at: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            position,
            look_at,
            up,
            fov_y,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on a horizontal circle around `target`, `azimuth` in radians
    /// measured from +z towards +x, at height `elevation` above the target.
    pub fn orbit(
        target: Vec3,
        radius: f64,
        azimuth: f64,
        elevation: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let position = [
            target[0] + radius * azimuth.sin(),
            target[1] + elevation,
            target[2] + radius * azimuth.cos(),
        ];
        Self {
            position,
            look_at: target,
            up: [0.0, 1.0, 0.0],
            fov_y,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::Domain(format!("fov {} outside (0, pi)", self.fov_y)));
        }
        let fwd = sub(self.look_at, self.position);
        if length(fwd) == 0.0 {
            return Err(Error::Domain("camera look direction is zero".into()));
        }
        if length(cross(fwd, self.up)) < 1e-12 {
            return Err(Error::Domain("camera up is parallel to look direction".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("camera image size must be nonzero".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let forward = normalize(sub(self.look_at, self.position));
        let right = normalize(cross(forward, self.up));
        let down = cross(forward, right);
        let focal = 0.5 * self.height as f64 / (0.5 * self.fov_y).tan();
        CameraFrame {
            right,
            down,
            forward,
            focal,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
        }
    }

    pub fn project(&self, x: Vec3) -> Projection {
        self.frame().project(self.position, x)
    }

    /// True when the projection lands inside the image rectangle.
    pub fn in_frustum(&self, p: &Projection) -> bool {
        p.valid
            && p.u >= 0.0
            && p.u < self.width as f64
            && p.v >= 0.0
            && p.v < self.height as f64
    }
}

impl CameraFrame {
    #[inline]
    pub fn project(&self, origin: Vec3, x: Vec3) -> Projection {
        let d = sub(x, origin);
        let depth = dot3(d, self.forward);
        if !(depth > MIN_DEPTH) {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth,
                valid: false,
            };
        }
        Projection {
            u: self.cx + self.focal * dot3(d, self.right) / depth,
            v: self.cy + self.focal * dot3(d, self.down) / depth,
            depth,
            valid: true,
        }
    }
}
