use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Vec3;

/// Pinhole camera, y-up. Pixel rows run top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewTag {
    Front,
    Side,
    Back,
}

impl ViewTag {
    /// Azimuth 0 looks at the body's front (camera on +z).
    pub fn from_azimuth(deg: f64) -> Self {
        let a = deg.rem_euclid(360.0);
        if !(60.0..300.0).contains(&a) {
            ViewTag::Front
        } else if (120.0..240.0).contains(&a) {
            ViewTag::Back
        } else {
            ViewTag::Side
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ViewTag::Front => "front",
            ViewTag::Side => "side",
            ViewTag::Back => "back",
        }
    }
}

impl std::fmt::Display for ViewTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub radius: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub fov_deg: [f64; 2],
    pub look_at: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            radius: [1.0, 1.5],
            elevation_deg: [-10.0, 60.0],
            azimuth_deg: [0.0, 360.0],
            fov_deg: [40.0, 70.0],
            look_at: [0.0; 3],
        }
    }
}

/// Spherical placement of a sampled camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub radius: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub fov_deg: f64,
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

impl Camera {
    /// Camera on a sphere around `look_at`; azimuth measured from +z towards +x.
    pub fn orbit(orbit: &Orbit, look_at: [f64; 3], width: usize, height: usize) -> Self {
        let (el, az) = (orbit.elevation_deg.to_radians(), orbit.azimuth_deg.to_radians());
        let dir = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        let pos = Vec3::from(look_at) + orbit.radius * dir;
        Self {
            position: pos.into(),
            look_at,
            up: [0.0, 1.0, 0.0],
            fov_y_deg: orbit.fov_deg,
            width,
            height,
        }
    }

    /// Orthonormal (right, up, forward) basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let fwd = (Vec3::from(self.look_at) - Vec3::from(self.position)).normalize();
        let mut right = fwd.cross(&Vec3::from(self.up));
        if right.norm() < 1e-12 {
            right = fwd.cross(&Vec3::z());
        }
        let right = right.normalize();
        (right, right.cross(&fwd), fwd)
    }

    fn tan_half(&self) -> f64 {
        (self.fov_y_deg.to_radians() * 0.5).tan()
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Unit ray direction through the centre of pixel `(row, col)`.
    pub fn ray_direction(&self, row: usize, col: usize) -> Vec3 {
        let (right, up, fwd) = self.basis();
        let t = self.tan_half();
        let x = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * t * self.aspect();
        let y = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * t;
        (fwd + x * right + y * up).normalize()
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    /// Continuous pixel coordinates (col, row) of a world point, or `None`
    /// behind the camera. Pixel centres sit at half-integers.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let (right, up, fwd) = self.basis();
        let d = p - self.origin();
        let z = d.dot(&fwd);
        if z <= 1e-9 {
            return None;
        }
        let t = self.tan_half();
        let nx = d.dot(&right) / z / (t * self.aspect());
        let ny = d.dot(&up) / z / t;
        Some(((nx + 1.0) * 0.5 * self.width as f64, (1.0 - ny) * 0.5 * self.height as f64))
    }
}

/// Draws a camera from `cfg`; deterministic in the rng state.
pub fn sample_camera(rng: &mut impl Rng, cfg: &CameraConfig, width: usize, height: usize) -> (Camera, ViewTag, Orbit) {
    let orbit = Orbit {
        radius: uniform(rng, cfg.radius),
        elevation_deg: uniform(rng, cfg.elevation_deg),
        azimuth_deg: uniform(rng, cfg.azimuth_deg),
        fov_deg: uniform(rng, cfg.fov_deg),
    };
    (Camera::orbit(&orbit, cfg.look_at, width, height), ViewTag::from_azimuth(orbit.azimuth_deg), orbit)
}
