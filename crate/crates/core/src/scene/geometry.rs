use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Smallest distance to any face of the box `[0, dims]`.
    pub fn wall_clearance(self, dims: Vec3) -> f64 {
        [self.x, dims.x - self.x, self.y, dims.y - self.y, self.z, dims.z - self.z]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Uniform linear array. Element `m` sits at
/// `center + ((M - 1)/2 - m) * spacing * axis`, so element 0 is nearest to the
/// endfire direction `axis` (0 degrees) and element `m` lags it by
/// `m * spacing * cos(theta) / c` for a far-field source at angle `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_mics: usize,
    pub spacing: f64,
    pub center: Vec3,
    /// Euler rotation about x, then y, then z (radians).
    pub rotation: [f64; 3],
    pub axis: Vec3,
    pub element_positions: Vec<Vec3>,
}

impl ArrayGeometry {
    pub fn new(num_mics: usize, spacing: f64, center: Vec3, rotation: [f64; 3]) -> Self {
        let axis = rotate(Vec3::new(1.0, 0.0, 0.0), rotation);
        let mid = 0.5 * (num_mics as f64 - 1.0);
        let element_positions = (0..num_mics)
            .map(|m| center + axis * ((mid - m as f64) * spacing))
            .collect();
        Self {
            num_mics,
            spacing,
            center,
            rotation,
            axis,
            element_positions,
        }
    }

    /// Angle between the array axis and the direction from the center to `p`.
    pub fn doa_deg(&self, p: Vec3) -> f64 {
        let d = p - self.center;
        (self.axis.dot(d) / d.norm()).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Position at distance `r` from the center whose DOA is `theta_deg`,
    /// rotated by `azimuth` around the axis.
    pub fn point_at(&self, theta_deg: f64, azimuth: f64, r: f64) -> Vec3 {
        let a = self.axis;
        // Any unit vector orthogonal to the axis, then the third by cross product.
        let helper = if a.z.abs() < 0.9 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let u = {
            let p = helper - a * a.dot(helper);
            p * (1.0 / p.norm())
        };
        let w = Vec3::new(a.y * u.z - a.z * u.y, a.z * u.x - a.x * u.z, a.x * u.y - a.y * u.x);
        let th = theta_deg.to_radians();
        let radial = u * azimuth.cos() + w * azimuth.sin();
        self.center + (a * th.cos() + radial * th.sin()) * r
    }
}

fn rotate(v: Vec3, [rx, ry, rz]: [f64; 3]) -> Vec3 {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    let v = Vec3::new(v.x, cx * v.y - sx * v.z, sx * v.y + cx * v.z);
    let v = Vec3::new(cy * v.x + sy * v.z, v.y, -sy * v.x + cy * v.z);
    Vec3::new(cz * v.x - sz * v.y, sz * v.x + cz * v.y, v.z)
}
