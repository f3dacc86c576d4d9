//! Pinhole cameras and rays.
//!
//! Camera frame follows the computer-vision convention: `+z` forward, `+x`
//! right, `+y` down in the image.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::Domain;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// World-from-camera rotation; columns are the camera axes in world coordinates.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub position: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>, focal: [f64; 2], principal: [f64; 2], size: [usize; 2]) -> Result<Self> {
        let cam = Self {
            rotation,
            position,
            fx: focal[0],
            fy: focal[1],
            cx: principal[0],
            cy: principal[1],
            width: size[0],
            height: size[1],
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` roughly the world up direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::InvalidArgument("eye equals target".into()))?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or_else(|| Error::InvalidArgument("up parallel to view".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self::new(rotation, eye, [f, f], [0.5 * width as f64, 0.5 * height as f64], [width, height])
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if err > 1e-10 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!("camera rotation not orthonormal (err {err:e})")));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal length must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let d = Vector3::new((px as f64 + 0.5 - self.cx) / self.fx, (py as f64 + 0.5 - self.cy) / self.fy, 1.0);
        Ray { origin: self.position, dir: (self.rotation * d).normalize(), near: 0.0, far: f64::INFINITY }
    }

    /// Pixel coordinates of a world point, if in front of the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.rotation.transpose() * (x - self.position);
        (c.z > 0.0).then(|| [self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, h: f64) -> Vector3<f64> {
        self.origin + self.dir * h
    }

    /// Restrict `[near, far]` to the part inside the domain box; `None` if the ray misses it.
    pub fn clip_to(&self, domain: &Domain) -> Option<Ray> {
        let (mut t0, mut t1) = (self.near.max(0.0), self.far);
        for i in 0..3 {
            let inv = 1.0 / self.dir[i];
            let mut a = (domain.lo[i] - self.origin[i]) * inv;
            let mut b = (domain.hi[i] - self.origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a.is_nan() || b.is_nan() {
                // parallel to the slab: inside or out for every h
                if self.origin[i] < domain.lo[i] || self.origin[i] > domain.hi[i] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        // shrink slightly so sample points never leave the box through rounding
        let pad = 1e-9 * (1.0 + t1.abs());
        (t1 - t0 > 2.0 * pad).then(|| Ray { near: t0 + pad, far: t1 - pad, ..*self })
    }
}

/// Sorted sample depths along a ray and segment lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub depths: Vec<f64>,
    /// `deltas[i] = depths[i + 1] - depths[i]`, last one runs to `far`.
    pub deltas: Vec<f64>,
}

impl RaySamples {
    /// Stratified samples: one per equal bin of `[near, far]`, uniformly jittered
    /// when `rng` is given, bin centers otherwise.
    pub fn stratified<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: Option<&mut R>) -> Self {
        let width = (ray.far - ray.near) / n as f64;
        let depths: Vec<f64> = match rng {
            Some(rng) => (0..n).map(|i| ray.near + (i as f64 + rng.random::<f64>()) * width).collect(),
            None => (0..n).map(|i| ray.near + (i as f64 + 0.5) * width).collect(),
        };
        let deltas = (0..n).map(|i| if i + 1 < n { depths[i + 1] - depths[i] } else { ray.far - depths[i] }).collect();
        Self { depths, deltas }
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::y(), 0.8, 64, 48).unwrap();
        let p = cam.project(&Vector3::zeros()).unwrap();
        assert!((p[0] - 32.0).abs() < 1e-12 && (p[1] - 24.0).abs() < 1e-12);
        // world up projects above the center (image y grows downward)
        assert!(cam.project(&Vector3::new(0.0, 0.5, 0.0)).unwrap()[1] < 24.0);
        let r = cam.ray(10, 5);
        assert!((r.dir.norm() - 1.0).abs() < 1e-12);
        let hit = r.at(3.0 / r.dir.dot(&-Vector3::z()));
        let q = cam.project(&hit).unwrap();
        assert!((q[0] - 10.5).abs() < 1e-9 && (q[1] - 5.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Camera::new(Matrix3::identity(), Vector3::zeros(), [0.0, 1.0], [0.0, 0.0], [4, 4]).is_err());
        assert!(Camera::new(Matrix3::identity() * 2.0, Vector3::zeros(), [1.0, 1.0], [0.0, 0.0], [4, 4]).is_err());
    }

    #[test]
    fn slab_clipping() {
        let d = Domain::default();
        let r = Ray { origin: Vector3::new(0.0, 0.0, 3.0), dir: -Vector3::z(), near: 0.0, far: f64::INFINITY };
        let c = r.clip_to(&d).unwrap();
        assert!((c.near - 2.0).abs() < 1e-8 && (c.far - 4.0).abs() < 1e-8);
        let miss = Ray { origin: Vector3::new(2.0, 0.0, 3.0), ..r };
        assert!(miss.clip_to(&d).is_none());
        let inside = Ray { origin: Vector3::zeros(), dir: Vector3::x(), near: 0.0, far: f64::INFINITY };
        let c = inside.clip_to(&d).unwrap();
        assert!(c.near < 1e-8 && (c.far - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stratified_samples_are_sorted() {
        let r = Ray { origin: Vector3::zeros(), dir: Vector3::x(), near: 0.5, far: 1.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = RaySamples::stratified(&r, 16, Some(&mut rng));
        assert!(s.depths.windows(2).all(|w| w[1] > w[0]));
        assert!(s.deltas.iter().all(|&d| d > 0.0));
        assert!(s.depths[0] >= 0.5 && *s.depths.last().unwrap() < 1.5);
        let mid = RaySamples::stratified::<ChaCha8Rng>(&r, 4, None);
        assert_eq!(mid.depths, vec![0.625, 0.875, 1.125, 1.375]);
    }
}
