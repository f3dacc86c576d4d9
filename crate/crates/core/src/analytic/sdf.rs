//! Exact signed distance functions. Negative inside.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum gradient norm for a well-defined normal.
pub const MIN_GRAD_NORM: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSdf {
    Sphere { center: [f64; 3], radius: f64 },
    /// Cylinder of `radius` around `axis` through `center`, capped at `+-half_height`.
    CappedCylinder { center: [f64; 3], axis: [f64; 3], radius: f64, half_height: f64 },
    /// Box centered at the origin.
    Box { half_widths: [f64; 3] },
    Translate { offset: [f64; 3], inner: Box<AnalyticSdf> },
    Union { parts: Vec<AnalyticSdf> },
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

impl AnalyticSdf {
    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        Self::Sphere { center, radius }
    }

    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        self.eval(x).0
    }

    /// Value and gradient.
    pub fn eval(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        match self {
            Self::Sphere { center, radius } => {
                let d = x - v3(*center);
                let r = d.norm();
                let g = if r > 0.0 { d / r } else { Vector3::zeros() };
                (r - radius, g)
            }
            Self::CappedCylinder { center, axis, radius, half_height } => {
                let a = v3(*axis).normalize();
                let d = x - v3(*center);
                let along = a.dot(&d);
                let radial = d - a * along;
                let rho = radial.norm();
                let er = if rho > 0.0 { radial / rho } else { Vector3::zeros() };
                let ea = a * along.signum();
                let (qr, qa) = (rho - radius, along.abs() - half_height);
                if qr > 0.0 && qa > 0.0 {
                    let n = qr.hypot(qa);
                    (n, (er * qr + ea * qa) / n)
                } else if qr > qa {
                    (qr, er)
                } else {
                    (qa, ea)
                }
            }
            Self::Box { half_widths } => {
                let q = Vector3::from_fn(|i, _| x[i].abs() - half_widths[i]);
                let sign = x.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                let outside = q.map(|v| v.max(0.0));
                let n = outside.norm();
                if n > 0.0 {
                    (n, outside.component_mul(&sign) / n)
                } else {
                    let i = q.imax();
                    let mut g = Vector3::zeros();
                    g[i] = sign[i];
                    (q[i], g)
                }
            }
            Self::Translate { offset, inner } => inner.eval(&(x - v3(*offset))),
            Self::Union { parts } => parts
                .iter()
                .map(|p| p.eval(x))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap_or((f64::INFINITY, Vector3::zeros())),
        }
    }

    /// Unit outward normal.
    pub fn normal(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (_, g) = self.eval(x);
        let n = g.norm();
        if n <= MIN_GRAD_NORM {
            return Err(Error::DegenerateGradient(n));
        }
        Ok(g / n)
    }
}

/// Density mask: 0 inside, cosine ramp across `[0, band]`, 1 beyond.
pub fn obstacle_mask(s: f64, band: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= band {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * s / band).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shapes() -> Vec<AnalyticSdf> {
        vec![
            AnalyticSdf::sphere([0.1, -0.2, 0.3], 0.4),
            AnalyticSdf::CappedCylinder { center: [0.0; 3], axis: [0.0, 1.0, 1.0], radius: 0.3, half_height: 0.5 },
            AnalyticSdf::Box { half_widths: [0.3, 0.5, 0.2] },
            AnalyticSdf::Translate { offset: [0.2, 0.0, 0.0], inner: Box::new(AnalyticSdf::Box { half_widths: [0.1; 3] }) },
        ]
    }

    #[test]
    fn sphere_values() {
        let s = AnalyticSdf::sphere([0.0; 3], 1.0);
        let p = Vector3::new(2.0, 0.0, 0.0);
        assert_eq!(s.distance(&p), 1.0);
        assert_eq!(s.normal(&p).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(s.distance(&Vector3::new(0.5, 0.0, 0.0)), -0.5);
        assert!(matches!(s.normal(&Vector3::zeros()), Err(Error::DegenerateGradient(_))));
    }

    #[test]
    fn gradients_are_unit_and_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for shape in shapes() {
            let mut checked = 0;
            while checked < 500 {
                let x = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let (s, g) = shape.eval(&x);
                let h = 1e-6;
                let fd = Vector3::from_fn(|j, _| {
                    let mut e = Vector3::zeros();
                    e[j] = h;
                    (shape.distance(&(x + e)) - shape.distance(&(x - e))) / (2.0 * h)
                });
                // skip points near kinks of the distance function
                if (fd.norm() - 1.0).abs() > 1e-6 || s.abs() < 1e-3 {
                    continue;
                }
                assert!((g.norm() - 1.0).abs() < 1e-8, "{shape:?} at {x}");
                assert!((fd - g).norm() < 1e-5);
                checked += 1;
            }
        }
    }

    #[test]
    fn box_distance_hand_values() {
        let b = AnalyticSdf::Box { half_widths: [1.0, 1.0, 1.0] };
        assert_eq!(b.distance(&Vector3::new(2.0, 0.0, 0.0)), 1.0);
        assert!((b.distance(&Vector3::new(2.0, 2.0, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.distance(&Vector3::new(0.5, 0.0, 0.0)), -0.5);
    }

    #[test]
    fn union_takes_minimum() {
        let u = AnalyticSdf::Union { parts: vec![AnalyticSdf::sphere([-1.0, 0.0, 0.0], 0.5), AnalyticSdf::sphere([1.0, 0.0, 0.0], 0.5)] };
        assert_eq!(u.distance(&Vector3::new(1.0, 0.0, 0.0)), -0.5);
        assert_eq!(u.distance(&Vector3::new(0.0, 0.0, 0.0)), 0.5);
    }

    #[test]
    fn mask_ramp() {
        assert_eq!(obstacle_mask(-0.1, 0.01), 0.0);
        assert_eq!(obstacle_mask(0.0, 0.01), 0.0);
        assert!((obstacle_mask(0.005, 0.01) - 0.5).abs() < 1e-15);
        assert_eq!(obstacle_mask(0.02, 0.01), 1.0);
    }
}
