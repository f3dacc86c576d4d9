//! Closed-form steady velocity fields.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A steady, divergence-free analytic velocity field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticFlow {
    /// `u = omega * axis x (x - center)`.
    RigidRotation { axis: [f64; 3], omega: f64, center: [f64; 3] },
    Translation { velocity: [f64; 3] },
    /// `u = (A sin kx cos ky, -A cos kx sin ky, 0)`.
    TaylorGreen { amplitude: f64, wavenumber: f64 },
    /// Arnold-Beltrami-Childress flow.
    Abc { a: f64, b: f64, c: f64 },
    Sum { parts: Vec<AnalyticFlow> },
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

impl AnalyticFlow {
    pub fn rotation_z(omega: f64) -> Self {
        Self::RigidRotation { axis: [0.0, 0.0, 1.0], omega, center: [0.0; 3] }
    }

    pub fn velocity(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::RigidRotation { axis, omega, center } => *omega * v3(*axis).normalize().cross(&(x - v3(*center))),
            Self::Translation { velocity } => v3(*velocity),
            Self::TaylorGreen { amplitude: a, wavenumber: k } => {
                let (sx, cx) = (k * x.x).sin_cos();
                let (sy, cy) = (k * x.y).sin_cos();
                Vector3::new(a * sx * cy, -a * cx * sy, 0.0)
            }
            Self::Abc { a, b, c } => Vector3::new(
                a * x.z.sin() + c * x.y.cos(),
                b * x.x.sin() + a * x.z.cos(),
                c * x.y.sin() + b * x.x.cos(),
            ),
            Self::Sum { parts } => parts.iter().map(|p| p.velocity(x)).sum(),
        }
    }

    /// `J[i][j] = du_i/dx_j`.
    pub fn velocity_gradient(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            Self::RigidRotation { axis, omega, .. } => *omega * v3(*axis).normalize().cross_matrix(),
            Self::Translation { .. } => Matrix3::zeros(),
            Self::TaylorGreen { amplitude: a, wavenumber: k } => {
                let (sx, cx) = (k * x.x).sin_cos();
                let (sy, cy) = (k * x.y).sin_cos();
                let (p, q) = (a * k * cx * cy, a * k * sx * sy);
                Matrix3::new(p, -q, 0.0, q, -p, 0.0, 0.0, 0.0, 0.0)
            }
            Self::Abc { a, b, c } => Matrix3::new(
                0.0,
                -c * x.y.sin(),
                a * x.z.cos(),
                b * x.x.cos(),
                0.0,
                -a * x.z.sin(),
                -b * x.x.sin(),
                c * x.y.cos(),
                0.0,
            ),
            Self::Sum { parts } => parts.iter().map(|p| p.velocity_gradient(x)).sum(),
        }
    }

    pub fn divergence(&self, x: &Vector3<f64>) -> f64 {
        self.velocity_gradient(x).trace()
    }

    /// Material acceleration `(u . grad) u` of the steady field.
    pub fn acceleration(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.velocity_gradient(x) * self.velocity(x)
    }

    /// Closed-form map for rotations, translations and their sums.
    ///
    /// A rotation plus a translation is a screw motion: the component of the
    /// translation perpendicular to the axis shifts the rotation center, the
    /// parallel component drifts along the axis.
    pub fn flow_map_exact(&self, x: &Vector3<f64>, t: f64, t_target: f64) -> Option<Vector3<f64>> {
        let dt = t_target - t;
        match self {
            Self::Translation { velocity } => Some(x + v3(*velocity) * dt),
            Self::RigidRotation { axis, omega, center } => {
                let c = v3(*center);
                let rot = Rotation3::from_axis_angle(&Unit::new_normalize(v3(*axis)), omega * dt);
                Some(c + rot * (x - c))
            }
            Self::Sum { parts } => {
                let mut rotation = None;
                let mut drift = Vector3::zeros();
                for p in parts {
                    match p {
                        Self::Translation { velocity } => drift += v3(*velocity),
                        Self::RigidRotation { axis, omega, center } if rotation.is_none() => {
                            rotation = Some((v3(*axis).normalize(), *omega, v3(*center)))
                        }
                        Self::Sum { .. } | Self::RigidRotation { .. } | Self::TaylorGreen { .. } | Self::Abc { .. } => {
                            return None
                        }
                    }
                }
                match rotation {
                    None => Some(x + drift * dt),
                    Some((a, omega, c)) if omega != 0.0 => {
                        let par = a * a.dot(&drift);
                        let perp = drift - par;
                        let c_shift = c + a.cross(&perp) / omega;
                        let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(a), omega * dt);
                        Some(c_shift + rot * (x - c_shift) + par * dt)
                    }
                    Some(_) => Some(x + drift * dt),
                }
            }
            Self::TaylorGreen { .. } | Self::Abc { .. } => None,
        }
    }

    /// Classical fourth-order Runge-Kutta integration of a pathline.
    pub fn flow_map_rk4(&self, x: &Vector3<f64>, t: f64, t_target: f64, steps: usize) -> Result<Vector3<f64>> {
        if steps == 0 {
            return Err(Error::InvalidArgument("RK4 needs at least one step".into()));
        }
        Ok(rk4(|p, _| self.velocity(p), *x, t, t_target, steps))
    }

    /// Exact map where available, RK4 with `steps` otherwise.
    pub fn flow_map(&self, x: &Vector3<f64>, t: f64, t_target: f64, steps: usize) -> Vector3<f64> {
        self.flow_map_exact(x, t, t_target).unwrap_or_else(|| rk4(|p, _| self.velocity(p), *x, t, t_target, steps.max(1)))
    }
}

/// Integrate `dx/dt = f(x, t)` from `t0` to `t1` in `steps` RK4 steps.
pub fn rk4<F>(f: F, mut x: Vector3<f64>, t0: f64, t1: f64, steps: usize) -> Vector3<f64>
where
    F: Fn(&Vector3<f64>, f64) -> Vector3<f64>,
{
    let h = (t1 - t0) / steps as f64;
    let mut t = t0;
    for _ in 0..steps {
        let k1 = f(&x, t);
        let k2 = f(&(x + k1 * (0.5 * h)), t + 0.5 * h);
        let k3 = f(&(x + k2 * (0.5 * h)), t + 0.5 * h);
        let k4 = f(&(x + k3 * h), t + h);
        x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
        t += h;
    }
    x
}
