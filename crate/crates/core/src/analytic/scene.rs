//! Ground-truth smoke scenes: Gaussian blobs carried by an analytic flow,
//! an optional analytic obstacle, and a ring of cameras.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{obstacle_mask, AnalyticFlow, AnalyticSdf};
use crate::error::{Error, Result};
use crate::field::{Domain, Spacetime};
use crate::radiance::{RenderSettings, SceneSource};
use crate::render::Camera;

/// Isotropic Gaussian puff of smoke at time `t_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBlob {
    pub center: [f64; 3],
    /// Standard deviation.
    pub width: f64,
    /// Peak density.
    pub amplitude: f64,
    pub color: [f64; 3],
}

impl GaussianBlob {
    pub fn density(&self, x: &Vector3<f64>) -> f64 {
        let d2 = (x - Vector3::from(self.center)).norm_squared();
        self.amplitude * (-0.5 * d2 / (self.width * self.width)).exp()
    }
}

/// Blobs transported by a flow: `rho(x, t) = rho0(Phi_{t -> t0}(x))`, masked by an obstacle.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvectedDensity {
    pub flow: AnalyticFlow,
    pub blobs: Vec<GaussianBlob>,
    /// Time at which the blobs are placed.
    pub t0: f64,
    /// RK4 steps for flows without an exact map.
    pub rk4_steps: usize,
    pub obstacle: Option<AnalyticSdf>,
    pub mask_band: f64,
}

impl AdvectedDensity {
    pub fn new(flow: AnalyticFlow, blobs: Vec<GaussianBlob>, t0: f64) -> Self {
        Self { flow, blobs, t0, rk4_steps: 64, obstacle: None, mask_band: 0.01 }
    }

    pub fn initial_density(&self, x: &Vector3<f64>) -> f64 {
        self.blobs.iter().map(|b| b.density(x)).sum()
    }

    /// Density-weighted blob color; the plain average where every blob has vanished.
    pub fn initial_color(&self, x: &Vector3<f64>) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for b in &self.blobs {
            let w = b.density(x);
            total += w;
            for c in 0..3 {
                acc[c] += w * b.color[c];
            }
        }
        if total > 1e-300 {
            acc.map(|v| v / total)
        } else if self.blobs.is_empty() {
            [0.0; 3]
        } else {
            let n = self.blobs.len() as f64;
            std::array::from_fn(|c| self.blobs.iter().map(|b| b.color[c]).sum::<f64>() / n)
        }
    }

    /// Position at `t0` of the particle found at `x` at time `t`.
    pub fn backtrace(&self, x: &Vector3<f64>, t: f64) -> Vector3<f64> {
        self.flow.flow_map(x, t, self.t0, self.rk4_steps)
    }

    fn mask(&self, x: &Vector3<f64>) -> f64 {
        self.obstacle.as_ref().map_or(1.0, |s| obstacle_mask(s.distance(x), self.mask_band))
    }

    /// Transported density without the obstacle mask.
    pub fn transported(&self, x: &Vector3<f64>, t: f64) -> f64 {
        self.initial_density(&self.backtrace(x, t))
    }

    pub fn density(&self, x: &Vector3<f64>, t: f64) -> f64 {
        let m = self.mask(x);
        if m == 0.0 {
            return 0.0;
        }
        m * self.transported(x, t)
    }

    pub fn color(&self, x: &Vector3<f64>, t: f64) -> [f64; 3] {
        self.initial_color(&self.backtrace(x, t))
    }

    pub fn sample(&self, x: &Vector3<f64>, t: f64) -> (f64, [f64; 3]) {
        let x0 = self.backtrace(x, t);
        (self.mask(x) * self.initial_density(&x0), self.initial_color(&x0))
    }
}

/// Cameras on a horizontal arc around the domain center, all looking at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraRig {
    pub count: usize,
    pub radius: f64,
    /// Total azimuth span of the training arc, centered on `+z`.
    pub arc_degrees: f64,
    pub elevation_degrees: f64,
    pub fov_y_degrees: f64,
    pub width: usize,
    pub height: usize,
    /// Extra `[azimuth, elevation]` views in degrees, excluded from training.
    pub holdout: Vec<[f64; 2]>,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            count: 5,
            radius: 3.0,
            arc_degrees: 120.0,
            elevation_degrees: 0.0,
            fov_y_degrees: 45.0,
            width: 64,
            height: 64,
            holdout: vec![[15.0, 20.0]],
        }
    }
}

impl CameraRig {
    fn camera(&self, center: Vector3<f64>, azimuth_deg: f64, elevation_deg: f64) -> Result<Camera> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let dir = Vector3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos());
        Camera::look_at(center + dir * self.radius, center, Vector3::y(), self.fov_y_degrees.to_radians(), self.width, self.height)
    }

    pub fn azimuths(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n).map(|i| -0.5 * self.arc_degrees + self.arc_degrees * i as f64 / (n - 1) as f64).collect(),
        }
    }

    pub fn training_cameras(&self, domain: &Domain) -> Result<Vec<Camera>> {
        let c = Vector3::from(domain.center());
        self.azimuths().into_iter().map(|a| self.camera(c, a, self.elevation_degrees)).collect()
    }

    pub fn holdout_cameras(&self, domain: &Domain) -> Result<Vec<Camera>> {
        let c = Vector3::from(domain.center());
        self.holdout.iter().map(|&[a, e]| self.camera(c, a, e)).collect()
    }
}

/// Everything that defines a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub domain: Domain,
    pub flow: AnalyticFlow,
    pub blobs: Vec<GaussianBlob>,
    pub obstacle: Option<AnalyticSdf>,
    #[serde(default = "default_band")]
    pub mask_band: f64,
    /// NeuS sharpness of the ground-truth obstacle render.
    #[serde(default = "default_gt_sharpness")]
    pub sharpness: f64,
    #[serde(default = "default_rk4_steps")]
    pub rk4_steps: usize,
    /// Frames spread evenly over the time interval, endpoints included.
    pub frames: usize,
    #[serde(default)]
    pub cameras: CameraRig,
    #[serde(default)]
    pub render: RenderSettings,
}

fn default_band() -> f64 {
    0.01
}

fn default_gt_sharpness() -> f64 {
    150.0
}

fn default_rk4_steps() -> usize {
    64
}

impl SceneConfig {
    /// Three puffs rising on a helix around a small sphere.
    pub fn mini_plume() -> Self {
        let colors = [[0.95, 0.55, 0.3], [0.4, 0.85, 0.5], [0.5, 0.55, 0.95]];
        let blobs = (0..3)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                GaussianBlob { center: [0.4 * a.cos(), -0.55, 0.4 * a.sin()], width: 0.12, amplitude: 6.0, color: colors[i] }
            })
            .collect();
        Self {
            domain: Domain::default(),
            flow: AnalyticFlow::Sum {
                parts: vec![
                    AnalyticFlow::RigidRotation { axis: [0.0, 1.0, 0.0], omega: 2.0, center: [0.0; 3] },
                    AnalyticFlow::Translation { velocity: [0.0, 0.5, 0.0] },
                ],
            },
            blobs,
            obstacle: Some(AnalyticSdf::sphere([0.0; 3], 0.2)),
            mask_band: default_band(),
            sharpness: default_gt_sharpness(),
            rk4_steps: default_rk4_steps(),
            frames: 30,
            cameras: CameraRig::default(),
            render: RenderSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if !(self.sharpness > 0.0) || !(self.mask_band > 0.0) || self.rk4_steps == 0 {
            return bad("sharpness, mask_band and rk4_steps must be positive");
        }
        if self.blobs.iter().any(|b| !(b.width > 0.0) || b.amplitude < 0.0) {
            return bad("blob width must be positive and amplitude non-negative");
        }
        let r = &self.cameras;
        if r.width == 0 || r.height == 0 || !(r.radius > 0.0) || !(r.fov_y_degrees > 0.0 && r.fov_y_degrees < 180.0) {
            return bad("camera rig needs positive size, radius and a field of view in (0, 180)");
        }
        Ok(())
    }

    pub fn frame_times(&self) -> Vec<f64> {
        let d = &self.domain;
        if self.frames == 1 {
            return vec![d.t_min];
        }
        (0..self.frames).map(|i| d.t_min + d.duration() * i as f64 / (self.frames - 1) as f64).collect()
    }
}

/// Analytic smoke plus analytic obstacle, rendered with the same code path as a learned scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScene {
    pub domain: Domain,
    pub smoke: AdvectedDensity,
    pub obstacle: Option<AnalyticSdf>,
    pub sharpness: f64,
}

impl AnalyticScene {
    pub fn from_config(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut smoke = AdvectedDensity::new(cfg.flow.clone(), cfg.blobs.clone(), cfg.domain.t_min);
        smoke.rk4_steps = cfg.rk4_steps;
        smoke.obstacle = cfg.obstacle.clone();
        smoke.mask_band = cfg.mask_band;
        Ok(Self { domain: cfg.domain, smoke, obstacle: cfg.obstacle.clone(), sharpness: cfg.sharpness })
    }

    /// Same scene with the smoke removed.
    pub fn without_smoke(&self) -> Self {
        let mut s = self.clone();
        s.smoke.blobs.clear();
        s
    }

    /// Obstacle color: the normal mapped into `[0, 1]^3`.
    pub fn obstacle_color(normal: &Vector3<f64>) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 + 0.5 * normal[i])
    }

    pub fn density(&self, p: &Spacetime) -> f64 {
        self.smoke.density(&p.x, p.t)
    }

    pub fn velocity(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.smoke.flow.velocity(x)
    }
}

impl SceneSource for AnalyticScene {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn dynamic_batch(&self, points: &[Spacetime]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        Ok(points.iter().map(|p| self.smoke.sample(&p.x, p.t)).unzip())
    }

    fn has_static(&self) -> bool {
        self.obstacle.is_some()
    }

    fn static_batch(&self, points: &[Vector3<f64>]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let sdf = self.obstacle.as_ref().ok_or_else(|| Error::InvalidArgument("scene has no obstacle".into()))?;
        Ok(points
            .iter()
            .map(|x| {
                let (s, g) = sdf.eval(x);
                let n = g.try_normalize(1e-12).unwrap_or_else(Vector3::zeros);
                (s, Self::obstacle_color(&n))
            })
            .unzip())
    }

    fn sharpness(&self) -> f64 {
        self.sharpness
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob() -> GaussianBlob {
        GaussianBlob { center: [0.1, -0.2, 0.3], width: 0.2, amplitude: 2.0, color: [1.0, 0.0, 0.0] }
    }

    #[test]
    fn time_zero_reproduces_initial_blobs() {
        let d = AdvectedDensity::new(AnalyticFlow::rotation_z(1.3), vec![blob()], 0.0);
        let x = Vector3::new(0.2, -0.1, 0.25);
        assert_eq!(d.density(&x, 0.0), blob().density(&x));
    }

    #[test]
    fn translation_moves_the_center() {
        let u = [0.3, -0.1, 0.2];
        let d = AdvectedDensity::new(AnalyticFlow::Translation { velocity: u }, vec![blob()], 0.0);
        let c = Vector3::from(blob().center) + Vector3::from(u) * 0.7;
        assert!((d.density(&c, 0.7) - 2.0).abs() < 1e-14);
    }

    /// `d rho/dt + u . grad rho` by central differences, for flows with and without exact maps.
    #[test]
    fn transport_residual_is_small() {
        let flows = [
            SceneConfig::mini_plume().flow,
            AnalyticFlow::TaylorGreen { amplitude: 0.5, wavenumber: 1.5 },
            AnalyticFlow::Abc { a: 0.3, b: 0.2, c: 0.25 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for flow in flows {
            let mut d = AdvectedDensity::new(flow.clone(), vec![blob(), GaussianBlob { center: [-0.3, 0.1, 0.0], ..blob() }], 0.0);
            d.rk4_steps = 400;
            let h = 1e-4;
            for _ in 0..50 {
                let x = Vector3::from_fn(|_, _| rng.random_range(-0.6..0.6));
                let t = rng.random_range(0.2..0.8);
                let dt = (d.transported(&x, t + h) - d.transported(&x, t - h)) / (2.0 * h);
                let grad = Vector3::from_fn(|i, _| {
                    let mut e = Vector3::zeros();
                    e[i] = h;
                    (d.transported(&(x + e), t) - d.transported(&(x - e), t)) / (2.0 * h)
                });
                let r = dt + flow.velocity(&x).dot(&grad);
                assert!(r.abs() < 1e-6, "{flow:?}: residual {r:e}");
            }
        }
    }

    #[test]
    fn density_vanishes_inside_the_obstacle() {
        let cfg = SceneConfig::mini_plume();
        let scene = AnalyticScene::from_config(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let t = rng.random_range(0.0..1.0);
            let inside = cfg.obstacle.as_ref().unwrap().distance(&x) <= 0.0;
            let rho = scene.density(&Spacetime::new(x, t));
            assert!(rho >= 0.0);
            if inside {
                assert_eq!(rho, 0.0);
            }
        }
    }

    #[test]
    fn rig_spans_the_front_arc() {
        let rig = CameraRig::default();
        assert_eq!(rig.azimuths(), vec![-60.0, -30.0, 0.0, 30.0, 60.0]);
        let cams = rig.training_cameras(&Domain::default()).unwrap();
        for c in &cams {
            assert!((c.position.norm() - 3.0).abs() < 1e-12);
            let p = c.project(&Vector3::zeros()).unwrap();
            assert!((p[0] - 32.0).abs() < 1e-9 && (p[1] - 32.0).abs() < 1e-9);
        }
        assert_eq!(rig.holdout_cameras(&Domain::default()).unwrap().len(), 1);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SceneConfig::mini_plume();
        let text = toml::to_string(&cfg).unwrap();
        let back: SceneConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<SceneConfig>(&format!("{text}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn frame_times_cover_the_interval() {
        let t = SceneConfig::mini_plume().frame_times();
        assert_eq!(t.len(), 30);
        assert_eq!((t[0], t[29]), (0.0, 1.0));
    }
}
