//! Training configuration and schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Domain;
use crate::losses::Aabb;
use crate::radiance::RenderSettings;

/// A loss weight: a constant, or `[start, end]` ramped linearly over stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Fixed(f64),
    Ramp([f64; 2]),
}

impl Weight {
    /// Value at stage-2 progress `p` in `[0, 1]`.
    pub fn at(&self, p: f64) -> f64 {
        match *self {
            Self::Fixed(w) => w,
            Self::Ramp([a, b]) => a + (b - a) * p.clamp(0.0, 1.0),
        }
    }

    fn values(&self) -> [f64; 2] {
        match *self {
            Self::Fixed(w) => [w, w],
            Self::Ramp(r) => r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub image: Weight,
    pub distillation: Weight,
    pub eikonal: Weight,
    pub self_cycle: Weight,
    pub cross_cycle: Weight,
    pub feature: Weight,
    pub nse: Weight,
    pub div: Weight,
    pub transport: Weight,
    /// Mix between Lagrangian (0) and Eulerian (1) density in the transport residual.
    pub transport_lambda: Weight,
    pub velocity_mapping: Weight,
    pub density_mapping: Weight,
    pub color_mapping: Weight,
    pub boundary_u: Weight,
    pub boundary_sigma: Weight,
    /// Opacity penalty inside the occluded image loss.
    pub occluded_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        use Weight::*;
        Self {
            image: Fixed(1.0),
            distillation: Fixed(1.0),
            eikonal: Fixed(0.1),
            self_cycle: Fixed(1.0),
            cross_cycle: Fixed(1.0),
            feature: Fixed(0.01),
            nse: Fixed(0.001),
            div: Fixed(0.001),
            transport: Ramp([0.01, 0.1]),
            transport_lambda: Ramp([0.1, 1.0]),
            velocity_mapping: Ramp([0.01, 0.1]),
            density_mapping: Ramp([0.01, 0.1]),
            color_mapping: Fixed(0.01),
            boundary_u: Fixed(0.5),
            boundary_sigma: Fixed(0.5),
            occluded_lambda: 1.0,
        }
    }
}

impl LossWeights {
    /// Every physics and mapping weight set to zero; image, distillation and eikonal kept.
    pub fn without_physics(mut self) -> Self {
        let zero = Weight::Fixed(0.0);
        for w in [
            &mut self.self_cycle,
            &mut self.cross_cycle,
            &mut self.feature,
            &mut self.nse,
            &mut self.div,
            &mut self.transport,
            &mut self.velocity_mapping,
            &mut self.density_mapping,
            &mut self.color_mapping,
            &mut self.boundary_u,
            &mut self.boundary_sigma,
        ] {
            *w = zero;
        }
        self
    }

    fn all(&self) -> [(&'static str, &Weight); 15] {
        [
            ("image", &self.image),
            ("distillation", &self.distillation),
            ("eikonal", &self.eikonal),
            ("self_cycle", &self.self_cycle),
            ("cross_cycle", &self.cross_cycle),
            ("feature", &self.feature),
            ("nse", &self.nse),
            ("div", &self.div),
            ("transport", &self.transport),
            ("transport_lambda", &self.transport_lambda),
            ("velocity_mapping", &self.velocity_mapping),
            ("density_mapping", &self.density_mapping),
            ("color_mapping", &self.color_mapping),
            ("boundary_u", &self.boundary_u),
            ("boundary_sigma", &self.boundary_sigma),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSizes {
    pub rays: usize,
    /// Points for the single-time losses.
    pub physics: usize,
    /// `(x_a, t_a, t_b)` pairs for the mapping losses.
    pub mapping: usize,
    /// Points near and inside the obstacle.
    pub boundary: usize,
    /// Share of physics points drawn along training rays instead of uniformly.
    pub ray_point_fraction: f64,
    /// Depth below the surface for interior boundary samples.
    pub interior_depth: f64,
}

impl Default for BatchSizes {
    fn default() -> Self {
        Self { rays: 1024, physics: 4096, mapping: 4096, boundary: 1024, ray_point_fraction: 0.5, interior_depth: 0.25 }
    }
}

/// `dt` for pair sampling, in frames: linear from `start_frames` to `end_frames`
/// over the first `ramp_fraction` of stage 2, then constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtSchedule {
    pub start_frames: f64,
    pub end_frames: f64,
    pub ramp_fraction: f64,
}

impl Default for DtSchedule {
    fn default() -> Self {
        Self { start_frames: 1.0, end_frames: 50.0, ramp_fraction: 0.6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendDirection {
    /// Blend weight 0 -> 1: occluded loss first, composite later.
    ToComposite,
    /// Blend weight 1 -> 0.
    ToOccluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendSchedule {
    pub iters: u64,
    pub direction: BlendDirection,
}

impl Default for BlendSchedule {
    fn default() -> Self {
        Self { iters: 2000, direction: BlendDirection::ToComposite }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Image {
    /// Smoke only, even when static geometry exists.
    Dynamic,
    /// Smoke and static geometry composited; smoke only when there is no static branch.
    Composite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    /// Learning rate drops by 10x every this many iterations (counted over both stages).
    pub decay_every: u64,
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    pub batch: BatchSizes,
    pub weights: LossWeights,
    pub dt: DtSchedule,
    pub blend: BlendSchedule,
    pub stage1_image: Stage1Image,
    /// Surface band half-width for the boundary losses.
    pub boundary_eps: f64,
    /// Region excluded from the feature-transport loss.
    pub inflow: Option<Aabb>,
    /// Each loss batch is split into this many shards evaluated in parallel.
    pub shards: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    /// Samples per ray during training.
    pub render: RenderSettings,
    /// Zero the trajectory-field gradients, keeping a field fitted beforehand
    /// (for example by `fit_flow`) fixed while the density and color networks train.
    pub freeze_field: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 5e-4,
            decay_every: 10_000,
            stage1_iters: 2_000,
            stage2_iters: 8_000,
            batch: BatchSizes::default(),
            weights: LossWeights::default(),
            dt: DtSchedule::default(),
            blend: BlendSchedule::default(),
            stage1_image: Stage1Image::Composite,
            boundary_eps: 0.01,
            inflow: None,
            shards: 1,
            threads: 0,
            render: RenderSettings::default(),
            freeze_field: false,
        }
    }
}

impl TrainConfig {
    /// Iteration counts from the original schedule instead of the desk-scale defaults.
    pub fn full_scale() -> Self {
        Self { decay_every: 250_000, stage1_iters: 50_000, stage2_iters: 350_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || self.decay_every == 0 {
            return bad("lr and decay_every must be positive".into());
        }
        let b = &self.batch;
        if b.rays == 0 || b.physics == 0 || b.mapping == 0 || b.boundary == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&b.ray_point_fraction) || !(b.interior_depth > 0.0) {
            return bad("ray_point_fraction must lie in [0, 1] and interior_depth be positive".into());
        }
        for (name, w) in self.weights.all() {
            if w.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("weight {name} must be finite and non-negative"));
            }
        }
        if self.weights.transport_lambda.values().iter().any(|v| *v > 1.0) {
            return bad("transport_lambda must lie in [0, 1]".into());
        }
        if !(self.weights.occluded_lambda >= 0.0) {
            return bad("occluded_lambda must be non-negative".into());
        }
        let d = &self.dt;
        if !(d.start_frames > 0.0 && d.end_frames > 0.0 && d.ramp_fraction > 0.0 && d.ramp_fraction <= 1.0) {
            return bad("dt schedule needs positive frame counts and ramp_fraction in (0, 1]".into());
        }
        if !(self.boundary_eps > 0.0) || self.shards == 0 {
            return bad("boundary_eps and shards must be positive".into());
        }
        if self.render.dynamic_samples == 0 {
            return bad("training needs at least one dynamic sample per ray".into());
        }
        Ok(())
    }

    /// Learning rate at global iteration `iter`: `lr * 10^-k` after `k` decay periods.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let k = (iter / self.decay_every) as i32;
        self.lr * 10f64.powi(-k)
    }

    /// Stage-2 progress in `[0, 1]`.
    pub fn progress(&self, stage2_iter: u64) -> f64 {
        if self.stage2_iters == 0 {
            1.0
        } else {
            (stage2_iter as f64 / self.stage2_iters as f64).min(1.0)
        }
    }

    /// Pair interval half-width in frames.
    pub fn dt_frames(&self, stage2_iter: u64) -> f64 {
        let ramp = self.dt.ramp_fraction * self.stage2_iters as f64;
        let p = if ramp > 0.0 { (stage2_iter as f64 / ramp).min(1.0) } else { 1.0 };
        self.dt.start_frames + (self.dt.end_frames - self.dt.start_frames) * p
    }

    /// Pair interval half-width in time units of `domain`.
    pub fn dt_at(&self, stage2_iter: u64, domain: &Domain) -> f64 {
        self.dt_frames(stage2_iter) * domain.frame_dt()
    }

    /// Blend weight of the composite image loss.
    pub fn blend_at(&self, stage2_iter: u64) -> f64 {
        let p = if self.blend.iters == 0 { 1.0 } else { (stage2_iter as f64 / self.blend.iters as f64).min(1.0) };
        match self.blend.direction {
            BlendDirection::ToComposite => p,
            BlendDirection::ToOccluded => 1.0 - p,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_decays_by_powers_of_ten() {
        let c = TrainConfig { decay_every: 100, ..TrainConfig::default() };
        assert_eq!(c.lr_at(0), 5e-4);
        assert_eq!(c.lr_at(99), 5e-4);
        for k in 1..5 {
            assert_eq!(c.lr_at(k * 100), 5e-4 * 10f64.powi(-(k as i32)));
        }
    }

    #[test]
    fn dt_ramps_from_one_frame() {
        let c = TrainConfig { stage2_iters: 1000, ..TrainConfig::default() };
        assert_eq!(c.dt_frames(0), 1.0);
        assert_eq!(c.dt_frames(300), 25.5);
        assert_eq!(c.dt_frames(600), 50.0);
        assert_eq!(c.dt_frames(999), 50.0);
        assert_eq!(c.dt_at(0, &Domain::default()), 1.0 / 120.0);
    }

    #[test]
    fn blend_and_weight_ramps() {
        let mut c = TrainConfig::default();
        assert_eq!((c.blend_at(0), c.blend_at(1000), c.blend_at(5000)), (0.0, 0.5, 1.0));
        c.blend.direction = BlendDirection::ToOccluded;
        assert_eq!(c.blend_at(500), 0.75);
        let w = Weight::Ramp([0.01, 0.1]);
        assert_eq!((w.at(0.0), w.at(1.0), w.at(2.0)), (0.01, 0.1, 0.1));
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let c = TrainConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
        assert!(toml::from_str::<TrainConfig>("lr = 1e-3\nbogus = 2\n").is_err());
        let parsed: TrainConfig = toml::from_str("[weights]\nnse = 0.5\ntransport = [0.0, 0.2]\n").unwrap();
        assert_eq!(parsed.weights.nse, Weight::Fixed(0.5));
        assert_eq!(parsed.weights.transport, Weight::Ramp([0.0, 0.2]));
        assert!(TrainConfig { lr: 0.0, ..c.clone() }.validate().is_err());
        let mut neg = c.clone();
        neg.weights.div = Weight::Fixed(-1.0);
        assert!(neg.validate().is_err());
        assert!(c.validate().is_ok());
    }
}
