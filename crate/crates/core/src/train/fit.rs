//! Fitting a trajectory field alone to a known velocity field.
//!
//! Used to check the field representation in isolation: map samples of the
//! exact flow supervise the decoder, the intrinsic and physics losses act as
//! they do in full training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::trainer::GradSum;
use crate::analytic::AnalyticFlow;
use crate::error::{Error, Result};
use crate::field::{FieldGrads, MapMode, Spacetime, TrajectoryField};
use crate::losses::{
    cross_cycle, feature_transport, map_supervision, nse_and_div, self_cycle, velocity_mapping, LossBreakdown, SampleKind,
};
use crate::train::sample_pair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowFitWeights {
    pub supervision: f64,
    pub self_cycle: f64,
    pub cross_cycle: f64,
    pub feature: f64,
    pub nse: f64,
    pub div: f64,
    pub velocity_mapping: f64,
}

impl Default for FlowFitWeights {
    fn default() -> Self {
        Self { supervision: 1.0, self_cycle: 1.0, cross_cycle: 1.0, feature: 0.0, nse: 0.0, div: 0.0, velocity_mapping: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowFitConfig {
    pub seed: u64,
    pub iters: u64,
    /// Learning rate decays geometrically from `lr` to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    pub batch: usize,
    /// Pair interval half-width in frames, reached after `dt_ramp` of the run.
    pub dt_frames: f64,
    pub dt_ramp: f64,
    /// RK4 steps for flows without a closed-form map.
    pub rk4_steps: usize,
    pub mode: MapMode,
    pub weights: FlowFitWeights,
}

impl Default for FlowFitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iters: 2000,
            lr: 1e-3,
            lr_final: 2e-5,
            batch: 256,
            dt_frames: 50.0,
            dt_ramp: 0.3,
            rk4_steps: 32,
            mode: MapMode::Corrected,
            weights: FlowFitWeights::default(),
        }
    }
}

impl FlowFitConfig {
    pub fn lr_at(&self, iter: u64) -> f64 {
        let p = if self.iters <= 1 { 0.0 } else { iter as f64 / (self.iters - 1) as f64 };
        self.lr * (self.lr_final / self.lr).powf(p)
    }

    pub fn dt_frames_at(&self, iter: u64) -> f64 {
        let ramp = self.dt_ramp * self.iters as f64;
        let p = if ramp > 0.0 { (iter as f64 / ramp).min(1.0) } else { 1.0 };
        1.0 + (self.dt_frames - 1.0).max(0.0) * p
    }

    fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ws = [w.supervision, w.self_cycle, w.cross_cycle, w.feature, w.nse, w.div, w.velocity_mapping];
        if self.batch == 0 || !(self.lr > 0.0 && self.lr_final > 0.0) || ws.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("flow fit needs a positive batch and learning rates and non-negative weights".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Term {
    Supervision,
    SelfCycle,
    CrossCycle,
    Feature,
    NseDiv,
    VelocityMapping,
}

/// Train `field` towards `flow` and return the per-iteration losses.
pub fn fit_flow(field: &mut TrajectoryField, flow: &AnalyticFlow, cfg: &FlowFitConfig) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    let domain = field.domain;
    let shapes: Vec<usize> = {
        let mut p = field.encoder.param_slices_mut();
        p.extend(field.decoder.param_slices_mut());
        p.iter().map(|s| s.len()).collect()
    };
    let mut adam = Adam::new(&shapes);
    let w = &cfg.weights;
    let terms: Vec<Term> = [
        (Term::Supervision, w.supervision),
        (Term::SelfCycle, w.self_cycle),
        (Term::CrossCycle, w.cross_cycle),
        (Term::Feature, w.feature),
        (Term::NseDiv, w.nse + w.div),
        (Term::VelocityMapping, w.velocity_mapping),
    ]
    .into_iter()
    .filter(|(_, w)| *w > 0.0)
    .map(|(t, _)| t)
    .collect();
    let mut history = Vec::with_capacity(cfg.iters as usize);
    for iter in 0..cfg.iters {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iter);
        let dt = cfg.dt_frames_at(iter) * domain.frame_dt();
        let points: Vec<Spacetime> = (0..cfg.batch).map(|_| domain.sample(&mut rng)).collect();
        let pairs: Vec<_> = (0..cfg.batch)
            .map(|_| {
                let p = domain.sample(&mut rng);
                sample_pair(&domain, p, dt, SampleKind::Uniform, &mut rng)
            })
            .collect();
        let targets: Vec<_> = pairs.iter().map(|s| flow.flow_map(&s.p_a.x, s.p_a.t, s.t_b, cfg.rk4_steps)).collect();

        let f: &TrajectoryField = field;
        let outs: Vec<Result<Vec<(&str, f64, f64, FieldGrads)>>> = terms
            .par_iter()
            .map(|t| {
                let mut g = FieldGrads::zeros_like(f);
                let one = |name, v, wt, g| Ok(vec![(name, v, wt, g)]);
                match t {
                    Term::Supervision => {
                        let v = map_supervision(f, &pairs, &targets, cfg.mode, Some(&mut g))?;
                        one("supervision", v, w.supervision, g)
                    }
                    Term::SelfCycle => one("self_cycle", self_cycle(f, &points, Some(&mut g))?, w.self_cycle, g),
                    Term::CrossCycle => one("cross_cycle", cross_cycle(f, &pairs, Some(&mut g))?, w.cross_cycle, g),
                    Term::Feature => one("feature", feature_transport(f, &points, None, Some(&mut g))?, w.feature, g),
                    Term::VelocityMapping => {
                        one("velocity_mapping", velocity_mapping(f, &pairs, Some(&mut g))?, w.velocity_mapping, g)
                    }
                    Term::NseDiv => {
                        let mut g2 = FieldGrads::zeros_like(f);
                        let (a, b) = nse_and_div(f, &points, Some(&mut g), Some(&mut g2))?;
                        Ok(vec![("nse", a, w.nse, g), ("div", b, w.div, g2)])
                    }
                }
            })
            .collect();

        let mut sum = GradSum::from_shapes(&shapes);
        let mut breakdown = LossBreakdown::default();
        for out in outs {
            for (name, v, wt, g) in out? {
                breakdown.push(name, v, wt);
                let mut s = g.encoder.slices();
                s.extend(g.decoder.slices());
                sum.add_slices(&s, wt);
            }
        }
        if !breakdown.is_finite() {
            return Err(Error::NonFinite(format!("flow fit loss at iteration {iter}")));
        }
        let grads = sum.finish();
        let g: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
        let mut params = field.encoder.param_slices_mut();
        params.extend(field.decoder.param_slices_mut());
        adam.update(&mut params, &g, cfg.lr_at(iter))?;
        history.push(breakdown);
    }
    Ok(history)
}
