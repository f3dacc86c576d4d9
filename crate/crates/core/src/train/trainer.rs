//! The two-stage optimization loop.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::{Stage1Image, TrainConfig};
use super::sampler::{sample_batches, BatchRngs, Batches, RayPool};
use crate::error::{Error, Result};
use crate::losses::{
    boundary_losses, cross_cycle, density_color_mapping, distillation, eikonal, feature_transport, nse_and_div, self_cycle,
    transport_dual, velocity_mapping, LossBreakdown, SamplePoint, SdfQuery,
};
use crate::nn::Checkpoint;
use crate::radiance::{image_loss, ImageLossKind, SceneGrads, SceneModel, StaticGeometry};
use crate::field::Spacetime;

/// Iterations a term's weight stays halved after it produced a non-finite value.
pub const PENALTY_ITERS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

/// A loss evaluation unit; some produce two terms from one pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Job {
    Image,
    Distillation,
    Eikonal,
    SelfCycle,
    CrossCycle,
    Feature,
    NseDiv,
    Transport,
    VelocityMapping,
    DensityColor,
    Boundary,
}

impl Job {
    fn terms(self) -> &'static [&'static str] {
        match self {
            Self::Image => &["image"],
            Self::Distillation => &["distillation"],
            Self::Eikonal => &["eikonal"],
            Self::SelfCycle => &["self_cycle"],
            Self::CrossCycle => &["cross_cycle"],
            Self::Feature => &["feature"],
            Self::NseDiv => &["nse", "div"],
            Self::Transport => &["transport"],
            Self::VelocityMapping => &["velocity_mapping"],
            Self::DensityColor => &["density_mapping", "color_mapping"],
            Self::Boundary => &["boundary_sigma", "boundary_u"],
        }
    }
}

/// A skipped step.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericEvent {
    pub iter: u64,
    pub term: String,
}

#[derive(Serialize, Deserialize)]
struct TrainMeta {
    iter: u64,
    adam_step: u64,
    penalties: BTreeMap<String, u64>,
    /// Moments of parameters that do not live in a network (the NeuS sharpness).
    adam_scalar_m: Vec<f64>,
    adam_scalar_v: Vec<f64>,
    config: TrainConfig,
}

/// Element-wise compensated (Neumaier) sum of scaled gradient buffers.
pub struct GradSum {
    sum: Vec<Vec<f64>>,
    comp: Vec<Vec<f64>>,
}

impl GradSum {
    pub fn new(template: &SceneGrads) -> Self {
        let shapes: Vec<usize> = template.slices().iter().map(|s| s.len()).collect();
        Self::from_shapes(&shapes)
    }

    pub fn from_shapes(shapes: &[usize]) -> Self {
        let sum: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
        Self { comp: sum.clone(), sum }
    }

    pub fn add(&mut self, g: &SceneGrads, k: f64) {
        self.add_slices(&g.slices(), k);
    }

    pub fn add_slices<S: AsRef<[f64]>>(&mut self, g: &[S], k: f64) {
        for ((s, c), x) in self.sum.iter_mut().zip(&mut self.comp).zip(g) {
            let x = x.as_ref();
            for i in 0..s.len() {
                let v = k * x[i];
                let t = s[i] + v;
                c[i] += if s[i].abs() >= v.abs() { (s[i] - t) + v } else { (v - t) + s[i] };
                s[i] = t;
            }
        }
    }

    pub fn finish(self) -> Vec<Vec<f64>> {
        self.sum.into_iter().zip(self.comp).map(|(s, c)| s.iter().zip(&c).map(|(a, b)| a + b).collect()).collect()
    }
}

fn stream(seed: u64, iter: u64, tag: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((iter << 12) | tag);
    r
}

const TAG_RAYS: u64 = 1;
const TAG_POINTS: u64 = 2;
const TAG_PAIRS: u64 = 3;
const TAG_BOUNDARY: u64 = 4;
const TAG_IMAGE: u64 = 64;

fn shard<T>(v: &[T], k: usize, shards: usize) -> &[T] {
    let n = v.len();
    &v[k * n / shards..(k + 1) * n / shards]
}

/// Optimizer state and loop for one scene model.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: SceneModel,
    pub adam: Adam,
    /// Completed global iterations (stage 1 then stage 2).
    pub iter: u64,
    /// Term name -> first iteration at which its weight is restored.
    pub penalties: BTreeMap<String, u64>,
    pub history: Vec<(u64, LossBreakdown)>,
    pub events: Vec<NumericEvent>,
    threads: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(mut model: SceneModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let shapes: Vec<usize> = model.params_mut().iter().map(|s| s.len()).collect();
        let threads = Self::pool(&cfg)?;
        Ok(Self { adam: Adam::new(&shapes), cfg, model, iter: 0, penalties: BTreeMap::new(), history: Vec::new(), events: Vec::new(), threads })
    }

    fn pool(cfg: &TrainConfig) -> Result<Option<rayon::ThreadPool>> {
        if cfg.threads == 0 {
            return Ok(None);
        }
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build().map(Some).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn total_iters(&self) -> u64 {
        self.cfg.stage1_iters + self.cfg.stage2_iters
    }

    /// Stage and in-stage index of the next iteration.
    pub fn stage(&self) -> (Stage, u64) {
        if self.iter < self.cfg.stage1_iters {
            (Stage::One, self.iter)
        } else {
            (Stage::Two, self.iter - self.cfg.stage1_iters)
        }
    }

    fn penalty(&self, term: &str) -> f64 {
        match self.penalties.get(term) {
            Some(&until) if self.iter < until => 0.5,
            _ => 1.0,
        }
    }

    /// Configured weight of `term` at the next iteration, before any penalty.
    pub fn base_weight(&self, term: &str) -> f64 {
        let (stage, k) = self.stage();
        let p = if stage == Stage::One { 0.0 } else { self.cfg.progress(k) };
        let w = &self.cfg.weights;
        let stage2_only = !matches!(term, "image" | "distillation" | "eikonal");
        if stage == Stage::One && stage2_only {
            return 0.0;
        }
        match term {
            "image" => w.image.at(p),
            "distillation" => w.distillation.at(p),
            "eikonal" => w.eikonal.at(p),
            "self_cycle" => w.self_cycle.at(p),
            "cross_cycle" => w.cross_cycle.at(p),
            "feature" => w.feature.at(p),
            "nse" => w.nse.at(p),
            "div" => w.div.at(p),
            "transport" => w.transport.at(p),
            "velocity_mapping" => w.velocity_mapping.at(p),
            "density_mapping" => w.density_mapping.at(p),
            "color_mapping" => w.color_mapping.at(p),
            "boundary_u" => w.boundary_u.at(p),
            "boundary_sigma" => w.boundary_sigma.at(p),
            _ => 0.0,
        }
    }

    /// Effective weight including the recovery penalty.
    pub fn weight(&self, term: &str) -> f64 {
        self.base_weight(term) * self.penalty(term)
    }

    fn image_kind(&self) -> ImageLossKind {
        let has_static = self.model.static_field.is_some();
        match self.stage() {
            (Stage::One, _) if has_static && self.cfg.stage1_image == Stage1Image::Composite => ImageLossKind::Composite,
            (Stage::Two, k) if has_static => ImageLossKind::Blended { alpha: self.cfg.blend_at(k), lambda: self.cfg.weights.occluded_lambda },
            _ => ImageLossKind::Dynamic,
        }
    }

    fn active_jobs(&self) -> Vec<Job> {
        let has_static = self.model.static_field.is_some();
        let learned_sdf = matches!(self.model.static_field.as_ref().map(|s| &s.geometry), Some(StaticGeometry::Learned(_)));
        let all = [
            Job::Image,
            Job::Distillation,
            Job::Eikonal,
            Job::SelfCycle,
            Job::CrossCycle,
            Job::Feature,
            Job::NseDiv,
            Job::Transport,
            Job::VelocityMapping,
            Job::DensityColor,
            Job::Boundary,
        ];
        all.into_iter()
            .filter(|j| match j {
                Job::Eikonal => learned_sdf,
                Job::Boundary => has_static,
                _ => true,
            })
            .filter(|j| j.terms().iter().any(|t| self.weight(t) > 0.0))
            .collect()
    }

    fn eval_job(&self, job: Job, b: &Batches, k: usize, shards: usize, rng_tag: u64) -> Result<(Vec<f64>, Vec<SceneGrads>)> {
        let m = &self.model;
        let zeros = || SceneGrads::zeros_like(m);
        let mut g = zeros();
        let points: &[Spacetime] = shard(&b.points, k, shards);
        let pairs: &[SamplePoint] = shard(&b.pairs, k, shards);
        let (_, k2) = self.stage();
        let p = self.cfg.progress(k2);
        let v = match job {
            Job::Image => {
                let mut rng = stream(self.cfg.seed, self.iter, rng_tag);
                let (q, t) = (shard(&b.rays, k, shards), shard(&b.targets, k, shards));
                image_loss(m, q, t, self.image_kind(), &self.cfg.render, &mut rng, Some(&mut g))?
            }
            Job::Distillation => distillation(m, points, Some(&mut g))?,
            Job::Eikonal => {
                let st = m.static_field.as_ref().expect("eikonal job needs a static branch");
                let xs: Vec<_> = points.iter().map(|p| p.x).collect();
                let mut sg = crate::radiance::StaticGrads::zeros_like(st);
                let v = eikonal(st, &xs, Some(&mut sg))?;
                g.static_field = Some(sg);
                v
            }
            Job::SelfCycle => self_cycle(&m.field, points, Some(&mut g.field))?,
            Job::CrossCycle => cross_cycle(&m.field, pairs, Some(&mut g.field))?,
            Job::Feature => feature_transport(&m.field, points, self.cfg.inflow.as_ref(), Some(&mut g.field))?,
            Job::NseDiv => {
                let mut g2 = zeros();
                let (a, c) = nse_and_div(&m.field, points, Some(&mut g.field), Some(&mut g2.field))?;
                return Ok((vec![a, c], vec![g, g2]));
            }
            Job::Transport => transport_dual(m, points, self.cfg.weights.transport_lambda.at(p), Some(&mut g))?,
            Job::VelocityMapping => velocity_mapping(&m.field, pairs, Some(&mut g.field))?,
            Job::DensityColor => {
                let mut g2 = zeros();
                let (a, c) = density_color_mapping(m, pairs, Some(&mut g), Some(&mut g2))?;
                return Ok((vec![a, c], vec![g, g2]));
            }
            Job::Boundary => {
                let st = m.static_field.as_ref().expect("boundary job needs a static branch");
                let pts = shard(&b.boundary, k, shards);
                if pts.is_empty() {
                    return Ok((vec![0.0, 0.0], vec![zeros(), zeros()]));
                }
                let mut g2 = zeros();
                let (a, c) = boundary_losses(m, st, pts, self.cfg.boundary_eps, Some(&mut g), Some(&mut g2))?;
                return Ok((vec![a, c], vec![g, g2]));
            }
        };
        Ok((vec![v], vec![g]))
    }

    fn batch_len(job: Job, b: &Batches) -> usize {
        match job {
            Job::Image => b.rays.len(),
            Job::CrossCycle | Job::VelocityMapping | Job::DensityColor => b.pairs.len(),
            Job::Boundary => b.boundary.len(),
            _ => b.points.len(),
        }
    }

    /// Draw this iteration's batches.
    pub fn batches(&self, pool: &RayPool) -> Result<Batches> {
        let (stage, k) = self.stage();
        let domain = *self.model.domain();
        let dt = if stage == Stage::Two { self.cfg.dt_at(k, &domain) } else { self.cfg.dt_at(0, &domain) };
        let s = self.cfg.seed;
        let mut rngs = BatchRngs {
            rays: stream(s, self.iter, TAG_RAYS),
            points: stream(s, self.iter, TAG_POINTS),
            pairs: stream(s, self.iter, TAG_PAIRS),
            boundary: stream(s, self.iter, TAG_BOUNDARY),
        };
        let sdf = self.model.static_field.as_ref().map(|st| st as &(dyn SdfQuery + Sync));
        let want_boundary = stage == Stage::Two && self.weight("boundary_u") + self.weight("boundary_sigma") > 0.0;
        sample_batches(&self.cfg, &domain, pool, dt, sdf.filter(|_| want_boundary), &mut rngs)
    }

    /// Loss values and the combined weighted gradient for the given batches.
    pub fn evaluate(&self, b: &Batches) -> Result<(LossBreakdown, Vec<Vec<f64>>, Vec<String>)> {
        let shards = self.cfg.shards;
        let jobs = self.active_jobs();
        let units: Vec<(usize, usize)> = (0..jobs.len()).flat_map(|j| (0..shards).map(move |k| (j, k))).collect();
        let run = || {
            units
                .par_iter()
                .map(|&(j, k)| self.eval_job(jobs[j], b, k, shards, TAG_IMAGE + k as u64))
                .collect::<Vec<Result<(Vec<f64>, Vec<SceneGrads>)>>>()
        };
        let outs = match &self.threads {
            Some(p) => p.install(run),
            None => run(),
        };
        let template = SceneGrads::zeros_like(&self.model);
        let mut total = GradSum::new(&template);
        let mut breakdown = LossBreakdown::default();
        let mut bad = Vec::new();
        let mut outs = outs.into_iter();
        for job in &jobs {
            let n = Self::batch_len(*job, b);
            let names = job.terms();
            let mut values = vec![0.0; names.len()];
            let mut sums: Vec<GradSum> = names.iter().map(|_| GradSum::new(&template)).collect();
            for k in 0..shards {
                let (v, gs) = outs.next().expect("one output per unit")?;
                let len = (k + 1) * n / shards - k * n / shards;
                let frac = if n == 0 { 0.0 } else { len as f64 / n as f64 };
                for (t, (vt, g)) in v.iter().zip(&gs).enumerate() {
                    values[t] += frac * vt;
                    sums[t].add(g, frac);
                }
            }
            for (t, name) in names.iter().enumerate() {
                let w = self.weight(name);
                breakdown.push(name, values[t], w);
                let g = sums.remove(0).finish();
                let finite = values[t].is_finite() && g.iter().all(|s| s.iter().all(|v| v.is_finite()));
                if !finite {
                    bad.push(name.to_string());
                    continue;
                }
                if w > 0.0 {
                    total.add_slices(&g, w);
                }
            }
        }
        Ok((breakdown, total.finish(), bad))
    }

    /// One global iteration.
    pub fn step(&mut self, pool: &RayPool) -> Result<LossBreakdown> {
        let b = self.batches(pool)?;
        let (breakdown, mut grads, bad) = self.evaluate(&b)?;
        if self.cfg.freeze_field {
            let n = self.model.field.encoder.param_slices_mut().len() + self.model.field.decoder.param_slices_mut().len();
            grads.iter_mut().take(n).for_each(|g| g.fill(0.0));
        }
        if bad.is_empty() {
            let lr = self.cfg.lr_at(self.iter);
            let g: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
            self.adam.update(&mut self.model.params_mut(), &g, lr)?;
        } else {
            for term in bad {
                log::warn!("iteration {}: non-finite {term}; step skipped, weight halved for {PENALTY_ITERS} iterations", self.iter);
                self.penalties.insert(term.clone(), self.iter + 1 + PENALTY_ITERS);
                self.events.push(NumericEvent { iter: self.iter, term });
            }
        }
        self.history.push((self.iter, breakdown.clone()));
        self.iter += 1;
        Ok(breakdown)
    }

    /// Run until `until` global iterations are complete, calling `on_step` after each.
    pub fn run_until<F: FnMut(&Trainer, &LossBreakdown)>(&mut self, pool: &RayPool, until: u64, mut on_step: F) -> Result<()> {
        while self.iter < until {
            let b = self.step(pool)?;
            on_step(self, &b);
        }
        Ok(())
    }

    pub fn run_stage1(&mut self, pool: &RayPool) -> Result<()> {
        self.run_until(pool, self.cfg.stage1_iters, |_, _| {})
    }

    pub fn run_stage2(&mut self, pool: &RayPool) -> Result<()> {
        self.run_until(pool, self.total_iters(), |_, _| {})
    }

    /// Loss log as CSV rows, header first.
    pub fn write_log<W: Write>(&self, w: &mut W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "{}", LossBreakdown::CSV_HEADER)?;
        }
        for (i, b) in &self.history {
            w.write_all(b.csv_rows(*i as usize).as_bytes())?;
        }
        Ok(())
    }

    /// Mean weighted value of `term` over logged iterations in `range`.
    pub fn mean_term(&self, term: &str, range: std::ops::Range<u64>) -> Option<f64> {
        let v: Vec<f64> = self.history.iter().filter(|(i, _)| range.contains(i)).filter_map(|(_, b)| b.get(term).map(|t| t.value * t.weight)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Model, optimizer moments and loop state.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut extra = toml::Table::new();
        let (scalar_m, nets_m) = self.moments_as_nets(&self.adam.m)?;
        let (scalar_v, nets_v) = self.moments_as_nets(&self.adam.v)?;
        let meta = TrainMeta {
            iter: self.iter,
            adam_step: self.adam.step,
            penalties: self.penalties.clone(),
            adam_scalar_m: scalar_m,
            adam_scalar_v: scalar_v,
            config: self.cfg.clone(),
        };
        extra.insert("train".into(), toml::Value::try_from(&meta).map_err(|e| Error::Format(e.to_string()))?);
        let mut ck = self.model.to_checkpoint(&extra)?;
        ck.nets.extend(nets_m.into_iter().map(|(n, net)| (format!("adam_m.{n}"), net)));
        ck.nets.extend(nets_v.into_iter().map(|(n, net)| (format!("adam_v.{n}"), net)));
        Ok(ck)
    }

    fn moments_as_nets(&self, moments: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<(String, crate::nn::SineMlp)>)> {
        let mut shadow = self.model.clone();
        for (dst, src) in shadow.params_mut().into_iter().zip(moments) {
            dst.copy_from_slice(src);
        }
        let scalars = shadow.static_field.as_ref().map(|s| vec![s.log_sharpness]).unwrap_or_default();
        Ok((scalars, shadow.to_checkpoint(&toml::Table::new())?.nets))
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`]. `cfg`
    /// replaces the stored configuration when given.
    pub fn resume(ck: &Checkpoint, cfg: Option<TrainConfig>) -> Result<Self> {
        let (model, doc) = SceneModel::from_checkpoint(ck)?;
        let meta: TrainMeta = doc
            .get("train")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint has no training state".into()))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
        let mut t = Self::new(model, cfg.unwrap_or(meta.config))?;
        let moments = |prefix: &str, scalars: &[f64]| -> Result<Vec<Vec<f64>>> {
            let nets = ck
                .nets
                .iter()
                .filter_map(|(n, net)| n.strip_prefix(prefix).map(|s| (s.to_string(), net.clone())))
                .collect();
            let (mut shadow, _) = SceneModel::from_checkpoint(&Checkpoint { nets, meta: ck.meta.clone() })?;
            if let (Some(st), Some(&v)) = (&mut shadow.static_field, scalars.first()) {
                st.log_sharpness = v;
            }
            Ok(shadow.params_mut().into_iter().map(|s| s.to_vec()).collect())
        };
        t.adam.m = moments("adam_m.", &meta.adam_scalar_m)?;
        t.adam.v = moments("adam_v.", &meta.adam_scalar_v)?;
        t.adam.step = meta.adam_step;
        t.iter = meta.iter;
        t.penalties = meta.penalties;
        Ok(t)
    }
}

/// Stage 1 from scratch: radiance fields and the Lagrangian density only.
pub fn stage1(model: SceneModel, pool: &RayPool, cfg: TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(model, cfg)?;
    t.run_stage1(pool)?;
    Ok(t)
}

/// Stage 2 continuing a trainer that finished stage 1.
pub fn stage2(mut trainer: Trainer, pool: &RayPool) -> Result<Trainer> {
    if trainer.iter < trainer.cfg.stage1_iters {
        return Err(Error::Config("stage 2 needs a finished stage 1".into()));
    }
    trainer.run_stage2(pool)?;
    Ok(trainer)
}
