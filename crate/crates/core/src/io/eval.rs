//! Diagnostics of a trained scene, written as text and CSV.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::SyntheticSequence;
use super::export::{analytic_density_grid, export_grid, relative_l2, ExportKind};
use crate::analytic::{AnalyticFlow, AnalyticScene};
use crate::error::{Error, Result};
use crate::field::{Domain, MapMode, Spacetime, TrajectoryField};
use crate::losses::SdfQuery;
use crate::radiance::{render_image, RenderMode, RenderSettings, SceneModel};
use crate::render::{psnr, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub seed: u64,
    /// Sample count for the point-based metrics.
    pub samples: usize,
    /// Mapping-consistency intervals, in frames.
    pub intervals: Vec<f64>,
    pub rk4_steps: usize,
    /// `[nx, ny, nz, nt]` grid for the velocity error.
    pub velocity_grid: [usize; 4],
    pub band_eps: f64,
    pub density_res: usize,
    /// Every this many frames is rendered for the held-out PSNR.
    pub frame_stride: usize,
    pub render: RenderSettings,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 512,
            intervals: vec![1.0, 5.0, 10.0, 25.0, 50.0],
            rk4_steps: 50,
            velocity_grid: [16, 16, 16, 8],
            band_eps: 0.01,
            density_res: 32,
            frame_stride: 1,
            render: RenderSettings::default(),
        }
    }
}

/// Obstacle-related metrics, in domain units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMetrics {
    /// Mean `|u . n|` over `|s| <= eps`.
    pub normal_flow: f64,
    /// Mean `|u|` over the fluid region.
    pub fluid_speed: f64,
    /// Mean `|u|` inside the obstacle.
    pub inside_speed: f64,
    /// Mean smoke density inside the obstacle.
    pub inside_density: f64,
    /// Mean smoke density where the ground-truth plume is denser than 5% of its peak.
    pub plume_density: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(interval in frames, mean distance)` between the network map and RK4 of its own velocity.
    pub mapping_consistency: Vec<(f64, f64)>,
    pub velocity_rel_l2: Option<f64>,
    pub mean_abs_divergence: f64,
    /// Mean PSNR per held-out view, in dB.
    pub heldout_psnr: Vec<f64>,
    /// PSNR of each view's per-pixel temporal mean image.
    pub baseline_psnr: Vec<f64>,
    pub density_rel_l2: Option<f64>,
    pub boundary: Option<BoundaryMetrics>,
    /// Last logged value of each loss term.
    pub losses: Vec<(String, f64)>,
}

impl EvalReport {
    /// `(metric, value)` rows; mapping-consistency rows are named `mapping_consistency@<frames>`.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut r = Vec::new();
        for (f, d) in &self.mapping_consistency {
            r.push((format!("mapping_consistency@{f}"), *d));
        }
        if let Some(v) = self.velocity_rel_l2 {
            r.push(("velocity_rel_l2".into(), v));
        }
        r.push(("mean_abs_divergence".into(), self.mean_abs_divergence));
        for (i, (p, b)) in self.heldout_psnr.iter().zip(&self.baseline_psnr).enumerate() {
            r.push((format!("heldout_psnr@{i}"), *p));
            r.push((format!("baseline_psnr@{i}"), *b));
        }
        if let Some(v) = self.density_rel_l2 {
            r.push(("density_rel_l2".into(), v));
        }
        if let Some(b) = &self.boundary {
            r.push(("boundary_normal_flow".into(), b.normal_flow));
            r.push(("fluid_speed".into(), b.fluid_speed));
            r.push(("inside_speed".into(), b.inside_speed));
            r.push(("inside_density".into(), b.inside_density));
            if let Some(p) = b.plume_density {
                r.push(("plume_density".into(), p));
            }
        }
        for (n, v) in &self.losses {
            r.push((format!("loss.{n}"), *v));
        }
        r
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows().into_iter().find(|(n, _)| n == metric).map(|(_, v)| v)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.rows().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((n, _)) => Err(Error::NonFinite(format!("report entry {n}"))),
            None => Ok(()),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "value"]).map_err(|e| Error::Format(e.to_string()))?;
        for (n, v) in self.rows() {
            out.write_record([n, format!("{v:e}")]).map_err(|e| Error::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<(String, f64)>> {
        csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
    }

    /// Human-readable summary. Distances and velocities are in domain units.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mapping consistency (frames: mean distance)");
        for (f, d) in &self.mapping_consistency {
            let _ = writeln!(s, "  {f:>6}: {d:.3e}");
        }
        if let Some(v) = self.velocity_rel_l2 {
            let _ = writeln!(s, "velocity relative L2 error: {v:.4}");
        }
        let _ = writeln!(s, "mean |div u|: {:.3e}", self.mean_abs_divergence);
        for (i, (p, b)) in self.heldout_psnr.iter().zip(&self.baseline_psnr).enumerate() {
            let _ = writeln!(s, "held-out view {i}: PSNR {p:.2} dB (temporal-mean baseline {b:.2} dB)");
        }
        if let Some(v) = self.density_rel_l2 {
            let _ = writeln!(s, "density relative L2 error: {v:.4}");
        }
        if let Some(b) = &self.boundary {
            let _ = writeln!(s, "boundary: mean |u.n| {:.3e}, fluid |u| {:.3e}, inside |u| {:.3e}", b.normal_flow, b.fluid_speed, b.inside_speed);
            let _ = write!(s, "obstacle density {:.3e}", b.inside_density);
            match b.plume_density {
                Some(p) => {
                    let _ = writeln!(s, ", plume density {p:.3e}");
                }
                None => s.push('\n'),
            }
        }
        for (n, v) in &self.losses {
            let _ = writeln!(s, "final {n}: {v:.3e}");
        }
        s
    }
}

/// Integrate `dx/dt = u(x, t)` for all points at once; `None` for points whose path leaves the domain.
pub fn integrate_velocity(field: &TrajectoryField, starts: &[Spacetime], dt: f64, steps: usize) -> Result<Vec<Option<Vector3<f64>>>> {
    let d = &field.domain;
    let h = dt / steps as f64;
    let mut x: Vec<Option<Vector3<f64>>> = starts.iter().map(|p| Some(p.x)).collect();
    let vel = |x: &[Option<Vector3<f64>>], t: &[f64]| -> Result<Vec<Option<Vector3<f64>>>> {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_some_and(|p| d.contains(&Spacetime::new(p, t[i])))).collect();
        let mut out = vec![None; x.len()];
        if idx.is_empty() {
            return Ok(out);
        }
        let pts: Vec<Spacetime> = idx.iter().map(|&i| Spacetime::new(x[i].unwrap(), t[i])).collect();
        for (k, u) in idx.into_iter().zip(field.velocity_batch(&pts)?) {
            out[k] = Some(u);
        }
        Ok(out)
    };
    let axpy = |x: &[Option<Vector3<f64>>], k: &[Option<Vector3<f64>>], a: f64| -> Vec<Option<Vector3<f64>>> {
        x.iter().zip(k).map(|(x, k)| Some(x.as_ref()? + k.as_ref()? * a)).collect()
    };
    for s in 0..steps {
        let t0: Vec<f64> = starts.iter().map(|p| p.t + h * s as f64).collect();
        let tm: Vec<f64> = t0.iter().map(|t| t + 0.5 * h).collect();
        let t1: Vec<f64> = t0.iter().map(|t| t + h).collect();
        let k1 = vel(&x, &t0)?;
        let k2 = vel(&axpy(&x, &k1, 0.5 * h), &tm)?;
        let k3 = vel(&axpy(&x, &k2, 0.5 * h), &tm)?;
        let k4 = vel(&axpy(&x, &k3, h), &t1)?;
        for i in 0..x.len() {
            x[i] = match (x[i], k1[i], k2[i], k3[i], k4[i]) {
                (Some(p), Some(a), Some(b), Some(c), Some(e)) => Some(p + (a + b * 2.0 + c * 2.0 + e) * (h / 6.0)),
                _ => None,
            };
        }
    }
    Ok(x)
}

/// Mean distance between the single-pass network map and RK4 of the
/// network's own velocity, per interval in frames. Paths that leave the
/// domain are dropped; an interval where all do is reported as NaN.
pub fn mapping_consistency(field: &TrajectoryField, intervals: &[f64], samples: usize, rk4_steps: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let d = field.domain;
    let longest = intervals.iter().fold(0.0f64, |m, v| m.max(*v)) * d.frame_dt();
    if samples == 0 || rk4_steps == 0 || !(longest < d.duration()) {
        return Err(Error::Config("mapping consistency needs samples, RK4 steps and intervals shorter than the time span".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Spacetime> =
        (0..samples).map(|_| Spacetime::new(d.sample(&mut rng).x, rng.random_range(d.t_min..=d.t_max - longest))).collect();
    intervals
        .iter()
        .map(|&frames| {
            let dt = frames * d.frame_dt();
            let targets: Vec<f64> = starts.iter().map(|p| p.t + dt).collect();
            let mapped = field.flow_map_batch(&starts, &targets, MapMode::Corrected)?;
            let integrated = integrate_velocity(field, &starts, dt, rk4_steps)?;
            let dist: Vec<f64> = mapped.iter().zip(&integrated).filter_map(|(a, b)| b.map(|b| (a - b).norm())).collect();
            let mean = if dist.is_empty() { f64::NAN } else { dist.iter().sum::<f64>() / dist.len() as f64 };
            Ok((frames, mean))
        })
        .collect()
}

/// Cell centers of an `[nx, ny, nz, nt]` space-time grid; times are interval midpoints.
pub fn spacetime_grid(d: &Domain, res: [usize; 4]) -> Vec<Spacetime> {
    let mut out = Vec::with_capacity(res.iter().product());
    for l in 0..res[3] {
        let t = d.t_min + d.duration() * (l as f64 + 0.5) / res[3] as f64;
        for k in 0..res[2] {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    let c = [i, j, k];
                    let x = Vector3::from_fn(|a, _| d.lo[a] + (d.hi[a] - d.lo[a]) * (c[a] as f64 + 0.5) / res[a] as f64);
                    out.push(Spacetime::new(x, t));
                }
            }
        }
    }
    out
}

/// `sqrt(sum |u - u_ref|^2 / sum |u_ref|^2)` over `points`.
pub fn velocity_error(field: &TrajectoryField, flow: &AnalyticFlow, points: &[Spacetime]) -> Result<f64> {
    let u: Vec<Vector3<f64>> = points.par_chunks(2048).map(|c| field.velocity_batch(c)).collect::<Result<Vec<_>>>()?.concat();
    let (mut num, mut den) = (0.0, 0.0);
    for (p, u) in points.iter().zip(&u) {
        let r = flow.velocity(&p.x);
        num += (u - r).norm_squared();
        den += r.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference velocity is zero on the grid".into()));
    }
    Ok((num / den).sqrt())
}

pub fn mean_abs_divergence(field: &TrajectoryField, points: &[Spacetime]) -> Result<f64> {
    let div = field.divergence_batch(points)?;
    Ok(div.iter().map(|v| v.abs()).sum::<f64>() / div.len().max(1) as f64)
}

/// Mean held-out PSNR per view and the PSNR of that view's temporal mean image.
pub fn heldout_psnr(model: &SceneModel, seq: &SyntheticSequence, stride: usize, settings: &RenderSettings) -> Result<(Vec<f64>, Vec<f64>)> {
    let frames: Vec<usize> = (0..seq.frames()).step_by(stride.max(1)).collect();
    let mode = if model.static_field.is_some() { RenderMode::Composite } else { RenderMode::Dynamic };
    let mut ours = Vec::new();
    let mut base = Vec::new();
    for c in seq.holdout() {
        let gt: Vec<Image> = (0..seq.frames()).map(|f| seq.image(f, c).clone()).collect();
        let mean = Image::mean(&gt)?;
        let mut p = 0.0;
        let mut b = 0.0;
        for &f in &frames {
            let img = render_image(model, &seq.cameras[c], seq.times[f], settings, mode)?;
            p += psnr(&img, &gt[f])?;
            b += psnr(&mean, &gt[f])?;
        }
        ours.push(p / frames.len() as f64);
        base.push(b / frames.len() as f64);
    }
    Ok((ours, base))
}

/// Boundary metrics against an obstacle SDF; `scene` adds the plume comparison.
pub fn boundary_metrics<S: SdfQuery + ?Sized>(
    model: &SceneModel,
    sdf: &S,
    scene: Option<&AnalyticScene>,
    opts: &EvalOptions,
) -> Result<BoundaryMetrics> {
    let d = *model.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xb0);
    let mut band = crate::train::sample_boundary(sdf, &d, 2 * opts.samples, opts.band_eps, opts.band_eps, &mut rng)?;
    let vals = sdf.sdf_batch(&band.iter().map(|p| p.x).collect::<Vec<_>>())?;
    band = band.into_iter().zip(&vals).filter(|(_, (s, _))| s.abs() <= opts.band_eps).map(|(p, _)| p).collect();
    let u = model.field.velocity_batch(&band)?;
    let normal_flow = mean(band.iter().zip(&u).zip(&vals).map(|((_, u), (_, g))| u.dot(&g.normalize()).abs()));

    let pts: Vec<Spacetime> = (0..8 * opts.samples).map(|_| d.sample(&mut rng)).collect();
    let s = sdf.sdf_batch(&pts.iter().map(|p| p.x).collect::<Vec<_>>())?;
    let (fluid, inside): (Vec<_>, Vec<_>) = pts.iter().zip(&s).partition(|(_, (s, _))| *s > 0.0);
    let fluid: Vec<Spacetime> = fluid.into_iter().map(|(p, _)| *p).collect();
    let inside: Vec<Spacetime> = inside.into_iter().map(|(p, _)| *p).collect();
    let speed = |p: &[Spacetime]| -> Result<f64> { Ok(mean(model.field.velocity_batch(p)?.iter().map(|u| u.norm()))) };
    let fluid_speed = if fluid.is_empty() { 0.0 } else { speed(&fluid)? };
    let (inside_speed, inside_density) = if inside.is_empty() {
        (0.0, 0.0)
    } else {
        (speed(&inside)?, mean(model.dynamic.query_batch(&inside)?.0.into_iter()))
    };
    let plume_density = match scene {
        Some(sc) => {
            let peak = fluid.iter().map(|p| sc.density(p)).fold(0.0, f64::max);
            let plume: Vec<Spacetime> = fluid.iter().filter(|p| sc.density(p) > 0.05 * peak).copied().collect();
            if plume.is_empty() {
                None
            } else {
                Some(mean(model.dynamic.query_batch(&plume)?.0.into_iter()))
            }
        }
        None => None,
    };
    Ok(BoundaryMetrics { normal_flow, fluid_speed, inside_speed, inside_density, plume_density })
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Density error over the dataset's frames at `res^3`, relative to the ground-truth L2 norm.
pub fn density_error(model: &SceneModel, scene: &AnalyticScene, times: &[f64], res: usize) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for &t in times {
        let a = export_grid(model, ExportKind::Density, [res; 3], t)?;
        let b = analytic_density_grid(scene, [res; 3], t)?;
        let e = relative_l2(&a, &b)?;
        let n2: f64 = b.data.iter().map(|v| v * v).sum();
        num += e * e * n2;
        den += n2;
    }
    Ok((num / den).sqrt())
}

/// Everything the report can compute from what is available.
pub fn evaluate(
    model: &SceneModel,
    flow: Option<&AnalyticFlow>,
    scene: Option<&AnalyticScene>,
    seq: Option<&SyntheticSequence>,
    losses: Vec<(String, f64)>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let f = &model.field;
    let d = *model.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pts: Vec<Spacetime> = (0..opts.samples.max(1)).map(|_| d.sample(&mut rng)).collect();
    let mut report = EvalReport {
        mapping_consistency: mapping_consistency(f, &opts.intervals, opts.samples, opts.rk4_steps, opts.seed)?,
        mean_abs_divergence: mean_abs_divergence(f, &pts)?,
        losses,
        ..EvalReport::default()
    };
    if let Some(flow) = flow {
        report.velocity_rel_l2 = Some(velocity_error(f, flow, &spacetime_grid(&d, opts.velocity_grid))?);
    }
    if let Some(seq) = seq {
        let (p, b) = heldout_psnr(model, seq, opts.frame_stride, &opts.render)?;
        report.heldout_psnr = p;
        report.baseline_psnr = b;
    }
    if let Some(sc) = scene {
        let times: Vec<f64> = match seq {
            Some(s) => s.times.iter().step_by(opts.frame_stride.max(1)).copied().collect(),
            None => vec![d.t_min, 0.5 * (d.t_min + d.t_max), d.t_max],
        };
        report.density_rel_l2 = density_error(model, sc, &times, opts.density_res).ok();
        if let Some(obst) = &sc.obstacle {
            report.boundary = Some(boundary_metrics(model, obst, Some(sc), opts)?);
        }
    } else if let Some(st) = &model.static_field {
        report.boundary = Some(boundary_metrics(model, st, None, opts)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;

    #[test]
    fn integrator_handles_empty_and_exiting_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = TrajectoryField::new(&FieldSpec::with_width(8, 30.0), Domain::default(), &mut rng).unwrap();
        let starts = [Spacetime::from_xyzt(0.0, 0.0, 0.0, 0.1), Spacetime::from_xyzt(0.0, 0.0, 0.0, 0.1)];
        let x = integrate_velocity(&f, &starts, 0.0, 3).unwrap();
        assert_eq!(x[0], Some(starts[0].x));
        let far = integrate_velocity(&f, &[Spacetime::from_xyzt(0.0, 0.0, 0.0, 0.99)], 0.5, 4).unwrap();
        assert_eq!(far[0], None);
    }

    #[test]
    fn report_rows_round_trip_through_csv() {
        let r = EvalReport {
            mapping_consistency: vec![(1.0, 0.25), (50.0, 0.5)],
            velocity_rel_l2: Some(0.125),
            mean_abs_divergence: 1e-3,
            heldout_psnr: vec![30.0],
            baseline_psnr: vec![20.0],
            density_rel_l2: None,
            boundary: None,
            losses: vec![("image".into(), 2e-3)],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let rows = EvalReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, r.rows());
        assert_eq!(r.get("mapping_consistency@50"), Some(0.5));
        assert!(r.to_text().contains("PSNR 30.00"));
        assert!(r.check_finite().is_ok());
    }

    #[test]
    fn spacetime_grid_covers_midpoints() {
        let g = spacetime_grid(&Domain::default(), [2, 2, 2, 4]);
        assert_eq!(g.len(), 32);
        assert_eq!(g[0].x, Vector3::new(-0.5, -0.5, -0.5));
        assert_eq!(g[0].t, 0.125);
        assert_eq!(g[31].t, 0.875);
    }
}
