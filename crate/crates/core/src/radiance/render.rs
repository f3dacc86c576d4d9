use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{SceneGrads, SceneModel};
use crate::error::{Error, Result};
use crate::field::{Domain, Spacetime};
use crate::render::{
    composite, composite_backward, density_alpha, density_alpha_grad, depth_order, sdf_alpha, sdf_alpha_grad, Camera,
    Image, Ray, RaySamples,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    pub dynamic_samples: usize,
    pub static_samples: usize,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { dynamic_samples: 64, static_samples: 64, background: [0.0; 3] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Dynamic,
    Static,
    Composite,
}

/// A ray at a time. The ray is clipped to the scene domain when rendered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayQuery {
    pub ray: Ray,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub opacity: f64,
}

/// Anything that supplies smoke density/color and, optionally, a static SDF with color.
pub trait SceneSource: Sync {
    fn domain(&self) -> Domain;
    fn dynamic_batch(&self, points: &[Spacetime]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>;
    fn has_static(&self) -> bool;
    /// SDF values and colors; only called when [`SceneSource::has_static`].
    fn static_batch(&self, points: &[Vector3<f64>]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>;
    fn sharpness(&self) -> f64;
}

impl SceneSource for SceneModel {
    fn domain(&self) -> Domain {
        *SceneModel::domain(self)
    }

    fn dynamic_batch(&self, points: &[Spacetime]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        self.dynamic.query_batch(points)
    }

    fn has_static(&self) -> bool {
        self.static_field.is_some()
    }

    fn static_batch(&self, points: &[Vector3<f64>]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let st = self.static_field.as_ref().ok_or_else(|| Error::InvalidArgument("scene has no static branch".into()))?;
        let pass = st.pass(points)?;
        Ok((pass.s.clone(), (0..pass.len()).map(|b| pass.color(b)).collect()))
    }

    fn sharpness(&self) -> f64 {
        self.static_field.as_ref().map_or(1.0, |s| s.sharpness())
    }
}

/// Wraps a source with its smoke density multiplied by `scale`; `scale = 0`
/// leaves only the static geometry visible.
#[derive(Clone, Copy, Debug)]
pub struct SmokeScaled<'a, S> {
    pub source: &'a S,
    pub scale: f64,
}

impl<S: SceneSource> SceneSource for SmokeScaled<'_, S> {
    fn domain(&self) -> Domain {
        self.source.domain()
    }

    fn dynamic_batch(&self, points: &[Spacetime]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let (mut sigma, color) = self.source.dynamic_batch(points)?;
        sigma.iter_mut().for_each(|s| *s *= self.scale);
        Ok((sigma, color))
    }

    fn has_static(&self) -> bool {
        self.source.has_static()
    }

    fn static_batch(&self, points: &[Vector3<f64>]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        self.source.static_batch(points)
    }

    fn sharpness(&self) -> f64 {
        self.source.sharpness()
    }
}

/// Sample layout of one ray inside a batch.
struct RayPlan {
    dyn_samples: Option<RaySamples>,
    static_samples: Option<RaySamples>,
    dyn_offset: usize,
    static_offset: usize,
}

fn plan_rays<R: Rng + ?Sized>(
    domain: &Domain,
    queries: &[RayQuery],
    settings: &RenderSettings,
    want_dyn: bool,
    want_static: bool,
    mut rng: Option<&mut R>,
) -> (Vec<RayPlan>, Vec<Spacetime>, Vec<Vector3<f64>>) {
    let mut plans = Vec::with_capacity(queries.len());
    let mut dyn_pts = Vec::new();
    let mut static_pts = Vec::new();
    for q in queries {
        let clipped = q.ray.clip_to(domain);
        let mut plan = RayPlan { dyn_samples: None, static_samples: None, dyn_offset: dyn_pts.len(), static_offset: static_pts.len() };
        if let Some(ray) = clipped {
            if want_dyn && settings.dynamic_samples > 0 {
                let s = RaySamples::stratified(&ray, settings.dynamic_samples, rng.as_deref_mut());
                dyn_pts.extend(s.depths.iter().map(|&h| Spacetime::new(ray.at(h), q.t)));
                plan.dyn_samples = Some(s);
            }
            if want_static && settings.static_samples > 1 {
                let s = RaySamples::stratified(&ray, settings.static_samples, rng.as_deref_mut());
                static_pts.extend(s.depths.iter().map(|&h| ray.at(h)));
                plan.static_samples = Some(s);
            }
        }
        plans.push(plan);
    }
    (plans, dyn_pts, static_pts)
}

fn static_alphas(s: &[f64], sharpness: f64) -> Vec<f64> {
    if s.is_empty() {
        return Vec::new();
    }
    let mut a: Vec<f64> = s.windows(2).map(|w| sdf_alpha(w[0], w[1], sharpness)).collect();
    a.push(0.0);
    a
}

/// Merge dynamic and static samples by depth; returns the permutation over the concatenation.
fn merged<'a>(
    dyn_depths: &[f64],
    static_depths: &[f64],
    alphas: (&'a [f64], &'a [f64]),
    colors: (&'a [[f64; 3]], &'a [[f64; 3]]),
) -> (Vec<usize>, Vec<f64>, Vec<[f64; 3]>) {
    let depths: Vec<f64> = dyn_depths.iter().chain(static_depths).copied().collect();
    let order = depth_order(&depths);
    let all_a: Vec<f64> = alphas.0.iter().chain(alphas.1).copied().collect();
    let all_c: Vec<[f64; 3]> = colors.0.iter().chain(colors.1).copied().collect();
    let a = order.iter().map(|&i| all_a[i]).collect();
    let c = order.iter().map(|&i| all_c[i]).collect();
    (order, a, c)
}

fn render_chunk<S: SceneSource, R: Rng + ?Sized>(
    src: &S,
    queries: &[RayQuery],
    settings: &RenderSettings,
    mode: RenderMode,
    rng: Option<&mut R>,
) -> Result<Vec<RayRender>> {
    let want_dyn = mode != RenderMode::Static;
    let want_static = mode != RenderMode::Dynamic && src.has_static();
    if mode == RenderMode::Static && !src.has_static() {
        return Err(Error::InvalidArgument("static render of a scene without static geometry".into()));
    }
    let (plans, dyn_pts, static_pts) = plan_rays(&src.domain(), queries, settings, want_dyn, want_static, rng);
    let (sigma, dcol) = if dyn_pts.is_empty() { (Vec::new(), Vec::new()) } else { src.dynamic_batch(&dyn_pts)? };
    let (sdf, scol) = if static_pts.is_empty() { (Vec::new(), Vec::new()) } else { src.static_batch(&static_pts)? };
    let sharpness = src.sharpness();
    let bg = settings.background;
    Ok(plans
        .iter()
        .map(|p| {
            let (mut da, mut dc, mut dd): (Vec<f64>, &[[f64; 3]], &[f64]) = (Vec::new(), &[], &[]);
            if let Some(s) = &p.dyn_samples {
                let r = p.dyn_offset..p.dyn_offset + s.len();
                da = sigma[r.clone()].iter().zip(&s.deltas).map(|(&sg, &d)| density_alpha(sg, d)).collect();
                dc = &dcol[r];
                dd = &s.depths;
            }
            let (mut sa, mut sc, mut sd): (Vec<f64>, &[[f64; 3]], &[f64]) = (Vec::new(), &[], &[]);
            if let Some(s) = &p.static_samples {
                let r = p.static_offset..p.static_offset + s.len();
                sa = static_alphas(&sdf[r.clone()], sharpness);
                sc = &scol[r];
                sd = &s.depths;
            }
            let c = if sa.is_empty() {
                composite(&da, dc, bg)
            } else if da.is_empty() {
                composite(&sa, sc, bg)
            } else {
                let (_, a, c) = merged(dd, sd, (&da, &sa), (dc, sc));
                composite(&a, &c, bg)
            };
            RayRender { color: c.color, transmittance: c.transmittance, opacity: c.opacity }
        })
        .collect())
}

/// Render a batch of rays at sample-bin centers (deterministic).
pub fn render_rays<S: SceneSource>(src: &S, queries: &[RayQuery], settings: &RenderSettings, mode: RenderMode) -> Result<Vec<RayRender>> {
    const CHUNK: usize = 512;
    let parts: Vec<Result<Vec<RayRender>>> = queries
        .par_chunks(CHUNK)
        .map(|chunk| render_chunk::<S, rand_chacha::ChaCha8Rng>(src, chunk, settings, mode, None))
        .collect();
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Render a full camera image at time `t`.
pub fn render_image<S: SceneSource>(src: &S, camera: &Camera, t: f64, settings: &RenderSettings, mode: RenderMode) -> Result<Image> {
    let queries: Vec<RayQuery> =
        (0..camera.height).flat_map(|y| (0..camera.width).map(move |x| (x, y))).map(|(x, y)| RayQuery { ray: camera.ray(x, y), t }).collect();
    let px = render_rays(src, &queries, settings, mode)?;
    Image::from_pixels(camera.width, camera.height, px.into_iter().map(|r| r.color).collect())
}

/// Photometric objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImageLossKind {
    /// `|C_dyn - C|^2` with smoke only.
    Dynamic,
    /// `|C_composite - C|^2` with smoke and static geometry merged by depth.
    Composite,
    /// `V |C_static - C|^2 + lambda (1 - V)^2`, `V` the smoke visibility with density detached.
    Occluded { lambda: f64 },
    /// `(1 - alpha) occluded + alpha composite`.
    Blended { alpha: f64, lambda: f64 },
}

/// Mean per-ray image loss over `queries` against `targets`, with stratified
/// jitter from `rng`. Accumulates the gradient into `grads` when given.
pub fn image_loss<R: Rng + ?Sized>(
    model: &SceneModel,
    queries: &[RayQuery],
    targets: &[[f64; 3]],
    kind: ImageLossKind,
    settings: &RenderSettings,
    rng: &mut R,
    grads: Option<&mut SceneGrads>,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if queries.len() != targets.len() {
        return Err(Error::Shape { expected: queries.len(), got: targets.len() });
    }
    let (w_occ, w_comp, lambda) = match kind {
        ImageLossKind::Dynamic => (0.0, 0.0, 0.0),
        ImageLossKind::Composite => (0.0, 1.0, 0.0),
        ImageLossKind::Occluded { lambda } => (1.0, 0.0, lambda),
        ImageLossKind::Blended { alpha, lambda } => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidArgument(format!("blend weight {alpha} outside [0, 1]")));
            }
            (1.0 - alpha, alpha, lambda)
        }
    };
    let has_static = model.static_field.is_some();
    if w_occ > 0.0 && !has_static {
        return Err(Error::InvalidArgument("occluded loss needs static geometry".into()));
    }
    let want_static = has_static && kind != ImageLossKind::Dynamic;
    let (plans, dyn_pts, static_pts) = plan_rays(model.domain(), queries, settings, true, want_static, Some(rng));
    let dpass = if dyn_pts.is_empty() { None } else { Some(model.dynamic.pass(&dyn_pts, false)?) };
    let spass = match (&model.static_field, static_pts.is_empty()) {
        (Some(st), false) => Some(st.pass(&static_pts)?),
        _ => None,
    };
    let sharpness = model.static_field.as_ref().map_or(1.0, |s| s.sharpness());
    let bg = settings.background;
    let inv = 1.0 / queries.len() as f64;

    let mut g_sigma = vec![0.0; dyn_pts.len()];
    let mut g_dcol = vec![[0.0; 3]; dyn_pts.len()];
    let mut g_s = vec![0.0; static_pts.len()];
    let mut g_scol = vec![[0.0; 3]; static_pts.len()];
    let mut g_logk = 0.0;
    let mut total = 0.0;

    for (p, target) in plans.iter().zip(targets) {
        let dn = p.dyn_samples.as_ref().map_or(0, |s| s.len());
        let sn = p.static_samples.as_ref().map_or(0, |s| s.len());
        let sig: Vec<f64> = (0..dn).map(|i| dpass.as_ref().unwrap().sigma(p.dyn_offset + i)).collect();
        let dcol: Vec<[f64; 3]> = (0..dn).map(|i| dpass.as_ref().unwrap().color(p.dyn_offset + i)).collect();
        let deltas: &[f64] = p.dyn_samples.as_ref().map_or(&[], |s| &s.deltas);
        let da: Vec<f64> = sig.iter().zip(deltas).map(|(&s, &d)| density_alpha(s, d)).collect();
        let sdfv: Vec<f64> = (0..sn).map(|i| spass.as_ref().unwrap().s[p.static_offset + i]).collect();
        let scol: Vec<[f64; 3]> = (0..sn).map(|i| spass.as_ref().unwrap().color(p.static_offset + i)).collect();
        let sa = static_alphas(&sdfv, sharpness);

        let mut g_da = vec![0.0; dn];
        let mut g_dc = vec![[0.0; 3]; dn];
        let mut g_sa = vec![0.0; sn];
        let mut g_sc = vec![[0.0; 3]; sn];
        let sq = |c: [f64; 3]| (0..3).map(|k| (c[k] - target[k]).powi(2)).sum::<f64>();
        let diff = |c: [f64; 3], w: f64| [0, 1, 2].map(|k| 2.0 * w * (c[k] - target[k]));

        if kind == ImageLossKind::Dynamic || (!want_static && w_comp > 0.0) {
            let c = composite(&da, &dcol, bg);
            total += sq(c.color);
            let (a, cc) = composite_backward(&da, &dcol, bg, diff(c.color, inv));
            g_da = a;
            g_dc = cc;
        } else {
            if w_comp > 0.0 {
                let dd: &[f64] = p.dyn_samples.as_ref().map_or(&[], |s| &s.depths);
                let sd: &[f64] = p.static_samples.as_ref().map_or(&[], |s| &s.depths);
                let (order, a, c) = merged(dd, sd, (&da, &sa), (&dcol, &scol));
                let comp = composite(&a, &c, bg);
                total += w_comp * sq(comp.color);
                let (ga, gc) = composite_backward(&a, &c, bg, diff(comp.color, w_comp * inv));
                for (pos, &i) in order.iter().enumerate() {
                    if i < dn {
                        g_da[i] += ga[pos];
                        g_dc[i] = gc[pos];
                    } else {
                        g_sa[i - dn] += ga[pos];
                        g_sc[i - dn] = gc[pos];
                    }
                }
            }
            if w_occ > 0.0 {
                let vis = 1.0 - composite(&da, &dcol, bg).opacity;
                let cs = composite(&sa, &scol, bg);
                total += w_occ * (vis * sq(cs.color) + lambda * (1.0 - vis).powi(2));
                let (ga, gc) = composite_backward(&sa, &scol, bg, diff(cs.color, w_occ * vis * inv));
                for i in 0..sn {
                    g_sa[i] += ga[i];
                    for k in 0..3 {
                        g_sc[i][k] += gc[i][k];
                    }
                }
            }
        }
        for i in 0..dn {
            g_sigma[p.dyn_offset + i] = g_da[i] * density_alpha_grad(sig[i], deltas[i]);
            g_dcol[p.dyn_offset + i] = g_dc[i];
        }
        for i in 0..sn.saturating_sub(1) {
            let (_, ds0, ds1, dk) = sdf_alpha_grad(sdfv[i], sdfv[i + 1], sharpness);
            g_s[p.static_offset + i] += g_sa[i] * ds0;
            g_s[p.static_offset + i + 1] += g_sa[i] * ds1;
            g_logk += g_sa[i] * dk * sharpness;
        }
        for i in 0..sn {
            g_scol[p.static_offset + i] = g_sc[i];
        }
    }
    if let Some(grads) = grads {
        if let Some(dp) = &dpass {
            dp.backward(&model.dynamic, &g_sigma, None, Some(&g_dcol), &mut grads.dynamic)?;
        }
        if let (Some(sp), Some(st), Some(sg)) = (&spass, &model.static_field, grads.static_field.as_mut()) {
            sp.backward(st, &g_s, &g_scol, None, sg)?;
            sg.log_sharpness += g_logk;
        }
    }
    Ok(total * inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Uniform fog with a solid ball of radius 0.5 at the origin.
    struct Fog;

    impl SceneSource for Fog {
        fn domain(&self) -> Domain {
            Domain::default()
        }
        fn dynamic_batch(&self, points: &[Spacetime]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
            Ok((vec![0.5; points.len()], vec![[0.2, 0.4, 0.6]; points.len()]))
        }
        fn has_static(&self) -> bool {
            true
        }
        fn static_batch(&self, points: &[Vector3<f64>]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
            Ok((points.iter().map(|p| p.norm() - 0.5).collect(), vec![[1.0, 0.0, 0.0]; points.len()]))
        }
        fn sharpness(&self) -> f64 {
            50.0
        }
    }

    #[test]
    fn empty_static_samples_give_no_alphas() {
        assert!(static_alphas(&[], 10.0).is_empty());
        assert_eq!(static_alphas(&[0.3], 10.0), [0.0]);
    }

    #[test]
    fn rays_missing_the_domain_show_the_background() {
        let bg = [0.1, 0.2, 0.3];
        let settings = RenderSettings { dynamic_samples: 8, static_samples: 8, background: bg };
        let miss = Ray { origin: Vector3::new(0.0, 5.0, 0.0), dir: Vector3::x(), near: 0.0, far: 10.0 };
        let hit = Ray { origin: Vector3::new(-3.0, 0.0, 0.0), dir: Vector3::x(), near: 0.0, far: 10.0 };
        let q = [RayQuery { ray: miss, t: 0.5 }, RayQuery { ray: hit, t: 0.5 }];
        for mode in [RenderMode::Composite, RenderMode::Static, RenderMode::Dynamic] {
            let r = render_rays(&Fog, &q, &settings, mode).unwrap();
            assert_eq!((r[0].color, r[0].transmittance), (bg, 1.0));
            assert!(r[1].opacity > 0.5);
        }
        let static_only = RenderSettings { dynamic_samples: 0, ..settings };
        let r = render_rays(&Fog, &q, &static_only, RenderMode::Composite).unwrap();
        assert!(r[1].color[0] > r[1].color[1]);
    }
}
