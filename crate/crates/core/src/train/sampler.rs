//! Random batches for every loss family.

use nalgebra::Vector3;
use rand::Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::field::{Domain, Spacetime};
use crate::io::SyntheticSequence;
use crate::losses::{SamplePoint, SampleKind, SdfQuery};
use crate::radiance::RayQuery;
use crate::render::{Camera, Image};

/// Training pixels of a dataset: every (frame, camera, pixel) triple.
#[derive(Clone, Debug)]
pub struct RayPool {
    pub cameras: Vec<Camera>,
    pub times: Vec<f64>,
    /// Frame-major over `cameras`.
    pub images: Vec<Image>,
}

impl RayPool {
    pub fn new(cameras: Vec<Camera>, times: Vec<f64>, images: Vec<Image>) -> Result<Self> {
        if cameras.is_empty() || times.is_empty() {
            return Err(Error::Config("training data needs at least one camera and one frame".into()));
        }
        if images.len() != cameras.len() * times.len() {
            return Err(Error::Shape { expected: cameras.len() * times.len(), got: images.len() });
        }
        for (i, img) in images.iter().enumerate() {
            let c = &cameras[i % cameras.len()];
            if (img.width, img.height) != (c.width, c.height) {
                return Err(Error::Config(format!("image {i} does not match its camera resolution")));
            }
        }
        Ok(Self { cameras, times, images })
    }

    /// Training cameras of a dataset; held-out views are left out.
    pub fn from_sequence(seq: &SyntheticSequence) -> Result<Self> {
        let cams = seq.cameras[..seq.train_cameras].to_vec();
        let images = (0..seq.frames()).flat_map(|f| (0..seq.train_cameras).map(move |c| (f, c))).map(|(f, c)| seq.image(f, c).clone()).collect();
        Self::new(cams, seq.times.clone(), images)
    }

    pub fn image(&self, frame: usize, camera: usize) -> &Image {
        &self.images[frame * self.cameras.len() + camera]
    }

    /// Uniform over frames, cameras and pixels.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<RayQuery>, Vec<[f64; 3]>) {
        (0..n)
            .map(|_| {
                let f = rng.random_range(0..self.times.len());
                let c = rng.random_range(0..self.cameras.len());
                let cam = &self.cameras[c];
                let (x, y) = (rng.random_range(0..cam.width), rng.random_range(0..cam.height));
                (RayQuery { ray: cam.ray(x, y), t: self.times[f] }, self.image(f, c).get(x, y))
            })
            .unzip()
    }

    /// Points at uniform depth along random training rays, at the ray's frame time.
    pub fn sample_points<R: Rng + ?Sized>(&self, domain: &Domain, n: usize, rng: &mut R) -> Vec<Spacetime> {
        let mut out = Vec::with_capacity(n);
        let mut misses = 0;
        while out.len() < n {
            let (q, _) = self.sample(1, rng);
            match q[0].ray.clip_to(domain) {
                Some(r) => out.push(Spacetime::new(r.at(rng.random_range(r.near..=r.far)), q[0].t)),
                None => {
                    misses += 1;
                    if misses > 100 * n {
                        out.push(domain.sample(rng));
                    }
                }
            }
        }
        out
    }
}

/// Uniform points of the domain.
pub fn sample_uniform<R: Rng + ?Sized>(domain: &Domain, n: usize, rng: &mut R) -> Vec<Spacetime> {
    (0..n).map(|_| domain.sample(rng)).collect()
}

/// `t_b` uniform on `[t_a - dt, t_a + dt]` intersected with the time interval.
pub fn sample_pair<R: Rng + ?Sized>(domain: &Domain, p_a: Spacetime, dt: f64, kind: SampleKind, rng: &mut R) -> SamplePoint {
    let lo = (p_a.t - dt).max(domain.t_min);
    let hi = (p_a.t + dt).min(domain.t_max);
    let t_b = if hi > lo { rng.random_range(lo..=hi) } else { p_a.t };
    SamplePoint { p_a, t_b, kind }
}

/// Surface-band and interior samples of an obstacle, half each.
///
/// Band points project a uniform point onto the zero level set with one
/// Newton step and offset it by up to `eps` along the normal; interior points
/// go up to `depth` below the surface.
pub fn sample_boundary<S: SdfQuery + ?Sized, R: Rng + ?Sized>(
    sdf: &S,
    domain: &Domain,
    n: usize,
    eps: f64,
    depth: f64,
    rng: &mut R,
) -> Result<Vec<Spacetime>> {
    let seeds = sample_uniform(domain, n, rng);
    let xs: Vec<Vector3<f64>> = seeds.iter().map(|p| p.x).collect();
    let vals = sdf.sdf_batch(&xs)?;
    let mut out = Vec::with_capacity(n);
    for (i, (p, (s, g))) in seeds.iter().zip(&vals).enumerate() {
        let g2 = g.norm_squared();
        if g2 < 1e-12 {
            continue;
        }
        let n_hat = g / g2.sqrt();
        let surface = p.x - g * (s / g2);
        let offset = if i % 2 == 0 { rng.random_range(-eps..=eps) } else { -rng.random_range(0.0..=depth) };
        let q = Spacetime::new(surface + n_hat * offset, p.t);
        if domain.contains(&q) {
            out.push(q);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no boundary samples fall inside the domain".into()));
    }
    Ok(out)
}

/// All random inputs of one iteration.
#[derive(Clone, Debug, Default)]
pub struct Batches {
    pub rays: Vec<RayQuery>,
    pub targets: Vec<[f64; 3]>,
    pub points: Vec<Spacetime>,
    pub pairs: Vec<SamplePoint>,
    pub boundary: Vec<Spacetime>,
}

/// Independent generators for each batch kind, so which losses are active
/// does not change the draws of the others.
pub struct BatchRngs<R> {
    pub rays: R,
    pub points: R,
    pub pairs: R,
    pub boundary: R,
}

/// Draw the batches of one iteration. `dt` is the pair half-width; `sdf` enables boundary samples.
pub fn sample_batches<R: Rng>(
    cfg: &TrainConfig,
    domain: &Domain,
    pool: &RayPool,
    dt: f64,
    sdf: Option<&(dyn SdfQuery + Sync)>,
    rngs: &mut BatchRngs<R>,
) -> Result<Batches> {
    let b = &cfg.batch;
    let (rays, targets) = pool.sample(b.rays, &mut rngs.rays);
    let along = (b.physics as f64 * b.ray_point_fraction).round() as usize;
    let mut points = pool.sample_points(domain, along, &mut rngs.points);
    points.extend(sample_uniform(domain, b.physics - along, &mut rngs.points));
    let pairs = (0..b.mapping)
        .map(|_| {
            let p = domain.sample(&mut rngs.pairs);
            sample_pair(domain, p, dt, SampleKind::Uniform, &mut rngs.pairs)
        })
        .collect();
    let boundary = match sdf {
        Some(s) => sample_boundary(s, domain, b.boundary, cfg.boundary_eps, b.interior_depth, &mut rngs.boundary)?,
        None => Vec::new(),
    };
    Ok(Batches { rays, targets, points, pairs, boundary })
}
