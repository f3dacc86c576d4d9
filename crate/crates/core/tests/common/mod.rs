//! Finite-difference oracles shared by the integration tests.
//!
//! Everything here evaluates networks through plain `forward` / value-only
//! jets and perturbs inputs or parameters directly, so it is independent of
//! the reverse-mode and jet-propagation code it checks.
#![allow(dead_code)]

use std::sync::Arc;

use charflow::nn::{Jet2, JetLayout, MlpSpec, SineMlp};
use rand::Rng;

/// `max |a - b| / max(max |b|, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Small random sine network with random shape and frequency.
pub fn random_net<R: Rng>(rng: &mut R) -> SineMlp {
    let input = rng.random_range(2..=5);
    let layers = rng.random_range(1..=3);
    let mut dims = vec![input];
    for _ in 0..layers {
        dims.push(rng.random_range(3..=12));
    }
    dims.push(rng.random_range(1..=4));
    let omega0 = rng.random_range(1.0..30.0);
    SineMlp::new(&MlpSpec::new(&dims, omega0), rng).unwrap()
}

pub fn random_input<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central difference of `net` along input direction `dir`.
pub fn fd_input_d1(net: &SineMlp, x: &[f64], dir: usize, h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[dir] += h;
    xm[dir] -= h;
    let yp = net.forward(&xp).unwrap();
    let ym = net.forward(&xm).unwrap();
    yp.iter().zip(&ym).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

/// Second central difference along `dir`.
pub fn fd_input_d2(net: &SineMlp, x: &[f64], dir: usize, h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[dir] += h;
    xm[dir] -= h;
    let yp = net.forward(&xp).unwrap();
    let y0 = net.forward(x).unwrap();
    let ym = net.forward(&xm).unwrap();
    (0..y0.len()).map(|i| (yp[i] - 2.0 * y0[i] + ym[i]) / (h * h)).collect()
}

/// Central difference of a scalar function of the network w.r.t. parameter `idx`.
pub fn fd_param<F: Fn(&SineMlp) -> f64>(net: &SineMlp, idx: usize, h: f64, f: F) -> f64 {
    let mut p = net.clone();
    let v = net.param(idx);
    p.set_param(idx, v + h);
    let fp = f(&p);
    p.set_param(idx, v - h);
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

/// Jets seeded with the identity on every input and the `(dir, dir)` pair.
pub fn seeded_jets(x: &[f64], dir: usize) -> Vec<Jet2> {
    let layout = Arc::new(JetLayout::new(x.len(), &[(dir, dir)]).unwrap());
    x.iter().enumerate().map(|(i, &v)| Jet2::variable(v, i, Arc::clone(&layout))).collect()
}

use charflow::field::{Domain, FieldGrads, TrajectoryField};
use charflow::radiance::{SceneGrads, SceneModel, SceneSpec, StaticSpec};

/// Network groups of a scene model, in parameter order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Decoder,
    Dynamic,
    Lagrangian,
    StaticSdf,
    StaticColor,
    Sharpness,
}

pub fn small_scene(seed: u64, learned_static: bool) -> SceneModel {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let st = StaticSpec {
        analytic: (!learned_static).then(|| charflow::analytic::AnalyticSdf::sphere([0.1, 0.0, -0.1], 0.4)),
        sdf_width: 10,
        sdf_layers: 2,
        geometry_features: 4,
        color_width: 8,
        color_layers: 1,
        sharpness: 15.0,
    };
    let spec = SceneSpec::with_width(12, 8.0, Some(st));
    SceneModel::new(&spec, Domain::default(), &mut rng).unwrap()
}

use rand::SeedableRng;

pub fn part_ranges(m: &mut SceneModel) -> Vec<(Part, std::ops::Range<usize>)> {
    let mut sizes = vec![
        (Part::Encoder, m.field.encoder.param_count()),
        (Part::Decoder, m.field.decoder.param_count()),
        (Part::Dynamic, m.dynamic.net.param_count()),
        (Part::Lagrangian, m.lagrangian.net.param_count()),
    ];
    if let Some(st) = &m.static_field {
        if let charflow::radiance::StaticGeometry::Learned(net) = &st.geometry {
            sizes.push((Part::StaticSdf, net.param_count()));
        }
        sizes.push((Part::StaticColor, st.color.param_count()));
        sizes.push((Part::Sharpness, 1));
    }
    let mut start = 0;
    sizes
        .into_iter()
        .map(|(p, n)| {
            let r = start..start + n;
            start += n;
            (p, r)
        })
        .collect()
}

pub fn get_flat(m: &mut SceneModel, mut idx: usize) -> f64 {
    for s in m.params_mut() {
        if idx < s.len() {
            return s[idx];
        }
        idx -= s.len();
    }
    panic!("index out of range")
}

pub fn set_flat(m: &mut SceneModel, mut idx: usize, v: f64) {
    for s in m.params_mut() {
        if idx < s.len() {
            s[idx] = v;
            return;
        }
        idx -= s.len();
    }
    panic!("index out of range")
}

pub fn grad_flat(g: &SceneGrads, mut idx: usize) -> f64 {
    for s in g.slices() {
        if idx < s.len() {
            return s[idx];
        }
        idx -= s.len();
    }
    panic!("index out of range")
}

/// Compare accumulated gradients to central differences on `per_part` random
/// parameters from each listed part. Returns the worst relative error per part.
pub fn check_scene_grads<F>(m: &SceneModel, grads: &SceneGrads, parts: &[Part], per_part: usize, h: f64, seed: u64, loss: F) -> Vec<(Part, f64)>
where
    F: Fn(&SceneModel) -> f64,
{
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut work = m.clone();
    let ranges = part_ranges(&mut work);
    let mut out = Vec::new();
    for part in parts {
        let range = ranges.iter().find(|(p, _)| p == part).expect("part present").1.clone();
        let mut ad = Vec::new();
        let mut fd = Vec::new();
        for _ in 0..per_part {
            let idx = rng.random_range(range.clone());
            let v = get_flat(&mut work, idx);
            set_flat(&mut work, idx, v + h);
            let lp = loss(&work);
            set_flat(&mut work, idx, v - h);
            let lm = loss(&work);
            set_flat(&mut work, idx, v);
            fd.push((lp - lm) / (2.0 * h));
            ad.push(grad_flat(grads, idx));
        }
        assert!(fd.iter().any(|v| v.abs() > 1e-12), "{part:?}: finite differences all vanish, check is vacuous");
        out.push((*part, rel_err(&ad, &fd)));
    }
    out
}

/// Wrap field gradients as scene gradients so the same checker applies.
pub fn field_into_scene(m: &SceneModel, g: FieldGrads) -> SceneGrads {
    let mut s = SceneGrads::zeros_like(m);
    s.field = g;
    s
}

pub fn with_field(m: &SceneModel, f: &TrajectoryField) -> SceneModel {
    let mut m = m.clone();
    m.field = f.clone();
    m
}
