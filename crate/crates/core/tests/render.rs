mod common;

use charflow::analytic::AnalyticSdf;
use charflow::field::{Domain, Spacetime};
use charflow::radiance::*;
use charflow::render::{Camera, RaySamples};
use common::*;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn queries(n: usize) -> Vec<RayQuery> {
    let cam = Camera::look_at(Vector3::new(0.3, 0.4, 3.0), Vector3::zeros(), Vector3::y(), 0.9, 8, 8).unwrap();
    (0..n)
        .map(|i| RayQuery { ray: cam.ray(1 + i % 6, 1 + i / 6), t: 0.1 + 0.8 * i as f64 / n as f64 })
        .collect()
}

fn targets(n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|i| [0.2 + 0.05 * i as f64 % 0.6, 0.5, 0.8 - 0.03 * i as f64 % 0.5]).collect()
}

fn settings() -> RenderSettings {
    RenderSettings { dynamic_samples: 12, static_samples: 12, background: [0.1, 0.2, 0.3] }
}

fn check_kind(learned: bool, kind: ImageLossKind, parts: &[Part]) {
    let m = small_scene(50 + learned as u64, learned);
    let (q, tg) = (queries(10), targets(10));
    let s = settings();
    let loss = |model: &SceneModel, g: Option<&mut SceneGrads>| image_loss(model, &q, &tg, kind, &s, &mut ChaCha8Rng::seed_from_u64(9), g).unwrap();
    let mut g = SceneGrads::zeros_like(&m);
    let l = loss(&m, Some(&mut g));
    assert!(l > 0.0 && g.is_finite());
    assert_eq!(l, loss(&m, None));
    for (part, err) in check_scene_grads(&m, &g, parts, 8, 1e-6, 51, |x| loss(x, None)) {
        assert!(err < TOL, "{kind:?} learned={learned} {part:?}: {err:e}");
    }
}

const FIELD_PARTS: [Part; 3] = [Part::Encoder, Part::Decoder, Part::Lagrangian];

#[test]
fn dynamic_image_loss_gradients() {
    check_kind(false, ImageLossKind::Dynamic, &[Part::Dynamic]);
    // only the density/color head sees photometric gradients
    let m = small_scene(52, false);
    let mut g = SceneGrads::zeros_like(&m);
    image_loss(&m, &queries(4), &targets(4), ImageLossKind::Dynamic, &settings(), &mut ChaCha8Rng::seed_from_u64(1), Some(&mut g)).unwrap();
    assert_eq!(g.field.encoder.max_abs(), 0.0);
    assert_eq!(g.lagrangian.max_abs(), 0.0);
    let _ = FIELD_PARTS;
}

#[test]
fn composite_image_loss_gradients_analytic() {
    check_kind(false, ImageLossKind::Composite, &[Part::Dynamic, Part::StaticColor, Part::Sharpness]);
}

#[test]
fn composite_image_loss_gradients_learned() {
    check_kind(true, ImageLossKind::Composite, &[Part::Dynamic, Part::StaticSdf, Part::StaticColor, Part::Sharpness]);
}

#[test]
fn occluded_image_loss_gradients() {
    check_kind(false, ImageLossKind::Occluded { lambda: 0.3 }, &[Part::StaticColor, Part::Sharpness]);
    check_kind(true, ImageLossKind::Occluded { lambda: 0.3 }, &[Part::StaticSdf, Part::StaticColor]);
    // smoke visibility is detached: no gradient reaches the density head
    let m = small_scene(58, true);
    let mut g = SceneGrads::zeros_like(&m);
    image_loss(&m, &queries(6), &targets(6), ImageLossKind::Occluded { lambda: 0.3 }, &settings(), &mut ChaCha8Rng::seed_from_u64(3), Some(&mut g)).unwrap();
    assert_eq!(g.dynamic.max_abs(), 0.0);
}

#[test]
fn blended_image_loss_gradients_and_endpoints() {
    check_kind(true, ImageLossKind::Blended { alpha: 0.4, lambda: 0.2 }, &[Part::StaticSdf, Part::StaticColor, Part::Sharpness]);
    let m = small_scene(53, true);
    let (q, tg, s) = (queries(6), targets(6), settings());
    // the density head is trained only by the composite share
    let grad = |k| {
        let mut g = SceneGrads::zeros_like(&m);
        image_loss(&m, &q, &tg, k, &s, &mut ChaCha8Rng::seed_from_u64(2), Some(&mut g)).unwrap();
        g.dynamic
    };
    let gb = grad(ImageLossKind::Blended { alpha: 0.4, lambda: 0.2 });
    let gc = grad(ImageLossKind::Composite);
    let (gb, gc): (Vec<f64>, Vec<f64>) = (gb.slices().concat(), gc.slices().iter().flat_map(|s| s.iter().map(|v| 0.4 * v)).collect());
    assert!(rel_err(&gb, &gc) < 1e-12);
    let l = |k| image_loss(&m, &q, &tg, k, &s, &mut ChaCha8Rng::seed_from_u64(2), None).unwrap();
    let occ = l(ImageLossKind::Occluded { lambda: 0.2 });
    let comp = l(ImageLossKind::Composite);
    assert!((l(ImageLossKind::Blended { alpha: 0.0, lambda: 0.2 }) - occ).abs() < 1e-14);
    assert!((l(ImageLossKind::Blended { alpha: 1.0, lambda: 0.2 }) - comp).abs() < 1e-14);
    assert!((l(ImageLossKind::Blended { alpha: 0.25, lambda: 0.2 }) - (0.75 * occ + 0.25 * comp)).abs() < 1e-12);
}

#[test]
fn image_loss_rejects_bad_arguments() {
    let m = small_scene(54, false);
    let (q, tg, s) = (queries(3), targets(3), settings());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(image_loss(&m, &q, &tg, ImageLossKind::Blended { alpha: 1.5, lambda: 0.0 }, &s, &mut rng, None).is_err());
    assert!(image_loss(&m, &q, &tg[..2], ImageLossKind::Dynamic, &s, &mut rng, None).is_err());
    assert!(image_loss(&m, &[], &[], ImageLossKind::Dynamic, &s, &mut rng, None).is_err());
    let mut bare = m.clone();
    bare.static_field = None;
    assert!(image_loss(&bare, &q, &tg, ImageLossKind::Occluded { lambda: 0.1 }, &s, &mut rng, None).is_err());
}

fn constant_smoke(raw_sigma: f64, rgb_raw: [f64; 3]) -> SceneModel {
    let mut m = small_scene(55, false);
    for w in m.dynamic.net.weights_mut() {
        w.fill(0.0);
    }
    let last = m.dynamic.net.biases().len() - 1;
    let b = &mut m.dynamic.net.biases_mut()[last];
    b[0] = raw_sigma;
    for c in 0..3 {
        b[c + 1] = rgb_raw[c];
    }
    m
}

#[test]
fn zero_network_gives_ln2_density_and_grey() {
    let m = constant_smoke(0.0, [0.0; 3]);
    let (s, c) = m.dynamic.query(&Spacetime::from_xyzt(0.2, -0.3, 0.5, 0.4)).unwrap();
    assert!((s - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(c, [0.5; 3]);
}

#[test]
fn homogeneous_smoke_renders_beer_lambert() {
    let m = constant_smoke(1.0, [1.0, -1.0, 0.0]);
    let sigma = softplus(1.0);
    let c = [sigmoid(1.0), sigmoid(-1.0), 0.5];
    let s = settings();
    let q = queries(5);
    let out = render_rays(&m, &q, &s, RenderMode::Dynamic).unwrap();
    for (qq, r) in q.iter().zip(&out) {
        let ray = qq.ray.clip_to(&Domain::default()).unwrap();
        let samples = RaySamples::stratified::<ChaCha8Rng>(&ray, s.dynamic_samples, None);
        let path: f64 = samples.deltas.iter().sum();
        let tr = (-sigma * path).exp();
        assert!((r.transmittance - tr).abs() < 1e-12);
        assert!((r.opacity - (1.0 - tr)).abs() < 1e-12);
        for k in 0..3 {
            assert!((r.color[k] - ((1.0 - tr) * c[k] + tr * s.background[k])).abs() < 1e-12);
        }
    }
}

#[test]
fn analytic_sphere_static_query() {
    let mut m = small_scene(56, false);
    let st = m.static_field.as_mut().unwrap();
    st.geometry = StaticGeometry::Analytic(AnalyticSdf::sphere([0.0; 3], 1.0));
    st.domain = Domain::new([-3.0; 3], [3.0; 3], 0.0, 1.0).unwrap();
    let q = st.query(&Vector3::new(2.0, 0.0, 0.0)).unwrap();
    assert!((q.s - 1.0).abs() < 1e-15);
    assert!((q.normal - Vector3::x()).norm() < 1e-15);
    assert!(q.feature.is_empty());
    assert!(st.query(&Vector3::new(4.0, 0.0, 0.0)).is_err());
    assert!(matches!(st.query(&Vector3::zeros()), Err(charflow::Error::DegenerateGradient(_))));
}

#[test]
fn rendering_is_deterministic_and_parallel_safe() {
    let m = small_scene(57, true);
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::y(), 0.8, 16, 12).unwrap();
    let a = render_image(&m, &cam, 0.5, &settings(), RenderMode::Composite).unwrap();
    let b = render_image(&m, &cam, 0.5, &settings(), RenderMode::Composite).unwrap();
    assert_eq!(a, b);
    let rays: Vec<RayQuery> = (0..12).flat_map(|y| (0..16).map(move |x| (x, y))).map(|(x, y)| RayQuery { ray: cam.ray(x, y), t: 0.5 }).collect();
    let single = render_rays(&m, &rays, &settings(), RenderMode::Composite).unwrap();
    for (p, r) in a.pixels.iter().zip(&single) {
        assert_eq!(*p, r.color);
    }
}
