mod common;

use charflow::field::{Domain, FieldGrads, FieldSpec, MapJets, MapMode, Spacetime, TrajectoryField};
use charflow::nn::{JetBatch, SineMlp};
use common::rel_err;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn domain() -> Domain {
    Domain::new([-2.0, 0.0, -1.0], [2.0, 3.0, 1.0], 0.0, 2.0).unwrap()
}

fn field(seed: u64) -> TrajectoryField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrajectoryField::new(&FieldSpec::with_width(24, 30.0), domain(), &mut rng).unwrap()
}

fn interior_point<R: Rng>(rng: &mut R) -> Spacetime {
    let d = domain();
    let x = Vector3::from_fn(|i, _| rng.random_range(d.lo[i] + 0.1..d.hi[i] - 0.1));
    Spacetime::new(x, rng.random_range(0.1..1.9))
}

fn v(x: Vector3<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

#[test]
fn velocity_matches_time_difference_of_direct_map() {
    let f = field(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = interior_point(&mut rng);
        let h = 1e-4;
        let a = f.flow_map(&p, p.t + h, MapMode::Direct).unwrap().target;
        let b = f.flow_map(&p, p.t - h, MapMode::Direct).unwrap().target;
        let fd = (a - b) / (2.0 * h);
        let u = f.extract_velocity(&p).unwrap();
        assert!(rel_err(&v(u), &v(fd)) < 1e-3, "{u} vs {fd}");
    }
}

#[test]
fn acceleration_matches_second_time_difference() {
    let f = field(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let p = interior_point(&mut rng);
        let h = 1e-3;
        let m = |t: f64| f.flow_map(&p, t, MapMode::Direct).unwrap().target;
        let fd = (m(p.t + h) - 2.0 * m(p.t) + m(p.t - h)) / (h * h);
        let acc = f.material_acceleration(&p).unwrap();
        assert!(rel_err(&v(acc), &v(fd)) < 1e-2, "{acc} vs {fd}");
    }
}

#[test]
fn map_jacobian_matches_column_differences() {
    let f = field(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let p = interior_point(&mut rng);
        let tb = rng.random_range(0.0..2.0);
        let m = f.map_jacobian(&p, tb).unwrap();
        let res = f.flow_map(&p, tb, MapMode::Direct).unwrap();
        assert!((res.jacobian.unwrap() - m).norm() < 1e-12);
        let h = 1e-4;
        let mut fd = Vec::new();
        let mut ad = Vec::new();
        for j in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp.x[j] += h;
            pm.x[j] -= h;
            let col = (f.flow_map(&pp, tb, MapMode::Direct).unwrap().target - f.flow_map(&pm, tb, MapMode::Direct).unwrap().target) / (2.0 * h);
            fd.extend(col.iter());
            ad.extend(m.column(j).iter());
        }
        assert!(rel_err(&ad, &fd) < 1e-3);
    }
}

#[test]
fn velocity_gradient_matches_spatial_differences() {
    let f = field(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let p = interior_point(&mut rng);
        let (u, g) = f.velocity_gradient_batch(&[p]).unwrap()[0];
        assert!((u - f.extract_velocity(&p).unwrap()).norm() < 1e-12);
        let h = 1e-4;
        let mut fd = Vec::new();
        let mut ad = Vec::new();
        for j in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp.x[j] += h;
            pm.x[j] -= h;
            let col = (f.extract_velocity(&pp).unwrap() - f.extract_velocity(&pm).unwrap()) / (2.0 * h);
            fd.extend(col.iter());
            ad.extend(g.column(j).iter());
        }
        assert!(rel_err(&ad, &fd) < 1e-3);
        let div = f.divergence_batch(&[p]).unwrap()[0];
        assert!((div - g.trace()).abs() < 1e-12);
    }
}

/// `sum |u|^2 + sum tr G + c . z + sum |out|^2` over a batch, via a traced pass.
fn traced_loss(f: &TrajectoryField, pts: &[Spacetime], grads: Option<&mut FieldGrads>) -> (f64, Option<ndarray::Array2<f64>>) {
    let times: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let jets = MapJets { spatial: true, dec_time: true, space_time2: true, ..MapJets::default() };
    let pass = f.map_pass(pts, &times, jets).unwrap();
    let t2 = jets.t2();
    let n = pts.len();
    let mut loss = 0.0;
    let mut g_out = JetBatch::zeros(3, n, Arc::clone(pass.out.layout()));
    for b in 0..n {
        for i in 0..3 {
            let u = pass.out.d1(t2)[[i, b]];
            let x = pass.out.value()[[i, b]];
            loss += u * u + x * x + pass.out.d2(i, t2)[[i, b]];
            g_out.d1_mut(t2)[[i, b]] = 2.0 * u;
            g_out.value_mut()[[i, b]] = 2.0 * x;
            g_out.d2_mut(i, t2)[[i, b]] = 1.0;
        }
    }
    let mut g_z = JetBatch::zeros(pass.z.dim(), n, Arc::clone(pass.z.layout()));
    for b in 0..n {
        for r in 0..pass.z.dim() {
            let c = 0.1 * (r as f64 + 1.0);
            loss += c * pass.z.value()[[r, b]];
            g_z.value_mut()[[r, b]] = c;
        }
    }
    let gx = grads.map(|g| pass.backward(f, Some(&g_z), Some(&g_out), g).unwrap());
    (loss, gx)
}

fn fd_net_param(f: &TrajectoryField, pts: &[Spacetime], which: usize, idx: usize, h: f64) -> f64 {
    let mut g = f.clone();
    let net: &mut SineMlp = if which == 0 { &mut g.encoder } else { &mut g.decoder };
    let v0 = net.param(idx);
    net.set_param(idx, v0 + h);
    let lp = traced_loss(&g, pts, None).0;
    let net: &mut SineMlp = if which == 0 { &mut g.encoder } else { &mut g.decoder };
    net.set_param(idx, v0 - h);
    let lm = traced_loss(&g, pts, None).0;
    (lp - lm) / (2.0 * h)
}

#[test]
fn traced_pass_gradients_match_finite_differences() {
    let f = field(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pts: Vec<_> = (0..3).map(|_| interior_point(&mut rng)).collect();
    let mut grads = FieldGrads::zeros_like(&f);
    let (_, gx) = traced_loss(&f, &pts, Some(&mut grads));
    for which in 0..2 {
        let (net, tape) = if which == 0 { (&f.encoder, &grads.encoder) } else { (&f.decoder, &grads.decoder) };
        let idx: Vec<usize> = (0..12).map(|_| rng.random_range(0..net.param_count())).collect();
        let ad: Vec<f64> = idx.iter().map(|&i| tape.get(i)).collect();
        let fd: Vec<f64> = idx.iter().map(|&i| fd_net_param(&f, &pts, which, i, 1e-6)).collect();
        assert!(rel_err(&ad, &fd) < 1e-3, "net {which}: {ad:?} vs {fd:?}");
    }
    // value cotangent w.r.t. source coordinates
    let gx = gx.unwrap();
    let h = 1e-6;
    for c in 0..4 {
        let mut pp = pts.clone();
        let mut pm = pts.clone();
        if c < 3 {
            pp[0].x[c] += h;
            pm[0].x[c] -= h;
        } else {
            pp[0].t += h;
            pm[0].t -= h;
        }
        let fd = (traced_loss(&f, &pp, None).0 - traced_loss(&f, &pm, None).0) / (2.0 * h);
        // the time cotangent only covers the encoder input; the decoder
        // target time is a separate argument of the pass
        if c < 3 {
            assert!((gx[[c, 0]] - fd).abs() < 1e-3 * fd.abs().max(1.0), "coord {c}: {} vs {fd}", gx[[c, 0]]);
        }
    }
}

#[test]
fn corrected_and_direct_modes_agree_on_jacobian_shape() {
    let f = field(11);
    let p = Spacetime::from_xyzt(0.5, 1.0, 0.0, 1.0);
    let a = f.flow_map(&p, 1.5, MapMode::Corrected).unwrap();
    let b = f.flow_map(&p, 1.5, MapMode::Direct).unwrap();
    assert_eq!(a.feature, b.feature);
    assert_eq!(a.feature.0.len(), 16);
}
