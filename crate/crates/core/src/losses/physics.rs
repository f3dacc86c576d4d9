use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;

use super::intrinsic::{pair_targets, scatter_target_cotangent};
use super::{sign, SamplePoint};
use crate::error::{Error, Result};
use crate::field::{column3, FieldGrads, MapJets, Spacetime, TrajectoryField};
use crate::nn::{JetBatch, JetLayout};

/// Mean `|d^2 D/dt^2|` and mean `|div u|` from one traced pass, each with its own gradient buffer.
pub fn nse_and_div(
    f: &TrajectoryField,
    points: &[Spacetime],
    nse_grads: Option<&mut FieldGrads>,
    div_grads: Option<&mut FieldGrads>,
) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = points.len();
    let inv = 1.0 / n as f64;
    let times: Vec<f64> = points.iter().map(|p| p.t).collect();
    let jets = MapJets { spatial: true, dec_time: true, space_time2: true, time2_time2: true, ..MapJets::default() };
    let pass = f.map_pass(points, &times, jets)?;
    let t2 = jets.t2();
    let layout = Arc::clone(pass.out.layout());
    let (mut nse, mut div) = (0.0, 0.0);
    let mut g_nse = JetBatch::zeros(3, n, Arc::clone(&layout));
    let mut g_div = JetBatch::zeros(3, n, layout);
    for b in 0..n {
        let a = Vector3::from_fn(|i, _| pass.out.d2(t2, t2)[[i, b]]);
        let norm = a.norm();
        nse += norm;
        if norm > 0.0 {
            for i in 0..3 {
                g_nse.d2_mut(t2, t2)[[i, b]] = a[i] / norm * inv;
            }
        }
        let d: f64 = (0..3).map(|i| pass.out.d2(jets.x(i), t2)[[i, b]]).sum();
        div += d.abs();
        for i in 0..3 {
            g_div.d2_mut(jets.x(i), t2)[[i, b]] = sign(d) * inv;
        }
    }
    if let Some(g) = nse_grads {
        pass.backward(f, None, Some(&g_nse), g)?;
    }
    if let Some(g) = div_grads {
        pass.backward(f, None, Some(&g_div), g)?;
    }
    Ok((nse * inv, div * inv))
}

/// Mean `|d^2 D(z, t)/dt^2|`.
pub fn nse_loss(f: &TrajectoryField, points: &[Spacetime], grads: Option<&mut FieldGrads>) -> Result<f64> {
    Ok(nse_and_div(f, points, grads, None)?.0)
}

/// Mean `|div u|`.
pub fn div_loss(f: &TrajectoryField, points: &[Spacetime], grads: Option<&mut FieldGrads>) -> Result<f64> {
    Ok(nse_and_div(f, points, None, grads)?.1)
}

/// Mean absolute per-component residual `u_a - M^T u_b`, `M = dx_b/dx_a`.
///
/// `x_b` is the corrected map of `x_a`; pairs mapped outside the domain are skipped.
pub fn velocity_mapping(f: &TrajectoryField, pairs: &[SamplePoint], grads: Option<&mut FieldGrads>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sources: Vec<Spacetime> = pairs.iter().map(|s| s.p_a).collect();
    // target set 0 at t_b (Jacobian), set 1 at t_a (velocity at the source)
    let jets = MapJets { spatial: true, dec_time: true, ..MapJets::default() };
    let pass = f.map_pass(&sources, &pair_targets(pairs), jets)?;
    let t2 = jets.t2();
    let xb: Vec<Vector3<f64>> = (0..pairs.len())
        .map(|b| sources[b].x + (column3(&pass.out, pass.col(0, b)) - column3(&pass.out, pass.col(1, b))))
        .collect();
    let valid: Vec<usize> = (0..pairs.len()).filter(|&b| f.domain.contains(&Spacetime::new(xb[b], pairs[b].t_b))).collect();
    if valid.is_empty() {
        return Ok(0.0);
    }
    let pts_b: Vec<Spacetime> = valid.iter().map(|&b| Spacetime::new(xb[b], pairs[b].t_b)).collect();
    let times_b: Vec<f64> = pts_b.iter().map(|p| p.t).collect();
    let pass_b = f.map_pass(&pts_b, &times_b, MapJets::velocity())?;
    let scale = 1.0 / (3.0 * valid.len() as f64);

    let mut loss = 0.0;
    let mut g_out = JetBatch::zeros(3, pass.out.batch(), Arc::clone(pass.out.layout()));
    let mut g_out_b = JetBatch::zeros(3, valid.len(), Arc::clone(pass_b.out.layout()));
    for (j, &b) in valid.iter().enumerate() {
        let (ca, cb) = (pass.col(1, b), pass.col(0, b));
        let u_a = Vector3::from_fn(|i, _| pass.out.d1(t2)[[i, ca]]);
        let m = Matrix3::from_fn(|i, k| pass.out.d1(jets.x(k))[[i, cb]]);
        let u_b = Vector3::from_fn(|i, _| pass_b.out.d1(MapJets::velocity().t2())[[i, j]]);
        let r = u_a - m.transpose() * u_b;
        loss += r.iter().map(|v| v.abs()).sum::<f64>();
        let gr = r.map(|v| sign(v) * scale);
        for i in 0..3 {
            g_out.d1_mut(t2)[[i, ca]] = gr[i];
            for k in 0..3 {
                g_out.d1_mut(jets.x(k))[[i, cb]] = -gr[k] * u_b[i];
            }
        }
        let gub = -(m * gr);
        for i in 0..3 {
            g_out_b.d1_mut(MapJets::velocity().t2())[[i, j]] = gub[i];
        }
    }
    if let Some(grads) = grads {
        let gx = pass_b.backward(f, None, Some(&g_out_b), grads)?;
        for (j, &b) in valid.iter().enumerate() {
            scatter_target_cotangent(&mut g_out, &pass, b, &[gx[[0, j]], gx[[1, j]], gx[[2, j]]]);
        }
        pass.backward(f, None, Some(&g_out), grads)?;
    }
    Ok(loss * scale)
}

/// Both sides of the Eulerian/Lagrangian acceleration identity at each point.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvectionCheck {
    /// `du/dt + (u . grad) u` through the composed jets.
    pub eulerian: Vec<Vector3<f64>>,
    /// `(du/dz)(dz/dt + (u . grad) z) + du/dt|_z`.
    pub lagrangian: Vec<Vector3<f64>>,
    /// The same with the `dz/dt` term dropped.
    pub lagrangian_without_dzdt: Vec<Vector3<f64>>,
}

impl AdvectionCheck {
    pub fn max_residual(&self) -> f64 {
        self.eulerian.iter().zip(&self.lagrangian).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_residual_without_dzdt(&self) -> f64 {
        self.eulerian.iter().zip(&self.lagrangian_without_dzdt).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Evaluate the material acceleration two ways: by differentiating the composed
/// map in both time arguments, and by a decoder jet seeded on the feature.
pub fn advection_equivalence(f: &TrajectoryField, points: &[Spacetime]) -> Result<AdvectionCheck> {
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = points.len();
    let times: Vec<f64> = points.iter().map(|p| p.t).collect();
    let jets = MapJets {
        spatial: true,
        enc_time: true,
        dec_time: true,
        space_time2: true,
        time2_time2: true,
        time1_time2: true,
    };
    let pass = f.map_pass(points, &times, jets)?;
    let (t1, t2) = (jets.t1(), jets.t2());

    // decoder alone, seeded on every feature component and on time
    let dz = f.feature_dim();
    let tdir = dz;
    let pairs: Vec<(usize, usize)> = (0..dz).map(|r| (r, tdir)).chain([(tdir, tdir)]).collect();
    let layout = Arc::new(JetLayout::new(dz + 1, &pairs)?);
    let mut vals = Array2::zeros((dz + 1, n));
    vals.slice_mut(ndarray::s![..dz, ..]).assign(&pass.z.value());
    for (b, p) in points.iter().enumerate() {
        vals[[dz, b]] = f.domain.normalize_time(p.t);
    }
    let mut input = JetBatch::with_values(vals.view(), layout);
    for r in 0..dz {
        input.seed(r, r, 1.0);
    }
    input.seed(dz, tdir, 1.0 / f.domain.duration());
    let mut dec = f.decoder.forward_jets(&input)?;
    dec.scale_rows(&f.domain.half_extent());

    let mut check = AdvectionCheck { eulerian: Vec::new(), lagrangian: Vec::new(), lagrangian_without_dzdt: Vec::new() };
    for b in 0..n {
        let col = |m: ndarray::ArrayView2<f64>| Vector3::new(m[[0, b]], m[[1, b]], m[[2, b]]);
        let u = col(pass.out.d1(t2));
        let mut lhs = col(pass.out.d2(t1, t2)) + col(pass.out.d2(t2, t2));
        for i in 0..3 {
            lhs += u[i] * col(pass.out.d2(jets.x(i), t2));
        }
        let mut with = col(dec.d2(tdir, tdir));
        let mut without = with;
        for r in 0..dz {
            let du_dz = col(dec.d2(r, tdir));
            let adv: f64 = (0..3).map(|i| u[i] * pass.z.d1(jets.x(i))[[r, b]]).sum();
            with += du_dz * (pass.z.d1(t1)[[r, b]] + adv);
            without += du_dz * adv;
        }
        check.eulerian.push(lhs);
        check.lagrangian.push(with);
        check.lagrangian_without_dzdt.push(without);
    }
    Ok(check)
}
