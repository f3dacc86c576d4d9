use std::sync::Arc;

use nalgebra::Vector3;

use super::{Aabb, SamplePoint};
use crate::error::{Error, Result};
use crate::field::{column3, FieldGrads, MapJets, MapMode, Spacetime, TrajectoryField};
use crate::nn::JetBatch;

fn nonempty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyBatch)
    } else {
        Ok(())
    }
}

/// Mean `|D(E(x, t), t) - x|^2`.
pub fn self_cycle(f: &TrajectoryField, points: &[Spacetime], grads: Option<&mut FieldGrads>) -> Result<f64> {
    nonempty(points)?;
    let n = points.len();
    let times: Vec<f64> = points.iter().map(|p| p.t).collect();
    let pass = f.map_pass(points, &times, MapJets::values())?;
    let mut loss = 0.0;
    let mut g = JetBatch::zeros(3, n, Arc::clone(pass.out.layout()));
    for (b, p) in points.iter().enumerate() {
        let r = column3(&pass.out, b) - p.x;
        loss += r.norm_squared();
        for i in 0..3 {
            g.value_mut()[[i, b]] = 2.0 * r[i] / n as f64;
        }
    }
    if let Some(grads) = grads {
        pass.backward(f, None, Some(&g), grads)?;
    }
    Ok(loss / n as f64)
}

/// Target positions `x_b = x_a + D(z_a, t_b) - D(z_a, t_a)` of a `k = 2` pass
/// with targets `[t_b.., t_a..]`, and which of them fall inside the domain.
fn corrected_targets(f: &TrajectoryField, pass: &crate::field::MapPass, pairs: &[SamplePoint]) -> (Vec<Vector3<f64>>, Vec<usize>) {
    let xb: Vec<Vector3<f64>> = pairs
        .iter()
        .enumerate()
        .map(|(b, s)| s.p_a.x + (column3(&pass.out, pass.col(0, b)) - column3(&pass.out, pass.col(1, b))))
        .collect();
    let valid = (0..pairs.len()).filter(|&b| f.domain.contains(&Spacetime::new(xb[b], pairs[b].t_b))).collect();
    (xb, valid)
}

pub(crate) fn pair_targets(pairs: &[SamplePoint]) -> Vec<f64> {
    pairs.iter().map(|s| s.t_b).chain(pairs.iter().map(|s| s.p_a.t)).collect()
}

/// Feed a value cotangent on the corrected targets back into the `k = 2` pass output.
pub(crate) fn scatter_target_cotangent(g_out: &mut JetBatch, pass: &crate::field::MapPass, b: usize, g: &[f64]) {
    let (c0, c1) = (pass.col(0, b), pass.col(1, b));
    for i in 0..3 {
        g_out.value_mut()[[i, c0]] += g[i];
        g_out.value_mut()[[i, c1]] -= g[i];
    }
}

/// Mean `|E(x_a, t_a) - E(x_b, t_b)|^2` with `x_b` from the corrected map.
///
/// Pairs whose mapped point leaves the domain are skipped; the mean runs over the rest.
pub fn cross_cycle(f: &TrajectoryField, pairs: &[SamplePoint], grads: Option<&mut FieldGrads>) -> Result<f64> {
    nonempty(pairs)?;
    let sources: Vec<Spacetime> = pairs.iter().map(|s| s.p_a).collect();
    let pass = f.map_pass(&sources, &pair_targets(pairs), MapJets::values())?;
    let (xb, valid) = corrected_targets(f, &pass, pairs);
    if valid.is_empty() {
        return Ok(0.0);
    }
    let nv = valid.len() as f64;
    let pts_b: Vec<Spacetime> = valid.iter().map(|&b| Spacetime::new(xb[b], pairs[b].t_b)).collect();
    let enc_b = f.encoder_pass(&pts_b, false, false)?;
    let dz = pass.z.dim();
    let mut loss = 0.0;
    let mut g_zb = JetBatch::zeros(dz, valid.len(), Arc::clone(enc_b.z.layout()));
    let mut g_za = JetBatch::zeros(dz, pairs.len(), Arc::clone(pass.z.layout()));
    for (j, &b) in valid.iter().enumerate() {
        for r in 0..dz {
            let d = enc_b.z.value()[[r, j]] - pass.z.value()[[r, b]];
            loss += d * d;
            g_zb.value_mut()[[r, j]] = 2.0 * d / nv;
            g_za.value_mut()[[r, b]] = -2.0 * d / nv;
        }
    }
    if let Some(grads) = grads {
        let gx = enc_b.backward(f, &g_zb, &mut grads.encoder)?;
        let mut g_out = JetBatch::zeros(3, pass.out.batch(), Arc::clone(pass.out.layout()));
        for (j, &b) in valid.iter().enumerate() {
            scatter_target_cotangent(&mut g_out, &pass, b, &[gx[[0, j]], gx[[1, j]], gx[[2, j]]]);
        }
        pass.backward(f, Some(&g_za), Some(&g_out), grads)?;
    }
    Ok(loss / nv)
}

/// Mean over samples of `sum_r (dz_r/dt + u . grad z_r)^2`, `u` detached.
///
/// Samples inside `inflow` are excluded; an empty remainder gives 0.
pub fn feature_transport(
    f: &TrajectoryField,
    points: &[Spacetime],
    inflow: Option<&Aabb>,
    grads: Option<&mut FieldGrads>,
) -> Result<f64> {
    nonempty(points)?;
    let kept: Vec<Spacetime> = points.iter().filter(|p| !inflow.is_some_and(|r| r.contains(&p.x))).copied().collect();
    if kept.is_empty() {
        return Ok(0.0);
    }
    let u = f.velocity_batch(&kept)?;
    feature_transport_with(f, &kept, &u, grads)
}

/// [`feature_transport`] without inflow filtering and with the velocity supplied by the caller.
pub fn feature_transport_with(
    f: &TrajectoryField,
    kept: &[Spacetime],
    u: &[Vector3<f64>],
    grads: Option<&mut FieldGrads>,
) -> Result<f64> {
    nonempty(kept)?;
    if u.len() != kept.len() {
        return Err(Error::Shape { expected: kept.len(), got: u.len() });
    }
    let n = kept.len() as f64;
    let enc = f.encoder_pass(kept, true, true)?;
    let jets = *enc.jets();
    let dz = enc.z.dim();
    let mut loss = 0.0;
    let mut g = JetBatch::zeros(dz, kept.len(), Arc::clone(enc.z.layout()));
    for (b, ub) in u.iter().enumerate() {
        for r in 0..dz {
            let mut res = enc.z.d1(jets.t1())[[r, b]];
            for i in 0..3 {
                res += ub[i] * enc.z.d1(jets.x(i))[[r, b]];
            }
            loss += res * res;
            let gr = 2.0 * res / n;
            g.d1_mut(jets.t1())[[r, b]] = gr;
            for i in 0..3 {
                g.d1_mut(jets.x(i))[[r, b]] = gr * ub[i];
            }
        }
    }
    if let Some(grads) = grads {
        enc.backward(f, &g, &mut grads.encoder)?;
    }
    Ok(loss / n)
}

/// Mean `|Phi(x_a, t_a -> t_b) - x_b|^2` against known target positions.
///
/// Not part of the physics objective: used to fit a field to an oracle flow map.
pub fn map_supervision(
    f: &TrajectoryField,
    pairs: &[SamplePoint],
    targets: &[Vector3<f64>],
    mode: MapMode,
    grads: Option<&mut FieldGrads>,
) -> Result<f64> {
    nonempty(pairs)?;
    if targets.len() != pairs.len() {
        return Err(Error::Shape { expected: pairs.len(), got: targets.len() });
    }
    let n = pairs.len() as f64;
    let sources: Vec<Spacetime> = pairs.iter().map(|s| s.p_a).collect();
    let times = match mode {
        MapMode::Direct => pairs.iter().map(|s| s.t_b).collect(),
        MapMode::Corrected => pair_targets(pairs),
    };
    let pass = f.map_pass(&sources, &times, MapJets::values())?;
    let mut g = JetBatch::zeros(3, pass.out.batch(), Arc::clone(pass.out.layout()));
    let mut loss = 0.0;
    for (b, s) in pairs.iter().enumerate() {
        let x = match mode {
            MapMode::Direct => column3(&pass.out, b),
            MapMode::Corrected => s.p_a.x + column3(&pass.out, pass.col(0, b)) - column3(&pass.out, pass.col(1, b)),
        };
        let r = x - targets[b];
        loss += r.norm_squared();
        let gr: Vec<f64> = r.iter().map(|v| 2.0 * v / n).collect();
        match mode {
            MapMode::Direct => {
                for i in 0..3 {
                    g.value_mut()[[i, b]] = gr[i];
                }
            }
            MapMode::Corrected => scatter_target_cotangent(&mut g, &pass, b, &gr),
        }
    }
    if let Some(grads) = grads {
        pass.backward(f, None, Some(&g), grads)?;
    }
    Ok(loss / n)
}
