use nalgebra::Vector3;

use super::intrinsic::{pair_targets, scatter_target_cotangent};
use super::{sign, SamplePoint};
use crate::analytic::{AnalyticSdf, MIN_GRAD_NORM};
use crate::error::{Error, Result};
use crate::field::{column3, MapJets, Spacetime};
use crate::nn::JetBatch;
use crate::radiance::{SceneGrads, SceneModel, StaticField, StaticGrads};

/// Signed distance and gradient for a batch of points.
pub trait SdfQuery {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Result<Vec<(f64, Vector3<f64>)>>;
}

impl SdfQuery for AnalyticSdf {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Result<Vec<(f64, Vector3<f64>)>> {
        Ok(points.iter().map(|x| self.eval(x)).collect())
    }
}

impl SdfQuery for StaticField {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Result<Vec<(f64, Vector3<f64>)>> {
        let pass = self.pass(points)?;
        Ok(pass.s.iter().copied().zip(pass.grad.iter().copied()).collect())
    }
}

fn nonempty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyBatch)
    } else {
        Ok(())
    }
}

/// Mean of `(dsigma_L/dt + u . grad sigma_L)^2 + lambda (dsigma_N/dt + u . grad sigma_N)^2`, `u` detached.
pub fn transport_dual(model: &SceneModel, points: &[Spacetime], lambda: f64, grads: Option<&mut SceneGrads>) -> Result<f64> {
    nonempty(points)?;
    let u = model.field.velocity_batch(points)?;
    transport_dual_with(model, points, &u, lambda, grads)
}

/// [`transport_dual`] with the advecting velocity supplied by the caller.
pub fn transport_dual_with(
    model: &SceneModel,
    points: &[Spacetime],
    u: &[Vector3<f64>],
    lambda: f64,
    grads: Option<&mut SceneGrads>,
) -> Result<f64> {
    nonempty(points)?;
    if u.len() != points.len() {
        return Err(Error::Shape { expected: points.len(), got: u.len() });
    }
    let n = points.len();
    let inv = 1.0 / n as f64;
    let lp = model.lagrangian.pass(&model.field, points, true)?;
    let dp = if lambda != 0.0 { Some(model.dynamic.pass(points, true)?) } else { None };
    let residual = |d1: &[f64], u: &Vector3<f64>| d1[3] + u[0] * d1[0] + u[1] * d1[1] + u[2] * d1[2];
    let seed = |r: f64, u: &Vector3<f64>, w: f64| vec![2.0 * w * r * u[0], 2.0 * w * r * u[1], 2.0 * w * r * u[2], 2.0 * w * r];
    let mut loss = 0.0;
    let mut g_l = Vec::with_capacity(n);
    let mut g_n = Vec::with_capacity(n);
    for (b, ub) in u.iter().enumerate() {
        let rl = residual(&lp.sigma_jet(b).1, ub);
        loss += rl * rl;
        g_l.push(seed(rl, ub, inv));
        if let Some(dp) = &dp {
            let rn = residual(&dp.sigma_jet(b).1, ub);
            loss += lambda * rn * rn;
            g_n.push(seed(rn, ub, lambda * inv));
        }
    }
    if let Some(grads) = grads {
        let zeros = vec![0.0; n];
        lp.backward(&model.field, &model.lagrangian, &zeros, Some(&g_l), &mut grads.field, &mut grads.lagrangian)?;
        if let Some(dp) = &dp {
            dp.backward(&model.dynamic, &zeros, Some(&g_n), None, &mut grads.dynamic)?;
        }
    }
    Ok(loss * inv)
}

/// Mean `|sigma_N(a) - sigma_N(b)|` and mean per-component `|c(a) - c(b)|` along corrected-map pairs.
///
/// Gradients reach the dynamic field at both ends and the trajectory field through `x_b`.
pub fn density_color_mapping(
    model: &SceneModel,
    pairs: &[SamplePoint],
    density_grads: Option<&mut SceneGrads>,
    color_grads: Option<&mut SceneGrads>,
) -> Result<(f64, f64)> {
    nonempty(pairs)?;
    let f = &model.field;
    let sources: Vec<Spacetime> = pairs.iter().map(|s| s.p_a).collect();
    let pass = f.map_pass(&sources, &pair_targets(pairs), MapJets::values())?;
    let valid: Vec<(usize, Spacetime)> = (0..pairs.len())
        .map(|b| (b, Spacetime::new(sources[b].x + (column3(&pass.out, pass.col(0, b)) - column3(&pass.out, pass.col(1, b))), pairs[b].t_b)))
        .filter(|(_, p)| f.domain.contains(p))
        .collect();
    if valid.is_empty() {
        return Ok((0.0, 0.0));
    }
    let nv = valid.len();
    let pts_a: Vec<Spacetime> = valid.iter().map(|&(b, _)| sources[b]).collect();
    let pts_b: Vec<Spacetime> = valid.iter().map(|&(_, p)| p).collect();
    let da = model.dynamic.pass(&pts_a, false)?;
    let db = model.dynamic.pass(&pts_b, false)?;
    let (mut ld, mut lc) = (0.0, 0.0);
    let mut gs = vec![0.0; nv];
    let mut gc = vec![[0.0; 3]; nv];
    for j in 0..nv {
        let d = da.sigma(j) - db.sigma(j);
        ld += d.abs();
        gs[j] = sign(d) / nv as f64;
        let (ca, cb) = (da.color(j), db.color(j));
        for k in 0..3 {
            let e = ca[k] - cb[k];
            lc += e.abs();
            gc[j][k] = sign(e) / (3 * nv) as f64;
        }
    }
    let zeros = vec![0.0; nv];
    let zeros_c = vec![[0.0; 3]; nv];
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let neg_c = |v: &[[f64; 3]]| v.iter().map(|c| c.map(|x| -x)).collect::<Vec<_>>();
    let run = |g_sigma: &[f64], g_color: &[[f64; 3]], grads: &mut SceneGrads| -> Result<()> {
        da.backward(&model.dynamic, g_sigma, None, Some(g_color), &mut grads.dynamic)?;
        let gx = db.backward(&model.dynamic, &neg(g_sigma), None, Some(&neg_c(g_color)), &mut grads.dynamic)?;
        let mut g_out = JetBatch::zeros(3, pass.out.batch(), std::sync::Arc::clone(pass.out.layout()));
        for (j, &(b, _)) in valid.iter().enumerate() {
            scatter_target_cotangent(&mut g_out, &pass, b, &[gx[[0, j]], gx[[1, j]], gx[[2, j]]]);
        }
        pass.backward(f, None, Some(&g_out), &mut grads.field)?;
        Ok(())
    };
    if let Some(g) = density_grads {
        run(&gs, &zeros_c, g)?;
    }
    if let Some(g) = color_grads {
        run(&zeros, &gc, g)?;
    }
    Ok((ld / nv as f64, lc / (3 * nv) as f64))
}

/// Mean `|sigma_N - sigma_L|` with `sigma_N` as a detached teacher.
pub fn distillation(model: &SceneModel, points: &[Spacetime], grads: Option<&mut SceneGrads>) -> Result<f64> {
    nonempty(points)?;
    let n = points.len() as f64;
    let (teacher, _) = model.dynamic.query_batch(points)?;
    let lp = model.lagrangian.pass(&model.field, points, false)?;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(points.len());
    for (b, &sn) in teacher.iter().enumerate() {
        let d = lp.sigma(b) - sn;
        loss += d.abs();
        g.push(sign(d) / n);
    }
    if let Some(grads) = grads {
        lp.backward(&model.field, &model.lagrangian, &g, None, &mut grads.field, &mut grads.lagrangian)?;
    }
    Ok(loss / n)
}

/// Per-point boundary penalties `(sigma [s <= 0], [|s| <= eps] |u . n| + [s < 0] |u|)`.
pub fn boundary_terms(s: f64, normal: &Vector3<f64>, u: &Vector3<f64>, sigma: f64, eps: f64) -> (f64, f64) {
    let ls = if s <= 0.0 { sigma } else { 0.0 };
    let mut lu = 0.0;
    if s.abs() <= eps {
        lu += u.dot(normal).abs();
    }
    if s < 0.0 {
        lu += u.norm();
    }
    (ls, lu)
}

/// Batch means of [`boundary_terms`]. The SDF gates and normals are detached;
/// gradients reach `sigma_N` and the velocity.
pub fn boundary_losses<S: SdfQuery + ?Sized>(
    model: &SceneModel,
    sdf: &S,
    points: &[Spacetime],
    eps: f64,
    sigma_grads: Option<&mut SceneGrads>,
    u_grads: Option<&mut SceneGrads>,
) -> Result<(f64, f64)> {
    nonempty(points)?;
    let n = points.len() as f64;
    let xs: Vec<Vector3<f64>> = points.iter().map(|p| p.x).collect();
    let sd = sdf.sdf_batch(&xs)?;
    let inside: Vec<usize> = (0..points.len()).filter(|&b| sd[b].0 <= 0.0).collect();
    let near: Vec<usize> = (0..points.len()).filter(|&b| sd[b].0.abs() <= eps || sd[b].0 < 0.0).collect();

    let mut ls = 0.0;
    if !inside.is_empty() {
        let pts: Vec<Spacetime> = inside.iter().map(|&b| points[b]).collect();
        let dp = model.dynamic.pass(&pts, false)?;
        ls = (0..pts.len()).map(|j| dp.sigma(j)).sum::<f64>();
        if let Some(g) = sigma_grads {
            dp.backward(&model.dynamic, &vec![1.0 / n; pts.len()], None, None, &mut g.dynamic)?;
        }
    }
    let mut lu = 0.0;
    if !near.is_empty() {
        let pts: Vec<Spacetime> = near.iter().map(|&b| points[b]).collect();
        let times: Vec<f64> = pts.iter().map(|p| p.t).collect();
        let jets = MapJets::velocity();
        let pass = model.field.map_pass(&pts, &times, jets)?;
        let mut g_out = JetBatch::zeros(3, pts.len(), std::sync::Arc::clone(pass.out.layout()));
        for (j, &b) in near.iter().enumerate() {
            let (s, grad) = sd[b];
            let gn = grad.norm();
            let normal = if gn > MIN_GRAD_NORM { grad / gn } else { Vector3::zeros() };
            let u = Vector3::from_fn(|i, _| pass.out.d1(jets.t2())[[i, j]]);
            let (_, l) = boundary_terms(s, &normal, &u, 0.0, eps);
            lu += l;
            let mut gu = Vector3::zeros();
            if s.abs() <= eps {
                gu += normal * sign(u.dot(&normal));
            }
            if s < 0.0 && u.norm() > 0.0 {
                gu += u / u.norm();
            }
            for i in 0..3 {
                g_out.d1_mut(jets.t2())[[i, j]] = gu[i] / n;
            }
        }
        if let Some(g) = u_grads {
            pass.backward(&model.field, None, Some(&g_out), &mut g.field)?;
        }
    }
    Ok((ls / n, lu / n))
}

/// Mean `(|grad s| - 1)^2` for any SDF.
pub fn eikonal_value<S: SdfQuery + ?Sized>(sdf: &S, points: &[Vector3<f64>]) -> Result<f64> {
    nonempty(points)?;
    let v = sdf.sdf_batch(points)?;
    Ok(v.iter().map(|(_, g)| (g.norm() - 1.0).powi(2)).sum::<f64>() / points.len() as f64)
}

/// Eikonal loss of a static field, with gradients into a learned SDF network.
pub fn eikonal(field: &StaticField, points: &[Vector3<f64>], grads: Option<&mut StaticGrads>) -> Result<f64> {
    nonempty(points)?;
    let n = points.len();
    let pass = field.pass(points)?;
    let mut loss = 0.0;
    let mut gg = Vec::with_capacity(n);
    for g in &pass.grad {
        let norm = g.norm();
        loss += (norm - 1.0).powi(2);
        gg.push(if norm > 0.0 { g * (2.0 * (norm - 1.0) / norm / n as f64) } else { Vector3::zeros() });
    }
    if let Some(grads) = grads {
        pass.backward(field, &vec![0.0; n], &vec![[0.0; 3]; n], Some(&gg), grads)?;
    }
    Ok(loss / n as f64)
}
