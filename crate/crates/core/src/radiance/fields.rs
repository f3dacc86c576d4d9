use std::sync::Arc;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;

use crate::analytic::{AnalyticSdf, MIN_GRAD_NORM};
use crate::error::{Error, Result};
use crate::field::{Domain, EncoderPass, FieldGrads, Spacetime, TrajectoryField};
use crate::nn::{JetBatch, JetLayout, MlpContext, MlpSpec, ParamGrad, SineMlp};

/// Initial NeuS sharpness.
pub const SHARPNESS_INIT: f64 = 20.0;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_points(domain: &Domain, points: &[Spacetime]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    points.iter().try_for_each(|p| domain.check(p))
}

/// Jet input for a space-time network, optionally seeded on `x, y, z, t`.
fn spacetime_input(domain: &Domain, points: &[Spacetime], jets: bool) -> Result<JetBatch> {
    let layout = Arc::new(if jets { JetLayout::first_order(4) } else { JetLayout::constant() });
    let mut input = JetBatch::with_values(domain.network_inputs(points).view(), layout);
    if jets {
        let h = domain.half_extent();
        for i in 0..3 {
            input.seed(i, i, 1.0 / h[i]);
        }
        input.seed(3, 3, 1.0 / domain.duration());
    }
    Ok(input)
}

/// Softplus on row 0 of a jet block: value and first-order channels.
fn softplus_row(raw: &JetBatch, b: usize) -> (f64, Vec<f64>) {
    let r = raw.value()[[0, b]];
    let s = sigmoid(r);
    (softplus(r), (0..raw.layout().dirs()).map(|d| s * raw.d1(d)[[0, b]]).collect())
}

/// Upstream for row 0 of a softplus-activated jet block, written into `g`.
fn softplus_row_backward(raw: &JetBatch, b: usize, g_sigma: f64, g_d1: &[f64], g: &mut JetBatch) {
    let r = raw.value()[[0, b]];
    let s = sigmoid(r);
    let ds = s * (1.0 - s);
    let mut gv = g_sigma * s;
    for (d, &gd) in g_d1.iter().enumerate() {
        gv += gd * ds * raw.d1(d)[[0, b]];
        g.d1_mut(d)[[0, b]] += gd * s;
    }
    g.value_mut()[[0, b]] += gv;
}

/// Time-varying radiance field `(x, t) -> (sigma_N, c)`, softplus density and sigmoid color.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicField {
    pub net: SineMlp,
    pub domain: Domain,
}

/// Traced dynamic-field evaluation. With jets, directions are `x, y, z, t` in scene units.
pub struct DynamicPass {
    ctx: MlpContext,
    pub raw: JetBatch,
}

impl DynamicField {
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, domain: Domain, rng: &mut R) -> Result<Self> {
        if spec.dims[0] != 4 || *spec.dims.last().unwrap() != 4 {
            return Err(Error::InvalidArgument("dynamic field maps (x, y, z, t) to (sigma, r, g, b)".into()));
        }
        Ok(Self { net: SineMlp::new(spec, rng)?, domain })
    }

    pub fn query(&self, p: &Spacetime) -> Result<(f64, [f64; 3])> {
        let (s, c) = self.query_batch(std::slice::from_ref(p))?;
        Ok((s[0], c[0]))
    }

    pub fn query_batch(&self, points: &[Spacetime]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        check_points(&self.domain, points)?;
        let raw = self.net.forward_batch(self.domain.network_inputs(points).view())?;
        Ok((
            raw.row(0).iter().map(|&r| softplus(r)).collect(),
            (0..points.len()).map(|b| [1, 2, 3].map(|k| sigmoid(raw[[k, b]]))).collect(),
        ))
    }

    pub fn pass(&self, points: &[Spacetime], jets: bool) -> Result<DynamicPass> {
        check_points(&self.domain, points)?;
        let mut ctx = MlpContext::new();
        let raw = ctx.forward(&self.net, &spacetime_input(&self.domain, points, jets)?)?;
        Ok(DynamicPass { ctx, raw })
    }
}

impl DynamicPass {
    pub fn len(&self) -> usize {
        self.raw.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.batch() == 0
    }

    pub fn sigma(&self, b: usize) -> f64 {
        softplus(self.raw.value()[[0, b]])
    }

    /// `(sigma, [dsigma/dx, dsigma/dy, dsigma/dz, dsigma/dt])`; needs a jet pass.
    pub fn sigma_jet(&self, b: usize) -> (f64, Vec<f64>) {
        softplus_row(&self.raw, b)
    }

    pub fn color(&self, b: usize) -> [f64; 3] {
        [1, 2, 3].map(|k| sigmoid(self.raw.value()[[k, b]]))
    }

    /// Reverse pass. `g_sigma_d1` is `n` rows of per-direction cotangents (jet passes only).
    /// Returns the value cotangent of the inputs, `4 x n`, in scene units.
    pub fn backward(
        &self,
        field: &DynamicField,
        g_sigma: &[f64],
        g_sigma_d1: Option<&[Vec<f64>]>,
        g_color: Option<&[[f64; 3]]>,
        grad: &mut ParamGrad,
    ) -> Result<Array2<f64>> {
        let n = self.len();
        let mut g = JetBatch::zeros(4, n, Arc::clone(self.raw.layout()));
        for b in 0..n {
            let gd: &[f64] = g_sigma_d1.map(|v| v[b].as_slice()).unwrap_or(&[]);
            softplus_row_backward(&self.raw, b, g_sigma[b], gd, &mut g);
            if let Some(gc) = g_color {
                for k in 0..3 {
                    let s = sigmoid(self.raw.value()[[k + 1, b]]);
                    g.value_mut()[[k + 1, b]] += gc[b][k] * s * (1.0 - s);
                }
            }
        }
        let gin = self.ctx.backward(&field.net, &g, grad)?;
        let mut gx = gin.value().to_owned();
        let h = field.domain.half_extent();
        for i in 0..3 {
            gx.row_mut(i).mapv_inplace(|v| v / h[i]);
        }
        let d = field.domain.duration();
        gx.row_mut(3).mapv_inplace(|v| v / d);
        Ok(gx)
    }
}

/// Density head on trajectory features: `sigma_L = softplus(F_L(E(x, t)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianHead {
    pub net: SineMlp,
}

/// Traced `sigma_L` evaluation through the encoder.
pub struct LagrangianPass {
    pub enc: EncoderPass,
    ctx: MlpContext,
    pub raw: JetBatch,
}

impl LagrangianHead {
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if *spec.dims.last().unwrap() != 1 {
            return Err(Error::InvalidArgument("density head has a scalar output".into()));
        }
        Ok(Self { net: SineMlp::new(spec, rng)? })
    }

    /// `sigma_L` for given features, `feature_dim x n`.
    pub fn from_features(&self, z: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(z.view())?.row(0).iter().map(|&r| softplus(r)).collect())
    }

    pub fn query_batch(&self, field: &TrajectoryField, points: &[Spacetime]) -> Result<Vec<f64>> {
        self.from_features(&field.encode_batch(points)?)
    }

    pub fn query(&self, field: &TrajectoryField, p: &Spacetime) -> Result<f64> {
        Ok(self.query_batch(field, std::slice::from_ref(p))?[0])
    }

    /// With `jets`, directions are `x, y, z, t`.
    pub fn pass(&self, field: &TrajectoryField, points: &[Spacetime], jets: bool) -> Result<LagrangianPass> {
        let enc = field.encoder_pass(points, jets, jets)?;
        let mut ctx = MlpContext::new();
        let raw = ctx.forward(&self.net, &enc.z)?;
        Ok(LagrangianPass { enc, ctx, raw })
    }
}

impl LagrangianPass {
    pub fn len(&self) -> usize {
        self.raw.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.batch() == 0
    }

    pub fn sigma(&self, b: usize) -> f64 {
        softplus(self.raw.value()[[0, b]])
    }

    pub fn sigma_jet(&self, b: usize) -> (f64, Vec<f64>) {
        softplus_row(&self.raw, b)
    }

    pub fn backward(
        &self,
        field: &TrajectoryField,
        head: &LagrangianHead,
        g_sigma: &[f64],
        g_sigma_d1: Option<&[Vec<f64>]>,
        field_grads: &mut FieldGrads,
        head_grad: &mut ParamGrad,
    ) -> Result<Array2<f64>> {
        let n = self.len();
        let mut g = JetBatch::zeros(1, n, Arc::clone(self.raw.layout()));
        for b in 0..n {
            let gd: &[f64] = g_sigma_d1.map(|v| v[b].as_slice()).unwrap_or(&[]);
            softplus_row_backward(&self.raw, b, g_sigma[b], gd, &mut g);
        }
        let gz = self.ctx.backward(&head.net, &g, head_grad)?;
        self.enc.backward(field, &gz, &mut field_grads.encoder)
    }
}

/// Static geometry: an exact analytic SDF or a learned one producing `(s, g)`.
#[derive(Clone, Debug, PartialEq)]
pub enum StaticGeometry {
    Analytic(AnalyticSdf),
    /// Sine network `x -> (s, g)`.
    Learned(SineMlp),
}

/// Static obstacle: geometry, color network `(x, g, n) -> rgb`, and NeuS sharpness.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticField {
    pub geometry: StaticGeometry,
    pub color: SineMlp,
    /// `ln` of the NeuS sharpness.
    pub log_sharpness: f64,
    pub domain: Domain,
}

/// Static field at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticSample {
    pub s: f64,
    pub feature: Vec<f64>,
    pub normal: Vector3<f64>,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticGrads {
    pub sdf: Option<ParamGrad>,
    pub color: ParamGrad,
    pub log_sharpness: f64,
}

impl StaticGrads {
    pub fn zeros_like(f: &StaticField) -> Self {
        let sdf = match &f.geometry {
            StaticGeometry::Learned(net) => Some(ParamGrad::zeros_like(net)),
            StaticGeometry::Analytic(_) => None,
        };
        Self { sdf, color: ParamGrad::zeros_like(&f.color), log_sharpness: 0.0 }
    }
}

/// Traced static evaluation.
pub struct StaticPass {
    sdf: Option<(MlpContext, JetBatch)>,
    color_ctx: MlpContext,
    color_raw: Array2<f64>,
    pub s: Vec<f64>,
    /// `grad s` in scene units.
    pub grad: Vec<Vector3<f64>>,
    pub normal: Vec<Vector3<f64>>,
}

impl StaticField {
    pub fn geometry_dim(&self) -> usize {
        match &self.geometry {
            StaticGeometry::Analytic(_) => 0,
            StaticGeometry::Learned(net) => net.output_dim() - 1,
        }
    }

    pub fn sharpness(&self) -> f64 {
        self.log_sharpness.exp()
    }

    /// `(s, g, n, c)` at `x`; errors where the SDF gradient vanishes.
    pub fn query(&self, x: &Vector3<f64>) -> Result<StaticSample> {
        let pass = self.pass(std::slice::from_ref(x))?;
        let g = pass.grad[0].norm();
        if g <= MIN_GRAD_NORM {
            return Err(Error::DegenerateGradient(g));
        }
        Ok(StaticSample { s: pass.s[0], feature: pass.feature(0), normal: pass.normal[0], color: pass.color(0) })
    }

    pub fn pass(&self, points: &[Vector3<f64>]) -> Result<StaticPass> {
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for x in points {
            if !self.domain.contains_point(x) {
                return Err(Error::OutOfDomain(format!("{x:?}")));
            }
        }
        let n = points.len();
        let gdim = self.geometry_dim();
        let xn = Array2::from_shape_fn((3, n), |(i, b)| self.domain.normalize_point(&points[b])[i]);
        let h = self.domain.half_extent();
        let (sdf, s, grad, feat) = match &self.geometry {
            StaticGeometry::Analytic(a) => {
                let (s, g): (Vec<f64>, Vec<Vector3<f64>>) = points.iter().map(|x| a.eval(x)).unzip();
                (None, s, g, Array2::zeros((0, n)))
            }
            StaticGeometry::Learned(net) => {
                let mut input = JetBatch::with_values(xn.view(), Arc::new(JetLayout::first_order(3)));
                for i in 0..3 {
                    input.seed(i, i, 1.0 / h[i]);
                }
                let mut ctx = MlpContext::new();
                let out = ctx.forward(net, &input)?;
                let s = out.value().row(0).to_vec();
                let g = (0..n).map(|b| Vector3::from_fn(|j, _| out.d1(j)[[0, b]])).collect();
                let feat = out.value().slice(ndarray::s![1.., ..]).to_owned();
                (Some((ctx, out)), s, g, feat)
            }
        };
        let normal: Vec<Vector3<f64>> = grad.iter().map(|g| g / g.norm().max(MIN_GRAD_NORM)).collect();
        let mut cin = Array2::zeros((6 + gdim, n));
        cin.slice_mut(ndarray::s![0..3, ..]).assign(&xn);
        cin.slice_mut(ndarray::s![3..3 + gdim, ..]).assign(&feat);
        for b in 0..n {
            for k in 0..3 {
                cin[[3 + gdim + k, b]] = normal[b][k];
            }
        }
        let mut color_ctx = MlpContext::new();
        let color_raw = color_ctx.forward(&self.color, &JetBatch::from_values(cin))?.into_raw();
        Ok(StaticPass { sdf, color_ctx, color_raw, s, grad, normal })
    }
}

impl StaticPass {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn color(&self, b: usize) -> [f64; 3] {
        [0, 1, 2].map(|k| sigmoid(self.color_raw[[k, b]]))
    }

    pub fn feature(&self, b: usize) -> Vec<f64> {
        match &self.sdf {
            Some((_, out)) => out.value().column(b).iter().skip(1).copied().collect(),
            None => Vec::new(),
        }
    }

    /// Reverse pass for cotangents of `s`, color, and (learned geometry) `grad s`.
    /// Gradients reach the SDF network through `s`, the geometry feature, and the
    /// normal fed to the color network.
    pub fn backward(
        &self,
        field: &StaticField,
        g_s: &[f64],
        g_color: &[[f64; 3]],
        g_grad: Option<&[Vector3<f64>]>,
        grads: &mut StaticGrads,
    ) -> Result<()> {
        let n = self.len();
        let gdim = field.geometry_dim();
        let mut gc = Array2::zeros((3, n));
        for b in 0..n {
            for k in 0..3 {
                let s = sigmoid(self.color_raw[[k, b]]);
                gc[[k, b]] = g_color[b][k] * s * (1.0 - s);
            }
        }
        let gin = self.color_ctx.backward(&field.color, &JetBatch::from_values(gc), &mut grads.color)?;
        let (Some((ctx, out)), StaticGeometry::Learned(net)) = (&self.sdf, &field.geometry) else {
            return Ok(());
        };
        let sdf_grad = grads.sdf.as_mut().ok_or_else(|| Error::InvalidArgument("missing SDF gradient buffer".into()))?;
        let mut g = JetBatch::zeros(1 + gdim, n, Arc::clone(out.layout()));
        for b in 0..n {
            g.value_mut()[[0, b]] = g_s[b];
            for r in 0..gdim {
                g.value_mut()[[1 + r, b]] = gin.value()[[3 + r, b]];
            }
            // n = grad / |grad|: d n / d grad = (I - n n^T) / |grad|
            let gn = Vector3::from_fn(|k, _| gin.value()[[3 + gdim + k, b]]);
            let norm = self.grad[b].norm().max(MIN_GRAD_NORM);
            let nb = self.normal[b];
            let mut ggrad = (gn - nb * nb.dot(&gn)) / norm;
            if let Some(extra) = g_grad {
                ggrad += extra[b];
            }
            for j in 0..3 {
                // grad is in scene units; the jet channel carries the 1/h seed already
                g.d1_mut(j)[[0, b]] = ggrad[j];
            }
        }
        ctx.backward(net, &g, sdf_grad)?;
        Ok(())
    }
}
