//! The trajectory field: encoder `E(x, t) -> z` and decoder `D(z, t') -> x'`.
//!
//! Positions and times are given in scene units. Before entering a network
//! they are mapped affinely so the box becomes `[-1, 1]^3` and the time
//! interval `[0, 1]`; decoder outputs are mapped back. The affine maps are
//! folded into jet seeds and output scaling, so every derivative reported
//! here is already in scene units.
//!
//! Velocity follows the fixed-feature rule: `u(x, t) = dD(E(x, t1), t2)/dt2`
//! at `t1 = t2 = t`. The encoder is evaluated without a seed on its time
//! input and only the decoder's time input is seeded, so no gradient with
//! respect to `t1` enters the velocity.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{JetBatch, JetLayout, MlpContext, MlpSpec, ParamGrad, SineMlp};

/// Feature dimension of the trajectory embedding.
pub const FEATURE_DIM: usize = 16;

/// Frames per normalized time interval, used to express intervals in "frames".
pub const FRAMES_PER_INTERVAL: f64 = 120.0;

const DOMAIN_SLACK: f64 = 1e-9;

/// Axis-aligned box times a time interval, with the affine normalization into network units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self { lo: [-1.0; 3], hi: [1.0; 3], t_min: 0.0, t_max: 1.0 }
    }
}

impl Domain {
    pub fn new(lo: [f64; 3], hi: [f64; 3], t_min: f64, t_max: f64) -> Result<Self> {
        if (0..3).any(|i| !(hi[i] > lo[i])) || !(t_max > t_min) {
            return Err(Error::InvalidArgument("empty domain".into()));
        }
        Ok(Self { lo, hi, t_min, t_max })
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.lo[i] + self.hi[i]))
    }

    pub fn half_extent(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.hi[i] - self.lo[i]))
    }

    pub fn duration(&self) -> f64 {
        self.t_max - self.t_min
    }

    /// Largest edge length of the box. Error thresholds quoted "per domain size" use this.
    pub fn size(&self) -> f64 {
        (0..3).map(|i| self.hi[i] - self.lo[i]).fold(0.0, f64::max)
    }

    /// Duration of one frame.
    pub fn frame_dt(&self) -> f64 {
        self.duration() / FRAMES_PER_INTERVAL
    }

    pub fn contains_point(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|i| x[i] >= self.lo[i] - DOMAIN_SLACK && x[i] <= self.hi[i] + DOMAIN_SLACK)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t_min - DOMAIN_SLACK && t <= self.t_max + DOMAIN_SLACK
    }

    pub fn contains(&self, p: &Spacetime) -> bool {
        p.x.iter().all(|v| v.is_finite()) && p.t.is_finite() && self.contains_point(&p.x) && self.contains_time(p.t)
    }

    pub fn check(&self, p: &Spacetime) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(format!("({:.4}, {:.4}, {:.4}) t={:.4}", p.x[0], p.x[1], p.x[2], p.t)))
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && self.contains_time(t) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(format!("t={t}")))
        }
    }

    pub fn normalize_point(&self, x: &Vector3<f64>) -> [f64; 3] {
        let (c, h) = (self.center(), self.half_extent());
        std::array::from_fn(|i| (x[i] - c[i]) / h[i])
    }

    pub fn denormalize_point(&self, xn: &[f64]) -> Vector3<f64> {
        let (c, h) = (self.center(), self.half_extent());
        Vector3::from_fn(|i, _| c[i] + h[i] * xn[i])
    }

    pub fn normalize_time(&self, t: f64) -> f64 {
        (t - self.t_min) / self.duration()
    }

    /// Uniform random point of the domain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Spacetime {
        let x = Vector3::from_fn(|i, _| rng.random_range(self.lo[i]..=self.hi[i]));
        Spacetime::new(x, rng.random_range(self.t_min..=self.t_max))
    }

    /// Normalized `(x, y, z, t)` inputs for a batch of points, as a `4 x n` block.
    pub fn network_inputs(&self, points: &[Spacetime]) -> Array2<f64> {
        let mut out = Array2::zeros((4, points.len()));
        for (b, p) in points.iter().enumerate() {
            let xn = self.normalize_point(&p.x);
            for i in 0..3 {
                out[[i, b]] = xn[i];
            }
            out[[3, b]] = self.normalize_time(p.t);
        }
        out
    }
}

/// A space-time point in scene units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacetime {
    pub x: Vector3<f64>,
    pub t: f64,
}

impl Spacetime {
    pub fn new(x: Vector3<f64>, t: f64) -> Self {
        Self { x, t }
    }

    pub fn from_xyzt(x: f64, y: f64, z: f64, t: f64) -> Self {
        Self { x: Vector3::new(x, y, z), t }
    }
}

/// Trajectory feature `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajFeature(pub Vec<f64>);

/// Result of mapping a point to another time.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMapResult {
    pub target: Vector3<f64>,
    pub feature: TrajFeature,
    pub jacobian: Option<Matrix3<f64>>,
}

/// How `flow_map` forms the target position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapMode {
    /// `x + D(z, t') - D(z, t)`: exact at `t' = t` even when the field is not self-consistent.
    Corrected,
    /// `D(z, t')`.
    Direct,
}

/// Network shapes of a trajectory field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self::with_width(128, 30.0)
    }
}

impl FieldSpec {
    /// Encoder with four hidden layers, decoder with three, all of `width`.
    pub fn with_width(width: usize, omega0: f64) -> Self {
        Self {
            encoder: MlpSpec::uniform(4, width, 4, FEATURE_DIM, omega0),
            decoder: MlpSpec::uniform(FEATURE_DIM + 1, width, 3, 3, omega0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryField {
    pub encoder: SineMlp,
    pub decoder: SineMlp,
    pub domain: Domain,
}

/// Gradient accumulators for both trajectory networks.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub encoder: ParamGrad,
    pub decoder: ParamGrad,
}

impl FieldGrads {
    pub fn zeros_like(field: &TrajectoryField) -> Self {
        Self { encoder: ParamGrad::zeros_like(&field.encoder), decoder: ParamGrad::zeros_like(&field.decoder) }
    }
}

/// Which derivative channels a [`MapPass`] carries.
///
/// Directions are numbered in order: the three spatial directions of the
/// source point (if `spatial`), the encoder time `t1` (if `enc_time`), the
/// decoder time `t2` (if `dec_time`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MapJets {
    pub spatial: bool,
    pub enc_time: bool,
    pub dec_time: bool,
    /// Track `(x_i, t2)` second derivatives.
    pub space_time2: bool,
    /// Track `(t2, t2)`.
    pub time2_time2: bool,
    /// Track `(t1, t2)`.
    pub time1_time2: bool,
}

impl MapJets {
    pub fn values() -> Self {
        Self::default()
    }

    pub fn velocity() -> Self {
        Self { dec_time: true, ..Self::default() }
    }

    pub fn x(&self, i: usize) -> usize {
        assert!(self.spatial);
        i
    }

    pub fn t1(&self) -> usize {
        assert!(self.enc_time);
        if self.spatial {
            3
        } else {
            0
        }
    }

    pub fn t2(&self) -> usize {
        assert!(self.dec_time);
        3 * self.spatial as usize + self.enc_time as usize
    }

    fn enc_dirs(&self) -> usize {
        3 * self.spatial as usize + self.enc_time as usize
    }

    fn layouts(&self) -> Result<(Arc<JetLayout>, Arc<JetLayout>)> {
        let enc = JetLayout::first_order(self.enc_dirs());
        let dirs = self.enc_dirs() + self.dec_time as usize;
        let mut pairs = Vec::new();
        if self.space_time2 {
            if !(self.spatial && self.dec_time) {
                return Err(Error::JetShape("(x, t2) pairs need spatial and decoder-time directions".into()));
            }
            pairs.extend((0..3).map(|i| (i, self.t2())));
        }
        if self.time2_time2 {
            if !self.dec_time {
                return Err(Error::JetShape("(t2, t2) needs the decoder-time direction".into()));
            }
            pairs.push((self.t2(), self.t2()));
        }
        if self.time1_time2 {
            if !(self.enc_time && self.dec_time) {
                return Err(Error::JetShape("(t1, t2) needs both time directions".into()));
            }
            pairs.push((self.t1(), self.t2()));
        }
        Ok((Arc::new(enc), Arc::new(JetLayout::new(dirs, &pairs)?)))
    }
}

/// A traced evaluation of `D(E(x, t), t')` for a batch of sources and `k` targets per source.
///
/// `z` holds the encoder output (one column block per source); `out` holds
/// decoded positions in scene units, with target set `r` of source `b` at
/// column `r * n + b`.
pub struct MapPass {
    jets: MapJets,
    n: usize,
    k: usize,
    enc_ctx: MlpContext,
    dec_ctx: MlpContext,
    pub z: JetBatch,
    pub out: JetBatch,
}

impl MapPass {
    pub fn jets(&self) -> &MapJets {
        &self.jets
    }

    pub fn sources(&self) -> usize {
        self.n
    }

    /// Column of target set `r`, source `b` in `out`.
    pub fn col(&self, r: usize, b: usize) -> usize {
        r * self.n + b
    }

    /// Reverse pass.
    ///
    /// `g_z` is the cotangent of `z` (encoder layout) and `g_out` that of
    /// `out` (decoder layout, scene units). Returns the cotangent of the
    /// source points' value channel as a `4 x n` block `(x, y, z, t)` in scene units.
    pub fn backward(
        &self,
        field: &TrajectoryField,
        g_z: Option<&JetBatch>,
        g_out: Option<&JetBatch>,
        grads: &mut FieldGrads,
    ) -> Result<Array2<f64>> {
        let mut gz = match g_z {
            Some(g) => g.clone(),
            None => JetBatch::zeros(FEATURE_DIM, self.n, Arc::clone(self.z.layout())),
        };
        if let Some(g) = g_out {
            let mut g = g.clone();
            g.scale_rows(&field.domain.half_extent());
            let gin = self.dec_ctx.backward(&field.decoder, &g, &mut grads.decoder)?;
            let dirs: Vec<usize> = (0..self.z.layout().dirs()).collect();
            let gz_dec = gin.rows(0, FEATURE_DIM).project(self.z.layout(), &dirs)?.untile_sum(self.k)?;
            *gz.raw_mut() += gz_dec.raw();
        }
        let gin = self.enc_ctx.backward(&field.encoder, &gz, &mut grads.encoder)?;
        Ok(field.scale_input_cotangent(gin.value().to_owned()))
    }
}

/// A traced encoder evaluation `z = E(x, t)` with optional spatial and time directions
/// (numbered as in [`MapJets`]: `x, y, z`, then `t`).
pub struct EncoderPass {
    jets: MapJets,
    ctx: MlpContext,
    pub z: JetBatch,
}

impl EncoderPass {
    pub fn jets(&self) -> &MapJets {
        &self.jets
    }

    /// Reverse pass for a cotangent of `z`; returns the value cotangent of the
    /// source points as a `4 x n` block in scene units.
    pub fn backward(&self, field: &TrajectoryField, g_z: &JetBatch, grad: &mut ParamGrad) -> Result<Array2<f64>> {
        let gin = self.ctx.backward(&field.encoder, g_z, grad)?;
        Ok(field.scale_input_cotangent(gin.value().to_owned()))
    }
}

impl TrajectoryField {
    pub fn new<R: Rng + ?Sized>(spec: &FieldSpec, domain: Domain, rng: &mut R) -> Result<Self> {
        if spec.encoder.dims[0] != 4 || spec.decoder.dims[0] != *spec.encoder.dims.last().unwrap() + 1 {
            return Err(Error::InvalidArgument("encoder must take 4 inputs and decoder features + time".into()));
        }
        if *spec.decoder.dims.last().unwrap() != 3 {
            return Err(Error::InvalidArgument("decoder must output a 3D position".into()));
        }
        Ok(Self { encoder: SineMlp::new(&spec.encoder, rng)?, decoder: SineMlp::new(&spec.decoder, rng)?, domain })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    fn check_all(&self, points: &[Spacetime]) -> Result<()> {
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        points.iter().try_for_each(|p| self.domain.check(p))
    }

    /// Traced `D(E(x, t), t')` with `targets.len() / sources.len()` targets per source.
    ///
    /// Targets are laid out as target set `r` for all sources, then set `r + 1`.
    pub fn map_pass(&self, sources: &[Spacetime], targets: &[f64], jets: MapJets) -> Result<MapPass> {
        self.check_all(sources)?;
        let n = sources.len();
        if targets.is_empty() || targets.len() % n != 0 {
            return Err(Error::InvalidArgument("targets must be a multiple of sources".into()));
        }
        for &t in targets {
            self.domain.check_time(t)?;
        }
        let k = targets.len() / n;
        let (enc_layout, dec_layout) = jets.layouts()?;
        let h = self.domain.half_extent();
        let inv_dur = 1.0 / self.domain.duration();

        let mut input = JetBatch::with_values(self.domain.network_inputs(sources).view(), Arc::clone(&enc_layout));
        if jets.spatial {
            for i in 0..3 {
                input.seed(i, jets.x(i), 1.0 / h[i]);
            }
        }
        if jets.enc_time {
            input.seed(3, jets.t1(), inv_dur);
        }
        let mut enc_ctx = MlpContext::new();
        let z = enc_ctx.forward(&self.encoder, &input)?;

        let dir_map: Vec<usize> = (0..enc_layout.dirs()).collect();
        let z_dec = z.embed(&dec_layout, &dir_map)?.tile(k);
        let tn = Array2::from_shape_fn((1, n * k), |(_, c)| self.domain.normalize_time(targets[c]));
        let mut trow = JetBatch::with_values(tn.view(), Arc::clone(&dec_layout));
        if jets.dec_time {
            trow.seed(0, jets.t2(), inv_dur);
        }
        let dec_in = JetBatch::vstack(&[&z_dec, &trow])?;
        let mut dec_ctx = MlpContext::new();
        let mut out = dec_ctx.forward(&self.decoder, &dec_in)?;
        out.scale_rows(&h);
        let c = self.domain.center();
        for (i, mut row) in out.value_mut().axis_iter_mut(Axis(0)).enumerate() {
            row += c[i];
        }
        Ok(MapPass { jets, n, k, enc_ctx, dec_ctx, z, out })
    }

    /// Traced encoder pass; `jets.dec_time` and the pair flags are ignored.
    pub fn encoder_pass(&self, points: &[Spacetime], spatial: bool, time: bool) -> Result<EncoderPass> {
        self.check_all(points)?;
        let jets = MapJets { spatial, enc_time: time, ..MapJets::default() };
        let (layout, _) = jets.layouts()?;
        let h = self.domain.half_extent();
        let mut input = JetBatch::with_values(self.domain.network_inputs(points).view(), layout);
        if spatial {
            for i in 0..3 {
                input.seed(i, jets.x(i), 1.0 / h[i]);
            }
        }
        if time {
            input.seed(3, jets.t1(), 1.0 / self.domain.duration());
        }
        let mut ctx = MlpContext::new();
        let z = ctx.forward(&self.encoder, &input)?;
        Ok(EncoderPass { jets, ctx, z })
    }

    /// Convert a cotangent on normalized network inputs `(x, y, z, t)` into scene units.
    pub(crate) fn scale_input_cotangent(&self, mut g: Array2<f64>) -> Array2<f64> {
        let h = self.domain.half_extent();
        for i in 0..3 {
            g.row_mut(i).mapv_inplace(|v| v / h[i]);
        }
        let d = self.domain.duration();
        g.row_mut(3).mapv_inplace(|v| v / d);
        g
    }

    /// Features for a batch of points, `feature_dim x n`.
    pub fn encode_batch(&self, points: &[Spacetime]) -> Result<Array2<f64>> {
        self.check_all(points)?;
        self.encoder.forward_batch(self.domain.network_inputs(points).view())
    }

    pub fn encode(&self, p: &Spacetime) -> Result<TrajFeature> {
        let z = self.encode_batch(std::slice::from_ref(p))?;
        Ok(TrajFeature(z.column(0).to_vec()))
    }

    /// Decode features at the given times (scene units), `3 x n`.
    pub fn decode_batch(&self, z: &Array2<f64>, times: &[f64]) -> Result<Vec<Vector3<f64>>> {
        if z.ncols() != times.len() {
            return Err(Error::InvalidArgument("feature/time count mismatch".into()));
        }
        let mut input = Array2::zeros((z.nrows() + 1, z.ncols()));
        input.slice_mut(ndarray::s![..z.nrows(), ..]).assign(z);
        for (b, &t) in times.iter().enumerate() {
            self.domain.check_time(t)?;
            input[[z.nrows(), b]] = self.domain.normalize_time(t);
        }
        let out = self.decoder.forward_batch(input.view())?;
        Ok(out.columns().into_iter().map(|c| self.domain.denormalize_point(&[c[0], c[1], c[2]])).collect())
    }

    /// Target positions for a batch of sources and per-source target times.
    pub fn flow_map_batch(&self, sources: &[Spacetime], targets: &[f64], mode: MapMode) -> Result<Vec<Vector3<f64>>> {
        if sources.len() != targets.len() {
            return Err(Error::InvalidArgument("one target time per source".into()));
        }
        let n = sources.len();
        match mode {
            MapMode::Direct => {
                let pass = self.map_pass(sources, targets, MapJets::values())?;
                Ok((0..n).map(|b| column3(&pass.out, b)).collect())
            }
            MapMode::Corrected => {
                let mut all = targets.to_vec();
                all.extend(sources.iter().map(|p| p.t));
                let pass = self.map_pass(sources, &all, MapJets::values())?;
                Ok((0..n)
                    .map(|b| sources[b].x + (column3(&pass.out, pass.col(0, b)) - column3(&pass.out, pass.col(1, b))))
                    .collect())
            }
        }
    }

    pub fn flow_map(&self, p: &Spacetime, t_target: f64, mode: MapMode) -> Result<FlowMapResult> {
        let jets = MapJets { spatial: true, ..MapJets::default() };
        let pass = self.map_pass(std::slice::from_ref(p), &[t_target, p.t], jets)?;
        let d_target = column3(&pass.out, 0);
        let target = match mode {
            MapMode::Direct => d_target,
            MapMode::Corrected => p.x + (d_target - column3(&pass.out, 1)),
        };
        let jac = Matrix3::from_fn(|i, j| pass.out.d1(j)[[i, 0]]);
        Ok(FlowMapResult { target, feature: TrajFeature(pass.z.value().column(0).to_vec()), jacobian: Some(jac) })
    }

    /// `D(z, t') - D(z, t)`: closed-form integral of the velocity along the trajectory.
    pub fn velocity_integral(&self, p: &Spacetime, t_target: f64) -> Result<Vector3<f64>> {
        let pass = self.map_pass(std::slice::from_ref(p), &[t_target, p.t], MapJets::values())?;
        Ok(column3(&pass.out, 0) - column3(&pass.out, 1))
    }

    pub fn velocity_batch(&self, points: &[Spacetime]) -> Result<Vec<Vector3<f64>>> {
        let times: Vec<f64> = points.iter().map(|p| p.t).collect();
        let jets = MapJets::velocity();
        let pass = self.map_pass(points, &times, jets)?;
        let d = pass.out.d1(jets.t2());
        Ok((0..points.len()).map(|b| Vector3::new(d[[0, b]], d[[1, b]], d[[2, b]])).collect())
    }

    pub fn extract_velocity(&self, p: &Spacetime) -> Result<Vector3<f64>> {
        Ok(self.velocity_batch(std::slice::from_ref(p))?[0])
    }

    pub fn acceleration_batch(&self, points: &[Spacetime]) -> Result<Vec<Vector3<f64>>> {
        let times: Vec<f64> = points.iter().map(|p| p.t).collect();
        let jets = MapJets { dec_time: true, time2_time2: true, ..MapJets::default() };
        let pass = self.map_pass(points, &times, jets)?;
        let d = pass.out.d2(jets.t2(), jets.t2());
        Ok((0..points.len()).map(|b| Vector3::new(d[[0, b]], d[[1, b]], d[[2, b]])).collect())
    }

    /// `d^2 D(z, t)/dt^2` at fixed feature.
    pub fn material_acceleration(&self, p: &Spacetime) -> Result<Vector3<f64>> {
        Ok(self.acceleration_batch(std::slice::from_ref(p))?[0])
    }

    /// Velocity and its spatial gradient `G[i][j] = du_i/dx_j` for a batch.
    pub fn velocity_gradient_batch(&self, points: &[Spacetime]) -> Result<Vec<(Vector3<f64>, Matrix3<f64>)>> {
        let times: Vec<f64> = points.iter().map(|p| p.t).collect();
        let jets = MapJets { spatial: true, dec_time: true, space_time2: true, ..MapJets::default() };
        let pass = self.map_pass(points, &times, jets)?;
        let t2 = jets.t2();
        let u = pass.out.d1(t2);
        Ok((0..points.len())
            .map(|b| {
                let g = Matrix3::from_fn(|i, j| pass.out.d2(j, t2)[[i, b]]);
                (Vector3::new(u[[0, b]], u[[1, b]], u[[2, b]]), g)
            })
            .collect())
    }

    pub fn divergence_batch(&self, points: &[Spacetime]) -> Result<Vec<f64>> {
        Ok(self.velocity_gradient_batch(points)?.into_iter().map(|(_, g)| g.trace()).collect())
    }

    pub fn vorticity_batch(&self, points: &[Spacetime]) -> Result<Vec<Vector3<f64>>> {
        Ok(self
            .velocity_gradient_batch(points)?
            .into_iter()
            .map(|(_, g)| Vector3::new(g[(2, 1)] - g[(1, 2)], g[(0, 2)] - g[(2, 0)], g[(1, 0)] - g[(0, 1)]))
            .collect())
    }

    /// `M = dD(E(x_a, t_a), t_b)/dx_a`.
    pub fn map_jacobian(&self, p: &Spacetime, t_target: f64) -> Result<Matrix3<f64>> {
        Ok(self.jacobian_batch(std::slice::from_ref(p), &[t_target])?[0])
    }

    pub fn jacobian_batch(&self, sources: &[Spacetime], targets: &[f64]) -> Result<Vec<Matrix3<f64>>> {
        let jets = MapJets { spatial: true, ..MapJets::default() };
        let pass = self.map_pass(sources, targets, jets)?;
        Ok((0..sources.len()).map(|b| Matrix3::from_fn(|i, j| pass.out.d1(j)[[i, b]])).collect())
    }

    /// Pathline of `p` sampled at `times` via single-pass maps.
    pub fn pathline(&self, p: &Spacetime, times: &[f64], mode: MapMode) -> Result<Vec<Vector3<f64>>> {
        let sources = vec![*p; times.len()];
        self.flow_map_batch(&sources, times, mode)
    }
}

/// Column `b` of a 3-row jet value block.
pub(crate) fn column3(j: &JetBatch, b: usize) -> Vector3<f64> {
    let v = j.value();
    Vector3::new(v[[0, b]], v[[1, b]], v[[2, b]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field() -> TrajectoryField {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        TrajectoryField::new(&FieldSpec::with_width(16, 5.0), Domain::default(), &mut rng).unwrap()
    }

    #[test]
    fn corrected_map_is_identity_at_same_time() {
        let f = field();
        let p = Spacetime::from_xyzt(0.3, -0.2, 0.5, 0.4);
        let r = f.flow_map(&p, p.t, MapMode::Corrected).unwrap();
        assert_eq!(r.target, p.x);
        assert_eq!(f.velocity_integral(&p, p.t).unwrap(), Vector3::zeros());
    }

    #[test]
    fn modes_differ_by_self_cycle_residual() {
        let f = field();
        let p = Spacetime::from_xyzt(-0.6, 0.1, 0.2, 0.7);
        let direct = f.flow_map(&p, 0.2, MapMode::Direct).unwrap().target;
        let corrected = f.flow_map(&p, 0.2, MapMode::Corrected).unwrap().target;
        let z = f.encode_batch(&[p]).unwrap();
        let back = f.decode_batch(&z, &[p.t]).unwrap()[0];
        assert!(((direct - corrected) - (back - p.x)).norm() < 1e-12);
    }

    #[test]
    fn out_of_domain_rejected() {
        let f = field();
        let p = Spacetime::from_xyzt(1.5, 0.0, 0.0, 0.5);
        assert!(matches!(f.encode(&p), Err(Error::OutOfDomain(_))));
        let q = Spacetime::from_xyzt(0.0, 0.0, 0.0, 0.5);
        assert!(matches!(f.flow_map(&q, 1.2, MapMode::Direct), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn constant_decoder_has_zero_velocity() {
        let mut f = field();
        for w in f.decoder.weights_mut() {
            w.fill(0.0);
        }
        f.decoder.biases_mut().last_mut().unwrap().fill(0.25);
        let p = Spacetime::from_xyzt(0.1, 0.2, 0.3, 0.5);
        assert_eq!(f.extract_velocity(&p).unwrap(), Vector3::zeros());
        assert_eq!(f.material_acceleration(&p).unwrap(), Vector3::zeros());
    }

    #[test]
    fn random_field_is_total_on_domain() {
        let f = field();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..10_000).map(|_| f.domain.sample(&mut rng)).collect();
        let z = f.encode_batch(&pts).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }
}
