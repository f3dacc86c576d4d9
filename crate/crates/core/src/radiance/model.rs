use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fields::{DynamicField, LagrangianHead, StaticField, StaticGeometry, StaticGrads, SHARPNESS_INIT};
use crate::analytic::AnalyticSdf;
use crate::error::{Error, Result};
use crate::field::{Domain, FieldGrads, FieldSpec, TrajectoryField, FEATURE_DIM};
use crate::nn::{Checkpoint, MlpSpec, ParamGrad, SineMlp};

/// Static branch shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticSpec {
    /// Exact obstacle SDF; when absent a network `x -> (s, g)` is learned.
    pub analytic: Option<AnalyticSdf>,
    pub sdf_width: usize,
    pub sdf_layers: usize,
    pub geometry_features: usize,
    pub color_width: usize,
    pub color_layers: usize,
    pub sharpness: f64,
}

impl Default for StaticSpec {
    fn default() -> Self {
        Self {
            analytic: None,
            sdf_width: 64,
            sdf_layers: 3,
            geometry_features: FEATURE_DIM,
            color_width: 64,
            color_layers: 2,
            sharpness: SHARPNESS_INIT,
        }
    }
}

/// Network shapes of every scene component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub field: FieldSpec,
    pub dynamic: MlpSpec,
    pub lagrangian: MlpSpec,
    pub static_branch: Option<StaticSpec>,
}

impl SceneSpec {
    /// All networks `width` wide: trajectory field per the usual depths, a
    /// dynamic field with three hidden layers, a two-hidden-layer density head.
    pub fn with_width(width: usize, omega0: f64, static_branch: Option<StaticSpec>) -> Self {
        Self {
            field: FieldSpec::with_width(width, omega0),
            dynamic: MlpSpec::uniform(4, width, 3, 4, omega0),
            lagrangian: MlpSpec::uniform(FEATURE_DIM, width, 2, 1, omega0),
            static_branch,
        }
    }
}

/// Everything the renderer and the losses query.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub field: TrajectoryField,
    pub dynamic: DynamicField,
    pub lagrangian: LagrangianHead,
    pub static_field: Option<StaticField>,
}

/// Gradient buffers matching a [`SceneModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub field: FieldGrads,
    pub dynamic: ParamGrad,
    pub lagrangian: ParamGrad,
    pub static_field: Option<StaticGrads>,
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    domain: Domain,
    log_sharpness: Option<f64>,
    analytic_sdf: Option<AnalyticSdf>,
}

impl SceneModel {
    pub fn new<R: Rng + ?Sized>(spec: &SceneSpec, domain: Domain, rng: &mut R) -> Result<Self> {
        let field = TrajectoryField::new(&spec.field, domain, rng)?;
        let dynamic = DynamicField::new(&spec.dynamic, domain, rng)?;
        if spec.lagrangian.dims[0] != field.feature_dim() {
            return Err(Error::InvalidArgument("density head input must match the feature dimension".into()));
        }
        let lagrangian = LagrangianHead::new(&spec.lagrangian, rng)?;
        let static_field = match &spec.static_branch {
            None => None,
            Some(st) => {
                if !(st.sharpness > 0.0) {
                    return Err(Error::InvalidArgument("NeuS sharpness must be positive".into()));
                }
                let omega0 = spec.field.encoder.omega0;
                let (geometry, gdim) = match &st.analytic {
                    Some(sdf) => (StaticGeometry::Analytic(sdf.clone()), 0),
                    None => {
                        let sdf_spec = MlpSpec::uniform(3, st.sdf_width, st.sdf_layers, 1 + st.geometry_features, omega0);
                        (StaticGeometry::Learned(SineMlp::new(&sdf_spec, rng)?), st.geometry_features)
                    }
                };
                let color = SineMlp::new(&MlpSpec::uniform(6 + gdim, st.color_width, st.color_layers, 3, omega0), rng)?;
                Some(StaticField { geometry, color, log_sharpness: st.sharpness.ln(), domain })
            }
        };
        Ok(Self { field, dynamic, lagrangian, static_field })
    }

    pub fn domain(&self) -> &Domain {
        &self.field.domain
    }

    /// Trainable parameters in a fixed order; [`SceneGrads::slices`] matches it.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.field.encoder.param_slices_mut();
        out.extend(self.field.decoder.param_slices_mut());
        out.extend(self.dynamic.net.param_slices_mut());
        out.extend(self.lagrangian.net.param_slices_mut());
        if let Some(st) = &mut self.static_field {
            if let StaticGeometry::Learned(net) = &mut st.geometry {
                out.extend(net.param_slices_mut());
            }
            out.extend(st.color.param_slices_mut());
            out.push(std::slice::from_mut(&mut st.log_sharpness));
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|s| s.len()).sum()
    }

    /// Serialize all networks; `extra` is merged into the metadata document.
    pub fn to_checkpoint(&self, extra: &toml::Table) -> Result<Checkpoint> {
        let mut nets = vec![
            ("encoder".to_string(), self.field.encoder.clone()),
            ("decoder".to_string(), self.field.decoder.clone()),
            ("dynamic".to_string(), self.dynamic.net.clone()),
            ("lagrangian".to_string(), self.lagrangian.net.clone()),
        ];
        let mut meta = SceneMeta { domain: *self.domain(), log_sharpness: None, analytic_sdf: None };
        if let Some(st) = &self.static_field {
            meta.log_sharpness = Some(st.log_sharpness);
            match &st.geometry {
                StaticGeometry::Analytic(a) => meta.analytic_sdf = Some(a.clone()),
                StaticGeometry::Learned(net) => nets.push(("static_sdf".to_string(), net.clone())),
            }
            nets.push(("static_color".to_string(), st.color.clone()));
        }
        let mut doc = toml::Table::new();
        doc.insert("scene".into(), toml::Value::try_from(&meta).map_err(|e| Error::Format(e.to_string()))?);
        for (k, v) in extra {
            doc.insert(k.clone(), v.clone());
        }
        Ok(Checkpoint { nets, meta: toml::to_string(&doc).map_err(|e| Error::Format(e.to_string()))? })
    }

    /// Rebuild a model from a checkpoint; returns the metadata document as well.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, toml::Table)> {
        let doc: toml::Table = toml::from_str(&ck.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let meta: SceneMeta = doc
            .get("scene")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint metadata lacks [scene]".into()))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
        let net = |name: &str| ck.net(name).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks network {name}")));
        let domain = meta.domain;
        let field = TrajectoryField { encoder: net("encoder")?, decoder: net("decoder")?, domain };
        let dynamic = DynamicField { net: net("dynamic")?, domain };
        let lagrangian = LagrangianHead { net: net("lagrangian")? };
        let static_field = match meta.log_sharpness {
            None => None,
            Some(log_sharpness) => {
                let geometry = match meta.analytic_sdf {
                    Some(a) => StaticGeometry::Analytic(a),
                    None => StaticGeometry::Learned(net("static_sdf")?),
                };
                Some(StaticField { geometry, color: net("static_color")?, log_sharpness, domain })
            }
        };
        Ok((Self { field, dynamic, lagrangian, static_field }, doc))
    }
}

impl SceneGrads {
    pub fn zeros_like(m: &SceneModel) -> Self {
        Self {
            field: FieldGrads::zeros_like(&m.field),
            dynamic: ParamGrad::zeros_like(&m.dynamic.net),
            lagrangian: ParamGrad::zeros_like(&m.lagrangian.net),
            static_field: m.static_field.as_ref().map(StaticGrads::zeros_like),
        }
    }

    /// Flat views in [`SceneModel::params_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.field.encoder.slices();
        out.extend(self.field.decoder.slices());
        out.extend(self.dynamic.slices());
        out.extend(self.lagrangian.slices());
        if let Some(st) = &self.static_field {
            if let Some(sdf) = &st.sdf {
                out.extend(sdf.slices());
            }
            out.extend(st.color.slices());
            out.push(std::slice::from_ref(&st.log_sharpness));
        }
        out
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut ParamGrad), mut scalar: impl FnMut(&mut f64)) {
        f(&mut self.field.encoder);
        f(&mut self.field.decoder);
        f(&mut self.dynamic);
        f(&mut self.lagrangian);
        if let Some(st) = &mut self.static_field {
            if let Some(sdf) = &mut st.sdf {
                f(sdf);
            }
            f(&mut st.color);
            scalar(&mut st.log_sharpness);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.for_each_mut(|g| g.scale(k), |v| *v *= k);
    }

    pub fn clear(&mut self) {
        self.for_each_mut(|g| g.fill(0.0), |v| *v = 0.0);
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &SceneGrads, k: f64) {
        self.field.encoder.add_scaled(&other.field.encoder, k);
        self.field.decoder.add_scaled(&other.field.decoder, k);
        self.dynamic.add_scaled(&other.dynamic, k);
        self.lagrangian.add_scaled(&other.lagrangian, k);
        if let (Some(a), Some(b)) = (&mut self.static_field, &other.static_field) {
            if let (Some(x), Some(y)) = (&mut a.sdf, &b.sdf) {
                x.add_scaled(y, k);
            }
            a.color.add_scaled(&b.color, k);
            a.log_sharpness += k * b.log_sharpness;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}
