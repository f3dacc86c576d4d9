//! Sampling trained fields onto grids and pathlines.

use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::analytic::AnalyticScene;
use crate::error::{Error, Result};
use crate::field::{MapMode, Spacetime, TrajectoryField};
use crate::losses::SdfQuery;
use crate::radiance::SceneModel;

const CHUNK: usize = 2048;

/// Quantity written by [`export_grid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    Density,
    Velocity,
    Vorticity,
    Feature,
    Sdf,
}

impl ExportKind {
    pub const ALL: [ExportKind; 5] = [Self::Density, Self::Velocity, Self::Vorticity, Self::Feature, Self::Sdf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Density => "density",
            Self::Velocity => "velocity",
            Self::Vorticity => "vorticity",
            Self::Feature => "feature",
            Self::Sdf => "sdf",
        }
    }
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown export quantity {s:?}; expected density, velocity, vorticity, feature or sdf")))
    }
}

fn check_res(res: [usize; 3]) -> Result<()> {
    if res.contains(&0) {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    Ok(())
}

/// Fill a grid over the domain box at time `t` with `channels` values per cell.
fn fill<F>(model_domain: &crate::field::Domain, res: [usize; 3], channels: usize, t: f64, eval: F) -> Result<Grid>
where
    F: Fn(&[Spacetime]) -> Result<Vec<Vec<f64>>> + Sync,
{
    check_res(res)?;
    model_domain.check_time(t)?;
    let mut grid = Grid::zeros(res, channels, model_domain.lo, model_domain.hi, t)?;
    let points: Vec<Spacetime> = grid.positions().into_iter().map(|x| Spacetime::new(x, t)).collect();
    let chunks: Vec<Vec<Vec<f64>>> = points.par_chunks(CHUNK).map(&eval).collect::<Result<_>>()?;
    for (cell, v) in chunks.into_iter().flatten().enumerate() {
        for (c, x) in v.into_iter().enumerate() {
            grid.set_value(cell, c, x);
        }
    }
    Ok(grid)
}

fn vec3(v: &Vector3<f64>) -> Vec<f64> {
    vec![v.x, v.y, v.z]
}

/// Sample `kind` on a cell-centered `res` grid spanning the domain at time `t`.
///
/// Velocity and vorticity come from the trajectory field's jets; density is
/// the Eulerian smoke density.
pub fn export_grid(model: &SceneModel, kind: ExportKind, res: [usize; 3], t: f64) -> Result<Grid> {
    let d = model.domain();
    let f = &model.field;
    match kind {
        ExportKind::Density => fill(d, res, 1, t, |p| Ok(model.dynamic.query_batch(p)?.0.into_iter().map(|s| vec![s]).collect())),
        ExportKind::Velocity => fill(d, res, 3, t, |p| Ok(f.velocity_batch(p)?.iter().map(vec3).collect())),
        ExportKind::Vorticity => fill(d, res, 3, t, |p| Ok(f.vorticity_batch(p)?.iter().map(vec3).collect())),
        ExportKind::Feature => {
            fill(d, res, f.feature_dim(), t, |p| Ok(f.encode_batch(p)?.columns().into_iter().map(|c| c.to_vec()).collect()))
        }
        ExportKind::Sdf => {
            let st = model.static_field.as_ref().ok_or_else(|| Error::Config("model has no static branch to export an SDF from".into()))?;
            fill(d, res, 1, t, |p| {
                let xs: Vec<_> = p.iter().map(|p| p.x).collect();
                Ok(st.sdf_batch(&xs)?.into_iter().map(|(s, _)| vec![s]).collect())
            })
        }
    }
}

/// Ground-truth density on the same grid layout as [`export_grid`].
pub fn analytic_density_grid(scene: &AnalyticScene, res: [usize; 3], t: f64) -> Result<Grid> {
    fill(&scene.domain, res, 1, t, |p| Ok(p.iter().map(|p| vec![scene.density(p)]).collect()))
}

/// `|a - b|_2 / |b|_2` over all cells and channels.
pub fn relative_l2(a: &Grid, b: &Grid) -> Result<f64> {
    if a.dims != b.dims || a.channels != b.channels {
        return Err(Error::Shape { expected: b.data.len(), got: a.data.len() });
    }
    let num: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.data.iter().map(|y| y * y).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference grid is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

/// One pathline vertex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathlinePoint {
    pub id: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// `n` seeds uniform in the domain box at time `t0`.
pub fn pathline_seeds<R: Rng + ?Sized>(field: &TrajectoryField, n: usize, t0: f64, rng: &mut R) -> Result<Vec<Spacetime>> {
    if n == 0 {
        return Err(Error::Config("pathline count must be positive".into()));
    }
    field.domain.check_time(t0)?;
    Ok((0..n).map(|_| Spacetime::new(field.domain.sample(rng).x, t0)).collect())
}

/// Pathlines of `seeds` at `steps + 1` uniform times from each seed's time to `t1`, via single-pass maps.
pub fn pathlines(field: &TrajectoryField, seeds: &[Spacetime], t1: f64, steps: usize) -> Result<Vec<PathlinePoint>> {
    if steps == 0 {
        return Err(Error::Config("pathlines need at least one step".into()));
    }
    let lines: Vec<Vec<PathlinePoint>> = seeds
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let times: Vec<f64> = (0..=steps).map(|k| p.t + (t1 - p.t) * k as f64 / steps as f64).collect();
            let xs = field.pathline(p, &times, MapMode::Corrected)?;
            Ok(times.iter().zip(xs).map(|(&t, x)| PathlinePoint { id, t, x: x.x, y: x.y, z: x.z }).collect())
        })
        .collect::<Result<_>>()?;
    Ok(lines.into_iter().flatten().collect())
}

pub fn write_pathlines<W: Write>(w: W, points: &[PathlinePoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pathlines<R: Read>(r: R) -> Result<Vec<PathlinePoint>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
}
