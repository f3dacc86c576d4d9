//! Training objectives.
//!
//! Every loss reduces by the batch mean and, when given a gradient buffer,
//! adds the exact gradient of its (unweighted) value with respect to the
//! network parameters. Quantities documented as detached contribute no gradient.

mod intrinsic;
mod physics;
mod scene;

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::field::Spacetime;

pub use intrinsic::{cross_cycle, feature_transport, feature_transport_with, map_supervision, self_cycle};
pub use physics::{advection_equivalence, div_loss, nse_and_div, nse_loss, velocity_mapping, AdvectionCheck};
pub use scene::{
    boundary_losses, boundary_terms, density_color_mapping, distillation, eikonal, eikonal_value, transport_dual, transport_dual_with,
    SdfQuery,
};

/// Where a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Uniform,
    RaySample,
    SurfaceBand,
    Interior,
}

/// A source point and a target time for the mapping losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub p_a: Spacetime,
    pub t_b: f64,
    pub kind: SampleKind,
}

impl SamplePoint {
    pub fn new(p_a: Spacetime, t_b: f64) -> Self {
        Self { p_a, t_b, kind: SampleKind::Uniform }
    }
}

/// Axis-aligned region, e.g. an inflow source excluded from feature transport.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

/// Named weighted loss values of one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
}

impl LossBreakdown {
    pub fn push(&mut self, name: &str, value: f64, weight: f64) {
        self.terms.push(LossTerm { name: name.to_string(), value, weight });
    }

    pub fn total(&self) -> f64 {
        self.terms.iter().map(|t| t.value * t.weight).sum()
    }

    pub fn get(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.terms.iter().all(|t| t.value.is_finite())
    }

    pub const CSV_HEADER: &'static str = "iter,term,value,weight";

    /// Rows `iter,term,value,weight`, plus a `total` row.
    pub fn csv_rows(&self, iter: usize) -> String {
        let mut s = String::new();
        for t in &self.terms {
            let _ = writeln!(s, "{iter},{},{:e},{:e}", t.name, t.value, t.weight);
        }
        let _ = writeln!(s, "{iter},total,{:e},1", self.total());
        s
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_total_and_csv() {
        let mut b = LossBreakdown::default();
        b.push("a", 2.0, 0.5);
        b.push("b", 1.0, 3.0);
        assert_eq!(b.total(), 4.0);
        let csv = b.csv_rows(7);
        assert!(csv.starts_with("7,a,2e0,5e-1\n"));
        assert!(csv.ends_with("7,total,4e0,1\n"));
    }
}
