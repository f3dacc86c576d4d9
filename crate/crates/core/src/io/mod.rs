//! Datasets, grids, exports and evaluation reports.

mod dataset;
mod eval;
mod export;
mod grid;

pub use dataset::{sha256_hex, synthesize_dataset, verify_manifest, ImageFormat, SyntheticSequence, MANIFEST_FILE};
pub use eval::{
    boundary_metrics, density_error, evaluate, heldout_psnr, integrate_velocity, mapping_consistency, mean_abs_divergence, spacetime_grid,
    velocity_error, BoundaryMetrics, EvalOptions, EvalReport,
};
pub use export::{
    analytic_density_grid, export_grid, pathline_seeds, pathlines, read_pathlines, relative_l2, write_pathlines, ExportKind, PathlinePoint,
};
pub use grid::{Grid, GRID_MAGIC, GRID_VERSION};
