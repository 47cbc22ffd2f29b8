//! Canonical Gaussian point set and per-point feature retrieval.

mod retrieval;
mod set;

pub use retrieval::{retrieve_point_features, sample_token_grid, PointFeatures};
pub use set::{
    init_points, init_random, nearest_neighbor_stats, read_pts, write_pts, GaussianPointSet,
    PointCloud, DEFAULT_JITTER_RADIUS, INIT_OPACITY,
};
