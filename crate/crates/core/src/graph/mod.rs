//! Fixed-radius neighbor graphs and the geometric/physical features fed to
//! the model.

mod cells;
mod features;

pub use cells::{build_radius_graph, RadiusGraph};
pub use features::{edge_features, node_physical, FeatureLayout, Normalizer};
