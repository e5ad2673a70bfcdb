//! k-means and external clustering metrics.

mod hungarian;
mod kmeans;
mod metrics;

pub use hungarian::max_weight_assignment;
pub use kmeans::{kmeans, ClusterAssignment, KMeansOptions};
pub use metrics::{clustering_accuracy, contingency, nmi, purity, Scores};
