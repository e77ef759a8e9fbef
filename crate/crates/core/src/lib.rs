//! Point-cloud anomaly detection with two experts and learned fusion.

pub mod bank;
pub mod descriptors;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sdf;
pub mod shapes;
pub mod synthesis;

pub use error::{Error, Result};
pub use geometry::PointCloud;
