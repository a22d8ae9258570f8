//! Online recommendation service: prompt assembly, constrained beam
//! decoding, collision resolution with eligibility filters, a TTL cache and
//! atomic artifact reload.

mod api;
pub mod client;
mod error;
mod http;
mod metrics;
mod service;
mod state;

pub use api::{HealthReport, RecommendRequest, RecommendResponse, ReloadReport, ReloadRequest, ScoredEpisode};
pub use error::ServeError;
pub use http::{router, serve};
pub use service::{ServeConfig, Service};
pub use state::{ArtifactPaths, EpisodeInfo, ServingState};
