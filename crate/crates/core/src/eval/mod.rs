//! Single-query retrieval metrics, the camera-leakage probe and embedding
//! export.

mod embeddings;
mod probe;
mod ranking;

pub use embeddings::{
    angular_spread, format_embeddings, parse_embeddings, write_embeddings, AngularSpread,
};
pub use probe::{camera_probe, camera_probe_grouped, ProbeConfig, ProbeResult};
pub use ranking::{
    average_precision, evaluate, rank_gallery, EvalReport, Protocol, QueryRanking, RankingResult,
};
