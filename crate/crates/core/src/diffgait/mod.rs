//! Skeleton-conditioned silhouette denoiser and its training and sampling loops.

mod engine;
mod net;

pub use engine::{sample_silhouettes, train_step_diffgait, DiffGait, MultiLevelSilhouettes, TrainBatchDG};
pub use net::{
    build_hgv, build_hgv_backward, sinusoidal_embedding, DecoderCache, DiffGaitConfig, DiffGaitNet, EmbeddingCache,
    EncoderCache, MappingCache,
};
