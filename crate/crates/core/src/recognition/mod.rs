//! Sequence embedding, training objectives and retrieval metrics.

mod loss;
mod metrics;
mod model;

pub use loss::{batch_hard_triplet, ce_loss, ce_loss_grad, mine_batch_hard, triplet_loss, MinedPair, ZipLosses, DEFAULT_MARGIN};
pub use metrics::{evaluate_retrieval, part_distance, retrieval_from_distances, Candidate, EmbeddingSet, RetrievalResult};
pub use model::{sample_zip_batch, train_step_zipgait, Recognizer, RecognizerConfig, SequenceCache, SequenceInput, ZipBatch, ZipGait};
