//! GRU encoder-decoder with additive attention: scoring, decoding and training.

pub mod checkpoint;
pub mod decode;
pub mod model;
pub mod train;

pub use checkpoint::{model_hash, Checkpoint};
pub use decode::{beam_search, decode, decode_corpus, DecodeConfig, DecodeMode};
pub use model::{Direction, ModelConfig, ModelDims, Seq2Seq};
pub use train::{batch_gradient, train_mle, DevScorer, EarlyStopping, EpochRecord, TrainOutcome};
