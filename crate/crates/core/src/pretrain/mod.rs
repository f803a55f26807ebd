//! Pre-training of hypersolver networks on sampled state/control pairs.

mod sampling;
mod train;

pub use sampling::{
    rng_stream, sample_random_walk, sample_uniform, RandomWalk, SampleDistribution, SampleMode,
};
pub use train::{
    held_out_metrics, held_out_set, pretrain, train_active, train_stochastic, HeldOutMetrics,
    LossKind, LossPoint, LrStage, PretrainConfig, PretrainReport, Strategy, TrainTarget,
};
