//! Reference-based super-resolution: texture extractor, reference selector,
//! relevance embedding with hard/soft attention, texture-fusing generator,
//! critic, staged composite loss and training loop.

pub mod attention;
pub mod config;
pub mod data;
pub mod infer;
pub mod loss;
pub mod model;
pub mod train;

pub use attention::{
    attend, cosine_similarity, relevance_embed, transfer, Attention, AttentionMaps,
};
pub use config::{LossWeights, LrConfig, ModelConfig, TrainConfig, CONFIG_VERSION};
pub use data::{Batch, ReferenceTensors, Sample, TrainingSet};
pub use infer::{infer_config, select_references, Model, PreparedReference};
pub use loss::{
    loss_adv_critic, loss_adv_generator, loss_per, loss_per_features, loss_rec, loss_total,
    LossParts, Stage,
};
pub use train::{
    read_curve, validation_rec, write_curve, LossRecord, TrainOutcome, Trainer, ValidationPoint,
    CURVE_HEADER,
};
