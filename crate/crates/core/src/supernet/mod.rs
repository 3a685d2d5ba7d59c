//! One-shot GNN supernet: the block-attribute search space, weight-sliced
//! parameter sharing, forward/backward passes and training loops.

mod model;
mod space;
mod train;
mod weights;

pub use model::{
    accuracy, attention_coefficients, forward, loss, objective, objective_and_gradient, row_softmax,
    ForwardOutput, Mode, PreparedGraph,
};
pub use space::{
    head_columns, Activation, Aggregation, AttentionType, LayerChoice, LayerOptions, SubnetSpec,
    SupernetSpace,
};
pub use train::{evaluate, finetune, pretrain, train_step, FinetuneResult, TrainConfig, EVAL_SEED};
pub use weights::{AdamParams, AttentionParams, Grads, LayerWeights, Param, ParamId, ParamKind, SharedWeights};
