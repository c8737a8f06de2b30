//! Small causal transformer whose feed-forward slots are dense, MoE or
//! MoNE layers: forward, analytic gradients, AdamW training, evaluation,
//! checkpoints and incremental decoding.

mod backward;
mod checkpoint;
mod config;
mod data;
mod eval;
mod forward;
mod generate;
mod gradcheck;
mod params;
mod train;

pub use backward::batch_backward;
pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, Checkpoint, Manifest, TensorEntry, BLOB_FILE, FORMAT_TAG,
    MANIFEST_FILE,
};
pub use config::{DataConfig, LayerKind, ModelConfig, MoneSection, RunConfig, Schedule, TrainConfig};
pub use data::{windows, Dataset, MarkovChain};
pub use eval::{evaluate, EvalMetrics};
pub use forward::{
    batch_forward, forward_seq, lm_forward, BatchForward, ForwardOptions, LayerCache, SeqCache, SeqForward, SeqRoutes,
    TokenFfn, TokenRoute,
};
pub use generate::Generator;
pub use gradcheck::{full_gradcheck, probe_sequences, GradCheckReport, TensorGradCheck};
pub use params::{Ffn, LayerParams, ModelParams};
pub use train::{backward_and_step, batch_rng, train, StepMetrics, TrainState};
