//! Conditional reconstructor: a neural field over the uv grid whose hidden
//! layers are modulated by the fused multimodal feature, the weighted
//! spectral loss, and the training loop.

mod field;
mod loss;
mod model;
mod train;

pub use field::{field_frequencies, film_modulate, ConditionedField, FieldConfig, FieldGeometry, FreeCell};
pub use loss::{assemble_grid, spectral_loss, spectral_loss_on_tape, LossReport};
pub use model::{FeatureTensors, Features, FusionArm, Model, ModelConfig};
pub use train::{
    clean_score, evaluate, score_map, select_fraction, train, EpochMetrics, GeometryCache, Sample,
    SampleEvaluation, Score, TrainConfig, Trainer,
};
