//! Differentiable 3-D tensor kernels and two volumetric segmentation
//! architectures (multi-scale focal fusion and dense multi-scale fusion),
//! plus the loss/metric/optimizer/file-format pieces needed to train and
//! evaluate them on one desk-sized machine.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod train;
pub mod tensor;

pub use arch::{Model, ModelTrace};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelConfig, Variant};
pub use data::{PhantomSpec, VolumeSample};
pub use error::{Error, Result};
pub use metrics::{evaluate_volume, MetricsReport};
pub use ops::ConvSpec;
pub use optim::{adam_step, cyclic_lr, AdamHyper, OptimState};
pub use params::{InitKind, ParamSpec, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, TensorId};
pub use train::{train, TrainLog, TrainOptions, TrainOutput};
pub use tensor::{LabelVolume, Tensor};
