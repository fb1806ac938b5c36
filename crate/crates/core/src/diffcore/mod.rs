//! Tensor algebra with reverse-mode differentiation, the layer set used by
//! the audio and text models, Adam, and a finite-difference checker.

pub mod gradcheck;
pub mod gradsuite;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradient_check, CheckStatus, GradCheckReport};
pub use gradsuite::{gradient_suite, SuiteEntry};
pub use ops::{AttentionSpec, MapLayout};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use params::{Ctx, Mode, ParamKind, ParamStore, Parameter, Recorded};
pub use tape::{concat_cols, concat_rows, Gradients, Tape, Var};
pub use tensor::Tensor;
