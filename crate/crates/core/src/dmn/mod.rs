//! Direct deep material network with a leaf rotation layer.

pub mod laminate;
pub mod metrics;
pub mod network;
pub mod nonlinear;
pub mod train;

pub use laminate::laminate_homogenize;
pub use metrics::{elastic_error, error_metrics};
pub use network::{dmn_effective_stiffness, is_matrix_leaf, DmnParams, Network};
pub use nonlinear::{phase_average_internal, DmnResponse, DmnState, MacroControl, NonlinearDmn, UniaxialIterate, UniaxialPredictor};
pub use train::{read_model, train, write_model, Optimizer, TrainConfig, TrainReport, ValidationPack};
