//! Dual-branch conditional continuous normalizing flows for attribute
//! editing in the geometry and texture style spaces.

mod cnf;
mod edit;
mod model;

pub use cnf::{
    integrate, log_likelihood, rows_tensor, standard_normal_log_density, tensor_rows, Dynamics, Integrated,
    LinearDynamics, MlpDynamics, Solver,
};
pub use edit::{edit_image, texture_transfer, EditPipeline};
pub use model::{flow_meta, train_flows, FlowArch, FlowModel, FlowReport, FlowSample, FLOW_KIND};
