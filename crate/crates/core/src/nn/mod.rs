//! Minimal differentiable building blocks: a reverse-mode tape, parameter
//! storage, standard layers and an Adam optimiser.

mod graph;
mod layers;
mod optim;
mod params;

pub use graph::{sigmoid, softplus, Graph, Mat, Var};
pub use layers::{Gru, Linear, Mlp};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore};
