//! Dense tensors, a recorded graph with reverse-mode differentiation, and
//! the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{sigmoid, Activation, BinaryKind, Gradients, Graph, Var, SELU_ALPHA, SELU_SCALE};
pub use tensor::Tensor;

/// Parameter containers expose their tensors in one fixed order so that
/// optimizer state, checkpoints and bound graph variables line up.
pub trait Module {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }
}
