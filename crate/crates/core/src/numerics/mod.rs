//! Dense tensors, kernels, activations, top-k selection, seeded RNG and the
//! finite-difference gradient oracle.

mod activation;
mod gradcheck;
mod kernels;
pub mod memory;
mod rng;
mod tensor;
mod topk;

pub use activation::{
    activate_in_place, activation, activation_backward, sigmoid, silu, silu_grad,
    softmax_backward_acc, softmax_in_place, Activation,
};
pub use gradcheck::{finite_diff_grad, GradComparison};
pub use kernels::{axpy, dot, matmul, matvec, matvec_t_acc, outer_acc};
pub use rng::{init_weights, Rng};
pub use tensor::{DType, Element, Tensor};
pub use topk::topk_indices;
