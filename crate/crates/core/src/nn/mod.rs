//! Small feed-forward networks with hand-written backpropagation.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;

pub use checkpoint::{read_tensors, write_tensors, NamedTensor};
pub use gradcheck::{grad_check, grad_check_against, input_grad_check, GradCheckReport, FD_STEP};
pub use mlp::{softmax, Activations, Grad, Layer, Mlp, OutputActivation};
pub use optim::{RmsProp, RmsPropConfig};
