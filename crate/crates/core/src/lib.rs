//! Representative attention: tokens are softly routed into a small set of
//! learned slots by key similarity (gather), the slots attend to each other
//! (interact), and every token reads the refined slots back through
//! cross-attention (distribute). A depth-wise convolution on the values runs
//! alongside as a local bypass.
//!
//! The crate also carries the pieces needed to study the layer: an exact
//! backward pass with a finite-difference checker, reference mechanisms
//! (dense softmax, grid-pooled proxies, k-means routing), a cost model,
//! latency scaling measurements, and a small synthetic training harness.

pub mod analysis;
pub mod attention;
pub mod baselines;
pub mod error;
pub mod grad;
pub mod harness;
pub mod kernels;
pub mod par;
pub mod real;
pub mod tensor;

pub use attention::{init_params, param_count, rpattention_forward, AttnConfig, ForwardTrace, RPAttnParams, Routing};
pub use error::{Error, Result};
pub use grad::{finite_diff_grad, gradcheck, rpattention_backward, GradSet, GradcheckReport};
pub use real::Real;
pub use tensor::Tensor;
