//! Dense reverse-mode automatic differentiation for small convolutional
//! models.
//!
//! The engine is an eager tape ([`Graph`]): values are computed as ops are
//! recorded, and [`Graph::grad`] emits gradients as new tape values, so
//! second derivatives need no special handling. Convolutions are lowered to
//! im2col plus a cache-blocked matrix product ([`kernels::matmul`]).
//!
//! ```
//! use semsr_tensorad::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let dx = g.grad(loss, &[x]).unwrap()[0].unwrap();
//! assert_eq!(g.value(dx).data(), &[2.0, -4.0, 6.0]);
//! ```

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod serialize;
pub mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use graph::{Graph, OpKind, Var};
pub use kernels::Window;
pub use optim::{adam_step, AdamConfig, OptimState};
pub use params::{Bound, ParamSet};
pub use schedule::CyclicLr;
pub use serialize::{Record, WeightsFile};
pub use tensor::Tensor;
