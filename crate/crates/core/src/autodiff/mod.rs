//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Leaves are
//! either trainable ([`Tape::param`]) or detached ([`Tape::constant`]); only
//! nodes downstream of a trainable leaf are visited by [`Tape::backward`].
//! A tape is single-owner and not `Send`: parallel work uses one tape per
//! worker.
//!
//! ```
//! use pdenetpp::autodiff::Tape;
//! use pdenetpp::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap());
//! let loss = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod gradcheck;
mod kernels;
mod ops;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use ops::concat_channels;
pub use tape::{Gradients, Tape, Var};
