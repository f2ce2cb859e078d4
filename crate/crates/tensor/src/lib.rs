//! Deterministic CPU tensors and reverse-mode differentiation for the image
//! operators used by recurrent video super-resolution networks.
//!
//! Values are `f32` in (batch, channel, height, width) layout. Every operator
//! is a method on [`Tape`]; build the graph on a recording tape, then call
//! [`Tape::backward`].
//!
//! ```
//! use fvsr_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
mod param;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckOptions, Projection};
pub use ops::{Activation, Filter, Ratio, Window};
pub use param::{Bound, ParamStore};
pub use tape::{Gradients, Tape};
pub use tensor::Tensor;
