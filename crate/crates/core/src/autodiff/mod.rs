//! Small reverse-mode automatic differentiation engine.
//!
//! The operator set is exactly what the choice network needs: dense layers,
//! the usual activations, embedding lookups, dropout, the rate-floor clamp,
//! rate-matrix assembly, and a differentiable row-vector linear solve whose
//! backward pass uses the adjoint rule rather than differentiating through
//! the factorization.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;
