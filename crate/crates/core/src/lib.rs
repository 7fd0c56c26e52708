//! Coarse-to-fine field lifting for accelerated topology optimization.
//!
//! The fine-scale design is coarsened, analysed with FEM on the coarse mesh,
//! cut into small fragments, lifted back to fine resolution by a
//! convolutional network conditioned on the fine density, and stitched
//! together again. The optimizers in [`topopt`] run unchanged on either the
//! lifted field or a direct fine-scale FEM solve.

pub mod error;
pub mod fem;
pub mod field;
pub mod fragmap;
pub mod grid;
pub mod io;
pub mod mapnet;
pub mod pipeline;
pub mod topopt;

pub use error::{Error, Result};
pub use field::ScalarField;
