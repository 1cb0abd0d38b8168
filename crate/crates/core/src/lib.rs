// `!(x >= 0.0)` style comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod docmemory;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod params;
pub mod srtransformer;
pub mod synthdata;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{Bound, Initializer, ParamId, ParamStore, Parameter};
pub use srtransformer::{build_model, Model, ModelConfig};
pub use tensor::{gradcheck, GradcheckConfig, GradcheckReport, Tape, Tensor, Var};
