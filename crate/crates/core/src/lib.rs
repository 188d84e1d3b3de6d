pub mod error;
pub mod fft;
pub mod field;
pub mod lattice;
pub mod lp_frame;
pub mod transform;
pub mod spaces;
pub mod operators;
pub mod almost_diag;
pub mod kernel_lab;
pub mod t1;

pub use error::{PhiError, Result};
pub use field::{GridSpec, SampledField};
pub use num_complex::Complex64;
