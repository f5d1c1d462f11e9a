pub mod error;
pub mod kinematics;
pub mod nn;

pub use error::{Error, Result};
pub mod fm_im;
pub mod tm;
pub mod trainer;
pub mod artifact;
pub mod eval;
