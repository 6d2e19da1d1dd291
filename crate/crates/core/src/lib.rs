// `!(x >= 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod optimizer;
pub mod robust;
pub mod scenario;
pub mod textio;
pub mod transform;

pub use error::{Error, Result};
