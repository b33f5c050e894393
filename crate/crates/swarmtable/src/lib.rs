#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod executor;
pub mod metrics;
pub mod plotdata;
pub mod robot;
pub mod runner;
pub mod scenario;
pub mod server;
pub mod trajectory;
pub mod wire;
