#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod block;
pub mod domain;
pub mod error;
pub mod exec;
pub mod expr;
pub mod flow;
pub mod lojasiewicz;
pub mod perturb;
pub mod point;
pub mod process;
pub mod report;
pub mod sampling;
pub mod scenarios;
pub mod schedule;

pub use block::Block;
pub use domain::Domain;
pub use error::{Error, Result};
pub use exec::Exec;
pub use expr::{AnalyticFunction, AnalyticMap, Expr};
pub use point::Point;
pub use process::{run_process, ProcessRun, StoppingCriteria};
pub use schedule::Schedule;
