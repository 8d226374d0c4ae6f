//! Cooperative energy trading among interconnected microgrids.
//!
//! Each microgrid first solves its standalone schedule ([`benchmark`]). A
//! distributed ADMM then minimizes the social operating cost with bilateral
//! trades ([`trading`]), and a second ADMM splits the resulting savings by Nash
//! bargaining ([`payment`]). [`clearinghouse`] runs both phases through an
//! explicit message contract and [`oracle`] provides centralized checks.

// `!(x > 0.0)` also rejects NaN; indexed loops mirror the per-slot algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benchmark;
pub mod clearinghouse;
pub mod domain;
pub mod error;
pub mod model;
pub mod qp;
pub mod scenario_file;
pub mod oracle;
pub mod payment;
pub mod synth;
pub mod trading;
pub mod wind;

pub use domain::{
    GridPrices, MicrogridParams, PaymentMatrix, Scenario, Schedule, StorageParams, TimeGrid, TradeMatrix,
    UserParams,
};
pub use error::{Error, Result};
