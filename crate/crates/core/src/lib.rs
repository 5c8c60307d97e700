//! Backward stochastic differential equations whose drivers depend on the
//! martingale part of the solution, solved exactly on finite event trees.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod exec;
pub mod martingale;
pub mod solver;
pub mod space;
pub mod verify;
