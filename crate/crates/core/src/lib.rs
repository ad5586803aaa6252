#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod engine;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod qp;
pub mod rh;
