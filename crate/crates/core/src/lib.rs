// SPDX-License-Identifier: Apache-2.0

//! Behavioral simulator and cost model for an all-analog in-memory
//! vector-matrix multiply accelerator built from charge-domain macros and a
//! time-domain accumulation chain.

pub mod analysis;
pub mod charge;
pub mod config;
pub mod cost;
pub mod datapath;
pub mod job_io;
pub mod mapper;
pub mod mlp;
pub mod time_domain;
pub mod variation;
