// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod benchmark;
pub mod bvh;
pub mod camera;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod eval;
pub mod jointset;
pub mod mocap;
pub mod optim;
pub mod records;
pub mod skeleton;
pub mod synth;
pub mod tgp;
