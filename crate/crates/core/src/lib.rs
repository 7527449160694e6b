#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod env;
pub mod evalharness;
pub mod nn;
pub mod orchestrator;
pub mod ppo;
pub mod seeding;
pub mod track;
