//! Forecasting group behaviour with meta-learned sequence processes.
//!
//! Each group is a task: a handful of observed/future window pairs (the
//! context) conditions a model that forecasts the future windows of new
//! observed windows (the targets) from the same group.

pub mod decoding;
pub mod encoding;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod latent;
pub mod model;
pub mod nn;
pub mod seeding;
pub mod synthdata;
pub mod training;
