pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod inference;
pub mod learning;
pub mod pool;
pub mod preference;
pub mod retrieval;
pub mod task;
pub mod template;
