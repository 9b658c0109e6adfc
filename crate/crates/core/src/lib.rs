pub mod bus;
pub mod env;
pub mod tasks;
pub mod nodes;
pub mod agents;
pub mod eval;
pub mod harness;
