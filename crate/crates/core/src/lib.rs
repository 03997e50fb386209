//! Model-free bounds on European option prices from observed option prices
//! and moment information, via moment-SOS semidefinite relaxations of a
//! generalized moment problem.

pub mod cli;
pub mod inner;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod poly;
pub mod relaxation;
pub mod solver;
pub mod support;
