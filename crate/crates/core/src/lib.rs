pub mod config;
pub mod doms;
pub mod exec;
pub mod factor_graph;
pub mod flex;
pub mod forecast;
pub mod grid;
pub mod registry;
pub mod store;
pub mod time;
