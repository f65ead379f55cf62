//! Polynomial vector fields whose robust heteroclinic networks realize the
//! double-next-neighbour digraph, plus tools to verify their connections and
//! assess the stability of short cycles.

pub mod construct;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod factor;
pub mod graph;
pub mod integrate;
pub mod nullclines;
pub mod pipeline;
pub mod stability;
pub mod verify;

pub use error::{Error, Result};
