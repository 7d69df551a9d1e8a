//! Multi-hop question answering over knowledge graphs by beam search on
//! coalesced relation sequences.

pub mod bench;
pub mod checkpoint;
pub mod coalesce;
pub mod config;
pub mod dataset;
pub mod epfo;
pub mod error;
pub mod features;
pub mod kg;
pub mod pipeline;
pub mod refiner;
pub mod scorer;
pub mod seeker;
pub mod synth;
pub mod verify;
