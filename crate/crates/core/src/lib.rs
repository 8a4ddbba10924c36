//! Keystroke inference from passively captured Wi-Fi beamforming feedback.

pub mod config;
pub mod fixture;
pub mod frame;
pub mod inference;
pub mod layout;
pub mod nn;
pub mod orchestrator;
pub mod pcap;
pub mod pipeline;
pub mod segment;
pub mod series;
pub mod sra;
pub mod steering;
pub mod synth;
