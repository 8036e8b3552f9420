//! Teleoperation and monitoring service for the pilotstack simulator.
//!
//! A browser (or any WebSocket client speaking `pilotstack.v1`) watches the
//! simulated camera, drives the car, records training sessions and hands
//! control to a trained autopilot.

pub mod protocol;
pub mod server;
pub mod sim;

pub use protocol::{DriveMode, TeleopMessage, SUBPROTOCOL};
pub use server::{bind, serve, ServiceHandle};
pub use sim::{Sim, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(pilotstack::Error),
    #[error("service task failed: {0}")]
    Task(String),
}

pub type Result<T, E = TeleopError> = std::result::Result<T, E>;
