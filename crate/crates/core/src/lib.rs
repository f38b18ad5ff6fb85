//! Discrete-event simulation of listen-before-talk channel access in a
//! dense warehouse IoT cell, with low-power listening radios and exact
//! integer energy accounting.

pub mod aloha;
pub mod channel;
pub mod energy;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod fig5;
pub mod frame;
pub mod mac;
pub mod maclog;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod script;
pub mod time;
pub mod verify;
pub mod warehouse;
pub mod world;

pub use error::SimError;
pub use time::{Duration, SimTime};
