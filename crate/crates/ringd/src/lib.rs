//! Control system of a simulated storage ring: a soft-channel bus with a
//! line-based TCP protocol, the ring simulator, lifetime, optics and orbit
//! feedback services, an archiver, and the file formats and command line
//! tools around them.

pub mod archiver;
pub mod bus;
pub mod client;
pub mod config;
pub mod db;
pub mod error;
pub mod lifetime;
pub mod ofb;
pub mod optics;
pub mod server;
pub mod sim;
pub mod snapshot;
pub mod tools;
pub mod wire;

pub use bus::{Bus, BusAccess, ChannelMeta, Event, Subscription};
pub use client::RemoteBus;
pub use error::{BusError, Error, ParseError, Result};
