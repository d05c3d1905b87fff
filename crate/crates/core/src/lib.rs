//! A lightweight framework for peer-to-peer service networks.
//!
//! A [`server`] hosts services kept in a [`registry`]. Services exchange
//! XML-RPC style messages ([`wire`]), link to each other ([`links`]), are
//! watched by per-service autonomic managers ([`autonomic`]) and can be
//! grouped by the genetic-algorithm [`solver`]. [`resources`] and [`query`]
//! cover content access, [`admin`] covers persistence and the service
//! factory.

pub mod admin;
pub mod autonomic;
pub mod cli;
pub mod files;
pub mod http;
pub mod links;
pub mod query;
pub mod registry;
pub mod resources;
pub mod server;
pub mod solver;
pub mod view;
pub mod wire;
pub mod xml;

pub use registry::{Registry, ServiceSpec};
pub use wire::{Fault, FaultCode, MethodCall, ServicePath, Value};
