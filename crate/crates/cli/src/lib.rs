//! Command-line front end and HTTP verifier service.

pub mod commands;
pub mod config;
pub mod lxspots;
pub mod service;
pub mod timeparse;
