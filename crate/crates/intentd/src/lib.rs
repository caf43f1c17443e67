//! Command-line tool and HTTP service around [`intentd_core`].

pub mod api;
pub mod cli;
pub mod config;
pub mod server;
