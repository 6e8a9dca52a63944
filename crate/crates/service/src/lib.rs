//! Session service and command-line front end for `ordutil`.

pub mod api;
pub mod cli;
pub mod session;
