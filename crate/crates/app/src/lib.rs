//! The `prescore` binary: a command-line front end for the batch stages
//! (split, evaluate, predict, export, metrics) and an HTTP gateway for
//! live routed inference.

pub mod cli;
pub mod gateway;
