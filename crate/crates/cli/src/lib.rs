//! Shared operation layer with two front ends: the `ctxpipe` CLI and an
//! HTTP API. Both call the same functions in [`ops`], so a command and its
//! endpoint produce the same state and trail.

pub mod api;
pub mod cli;
pub mod ops;
