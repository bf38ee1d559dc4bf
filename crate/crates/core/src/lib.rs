//! Simulator and evaluation harness for the baskets-and-prizes decision game.
//!
//! Players choose one of several baskets whose prize counts are hidden and
//! may pay to reveal individual cells first. The crate provides the game
//! engine, four choice-architecture nudges, a value-of-computation reference
//! agent with a nudge optimizer, an agent harness for language models and
//! scripted players, a record store and experiment runner, statistical
//! analysis, and an HTTP service for human play.

pub mod analysis;
pub mod experiment;
pub mod game;
pub mod harness;
pub mod nudge;
pub mod record;
pub mod rng;
pub mod rr;
pub mod runner;
pub mod service;
