//! Query-driven temporal reasoning over long videos.
//!
//! A session repeatedly asks a language model which segment of the video to
//! inspect next, grounds only that segment through a vision port, asks for an
//! answer with a confidence score, checks the episode against the timeline
//! and records findings in an event graph. It stops at the first
//! high-confidence answer or when a budget runs out.
//!
//! ```no_run
//! use std::sync::Arc;
//! use qtr_core::backends::scripted::{ScriptedLlm, ScriptedVision, ScriptedWorld};
//! use qtr_core::backends::Ports;
//! use qtr_core::controller::{run_session, SessionConfig};
//! use qtr_core::model::Query;
//!
//! # fn main() -> qtr_core::error::Result<()> {
//! let world: ScriptedWorld = serde_json::from_str(&std::fs::read_to_string("world.json").unwrap()).unwrap();
//! let world = Arc::new(world);
//! let video = world.videos[0].descriptor.clone();
//! let ports = Ports::new(
//!     Arc::new(ScriptedLlm::new(world.clone(), video.id.clone())),
//!     Arc::new(ScriptedVision::new(world.clone())),
//! );
//! let query = Query::new("What does the dog fetch?", video.id.clone());
//! let result = run_session(&query, &video, &SessionConfig::default(), &ports)?;
//! println!("{} ({} frames)", result.final_answer.answer, result.total_frames);
//! # Ok(())
//! # }
//! ```

pub mod backends;
pub mod controller;
pub mod error;
pub mod harness;
pub mod memory;
pub mod model;
pub mod perception;
pub mod planner;
pub mod tcr;
pub mod vector;
