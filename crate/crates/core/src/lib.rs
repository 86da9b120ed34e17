//! Lidar mapping and self-supervised annotation, spatiotemporal occupancy grid
//! maps (SOGM), their conversion to spatiotemporal risk maps (SRM), and a
//! risk-aware local planner exercised in a deterministic crowd simulator.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] and [`spatial`]: poses, lidar frames, subsampling, normals and
//!   exact radius / nearest-neighbour search.
//! * [`pointmap`]: ICP localisation with motion-distortion correction and the
//!   sparse voxel map.
//! * [`pointray`]: ray-traced occupancy counters on map points.
//! * [`morpho`]: point-cloud morphology on positive / negative point sets.
//! * [`annotate`]: automated labelling and SOGM generation.
//! * [`predict`], [`srm`], [`plan`]: prediction baselines, risk maps, planner.
//! * [`sim`]: simulated world, Flow-Follower actors, lidar and metrics.
//! * [`io`] and [`config`]: file codecs and experiment configuration.

pub mod annotate;
pub mod config;
pub mod error;
pub mod geom;
pub mod io;
pub mod morpho;
pub mod plan;
pub mod pointmap;
pub mod pointray;
pub mod predict;
pub mod sim;
pub mod spatial;
pub mod srm;

pub use error::{Error, Result};
