//! Visuo-tactile demonstration recording: device log ingest, clock
//! synchronization, pose/width/tactile processing, coarse/fine segmentation,
//! an on-disk episode format and a kinematic simulator.

pub mod config;
pub mod dataset;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod pose_width;
pub mod segmentation;
pub mod simulator;
pub mod sync;
pub mod tactile;

use thiserror::Error;

/// Any failure of the processing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Sync(#[from] sync::SyncError),
    #[error(transparent)]
    Geometry(#[from] pose_width::GeometryError),
    #[error(transparent)]
    Tactile(#[from] tactile::TactileError),
    #[error(transparent)]
    Segment(#[from] segmentation::SegmentError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Sim(#[from] simulator::SimError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}
