//! Mask-proposal backends.
//!
//! A backend receives a tile, a list of prompt points and the current
//! predicted-IoU / stability thresholds, and returns every mask it is willing
//! to propose at those thresholds. Backends filter by threshold themselves;
//! the engine never sees proposals below the requested scores.

mod synthetic;
pub mod wire;

pub use synthetic::{
    synth_scene, SceneError, SceneObject, SceneParams, ShapeKind, SyntheticBackend, SyntheticScene,
    STUFF_CLASS,
};
pub use wire::{WireBackend, WireTransport};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelmap::BinaryMask;
use crate::raster::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: u32,
    pub y: u32,
}

impl PromptPoint {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// One call's worth of input for a backend.
#[derive(Debug, Clone, Copy)]
pub struct ProposalRequest<'a> {
    pub tile: &'a RgbImage,
    /// Global position of the tile's top-left pixel. Only backends that know
    /// the whole scene (the synthetic one) use it; it is not sent on the wire.
    pub origin: (u32, u32),
    pub points: &'a [PromptPoint],
    pub tau_iou: f64,
    pub tau_stab: f64,
}

impl ProposalRequest<'_> {
    pub fn validate(&self) -> Result<(), BackendError> {
        for (name, tau) in [("tau_iou", self.tau_iou), ("tau_stab", self.tau_stab)] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(BackendError::InvalidRequest(format!(
                    "{name} = {tau} outside [0, 1]"
                )));
            }
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|p| p.x >= self.tile.width() || p.y >= self.tile.height())
        {
            return Err(BackendError::InvalidRequest(format!(
                "point ({}, {}) outside {}x{} tile",
                p.x,
                p.y,
                self.tile.width(),
                self.tile.height()
            )));
        }
        Ok(())
    }
}

/// A tile-local mask with the two quality scores that cleared the request thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskProposal {
    pub mask: BinaryMask,
    pub pred_iou: f64,
    pub stability: f64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("tile at {origin:?} ({width}x{height}) lies outside the {scene_w}x{scene_h} scene")]
    OutsideScene {
        origin: (u32, u32),
        width: u32,
        height: u32,
        scene_w: u32,
        scene_h: u32,
    },
    #[error("transport failure: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("worker reported an error: {0}")]
    Worker(String),
    #[error("backend failure: {0}")]
    Failure(String),
}

pub trait ProposalBackend: Send + Sync {
    fn generate(&self, request: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError>;
}

impl<B: ProposalBackend + ?Sized> ProposalBackend for &B {
    fn generate(&self, request: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError> {
        (**self).generate(request)
    }
}

impl<B: ProposalBackend + ?Sized> ProposalBackend for Box<B> {
    fn generate(&self, request: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError> {
        (**self).generate(request)
    }
}

impl<B: ProposalBackend + ?Sized> ProposalBackend for Arc<B> {
    fn generate(&self, request: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError> {
        (**self).generate(request)
    }
}

/// Checks the self-filter contract: tile-sized masks and scores in range and above threshold.
pub fn check_proposals(
    request: &ProposalRequest<'_>,
    proposals: &[MaskProposal],
) -> Result<(), BackendError> {
    for (i, p) in proposals.iter().enumerate() {
        if (p.mask.width(), p.mask.height()) != (request.tile.width(), request.tile.height()) {
            return Err(BackendError::Protocol(format!(
                "mask {i} is {}x{}, tile is {}x{}",
                p.mask.width(),
                p.mask.height(),
                request.tile.width(),
                request.tile.height()
            )));
        }
        for (name, score, tau) in [
            ("pred_iou", p.pred_iou, request.tau_iou),
            ("stability", p.stability, request.tau_stab),
        ] {
            if !(0.0..=1.0).contains(&score) {
                return Err(BackendError::Protocol(format!(
                    "mask {i}: {name} {score} outside [0, 1]"
                )));
            }
            if score < tau {
                return Err(BackendError::Protocol(format!(
                    "mask {i}: {name} {score} below requested threshold {tau}"
                )));
            }
        }
    }
    Ok(())
}
