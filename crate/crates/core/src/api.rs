//! Request and response bodies of the HTTP API.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ProbMatrix, TransitionMatrix};
use crate::features::FeatureVector;
use crate::gesture::GestureClass;
use crate::session::{Counters, EnsembleTick, PerformerStatus, SessionConfig};
use crate::touch::TouchEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    /// Seconds since the session started, on the session clock.
    pub session_time: f64,
    pub clock_rate: f64,
    pub config: SessionConfig,
    pub osc_addr: String,
    pub bridge_addr: Option<String>,
    pub log_path: Option<String>,
    pub performers: Vec<PerformerStatus>,
    pub counters: Counters,
    pub ticks: u64,
    pub new_ideas: u64,
    pub overruns: u64,
    pub last_tick: Option<EnsembleTick>,
}

/// Either a ready feature vector, or raw events plus the time to classify at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifyRequest {
    Features {
        features: FeatureVector,
    },
    Events {
        events: Vec<TouchEvent>,
        now: f64,
        #[serde(default)]
        window_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub gesture: GestureClass,
    pub code: String,
    pub probability: f64,
    pub probabilities: Vec<f64>,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionsRequest {
    /// One `(time, gesture id)` list per performer.
    pub sequences: Vec<Vec<(f64, GestureClass)>>,
    /// Transitions ending in `(lo, hi]` are counted.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionsResponse {
    pub matrix: TransitionMatrix,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxRequest {
    pub matrix: ProbMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxResponse {
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicksResponse {
    pub ticks: Vec<EnsembleTick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
