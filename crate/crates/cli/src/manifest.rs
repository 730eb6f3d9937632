//! The run manifest: one JSON file naming every input of a pipeline run so a
//! harness can reproduce it byte for byte.

use serde::{Deserialize, Serialize};
use spikedet_core::runtime::RunConfig;
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: PathBuf,
    pub weights: PathBuf,
    /// Encoded tensor file or a raw .evt1 stream (histogram-encoded on load).
    pub input: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,

    #[serde(default = "default_run_config")]
    pub run: RunConfig,
    pub head: HeadSettings,

    /// Record per-neuron spike counts and emit a trace summary.
    #[serde(default)]
    pub trace: bool,
    /// Profiling inputs; when present a profile report is emitted.
    #[serde(default)]
    pub profile: Option<ProfileSettings>,
}

fn default_run_config() -> RunConfig {
    RunConfig::default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSettings {
    pub classes: usize,
    #[serde(default = "default_reg_max")]
    pub reg_max: usize,
    #[serde(default = "default_score_threshold")]
    pub score_threshold: f32,
    #[serde(default = "default_nms_iou")]
    pub nms_iou: f32,
}

fn default_reg_max() -> usize {
    5
}

fn default_score_threshold() -> f32 {
    0.6
}

fn default_nms_iou() -> f32 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSettings {
    /// Power profile JSON (platform, static_w, dynamic_w).
    pub power: PathBuf,
    /// Either a measured per-step time in seconds...
    #[serde(default)]
    pub dt: Option<f64>,
    /// ...or a target rate to invert (samples/s).
    #[serde(default)]
    pub rate: Option<f64>,
}
