//! Report schemas. Every field is present in every report (optional metrics
//! serialize as null), unknown fields are rejected on load, and writes are
//! atomic. Reports carry the resolved configuration and the root seed; the
//! timestamp stays null unless wall-clock stamping is requested, so seeded
//! reruns are byte-identical.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::{io, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DepthReport {
    pub scale_invariant_mae: f64,
    pub pearson: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub fid: f64,
    pub mean_perceptual: Option<f64>,
    pub depth: Option<DepthReport>,
    pub rendered_count: usize,
    pub reference_count: usize,
    pub extractor_provenance: String,
    pub resolved_config: serde_json::Value,
    pub root_seed: u64,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss_d: f64,
    pub final_loss_g: f64,
    pub final_l_str: f64,
    pub checkpoint: String,
    pub checkpoint_hash: String,
    pub resolved_config: serde_json::Value,
    pub root_seed: u64,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReconReport {
    pub cycles: usize,
    pub pseudo_per_cycle: usize,
    pub gallery_size: usize,
    pub inversion_flagged: bool,
    pub phase_trajectories: Vec<PhaseTrajectory>,
    pub resolved_config: serde_json::Value,
    pub root_seed: u64,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PhaseTrajectory {
    pub cycle: usize,
    pub step1: Vec<f64>,
    pub step2: Vec<f64>,
    pub step3: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RefineReport {
    pub l_m: Vec<f64>,
    pub l_id: Vec<f64>,
    pub l_low: Vec<f64>,
    pub offset_norm: f64,
    pub resolved_config: serde_json::Value,
    pub root_seed: u64,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InvertReport {
    pub loss: f64,
    pub flagged: bool,
    pub trajectory: Vec<f64>,
    pub latent_path: String,
    pub resolved_config: serde_json::Value,
    pub root_seed: u64,
    pub timestamp: Option<String>,
}

pub fn save_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    io::atomic_write(path, text.as_bytes())
}

pub fn load_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn timestamp(wall_clock: bool) -> Option<String> {
    wall_clock.then(|| {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("unix:{secs}")
    })
}

/// Step-indexed training metrics as JSON lines.
pub fn save_metrics_log(path: &Path, metrics: &[toon3d_core::gan::StepMetrics]) -> Result<()> {
    let mut text = String::new();
    for m in metrics {
        text.push_str(&serde_json::to_string(&serde_json::json!({
            "step": m.step,
            "loss_d": m.loss_d,
            "loss_g": m.loss_g,
            "l_str": m.l_str,
        }))?);
        text.push('\n');
    }
    io::atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_report_fields_rejected() {
        let json = r#"{
            "fid": 1.0, "mean_perceptual": null, "depth": null,
            "rendered_count": 2, "reference_count": 2,
            "extractor_provenance": "x", "resolved_config": {},
            "root_seed": 0, "timestamp": null, "mystery": 1
        }"#;
        assert!(serde_json::from_str::<EvalReport>(json).is_err());
    }

    #[test]
    fn every_field_serializes_even_when_absent() {
        let r = EvalReport {
            fid: 0.5,
            mean_perceptual: None,
            depth: None,
            rendered_count: 4,
            reference_count: 4,
            extractor_provenance: "h".into(),
            resolved_config: serde_json::json!({}),
            root_seed: 7,
            timestamp: None,
        };
        let text = serde_json::to_string(&r).unwrap();
        for key in [
            "fid",
            "mean_perceptual",
            "depth",
            "rendered_count",
            "reference_count",
            "extractor_provenance",
            "resolved_config",
            "root_seed",
            "timestamp",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
