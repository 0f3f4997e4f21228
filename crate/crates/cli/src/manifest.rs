//! Corpus manifest: JSON with documented keys. Unknown fields are rejected
//! on load so schema drift cannot pass silently.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toon3d_core::world::{SamplingRanges, SceneSpec, Style};

use crate::{io, CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RangesSpec {
    pub rot_max: [f64; 3],
    pub trans_max: [f64; 3],
    pub ambient: (f64, f64),
    pub diffuse: (f64, f64),
    pub light_xy: f64,
    pub expression: (f64, f64),
    pub n_identities: usize,
}

impl From<&SamplingRanges> for RangesSpec {
    fn from(r: &SamplingRanges) -> Self {
        RangesSpec {
            rot_max: r.rot_max,
            trans_max: r.trans_max,
            ambient: r.ambient,
            diffuse: r.diffuse,
            light_xy: r.light_xy,
            expression: r.expression,
            n_identities: r.n_identities,
        }
    }
}

impl From<&RangesSpec> for SamplingRanges {
    fn from(r: &RangesSpec) -> Self {
        SamplingRanges {
            rot_max: r.rot_max,
            trans_max: r.trans_max,
            ambient: r.ambient,
            diffuse: r.diffuse,
            light_xy: r.light_xy,
            expression: r.expression,
            n_identities: r.n_identities,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecRecord {
    pub identity_id: usize,
    pub shape_params: Vec<f64>,
    pub expression: f64,
    pub viewpoint: [f64; 6],
    pub lighting: [f64; 4],
    pub style: String,
}

impl SpecRecord {
    pub fn from_spec(s: &SceneSpec) -> Self {
        SpecRecord {
            identity_id: s.identity_id,
            shape_params: s.shape_params.clone(),
            expression: s.expression,
            viewpoint: s.viewpoint,
            lighting: s.lighting,
            style: s.style.as_str().to_string(),
        }
    }

    pub fn to_spec(&self) -> Result<SceneSpec> {
        Ok(SceneSpec {
            identity_id: self.identity_id,
            shape_params: self.shape_params.clone(),
            expression: self.expression,
            viewpoint: self.viewpoint,
            lighting: self.lighting,
            style: Style::parse(&self.style)?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub index: usize,
    pub image: String,
    pub depth: String,
    pub mask: String,
    pub spec: SpecRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub seed: u64,
    pub count: usize,
    pub resolution: usize,
    pub style: String,
    pub ranges: RangesSpec,
    pub samples: Vec<SampleRecord>,
}

pub const MANIFEST_FORMAT: &str = "toon3d-corpus v1";

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        io::atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: CorpusManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Config(format!(
                "unsupported corpus format {:?}",
                m.format
            )));
        }
        Ok(m)
    }

    /// Directory the relative sample paths resolve against.
    pub fn resolve(&self, manifest_path: &Path, rel: &str) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(rel)
    }
}
