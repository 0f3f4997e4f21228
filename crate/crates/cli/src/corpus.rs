//! Corpus building (files on disk plus manifest) and loading back into
//! memory for training and evaluation.

use std::path::Path;

use toon3d_core::rng::derive_seed_index;
use toon3d_core::tensor::Tensor;
use toon3d_core::world::{self, LabeledSample, SamplingRanges, Style};

use crate::manifest::{CorpusManifest, RangesSpec, SampleRecord, SpecRecord, MANIFEST_FORMAT};
use crate::{io, CliError, Result};

/// Generates `count` samples, writes PNGs plus the manifest under `out`,
/// and returns the manifest. Regeneration with the same inputs reproduces
/// byte-identical files.
pub fn build_corpus(
    out: &Path,
    seed: u64,
    count: usize,
    style: Style,
    resolution: usize,
    ranges: &SamplingRanges,
) -> Result<CorpusManifest> {
    if count == 0 {
        return Err(CliError::Core(toon3d_core::Error::config(
            "corpus count must be >= 1",
        )));
    }
    ranges.validate()?;
    std::fs::create_dir_all(out)?;
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let sample = world::generate_sample(seed, index, ranges, style, resolution)?;
        let rec = write_sample(out, index, &sample)?;
        samples.push(rec);
    }
    let manifest = CorpusManifest {
        format: MANIFEST_FORMAT.to_string(),
        seed,
        count,
        resolution,
        style: style.as_str().to_string(),
        ranges: RangesSpec::from(ranges),
        samples,
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

fn write_sample(out: &Path, index: usize, s: &LabeledSample) -> Result<SampleRecord> {
    let image = format!("images/{index:05}.png");
    let depth = format!("depth/{index:05}.png");
    let mask = format!("masks/{index:05}.png");
    io::write_image_png(&out.join(&image), &s.image)?;
    io::write_depth_png(&out.join(&depth), &s.depth_gt)?;
    let (h, w) = (s.depth_gt.shape()[1], s.depth_gt.shape()[2]);
    io::write_mask_png(&out.join(&mask), &s.mask, h, w)?;
    Ok(SampleRecord {
        index,
        image,
        depth,
        mask,
        spec: SpecRecord::from_spec(&s.spec),
    })
}

/// A corpus loaded back into memory.
pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub images: Vec<Tensor>,
    pub identity_ids: Vec<usize>,
    pub expressions: Vec<f64>,
}

pub fn load_corpus(manifest_path: &Path) -> Result<LoadedCorpus> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let mut images = Vec::with_capacity(manifest.samples.len());
    let mut identity_ids = Vec::with_capacity(manifest.samples.len());
    let mut expressions = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        images.push(io::read_image_png(&manifest.resolve(manifest_path, &rec.image))?);
        identity_ids.push(rec.spec.identity_id);
        expressions.push(rec.spec.expression);
    }
    Ok(LoadedCorpus {
        manifest,
        images,
        identity_ids,
        expressions,
    })
}

/// Ground-truth depth and mask for one sample of a loaded corpus.
pub fn load_ground_truth(
    manifest_path: &Path,
    manifest: &CorpusManifest,
    index: usize,
) -> Result<(Tensor, Vec<bool>)> {
    let rec = manifest
        .samples
        .get(index)
        .ok_or_else(|| CliError::Config(format!("sample index {index} out of range")))?;
    let depth = io::read_depth_png(&manifest.resolve(manifest_path, &rec.depth))?;
    let mask = io::read_mask_png(&manifest.resolve(manifest_path, &rec.mask))?;
    Ok((depth, mask))
}

/// Deterministic per-index scene seed, matching the builder.
pub fn scene_seed(corpus_seed: u64, index: usize) -> u64 {
    derive_seed_index(corpus_seed, "scene", index as u64)
}
