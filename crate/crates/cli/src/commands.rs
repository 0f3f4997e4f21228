//! Command implementations behind the `toon3d` binary. Every command takes
//! one root seed, derives all streams from it, and echoes its fully resolved
//! configuration into whatever report it writes, so a seeded run reproduces
//! identical outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use toon3d_core::camera::Camera;
use toon3d_core::directions::{self, MaskProvider, OffsetRefineConfig, SemanticDirectionSet};
use toon3d_core::disc::Discriminator;
use toon3d_core::embed::{
    pair_accuracy, train_identity_classifier, ClassifierTrainConfig, EmbedConfig, EmbeddingNet,
};
use toon3d_core::gan::{self, AdvVariant, TransferConfig};
use toon3d_core::generator::{interpolate_models, BlendSchedule, Generator};
use toon3d_core::metrics;
use toon3d_core::params::Archive;
use toon3d_core::recon::{self, InvertConfig, PipelineConfig, ReconInput};
use toon3d_core::render;
use toon3d_core::tensor::Tensor;
use toon3d_core::vlda::{self, EllipsoidPrior, PretrainConfig, VldaModel};
use toon3d_core::world::{SamplingRanges, Style};
use toon3d_core::{rng, Error as CoreError};

use crate::corpus::{build_corpus, load_corpus};
use crate::manifest::CorpusManifest;
use crate::report::{
    self, save_report, DepthReport, EvalReport, InvertReport, PhaseTrajectory, ReconReport,
    RefineReport, TrainReport,
};
use crate::{grid, io, mesh, CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "toon3d", version, about = "Synthetic face world, style generator domain transfer, latent direction discovery, and single-image 3D reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthetic world corpora and surrogate networks.
    World {
        #[command(subcommand)]
        cmd: WorldCmd,
    },
    /// Generator training, fine-tuning and blending.
    Gan {
        #[command(subcommand)]
        cmd: GanCmd,
    },
    /// Latent semantic directions.
    Sefa {
        #[command(subcommand)]
        cmd: SefaCmd,
    },
    /// 3D reconstruction.
    Recon {
        #[command(subcommand)]
        cmd: ReconCmd,
    },
    /// Latent-space projection of an image.
    Invert(InvertArgs),
    /// Quantitative evaluation.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Figure-style image grids.
    Grid {
        #[command(subcommand)]
        cmd: GridCmd,
    },
}

#[derive(Subcommand, Debug)]
pub enum WorldCmd {
    /// Generate a corpus (images, depth, masks, manifest), optionally
    /// training the identity embedder on it.
    Build(WorldBuildArgs),
}

#[derive(Args, Debug)]
pub struct WorldBuildArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; explicit flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub identities: Option<usize>,
    /// Train the identity embedder on the corpus and save it here.
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    #[arg(long)]
    pub embedder_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldBuildConfig {
    pub seed: u64,
    pub count: usize,
    pub style: String,
    pub resolution: usize,
    pub identities: usize,
    pub embedder_steps: usize,
}

impl Default for WorldBuildConfig {
    fn default() -> Self {
        WorldBuildConfig {
            seed: 0,
            count: 64,
            style: "plain".into(),
            resolution: 32,
            identities: 12,
            embedder_steps: 600,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum GanCmd {
    /// Adversarial training from scratch.
    TrainBase(TrainArgs),
    /// Fine-tune a base checkpoint on a new-domain corpus with the
    /// structure loss.
    Finetune(TrainArgs),
    /// Blend two checkpoints parameter-wise.
    Blend(BlendArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Base checkpoint (fine-tuning only).
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub n_struct_blocks: Option<usize>,
    #[arg(long)]
    pub struct_weight: Option<f64>,
    /// Adversarial variant: "nonsat" (default) or "minimax".
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub r1_gamma: Option<f64>,
    /// Write intermediate checkpoints every N steps (0 = never).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfigFile {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub n_struct_blocks: usize,
    pub struct_weight: f64,
    pub variant: String,
    pub r1_gamma: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfigFile {
    fn default() -> Self {
        TrainConfigFile {
            seed: 0,
            steps: 400,
            batch: 8,
            lr_g: 2e-3,
            lr_d: 2e-3,
            n_struct_blocks: 2,
            struct_weight: 1.0,
            variant: "nonsat".into(),
            r1_gamma: 1.0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Args, Debug)]
pub struct BlendArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub trans: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// "layer-swap" (default), "uniform", or "per-block".
    #[arg(long, default_value = "layer-swap")]
    pub mode: String,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 2)]
    pub split: usize,
    /// Comma list of per-block betas for --mode per-block.
    #[arg(long)]
    pub betas: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum SefaCmd {
    /// Closed-form factorization of a generator weight matrix.
    Discover(DiscoverArgs),
    /// Identity-preserving refinement of a manipulation offset.
    Refine(RefineArgs),
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// "mapping" factorizes the final mapping affine (default);
    /// "style" the concatenated per-block style affines.
    #[arg(long, default_value = "mapping")]
    pub mode: String,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub directions: PathBuf,
    #[arg(long)]
    pub embedder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    pub lambda_low: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Load the start latent from an archive instead of sampling it.
    #[arg(long)]
    pub latent: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ReconCmd {
    /// Full iterative reconstruction of a latent or image.
    Run(ReconArgs),
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    /// A latent archive (*.t3d) or an image (*.png).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub discriminator: PathBuf,
    #[arg(long)]
    pub embedder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_perc: Option<f64>,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub lambda_smooth: Option<f64>,
    #[arg(long)]
    pub step1_steps: Option<usize>,
    #[arg(long)]
    pub step3_steps: Option<usize>,
    #[arg(long)]
    pub e_steps: Option<usize>,
    #[arg(long)]
    pub prior_steps: Option<usize>,
    #[arg(long)]
    pub prior_tol: Option<f64>,
    #[arg(long)]
    pub invert_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfigFile {
    pub cycles: usize,
    pub m: usize,
    pub seed: u64,
    pub lambda_perc: f64,
    pub lambda_e: f64,
    pub lambda_smooth: f64,
    pub step1_steps: usize,
    pub step3_steps: usize,
    pub e_steps: usize,
    pub prior_steps: usize,
    pub prior_tol: f64,
    pub invert_steps: usize,
}

impl Default for ReconConfigFile {
    fn default() -> Self {
        ReconConfigFile {
            cycles: 4,
            m: 32,
            seed: 0,
            lambda_perc: 0.5,
            lambda_e: 0.01,
            lambda_smooth: 0.01,
            step1_steps: 150,
            step3_steps: 150,
            e_steps: 200,
            prior_steps: 5000,
            prior_tol: 0.01,
            invert_steps: 150,
        }
    }
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub embedder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub flag_threshold: f64,
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// Distribution, perceptual and depth metrics into one report.
    Report(EvalArgs),
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Rendered set: a directory of PNGs or a corpus manifest.
    #[arg(long)]
    pub rendered: PathBuf,
    /// Reference corpus manifest.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub embedder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub n_samples: usize,
    /// Optional index-paired directories for mean perceptual distance.
    #[arg(long)]
    pub paired_a: Option<PathBuf>,
    #[arg(long)]
    pub paired_b: Option<PathBuf>,
    /// Optional depth accuracy inputs.
    #[arg(long)]
    pub depth_pred: Option<PathBuf>,
    #[arg(long)]
    pub depth_gt: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stamp the report with wall-clock time (breaks rerun identity).
    #[arg(long, default_value_t = false)]
    pub wall_clock: bool,
}

#[derive(Subcommand, Debug)]
pub enum GridCmd {
    /// Tile corpus samples.
    Samples(GridSamplesArgs),
    /// Latent traversal along a discovered direction (or refined offset).
    Traversal(GridTraversalArgs),
}

#[derive(Args, Debug)]
pub struct GridSamplesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct GridTraversalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub directions: Option<PathBuf>,
    /// Refined offset archive (overrides --directions).
    #[arg(long)]
    pub offset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value = "-3,-1.5,0,1.5,3")]
    pub alphas: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::World { cmd: WorldCmd::Build(a) } => world_build(a),
        Command::Gan { cmd } => match cmd {
            GanCmd::TrainBase(a) => gan_train(a, false),
            GanCmd::Finetune(a) => gan_train(a, true),
            GanCmd::Blend(a) => gan_blend(a),
        },
        Command::Sefa { cmd } => match cmd {
            SefaCmd::Discover(a) => sefa_discover(a),
            SefaCmd::Refine(a) => sefa_refine(a),
        },
        Command::Recon { cmd: ReconCmd::Run(a) } => recon_run(a),
        Command::Invert(a) => invert_cmd(a),
        Command::Eval { cmd: EvalCmd::Report(a) } => eval_report(a),
        Command::Grid { cmd } => match cmd {
            GridCmd::Samples(a) => grid_samples(a),
            GridCmd::Traversal(a) => grid_traversal(a),
        },
    }
}

/// Parses a command line (for tests) and runs it.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    run(cli)
}

fn load_config_file<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn world_build(a: WorldBuildArgs) -> Result<()> {
    let mut cfg: WorldBuildConfig = load_config_file(&a.config)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.count {
        cfg.count = v;
    }
    if let Some(v) = a.style.clone() {
        cfg.style = v;
    }
    if let Some(v) = a.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = a.identities {
        cfg.identities = v;
    }
    if let Some(v) = a.embedder_steps {
        cfg.embedder_steps = v;
    }
    let style = Style::parse(&cfg.style)?;
    let ranges = SamplingRanges {
        n_identities: cfg.identities,
        ..SamplingRanges::default()
    };
    let manifest = build_corpus(&a.out, cfg.seed, cfg.count, style, cfg.resolution, &ranges)?;
    println!(
        "built corpus: {} samples at {}^2 ({}) -> {}",
        manifest.count,
        manifest.resolution,
        manifest.style,
        a.out.display()
    );

    if let Some(embedder_path) = &a.embedder {
        let loaded = load_corpus(&a.out.join("manifest.json"))?;
        let samples: Vec<(Tensor, usize)> = loaded
            .images
            .iter()
            .cloned()
            .zip(loaded.identity_ids.iter().copied())
            .collect();
        // hold out a deterministic slice for the pair-accuracy check
        let holdout_n = (samples.len() / 5).max(4).min(samples.len() / 2);
        let (train, holdout) = samples.split_at(samples.len() - holdout_n);
        let tc = ClassifierTrainConfig {
            steps: cfg.embedder_steps,
            seed: rng::derive_seed(cfg.seed, "embedder"),
            ..Default::default()
        };
        let (net, losses) = train_identity_classifier(
            train,
            EmbedConfig::desk(cfg.resolution, cfg.identities)?,
            &tc,
        )?;
        let acc = pair_accuracy(&net, holdout, 400, rng::derive_seed(cfg.seed, "pairs"))?;
        println!(
            "embedder: {} steps, final loss {:.4}, holdout pair accuracy {:.3}",
            losses.len(),
            losses.last().copied().unwrap_or(f64::NAN),
            acc
        );
        if acc < 0.9 {
            return Err(CliError::Core(CoreError::config(format!(
                "embedder pair accuracy {acc:.3} below the 0.9 contract; increase --embedder-steps or --count"
            ))));
        }
        let hash = io::write_archive(embedder_path, &net.to_archive())?;
        println!("embedder checkpoint {} ({hash})", embedder_path.display());
    }
    Ok(())
}

fn parse_variant(name: &str, gamma: f64) -> Result<AdvVariant> {
    match name {
        "nonsat" => Ok(AdvVariant::NonSaturatingR1 { gamma }),
        "minimax" => Ok(AdvVariant::Minimax),
        other => Err(CliError::Config(format!("unknown adversarial variant {other}"))),
    }
}

fn gan_train(a: TrainArgs, finetune: bool) -> Result<()> {
    let mut cfg: TrainConfigFile = load_config_file(&a.config)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.lr_g {
        cfg.lr_g = v;
    }
    if let Some(v) = a.lr_d {
        cfg.lr_d = v;
    }
    if let Some(v) = a.n_struct_blocks {
        cfg.n_struct_blocks = v;
    }
    if let Some(v) = a.struct_weight {
        cfg.struct_weight = v;
    }
    if let Some(v) = a.variant.clone() {
        cfg.variant = v;
    }
    if let Some(v) = a.r1_gamma {
        cfg.r1_gamma = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }

    let corpus = load_corpus(&a.corpus)?;
    if finetune && corpus.manifest.style != "cartoon" {
        return Err(CliError::Core(CoreError::config(
            "fine-tuning expects a cartoon-style corpus",
        )));
    }
    let tc = TransferConfig {
        n_struct_blocks: cfg.n_struct_blocks,
        struct_weight: cfg.struct_weight,
        lr_g: cfg.lr_g,
        lr_d: cfg.lr_d,
        batch_size: cfg.batch,
        steps: cfg.steps,
        variant: parse_variant(&cfg.variant, cfg.r1_gamma)?,
        seed: cfg.seed,
    };

    std::fs::create_dir_all(&a.out)?;
    let ckpt_dir = a.out.clone();
    let every = cfg.checkpoint_every;
    let mut hook = |step: usize, g: &Generator, d: &Discriminator| {
        if every > 0 && (step + 1) % every == 0 {
            let _ = io::write_archive(
                &ckpt_dir.join(format!("generator_step{:05}.t3d", step + 1)),
                &g.to_archive(),
            );
            let _ = io::write_archive(
                &ckpt_dir.join(format!("discriminator_step{:05}.t3d", step + 1)),
                &d.to_archive(),
            );
        }
    };

    let (gen, disc, metrics) = if finetune {
        let base_path = a
            .base
            .as_ref()
            .ok_or_else(|| CliError::Config("fine-tuning needs --base".into()))?;
        let (arch, _) = io::read_archive(base_path)?;
        let base = Generator::from_archive(&arch)?;
        if base.cfg.resolution != corpus.manifest.resolution {
            return Err(CliError::Core(CoreError::incompatible(
                "base checkpoint resolution differs from the corpus",
            )));
        }
        let mut g = base.clone();
        g.provenance = format!("finetune({})", base.provenance);
        let mut d = Discriminator::init(
            toon3d_core::disc::DiscConfig::desk(base.cfg.resolution)?,
            rng::derive_seed(tc.seed, "disc-init"),
        )?;
        let m = gan::train_gan(&mut g, &mut d, &corpus.images, &tc, Some(&base), Some(&mut hook))?;
        (g, d, m)
    } else {
        let mut g = Generator::init(
            toon3d_core::generator::GenConfig::desk(corpus.manifest.resolution)?,
            rng::derive_seed(tc.seed, "gen-init"),
            &format!("train-base(seed={})", tc.seed),
        )?;
        let mut d = Discriminator::init(
            toon3d_core::disc::DiscConfig::desk(corpus.manifest.resolution)?,
            rng::derive_seed(tc.seed, "disc-init"),
        )?;
        let m = gan::train_gan(&mut g, &mut d, &corpus.images, &tc, None, Some(&mut hook))?;
        (g, d, m)
    };

    let gen_path = a.out.join("generator.t3d");
    let hash = io::write_archive(&gen_path, &gen.to_archive())?;
    io::write_archive(&a.out.join("discriminator.t3d"), &disc.to_archive())?;
    report::save_metrics_log(&a.out.join("metrics.jsonl"), &metrics)?;
    let last = metrics.last();
    save_report(
        &a.out.join("report.json"),
        &TrainReport {
            steps: metrics.len(),
            final_loss_d: last.map(|m| m.loss_d).unwrap_or(f64::NAN),
            final_loss_g: last.map(|m| m.loss_g).unwrap_or(f64::NAN),
            final_l_str: last.map(|m| m.l_str).unwrap_or(0.0),
            checkpoint: gen_path.display().to_string(),
            checkpoint_hash: hash,
            resolved_config: serde_json::to_value(&cfg)?,
            root_seed: cfg.seed,
            timestamp: None,
        },
    )?;
    println!(
        "trained {} steps -> {}",
        metrics.len(),
        a.out.display()
    );
    Ok(())
}

fn gan_blend(a: BlendArgs) -> Result<()> {
    let (arch_b, _) = io::read_archive(&a.base)?;
    let (arch_t, _) = io::read_archive(&a.trans)?;
    let base = Generator::from_archive(&arch_b)?;
    let trans = Generator::from_archive(&arch_t)?;
    let schedule = match a.mode.as_str() {
        "layer-swap" => BlendSchedule::LayerSwap { split: a.split },
        "uniform" => BlendSchedule::Uniform(a.beta),
        "per-block" => {
            let betas: std::result::Result<Vec<f64>, _> = a
                .betas
                .as_deref()
                .unwrap_or("")
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect();
            BlendSchedule::PerBlock(
                betas.map_err(|e| CliError::Config(format!("bad --betas: {e}")))?,
            )
        }
        other => return Err(CliError::Config(format!("unknown blend mode {other}"))),
    };
    let blended = interpolate_models(&base, &trans, &schedule)?;
    let hash = io::write_archive(&a.out, &blended.to_archive())?;
    println!("blended checkpoint {} ({hash})", a.out.display());
    Ok(())
}

fn sefa_discover(a: DiscoverArgs) -> Result<()> {
    let (arch, hash) = io::read_archive(&a.checkpoint)?;
    let gen = Generator::from_archive(&arch)?;
    let matrix = match a.mode.as_str() {
        "mapping" => gen.final_affine_weight().clone(),
        "style" => gen.style_affine_stack(),
        other => return Err(CliError::Config(format!("unknown factorization mode {other}"))),
    };
    let source = format!("checkpoint:{hash} mode:{}", a.mode);
    let set = directions::factorize(&matrix, a.k, &source)?;
    let mut archive = set.to_archive();
    archive.meta.insert("mode".into(), a.mode.clone());
    let out_hash = io::write_archive(&a.out, &archive)?;
    println!(
        "{} directions (strengths {:.3} .. {:.3}) -> {} ({out_hash})",
        set.len(),
        set.strengths.first().copied().unwrap_or(0.0),
        set.strengths.last().copied().unwrap_or(0.0),
        a.out.display()
    );
    Ok(())
}

fn load_latent(path: &Path) -> Result<Tensor> {
    let (arch, _) = io::read_archive(path)?;
    if arch.kind != "latent" {
        return Err(CliError::Core(CoreError::incompatible(format!(
            "expected a latent archive, found kind {}",
            arch.kind
        ))));
    }
    Ok(arch.params.expect("w")?.clone())
}

fn save_latent(path: &Path, w: &Tensor, meta: &[(&str, String)]) -> Result<String> {
    let mut arch = Archive::new("latent");
    for (k, v) in meta {
        arch.meta.insert((*k).into(), v.clone());
    }
    arch.params.insert("w", w.clone());
    io::write_archive(path, &arch)
}

fn sefa_refine(a: RefineArgs) -> Result<()> {
    let (arch, _) = io::read_archive(&a.checkpoint)?;
    let gen = Generator::from_archive(&arch)?;
    let (darch, _) = io::read_archive(&a.directions)?;
    let set = SemanticDirectionSet::from_archive(&darch)?;
    if a.index >= set.len() {
        return Err(CliError::Core(CoreError::argument(format!(
            "direction index {} out of range ({} available)",
            a.index,
            set.len()
        ))));
    }
    let (earch, _) = io::read_archive(&a.embedder)?;
    let f = EmbeddingNet::from_archive(&earch)?;

    let w = match &a.latent {
        Some(p) => load_latent(p)?,
        None => {
            let mut r = rng::rng_from_seed(rng::derive_seed(a.seed, "refine-z"));
            let z = Tensor::randn(&[gen.cfg.d_z], 1.0, &mut r);
            gen.map_latent(&z)?
        }
    };
    let cfg = OffsetRefineConfig {
        alpha: a.alpha,
        lambda_low: a.lambda_low,
        iterations: a.iterations,
        lr: a.lr,
    };
    let n = set.direction(a.index);
    let result = directions::refine_offset(&w, &n, &cfg, &gen, &f, &MaskProvider::default())?;

    std::fs::create_dir_all(&a.out)?;
    save_latent(&a.out.join("w.t3d"), &w, &[("role", "base latent".into())])?;
    save_latent(
        &a.out.join("w_star.t3d"),
        &result.w_star,
        &[("role", "refined offset".into())],
    )?;
    let resolved = serde_json::json!({
        "alpha": a.alpha,
        "lambda_low": a.lambda_low,
        "iterations": a.iterations,
        "lr": a.lr,
        "direction_index": a.index,
    });
    save_report(
        &a.out.join("report.json"),
        &RefineReport {
            l_m: result.trajectory.iter().map(|s| s.l_m).collect(),
            l_id: result.trajectory.iter().map(|s| s.l_id).collect(),
            l_low: result.trajectory.iter().map(|s| s.l_low).collect(),
            offset_norm: result.w_star.l2_norm(),
            resolved_config: resolved,
            root_seed: a.seed,
            timestamp: None,
        },
    )?;
    println!(
        "refined offset (|w*| = {:.3}) -> {}",
        result.w_star.l2_norm(),
        a.out.display()
    );
    Ok(())
}

fn invert_cmd(a: InvertArgs) -> Result<()> {
    let (arch, _) = io::read_archive(&a.checkpoint)?;
    let gen = Generator::from_archive(&arch)?;
    let (earch, _) = io::read_archive(&a.embedder)?;
    let f = EmbeddingNet::from_archive(&earch)?;
    let image = io::read_image_png(&a.image)?;
    let cfg = InvertConfig {
        steps: a.steps,
        lr: a.lr,
        flag_threshold: a.flag_threshold,
        seed: a.seed,
        ..Default::default()
    };
    let result = recon::invert_real(&image, &gen, &f, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    let latent_path = a.out.join("w.t3d");
    save_latent(
        &latent_path,
        &result.w,
        &[("role", "inverted latent".into())],
    )?;
    let (recon_img, _) = gen.synthesize(&result.w)?;
    io::write_image_png(&a.out.join("reconstruction.png"), &recon_img)?;
    save_report(
        &a.out.join("report.json"),
        &InvertReport {
            loss: result.loss,
            flagged: result.flagged,
            trajectory: result.trajectory.clone(),
            latent_path: latent_path.display().to_string(),
            resolved_config: serde_json::json!({
                "steps": a.steps, "lr": a.lr, "flag_threshold": a.flag_threshold,
            }),
            root_seed: a.seed,
            timestamp: None,
        },
    )?;
    println!(
        "inverted: loss {:.4}{} -> {}",
        result.loss,
        if result.flagged { " (flagged)" } else { "" },
        a.out.display()
    );
    Ok(())
}

fn recon_run(a: ReconArgs) -> Result<()> {
    let mut cfg: ReconConfigFile = load_config_file(&a.config)?;
    if let Some(v) = a.cycles {
        cfg.cycles = v;
    }
    if let Some(v) = a.m {
        cfg.m = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lambda_perc {
        cfg.lambda_perc = v;
    }
    if let Some(v) = a.lambda_e {
        cfg.lambda_e = v;
    }
    if let Some(v) = a.lambda_smooth {
        cfg.lambda_smooth = v;
    }
    if let Some(v) = a.step1_steps {
        cfg.step1_steps = v;
    }
    if let Some(v) = a.step3_steps {
        cfg.step3_steps = v;
    }
    if let Some(v) = a.e_steps {
        cfg.e_steps = v;
    }
    if let Some(v) = a.prior_steps {
        cfg.prior_steps = v;
    }
    if let Some(v) = a.prior_tol {
        cfg.prior_tol = v;
    }
    if let Some(v) = a.invert_steps {
        cfg.invert_steps = v;
    }

    let (garch, _) = io::read_archive(&a.checkpoint)?;
    let gen = Generator::from_archive(&garch)?;
    let (darch, _) = io::read_archive(&a.discriminator)?;
    let disc = Discriminator::from_archive(&darch)?;
    let (earch, _) = io::read_archive(&a.embedder)?;
    let f = EmbeddingNet::from_archive(&earch)?;
    let r = gen.cfg.resolution;

    let input = if a.input.extension().and_then(|e| e.to_str()) == Some("png") {
        ReconInput::Image(io::read_image_png(&a.input)?)
    } else {
        ReconInput::Latent(load_latent(&a.input)?)
    };
    let input_image = match &input {
        ReconInput::Image(img) => img.clone(),
        ReconInput::Latent(w) => gen.synthesize(w)?.0,
    };

    // prior-initialized factor networks
    let camera = Camera::square(r);
    let mut model = VldaModel::init(r, rng::derive_seed(cfg.seed, "vlda-init"))?;
    let prior = EllipsoidPrior::default_for(&camera);
    let pre = vlda::pretrain_depth_prior(
        &mut model,
        &prior,
        std::slice::from_ref(&input_image),
        &PretrainConfig {
            tol: cfg.prior_tol,
            max_steps: cfg.prior_steps,
            seed: rng::derive_seed(cfg.seed, "prior"),
            ..Default::default()
        },
    )?;
    if !pre.converged {
        eprintln!(
            "warning: depth prior pretraining exhausted its budget (L1 {:.4} after {} steps)",
            pre.final_l1, pre.steps_run
        );
    }

    let pcfg = PipelineConfig {
        cycles: cfg.cycles,
        m: cfg.m,
        lambda_perc: cfg.lambda_perc,
        lambda_e: cfg.lambda_e,
        lambda_smooth: cfg.lambda_smooth,
        step1_steps: cfg.step1_steps,
        step3_steps: cfg.step3_steps,
        e_steps: cfg.e_steps,
        seed: cfg.seed,
        ..Default::default()
    };
    let icfg = InvertConfig {
        steps: cfg.invert_steps,
        seed: rng::derive_seed(cfg.seed, "invert"),
        ..Default::default()
    };
    let result = recon::reconstruct(input, &gen, &disc, &mut model, &f, &pcfg, &icfg)?;

    // output layout: factors/, gallery/, mesh.obj, normals.png, report.json
    std::fs::create_dir_all(&a.out)?;
    io::write_depth_png(&a.out.join("factors/depth.png"), &result.factors.depth)?;
    io::write_image_png(&a.out.join("factors/albedo.png"), &result.factors.albedo)?;
    let factors_json = serde_json::json!({
        "view": result.factors.view,
        "light": result.factors.light,
        "near": render::NEAR,
        "far": render::FAR,
    });
    io::atomic_write(
        &a.out.join("factors/factors.json"),
        format!("{}\n", serde_json::to_string_pretty(&factors_json)?).as_bytes(),
    )?;
    for (i, e) in result.gallery.iter().enumerate() {
        io::write_image_png(
            &a.out.join(format!("gallery/rendered_{i:04}.png")),
            &e.rendered,
        )?;
        io::write_image_png(
            &a.out.join(format!("gallery/projected_{i:04}.png")),
            &e.projected,
        )?;
    }
    mesh::write_obj(
        &a.out.join("mesh.obj"),
        &result.factors.depth,
        &result.factors.albedo,
        &camera,
    )?;
    let normals = render::depth_to_normals(&result.factors.depth, &camera);
    io::write_normals_png(&a.out.join("normals.png"), &normals)?;

    // rotation / relighting galleries from the reconstructed factors
    let border = recon::border_color(&input_image);
    for (i, ry) in [-0.4f64, -0.2, 0.0, 0.2, 0.4].iter().enumerate() {
        let factors = toon3d_core::render::SceneFactors::new(
            result.factors.depth.clone(),
            result.factors.albedo.clone(),
            [0.0, *ry, 0.0, 0.0, 0.0, 0.0],
            result.factors.light,
        )?;
        io::write_image_png(
            &a.out.join(format!("gallery/rotate_{i}.png")),
            &render::render(&factors, &camera, &border),
        )?;
    }
    for (i, lx) in [-0.6f64, 0.0, 0.6].iter().enumerate() {
        let factors = toon3d_core::render::SceneFactors::new(
            result.factors.depth.clone(),
            result.factors.albedo.clone(),
            [0.0; 6],
            [result.factors.light[0], result.factors.light[1], *lx, 0.0],
        )?;
        io::write_image_png(
            &a.out.join(format!("gallery/relight_{i}.png")),
            &render::render(&factors, &camera, &border),
        )?;
    }

    save_report(
        &a.out.join("report.json"),
        &ReconReport {
            cycles: pcfg.cycles,
            pseudo_per_cycle: pcfg.m,
            gallery_size: result.gallery.len(),
            inversion_flagged: result.inversion_flagged,
            phase_trajectories: result
                .trajectories
                .iter()
                .enumerate()
                .map(|(cycle, t)| PhaseTrajectory {
                    cycle,
                    step1: t.step1.clone(),
                    step2: t.step2.clone(),
                    step3: t.step3.clone(),
                })
                .collect(),
            resolved_config: serde_json::to_value(&cfg)?,
            root_seed: cfg.seed,
            timestamp: None,
        },
    )?;
    println!(
        "reconstructed {} cycles x {} pseudo samples -> {}",
        pcfg.cycles,
        pcfg.m,
        a.out.display()
    );
    Ok(())
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_image_set(path: &Path, limit: Option<usize>) -> Result<Vec<Tensor>> {
    let mut images = Vec::new();
    if path.is_dir() {
        for p in list_pngs(path)? {
            images.push(io::read_image_png(&p)?);
            if limit.map(|l| images.len() >= l).unwrap_or(false) {
                break;
            }
        }
    } else {
        let manifest = CorpusManifest::load(path)?;
        for rec in &manifest.samples {
            images.push(io::read_image_png(&manifest.resolve(path, &rec.image))?);
            if limit.map(|l| images.len() >= l).unwrap_or(false) {
                break;
            }
        }
    }
    Ok(images)
}

fn eval_report(a: EvalArgs) -> Result<()> {
    let (earch, ehash) = io::read_archive(&a.embedder)?;
    let f = EmbeddingNet::from_archive(&earch)?;
    if !f.trained {
        return Err(CliError::Core(CoreError::config(
            "evaluation needs a trained embedder",
        )));
    }

    let rendered = load_image_set(&a.rendered, None)?;
    let reference = load_image_set(&a.reference, None)?;
    if rendered.len() < a.n_samples {
        return Err(CliError::Core(CoreError::argument(format!(
            "rendered set has {} samples, need {}",
            rendered.len(),
            a.n_samples
        ))));
    }
    if reference.len() < a.n_samples {
        return Err(CliError::Core(CoreError::argument(format!(
            "reference set has {} samples, need {}",
            reference.len(),
            a.n_samples
        ))));
    }
    let provenance = format!("embedder:{ehash}");
    let fa = metrics::extract_features(&f, &rendered[..a.n_samples], &provenance)?;
    let fb = metrics::extract_features(&f, &reference[..a.n_samples], &provenance)?;
    let fid = metrics::fid(&fa, &fb)?;

    let mean_perceptual = match (&a.paired_a, &a.paired_b) {
        (Some(pa), Some(pb)) => {
            let xs = load_image_set(pa, None)?;
            let ys = load_image_set(pb, None)?;
            if xs.len() != ys.len() || xs.is_empty() {
                return Err(CliError::Core(CoreError::argument(
                    "paired sets must be non-empty and equal-length",
                )));
            }
            let mut total = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                total += metrics::perceptual_distance(x, y, &f)?;
            }
            Some(total / xs.len() as f64)
        }
        (None, None) => None,
        _ => {
            return Err(CliError::Config(
                "--paired-a and --paired-b must be given together".into(),
            ))
        }
    };

    let depth = match (&a.depth_pred, &a.depth_gt, &a.mask) {
        (Some(dp), Some(dg), Some(mp)) => {
            let pred = io::read_depth_png(dp)?;
            let gt = io::read_depth_png(dg)?;
            let mask = io::read_mask_png(mp)?;
            let m = metrics::depth_accuracy(&pred, &gt, &mask)?;
            Some(DepthReport {
                scale_invariant_mae: m.scale_invariant_mae,
                pearson: m.pearson,
                degenerate: m.degenerate,
            })
        }
        (None, None, None) => None,
        _ => {
            return Err(CliError::Config(
                "--depth-pred, --depth-gt and --mask must be given together".into(),
            ))
        }
    };

    let report = EvalReport {
        fid,
        mean_perceptual,
        depth,
        rendered_count: a.n_samples,
        reference_count: a.n_samples,
        extractor_provenance: provenance,
        resolved_config: serde_json::json!({
            "rendered": a.rendered.display().to_string(),
            "reference": a.reference.display().to_string(),
            "n_samples": a.n_samples,
        }),
        root_seed: a.seed,
        timestamp: report::timestamp(a.wall_clock),
    };
    save_report(&a.out, &report)?;
    println!(
        "fid {:.4}{} -> {}",
        report.fid,
        report
            .mean_perceptual
            .map(|p| format!(", mean perceptual {p:.4}"))
            .unwrap_or_default(),
        a.out.display()
    );
    Ok(())
}

fn grid_samples(a: GridSamplesArgs) -> Result<()> {
    let images = load_image_set(&a.corpus, Some(a.count))?;
    if images.is_empty() {
        return Err(CliError::Core(CoreError::argument("no images to tile")));
    }
    let g = grid::compose_grid(&images, a.cols);
    io::write_image_png(&a.out, &g)?;
    println!("grid of {} tiles -> {}", images.len(), a.out.display());
    Ok(())
}

fn grid_traversal(a: GridTraversalArgs) -> Result<()> {
    let (garch, _) = io::read_archive(&a.checkpoint)?;
    let gen = Generator::from_archive(&garch)?;
    let alphas: std::result::Result<Vec<f64>, _> = a
        .alphas
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let alphas = alphas.map_err(|e| CliError::Config(format!("bad --alphas: {e}")))?;
    let direction = match (&a.offset, &a.directions) {
        (Some(p), _) => {
            let (arch, _) = io::read_archive(p)?;
            arch.params.expect("w")?.clone()
        }
        (None, Some(p)) => {
            let (arch, _) = io::read_archive(p)?;
            let set = SemanticDirectionSet::from_archive(&arch)?;
            if a.index >= set.len() {
                return Err(CliError::Core(CoreError::argument(
                    "direction index out of range",
                )));
            }
            set.direction(a.index)
        }
        (None, None) => {
            return Err(CliError::Config(
                "traversal needs --directions or --offset".into(),
            ))
        }
    };
    let mut tiles = Vec::new();
    for row in 0..a.rows {
        let mut r = rng::rng_from_seed(rng::derive_seed_index(a.seed, "traversal", row as u64));
        let z = Tensor::randn(&[gen.cfg.d_z], 1.0, &mut r);
        let w = gen.map_latent(&z)?;
        for &alpha in &alphas {
            let shifted = directions::apply_direction(&w, &direction, alpha)?;
            tiles.push(gen.synthesize(&shifted)?.0);
        }
    }
    let g = grid::compose_grid(&tiles, alphas.len());
    io::write_image_png(&a.out, &g)?;
    println!(
        "traversal grid {} rows x {} alphas -> {}",
        a.rows,
        alphas.len(),
        a.out.display()
    );
    Ok(())
}
