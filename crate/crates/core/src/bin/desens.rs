//! Command-line entry point: evaluate, desensitize, simulate, ablate,
//! losses-check.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use desens::annot::{self, canonical_json};
use desens::harness::{self, NoiseSpec, SceneSpec};
use desens::losses::{self, LossConfig, Tensor3};
use desens::metrics::{self, RegionWeights};
use desens::pipeline::{self, PipelineConfig};
use desens::postproc::DsjMethod;
use desens::renderer::{self, IconAnchor, RedactStyle};

#[derive(Parser)]
#[command(name = "desens", version, about = "Face/plate desensitization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (JSON). Flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Face region weights as "above,mid,below" (must sum to 1).
    #[arg(long, global = true)]
    weights: Option<String>,

    /// KFJ coasting window (previous frames).
    #[arg(long, global = true)]
    window: Option<u32>,

    /// DSJ fusion method: min-bbox-iou | dual-confidence.
    #[arg(long, global = true)]
    dsj_method: Option<String>,

    /// Redaction style: mosaic:<block> | solid:<r>,<g>,<b> | icon:<path>[:opacity].
    #[arg(long, global = true)]
    style: Option<String>,

    /// Base seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print the effective configuration as canonical JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against ground truth (AP and mIOFF families).
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run DJ -> DSJ -> KFJ over predictions and render redacted frames.
    Desensitize {
        /// Directory holding the input frames named by the prediction
        /// document's image_path.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Output directory for redacted frames and report.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_dj: bool,
        #[arg(long)]
        no_dsj: bool,
        #[arg(long)]
        no_kfj: bool,
    },
    /// Generate a synthetic scene: ground truth, frames, optional predictions.
    Simulate {
        /// Scene spec (JSON); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Noise spec (JSON); when given, corrupted predictions are written.
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Run the six-config ablation and the window sweep, seed-averaged.
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u32,
    },
    /// Evaluate loss components and verify gradients against finite differences.
    LossesCheck {
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
enum StyleConfig {
    Mosaic {
        block: u32,
    },
    Solid {
        rgb: [u8; 3],
    },
    Icon {
        path: String,
        #[serde(default = "default_opacity")]
        opacity: f64,
        #[serde(default)]
        anchor: AnchorConfig,
    },
}

fn default_opacity() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum AnchorConfig {
    #[default]
    Center,
    TopLeft,
    Stretch,
}

impl From<AnchorConfig> for IconAnchor {
    fn from(a: AnchorConfig) -> Self {
        match a {
            AnchorConfig::Center => IconAnchor::Center,
            AnchorConfig::TopLeft => IconAnchor::TopLeft,
            AnchorConfig::Stretch => IconAnchor::Stretch,
        }
    }
}

/// The effective run configuration: defaults, overlaid by the config file,
/// overlaid by flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    weights: RegionWeights,
    pipeline: PipelineConfig,
    loss: LossConfig,
    style: StyleConfig,
    seed: u64,
    jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            weights: RegionWeights::default(),
            pipeline: PipelineConfig::default(),
            loss: LossConfig::default(),
            style: StyleConfig::Mosaic { block: 8 },
            seed: 1,
            jobs: 0,
        }
    }
}

enum CliError {
    Usage(String),
    Data(String),
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Check(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Check(m) => m,
        }
    }
}

fn data_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn usage_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(w) = &cli.weights {
        let parts: Vec<f64> = w
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage_err(format!("--weights: {e}")))?;
        if parts.len() != 3 {
            return Err(usage_err("--weights expects three comma-separated values"));
        }
        cfg.weights = RegionWeights::new(parts[0], parts[1], parts[2]).map_err(usage_err)?;
    } else {
        // config-file weights also need validation
        cfg.weights = RegionWeights::new(cfg.weights.above, cfg.weights.mid, cfg.weights.below)
            .map_err(data_err)?;
    }
    if let Some(w) = cli.window {
        if w < 1 {
            return Err(usage_err("--window must be at least 1"));
        }
        cfg.pipeline.tracker.window = w;
    }
    if let Some(m) = &cli.dsj_method {
        cfg.pipeline.joint.dsj_method = match m.as_str() {
            "min-bbox-iou" => DsjMethod::MinBboxIou,
            "dual-confidence" => DsjMethod::DualConfidence,
            other => return Err(usage_err(format!("unknown --dsj-method '{other}'"))),
        };
    }
    if let Some(s) = &cli.style {
        cfg.style = parse_style_flag(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn parse_style_flag(s: &str) -> Result<StyleConfig, CliError> {
    let mut parts = s.split(':');
    let mode = parts.next().unwrap_or_default();
    let rest: Vec<&str> = parts.collect();
    match mode {
        "mosaic" => {
            let block = rest
                .first()
                .unwrap_or(&"8")
                .parse()
                .map_err(|e| usage_err(format!("--style mosaic block: {e}")))?;
            Ok(StyleConfig::Mosaic { block })
        }
        "solid" => {
            let spec = rest.first().unwrap_or(&"128,128,128");
            let rgb: Vec<u8> = spec
                .split(',')
                .map(|p| p.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|e| usage_err(format!("--style solid rgb: {e}")))?;
            if rgb.len() != 3 {
                return Err(usage_err("--style solid expects r,g,b"));
            }
            Ok(StyleConfig::Solid {
                rgb: [rgb[0], rgb[1], rgb[2]],
            })
        }
        "icon" => {
            let path = rest
                .first()
                .ok_or_else(|| usage_err("--style icon requires a path"))?;
            let opacity = rest
                .get(1)
                .map(|o| o.parse::<f64>())
                .transpose()
                .map_err(|e| usage_err(format!("--style icon opacity: {e}")))?
                .unwrap_or(1.0);
            Ok(StyleConfig::Icon {
                path: path.to_string(),
                opacity,
                anchor: AnchorConfig::Center,
            })
        }
        other => Err(usage_err(format!("unknown --style mode '{other}'"))),
    }
}

fn build_style(cfg: &StyleConfig) -> Result<RedactStyle, CliError> {
    Ok(match cfg {
        StyleConfig::Mosaic { block } => RedactStyle::Mosaic { block: *block },
        StyleConfig::Solid { rgb } => RedactStyle::Solid { rgb: *rgb },
        StyleConfig::Icon {
            path,
            opacity,
            anchor,
        } => {
            let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            let icon = renderer::read_image(&bytes)
                .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            RedactStyle::Icon {
                icon,
                anchor: (*anchor).into(),
                opacity: *opacity,
            }
        }
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(data_err)?;
            }
            std::fs::write(path, content)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_evaluate(
    cfg: &RunConfig,
    gt_path: &Path,
    pred_path: &Path,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let gt_bytes = std::fs::read(gt_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", gt_path.display())))?;
    let gt = annot::parse_sequence(&gt_bytes).map_err(data_err)?;
    let pred_bytes = std::fs::read(pred_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", pred_path.display())))?;
    let pred = annot::parse_predictions(&pred_bytes).map_err(data_err)?;
    let report = metrics::evaluate(&gt, &pred, &cfg.weights).map_err(data_err)?;
    write_output(out, &canonical_json(&report))
}

fn cmd_desensitize(
    cfg: &RunConfig,
    frames_dir: &Path,
    pred_path: &Path,
    out_dir: &Path,
    stages: (bool, bool, bool),
) -> Result<(), CliError> {
    let pred_bytes = std::fs::read(pred_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", pred_path.display())))?;
    let pred = annot::parse_predictions(&pred_bytes).map_err(data_err)?;
    let style = build_style(&cfg.style)?;
    let mut pipeline_cfg = cfg.pipeline;
    pipeline_cfg.use_dj = stages.0;
    pipeline_cfg.use_dsj = stages.1;
    pipeline_cfg.use_kfj = stages.2;
    let run = pipeline::run_pipeline(&pred, &pipeline_cfg).map_err(data_err)?;

    std::fs::create_dir_all(out_dir).map_err(data_err)?;
    for (frame, result) in pred.frames.iter().zip(&run.frames) {
        let name = frame
            .image_path
            .clone()
            .unwrap_or_else(|| format!("frame_{:06}.ppm", frame.frame_index));
        let in_path = frames_dir.join(&name);
        let bytes = std::fs::read(&in_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", in_path.display())))?;
        let mut img = renderer::read_image(&bytes)
            .map_err(|e| CliError::Data(format!("{}: {e}", in_path.display())))?;
        if img.width() != pred.width || img.height() != pred.height {
            return Err(CliError::Data(format!(
                "{}: frame is {}x{}, sequence is {}x{}",
                in_path.display(),
                img.width(),
                img.height(),
                pred.width,
                pred.height
            )));
        }
        let regions: Vec<_> = result.regions.iter().map(|r| r.region.clone()).collect();
        renderer::apply_all(&mut img, &regions, &style).map_err(data_err)?;
        std::fs::write(out_dir.join(&name), renderer::write_image(&img)).map_err(data_err)?;
    }

    let report = serde_json::json!({
        "config": {
            "weights": cfg.weights,
            "pipeline": pipeline_cfg,
            "style": cfg.style,
        },
        "run": pipeline::run_report(&run),
    });
    std::fs::write(out_dir.join("report.json"), canonical_json(&report)).map_err(data_err)?;
    Ok(())
}

fn cmd_simulate(
    spec_path: &Option<PathBuf>,
    noise_path: &Option<PathBuf>,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut spec: SceneSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    let scene = harness::generate(&spec).map_err(data_err)?;
    let frames_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(data_err)?;
    std::fs::write(
        out_dir.join("gt.json"),
        annot::serialize_sequence(&scene.annotation),
    )
    .map_err(data_err)?;
    for (frame, img) in scene.annotation.frames.iter().zip(&scene.images) {
        let name = frame
            .image_path
            .clone()
            .unwrap_or_else(|| format!("frame_{:06}.ppm", frame.frame_index));
        std::fs::write(frames_dir.join(name), renderer::write_image(img)).map_err(data_err)?;
    }
    if let Some(noise_path) = noise_path {
        let noise: NoiseSpec = read_json(noise_path)?;
        let pred = harness::corrupt(&scene.annotation, &noise);
        std::fs::write(out_dir.join("pred.json"), annot::serialize_predictions(&pred))
            .map_err(data_err)?;
    }
    Ok(())
}

fn cmd_ablate(
    cfg: &RunConfig,
    spec_path: &Option<PathBuf>,
    noise_path: &Option<PathBuf>,
    out: &Option<PathBuf>,
    seeds: u32,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut spec: SceneSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    let noise: NoiseSpec = match noise_path {
        Some(p) => read_json(p)?,
        None => NoiseSpec::default(),
    };
    let windows = [2u32, 3, 4, 5, 6, 7];
    let report = harness::run_ablation(&spec, &noise, seeds, &windows, &cfg.weights)
        .map_err(data_err)?;
    write_output(out, &canonical_json(&report))
}

fn cmd_losses_check(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<(), CliError> {
    let report = losses_check_report(cfg.seed, &cfg.loss).map_err(|e| data_err(e.to_string()))?;
    let pass = report["pass"].as_bool().unwrap_or(false);
    write_output(out, &canonical_json(&report))?;
    if !pass {
        return Err(CliError::Check(format!(
            "finite-difference gradient check failed: max relative error {}",
            report["max_fd_error"]
        )));
    }
    Ok(())
}

/// Builds a deterministic check scenario: rendered targets from a harness
/// frame plus pseudo-random predictions, every gradient checked against
/// central finite differences.
fn losses_check_report(
    seed: u64,
    loss_cfg: &LossConfig,
) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    let spec = SceneSpec {
        frames: 1,
        seed,
        ..SceneSpec::default()
    };
    let gt = harness::generate_gt(&spec)?;
    let frame = &gt.frames[0];
    let rendered = losses::render_targets(frame, gt.width, gt.height, loss_cfg)?;
    let (out_w, out_h) = (rendered.heatmap.width(), rendered.heatmap.height());

    // deterministic interior-valued predictions
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let mut rnd = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) as f64) / (u32::MAX as f64)
    };
    let mut yhat = Tensor3::zeros(out_w, out_h, rendered.heatmap.channels());
    for v in yhat.data_mut() {
        *v = 0.05 + rnd() * 0.9;
    }
    let mut that = Tensor3::zeros(out_w, out_h, 3);
    for v in that.data_mut() {
        *v = 0.05 + rnd() * 0.9;
    }
    let mut ohat = Tensor3::zeros(out_w, out_h, 2);
    for v in ohat.data_mut() {
        *v = rnd() * 0.93 + 0.011; // avoid exact kink hits
    }
    let mut shat = Tensor3::zeros(out_w, out_h, 2);
    for v in shat.data_mut() {
        *v = rnd() * 20.0 + 0.013;
    }

    let (l_k, g_k) = losses::focal_keypoint_loss(&yhat, &rendered.heatmap, loss_cfg)?;
    let (l_seg, g_seg) = losses::seg_focal_loss(&that, &rendered.seg, loss_cfg)?;
    let (l_off, g_off) = losses::offset_loss(&ohat, &rendered.targets, loss_cfg)?;
    let (l_size, g_size) = losses::size_loss(&shat, &rendered.targets, loss_cfg)?;
    let total = losses::total_loss(
        &losses::LossComponents {
            keypoint: l_k,
            offset: l_off,
            size: l_size,
            seg: l_seg,
        },
        loss_cfg,
    )?;

    let h = 1e-5;
    let fd_k = losses::fd_max_rel_error(
        |t| losses::focal_keypoint_loss(t, &rendered.heatmap, loss_cfg).unwrap().0,
        &yhat,
        &g_k,
        h,
    );
    let fd_seg = losses::fd_max_rel_error(
        |t| losses::seg_focal_loss(t, &rendered.seg, loss_cfg).unwrap().0,
        &that,
        &g_seg,
        h,
    );
    let fd_off = losses::fd_max_rel_error(
        |t| losses::offset_loss(t, &rendered.targets, loss_cfg).unwrap().0,
        &ohat,
        &g_off,
        h,
    );
    let fd_size = losses::fd_max_rel_error(
        |t| losses::size_loss(t, &rendered.targets, loss_cfg).unwrap().0,
        &shat,
        &g_size,
        h,
    );
    let max_fd = fd_k.max(fd_seg).max(fd_off).max(fd_size);
    let tolerance = 1e-4;

    Ok(serde_json::json!({
        "seed": seed,
        "components": {
            "keypoint": l_k,
            "offset": l_off,
            "size": l_size,
            "seg": l_seg,
        },
        "total": total,
        "fd_errors": {
            "keypoint": fd_k,
            "seg": fd_seg,
            "offset": fd_off,
            "size": fd_size,
        },
        "max_fd_error": max_fd,
        "tolerance": tolerance,
        "pass": max_fd < tolerance,
    }))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if cfg.jobs > 0 {
        // ignore failure: the global pool may already exist
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global();
    }
    if cli.print_config {
        print!("{}", canonical_json(&cfg));
        return Ok(());
    }
    match &cli.command {
        Command::Evaluate { gt, pred, out } => cmd_evaluate(&cfg, gt, pred, out),
        Command::Desensitize {
            frames,
            pred,
            out,
            no_dj,
            no_dsj,
            no_kfj,
        } => {
            let stages = (
                cfg.pipeline.use_dj && !no_dj,
                cfg.pipeline.use_dsj && !no_dsj,
                cfg.pipeline.use_kfj && !no_kfj,
            );
            cmd_desensitize(&cfg, frames, pred, out, stages)
        }
        Command::Simulate { spec, out, noise } => cmd_simulate(spec, noise, out, cli.seed),
        Command::Ablate {
            spec,
            noise,
            out,
            seeds,
        } => cmd_ablate(&cfg, spec, noise, out, *seeds, cli.seed),
        Command::LossesCheck { out } => cmd_losses_check(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
