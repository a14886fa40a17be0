//! Command-line pipeline for multi-view 360° depth estimation.
//!
//! Subcommands mirror the pipeline stages: `synth` renders a ground-truth
//! dataset, `features` detects and matches sparse features, `register`
//! estimates poses and translation scales, `depth` sweeps a dense depth map,
//! `eval` scores it against ground truth, `ablate` grids camera count and
//! window size, and `ply` exports a colored point cloud.
//!
//! Exit codes: 0 success, 1 usage, 2 data or precondition error,
//! 3 numerical failure (no consensus, degenerate geometry).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use omnidepth::correspondence::{
    detect_features, load_correspondences, match_features, save_correspondences,
    CorrespondenceError, FeatureConfig,
};
use omnidepth::epipolar::{
    decompose_essential, estimate_essential_ransac, EpipolarError, PoseRecord, RansacConfig,
};
use omnidepth::eval::{
    compute_metrics, export_ply, run_ablation, AblationConfig, AblationGrid, EvalError,
    ExportFilters, PoseSource,
};
use omnidepth::filters::{BilateralParams, JointBilateralParams};
use omnidepth::imgio::{self, ImgIoError};
use omnidepth::registration::{
    register_rig, PairObservation, RegistrationConfig, RegistrationError, Rig,
};
use omnidepth::sweep::{
    estimate_depth_map, make_candidates, rig_sweep_views, SweepConfig, SweepError,
};
use omnidepth::synth::{
    default_rig_poses, default_scene, render_rig, CameraPose, RenderOptions, SceneSpec, SynthError,
};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ImgIoError> for CliError {
    fn from(e: ImgIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorrespondenceError> for CliError {
    fn from(e: CorrespondenceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EpipolarError> for CliError {
    fn from(e: EpipolarError) -> Self {
        match e {
            EpipolarError::NotEnoughMatches(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::DegenerateTriangulation
            | RegistrationError::InvalidDepth(_)
            | RegistrationError::NoSamples
            | RegistrationError::UnregistrableView(_)
            | RegistrationError::DegenerateTracks(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::DegenerateProjection => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Epipolar(inner) => inner.into(),
            EvalError::Registration(inner) => inner.into(),
            EvalError::Sweep(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Optional JSON config; explicit command-line flags win over its values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    schema: Option<u32>,
    features: Option<FeatureConfig>,
    ransac: Option<RansacConfig>,
    registration: Option<RegistrationConfig>,
    sweep: Option<SweepFileConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFileConfig {
    window: Option<usize>,
    d_min: Option<f64>,
    d_max: Option<f64>,
    candidates: Option<usize>,
    prefilter: Option<BilateralParams>,
    postfilter: Option<JointBilateralParams>,
    crop_bottom: Option<f64>,
    center_reference: Option<bool>,
}

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        let cfg: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        if let Some(schema) = cfg.schema {
            if schema != 1 {
                return Err(CliError::Data(format!(
                    "config {}: unsupported schema {schema}",
                    path.display()
                )));
            }
        }
        Ok(cfg)
    }
}

#[derive(Parser)]
#[command(
    name = "omnidepth",
    about = "Dense depth estimation from multiple 360° equirectangular images",
    version
)]
struct Cli {
    /// RNG seed for RANSAC and synthetic correspondence generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread count (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Fraction of bottom rows to ignore (tripod removal).
    #[arg(long, global = true, default_value_t = 0.0)]
    crop_bottom: f64,
    /// JSON config file with feature/ransac/registration/sweep settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground-truth depth and rig.
    Synth(SynthArgs),
    /// Detect features and write pairwise correspondence files.
    Features(FeaturesArgs),
    /// Estimate pairwise poses and register the rig with recovered scales.
    Register(RegisterArgs),
    /// Sweep a dense depth map for the reference view of a dataset.
    Depth(DepthArgs),
    /// Compare an estimated depth map against ground truth.
    Eval(EvalArgs),
    /// Grid camera count x window size x scaling and report metrics.
    Ablate(AblateArgs),
    /// Export a colored PLY point cloud from a depth map and image.
    Ply(PlyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; omit for the built-in textured room.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Camera poses JSON; omit for the built-in 4-camera rig.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Color samples per pixel axis.
    #[arg(long, default_value_t = 1)]
    supersample: usize,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Dataset directory with view_XX.png images.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for corr_RR_KK.txt files (default: the dataset dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    reference: usize,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    fast_threshold: Option<f64>,
}

#[derive(Args)]
struct RegisterArgs {
    /// Directory containing corr_RR_KK.txt correspondence files.
    #[arg(long)]
    corr_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    reference: usize,
    /// Baseline view override; defaults to the pair with the most inliers.
    #[arg(long)]
    baseline: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Metric length of the reference baseline in meters.
    #[arg(long)]
    baseline_length: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Output rig JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional pairwise pose records JSON.
    #[arg(long)]
    poses_out: Option<PathBuf>,
}

#[derive(Args)]
struct DepthArgs {
    /// Dataset directory with view_XX.png images.
    #[arg(long)]
    dataset: PathBuf,
    /// Registered rig JSON (e.g. rig.json or rig_gt.json).
    #[arg(long)]
    rig: PathBuf,
    /// Use only the first N cameras (reference plus N-1 lowest view ids).
    #[arg(long)]
    cameras: Option<usize>,
    /// Output PFM depth map (meters).
    #[arg(long)]
    out: PathBuf,
    /// Optional 16-bit PNG depth encoding.
    #[arg(long)]
    png16: Option<PathBuf>,
    /// Window size in pixels (odd).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    candidates: Option<usize>,
    /// Disable bilateral pre-smoothing.
    #[arg(long)]
    no_prefilter: bool,
    /// Disable joint-bilateral post-refinement.
    #[arg(long)]
    no_postfilter: bool,
    /// Ignore recovered scales (ablation).
    #[arg(long)]
    no_scaling: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated depth map (PFM).
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth depth map (PFM).
    #[arg(long)]
    gt: PathBuf,
    /// Optional metrics JSON output.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Camera counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    cameras: Vec<usize>,
    /// Window sizes, comma separated (odd).
    #[arg(long, value_delimiter = ',', default_value = "5,7,9")]
    windows: Vec<usize>,
    /// Scaling grid: both, on, or off.
    #[arg(long, default_value = "both")]
    scaling: String,
    /// Where poses come from: detector, synthetic, or known.
    #[arg(long, default_value = "detector")]
    pose_source: String,
    #[arg(long)]
    candidates: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Zero the runtime column for byte-reproducible output.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct PlyArgs {
    /// Depth map (PFM).
    #[arg(long)]
    depth: PathBuf,
    /// Color image aligned with the depth map.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Apply the 5x5 Gaussian + median export smoothing.
    #[arg(long)]
    export_filter: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap print its rendered help/error, but use exit code 1
            // for usage problems.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = FileConfig::load(cli.config.as_ref())?;
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Features(args) => cmd_features(cli, &config, args),
        Command::Register(args) => cmd_register(cli, &config, args),
        Command::Depth(args) => cmd_depth(cli, &config, args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(cli, &config, args),
        Command::Ply(args) => cmd_ply(args),
    }
}

#[derive(Debug, Deserialize)]
struct PoseFileEntry {
    position: [f64; 3],
    rpy_deg: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct PoseFile {
    schema: u32,
    poses: Vec<PoseFileEntry>,
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let scene = match &args.scene {
        Some(path) => SceneSpec::load_json(path)?,
        None => default_scene(),
    };
    let poses: Vec<CameraPose> = match &args.poses {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("poses {}: {e}", path.display())))?;
            let file: PoseFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("poses {}: {e}", path.display())))?;
            if file.schema != 1 {
                return Err(CliError::Data(format!(
                    "poses {}: unsupported schema {}",
                    path.display(),
                    file.schema
                )));
            }
            file.poses
                .iter()
                .map(|p| {
                    CameraPose::from_rpy_degrees(
                        omnidepth::synth::Vec3::new(p.position[0], p.position[1], p.position[2]),
                        p.rpy_deg,
                    )
                })
                .collect()
        }
        None => default_rig_poses(),
    };
    let opts = RenderOptions {
        width: args.width,
        height: args.height,
        supersample: args.supersample,
    };
    let rig = render_rig(&scene, &poses, &opts, &args.out)?;
    println!(
        "rendered {} views at {}x{} into {}",
        rig.views.len(),
        args.width,
        args.height,
        args.out.display()
    );
    Ok(())
}

fn load_view_image(dir: &Path, view: usize) -> Result<omnidepth::EquirectImage, CliError> {
    let path = dir.join(format!("view_{view:02}.png"));
    if !path.exists() {
        return Err(CliError::Data(format!(
            "missing view image {}",
            path.display()
        )));
    }
    Ok(imgio::load_image(&path)?)
}

/// View ids present in a dataset directory (view_XX.png).
fn dataset_views(dir: &Path) -> Result<Vec<usize>, CliError> {
    let mut views = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("dataset {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Data(format!("dataset {}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix("view_") {
            if let Some(num) = rest.strip_suffix(".png") {
                if let Ok(v) = num.parse::<usize>() {
                    views.push(v);
                }
            }
        }
    }
    views.sort_unstable();
    if views.is_empty() {
        return Err(CliError::Data(format!(
            "no view_XX.png images in {}",
            dir.display()
        )));
    }
    Ok(views)
}

fn cmd_features(cli: &Cli, config: &FileConfig, args: &FeaturesArgs) -> Result<(), CliError> {
    let mut feat_cfg = config.features.clone().unwrap_or_default();
    if let Some(n) = args.max_features {
        feat_cfg.max_features = n;
    }
    if let Some(t) = args.fast_threshold {
        feat_cfg.fast_threshold = t;
    }
    if cli.crop_bottom > 0.0 {
        feat_cfg.bottom_exclude = cli.crop_bottom;
    }
    let out_dir = args.out.clone().unwrap_or_else(|| args.dataset.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Data(format!("output {}: {e}", out_dir.display())))?;

    let views = dataset_views(&args.dataset)?;
    if !views.contains(&args.reference) {
        return Err(CliError::Data(format!(
            "reference view {} not in dataset",
            args.reference
        )));
    }
    let ref_img = load_view_image(&args.dataset, args.reference)?;
    let ref_feats = detect_features(&ref_img, &feat_cfg);
    println!("view {:02}: {} features", args.reference, ref_feats.len());
    for &k in views.iter().filter(|&&k| k != args.reference) {
        let img = load_view_image(&args.dataset, k)?;
        let feats = detect_features(&img, &feat_cfg);
        let set = match_features(args.reference, &ref_feats, k, &feats);
        let path = out_dir.join(format!("corr_{:02}_{k:02}.txt", args.reference));
        save_correspondences(&set, &path)?;
        println!(
            "view {k:02}: {} features, {} matches -> {}",
            feats.len(),
            set.len(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_register(cli: &Cli, config: &FileConfig, args: &RegisterArgs) -> Result<(), CliError> {
    let mut ransac = config.ransac.unwrap_or_default();
    ransac.seed = cli.seed;
    if let Some(n) = args.iterations {
        ransac.iterations = n;
    }
    if let Some(t) = args.threshold {
        ransac.threshold = t;
    }
    let mut reg_cfg = config.registration.clone().unwrap_or_default();
    if let Some(k) = args.kappa {
        reg_cfg.kappa = k;
    }
    if let Some(l) = args.baseline_length {
        reg_cfg.baseline_length = l;
    }
    reg_cfg.baseline_view = args.baseline.or(reg_cfg.baseline_view);

    // Collect corr_RR_KK.txt files for the reference view.
    let prefix = format!("corr_{:02}_", args.reference);
    let mut pair_files: Vec<(usize, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(&args.corr_dir)
        .map_err(|e| CliError::Data(format!("correspondences {}: {e}", args.corr_dir.display())))?;
    for entry in entries {
        let entry = entry
            .map_err(|e| CliError::Data(format!("correspondences {}: {e}", args.corr_dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix(&prefix) {
            if let Some(num) = rest.strip_suffix(".txt") {
                if let Ok(k) = num.parse::<usize>() {
                    pair_files.push((k, entry.path()));
                }
            }
        }
    }
    pair_files.sort_by_key(|(k, _)| *k);
    if pair_files.is_empty() {
        return Err(CliError::Data(format!(
            "no {prefix}KK.txt files in {}",
            args.corr_dir.display()
        )));
    }

    let mut pairs = Vec::new();
    let mut records = Vec::new();
    for (k, path) in &pair_files {
        let set = load_correspondences(path)?;
        if set.view_a != args.reference || set.view_b != *k {
            return Err(CliError::Data(format!(
                "{}: contains pair ({}, {}), expected ({}, {k})",
                path.display(),
                set.view_a,
                set.view_b,
                args.reference
            )));
        }
        let matches = set.bearing_pairs();
        let pair_ransac = RansacConfig {
            seed: ransac.seed ^ (*k as u64).wrapping_mul(0x9e37),
            ..ransac
        };
        let (e, mask) = estimate_essential_ransac(&matches, &pair_ransac)?;
        let pose = decompose_essential(&e, &matches, Some(&mask))?;
        println!(
            "pair ({}, {k}): {} matches, {} inliers",
            args.reference,
            matches.len(),
            pose.inlier_count
        );
        records.push(PoseRecord::new(args.reference, *k, &pose, &pair_ransac));
        pairs.push(PairObservation {
            view: *k,
            pose,
            matches: set,
        });
    }

    let rig = register_rig(args.reference, &pairs, &reg_cfg)?;
    rig.save_json(&args.out)?;
    for view in rig.non_reference_views() {
        println!("view {:02}: scale {:.4}", view.view, view.scale);
    }
    println!("rig -> {}", args.out.display());
    if let Some(path) = &args.poses_out {
        let text = serde_json::to_string_pretty(&records).expect("records serialize");
        std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("poses {}: {e}", path.display())))?;
        println!("poses -> {}", path.display());
    }
    Ok(())
}

fn sweep_config_from(cli: &Cli, config: &FileConfig, args: &DepthArgs) -> Result<SweepConfig, CliError> {
    let file_sweep = config.sweep.as_ref();
    let mut cfg = SweepConfig::default();
    if let Some(fs) = file_sweep {
        if let Some(w) = fs.window {
            cfg.window_radius = window_radius(w)?;
        }
        if let Some(p) = fs.prefilter {
            cfg.prefilter = Some(p);
        }
        if let Some(p) = fs.postfilter {
            cfg.postfilter = p;
        }
        if let Some(c) = fs.crop_bottom {
            cfg.crop_bottom = c;
        }
        if let Some(c) = fs.center_reference {
            cfg.center_reference = c;
        }
    }
    if let Some(w) = args.window {
        cfg.window_radius = window_radius(w)?;
    }
    let fd = |cli_v: Option<f64>, file_v: Option<f64>, default: f64| {
        cli_v.or(file_v).unwrap_or(default)
    };
    let dmin = fd(args.d_min, file_sweep.and_then(|f| f.d_min), 0.05);
    let dmax = fd(args.d_max, file_sweep.and_then(|f| f.d_max), 10.0);
    let count = args
        .candidates
        .or(file_sweep.and_then(|f| f.candidates))
        .unwrap_or(200);
    cfg.candidates = make_candidates(dmin, dmax, count)?;
    if cli.crop_bottom > 0.0 {
        cfg.crop_bottom = cli.crop_bottom;
    }
    if args.no_prefilter {
        cfg.prefilter = None;
    }
    if args.no_postfilter {
        cfg.postfilter.iterations = 0;
    }
    Ok(cfg)
}

fn window_radius(window: usize) -> Result<usize, CliError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(CliError::Data(format!(
            "window size {window} must be odd and positive"
        )));
    }
    Ok((window - 1) / 2)
}

fn cmd_depth(cli: &Cli, config: &FileConfig, args: &DepthArgs) -> Result<(), CliError> {
    if !args.rig.exists() {
        return Err(CliError::Data(format!(
            "rig file {} does not exist",
            args.rig.display()
        )));
    }
    let rig = Rig::load_json(&args.rig)?;
    let cfg = sweep_config_from(cli, config, args)?;

    let mut view_ids: Vec<usize> = rig.views.iter().map(|v| v.view).collect();
    view_ids.sort_unstable();
    if let Some(n) = args.cameras {
        if n < 2 || n > view_ids.len() {
            return Err(CliError::Data(format!(
                "camera count {n} outside 2..={}",
                view_ids.len()
            )));
        }
        let mut subset: Vec<usize> = vec![rig.reference];
        subset.extend(
            view_ids
                .iter()
                .copied()
                .filter(|&v| v != rig.reference)
                .take(n - 1),
        );
        view_ids = subset;
        view_ids.sort_unstable();
    }

    let reference_img = load_view_image(&args.dataset, rig.reference)?;
    let mut images = Vec::new();
    for &v in &view_ids {
        if v == rig.reference {
            continue;
        }
        images.push((v, load_view_image(&args.dataset, v)?));
    }
    let views = rig_sweep_views(&rig, &images, args.no_scaling)?;
    let depth = estimate_depth_map(&reference_img, &views, &cfg)?;
    imgio::write_pfm(&depth, &args.out)?;
    println!(
        "depth map {}x{} ({} valid px) -> {}",
        depth.width(),
        depth.height(),
        depth.valid_count(),
        args.out.display()
    );
    if let Some(path) = &args.png16 {
        imgio::write_depth_png16(&depth, path)?;
        println!("16-bit png -> {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let est = imgio::read_pfm(&args.est)?;
    let gt = imgio::read_pfm(&args.gt)?;
    let metrics = compute_metrics(&est, &gt)?;
    println!(
        "mse_x100 {:.4}  psnr_db {:.4}  valid {:.4}  norm_max {:.3} m",
        metrics.mse * 100.0,
        metrics.psnr,
        metrics.joint_valid_fraction,
        metrics.normalization_max
    );
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("metrics {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, config: &FileConfig, args: &AblateArgs) -> Result<(), CliError> {
    let scaling = match args.scaling.as_str() {
        "both" => vec![true, false],
        "on" => vec![true],
        "off" => vec![false],
        other => {
            return Err(CliError::Usage(format!(
                "--scaling must be both|on|off, got '{other}'"
            )))
        }
    };
    let pose_source = match args.pose_source.as_str() {
        "detector" => PoseSource::Detector,
        "synthetic" => PoseSource::SyntheticCorrespondences {
            points: 1500,
            noise_sigma: 0.001,
        },
        "known" => PoseSource::Known,
        other => {
            return Err(CliError::Usage(format!(
                "--pose-source must be detector|synthetic|known, got '{other}'"
            )))
        }
    };
    let grid = AblationGrid {
        cameras: args.cameras.clone(),
        windows: args.windows.clone(),
        scaling,
    };
    let mut ransac = config.ransac.unwrap_or_default();
    ransac.seed = cli.seed;
    let ablate_cfg = AblationConfig {
        seed: cli.seed,
        pose_source,
        candidates: (0.05, 10.0, args.candidates.unwrap_or(200)),
        ransac,
        kappa: config
            .registration
            .as_ref()
            .map(|r| r.kappa)
            .unwrap_or(0.01),
        features: config.features.clone().unwrap_or_default(),
        record_runtime: !args.no_timing,
    };
    let report = run_ablation(&args.dataset, &grid, &ablate_cfg)?;
    std::fs::write(&args.out, report.to_csv())
        .map_err(|e| CliError::Data(format!("report {}: {e}", args.out.display())))?;
    print!("{report}");
    println!("csv -> {}", args.out.display());
    Ok(())
}

fn cmd_ply(args: &PlyArgs) -> Result<(), CliError> {
    let depth = imgio::read_pfm(&args.depth)?;
    let img = imgio::load_image(&args.image)?;
    let filters = if args.export_filter {
        ExportFilters {
            gaussian_sigma: Some(1.1),
            median: true,
        }
    } else {
        ExportFilters::default()
    };
    let n = export_ply(&depth, &img, &args.out, &filters)?;
    println!("{n} vertices -> {}", args.out.display());
    Ok(())
}
